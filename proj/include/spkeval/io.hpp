#pragma once
// Readers and writers for every on-disk format the toolkit consumes or
// produces, plus the segment-to-frame binding rules.
//
// Feature binary layout (little-endian throughout):
//   bytes  0..3   magic "SPKF"
//   bytes  4..7   u32 version (1)
//   bytes  8..11  u32 n_frames
//   bytes 12..15  u32 dim
//   bytes 16..23  f64 frame_rate (Hz)
//   bytes 24..    n_frames * dim f32 values, row-major
//
// Alignment TSV: utterance_id \t onset \t offset \t phone \t speaker
// Manifest TSV:  utterance_id \t relative feature file path
// Pair manifest: pair_id \t member_a \t member_b \t correct{a,b} \t in_vocab{0,1}

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spkeval/core.hpp"

namespace spkeval {

struct FeatureSequence {
  Matrix<float> data;            // n_frames x dim
  double frame_rate = 0.0;       // frames per second
  std::string utterance_id;

  std::size_t n_frames() const { return data.rows(); }
  std::size_t dim() const { return data.cols(); }
  double duration() const { return static_cast<double>(data.rows()) / frame_rate; }
};

struct AlignmentSegment {
  double onset = 0.0;
  double offset = 0.0;
  std::string phone;
  std::string speaker;
};

struct AlignmentTable {
  // utterance id -> segments sorted by onset, non-overlapping
  std::map<std::string, std::vector<AlignmentSegment>> utterances;
};

struct PairEntry {
  std::string pair_id;
  std::string member_a;
  std::string member_b;
  bool correct_is_a = true;
  bool in_vocab = false;
};

namespace ioutil {

inline std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::uint32_t get_u32le(const std::string& b, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[off])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 3])) << 24);
}

inline std::uint64_t get_u64le(const std::string& b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | static_cast<unsigned char>(b[off + static_cast<std::size_t>(i)]);
  return v;
}

inline void put_u32le(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline float get_f32le(const std::string& b, std::size_t off) {
  return std::bit_cast<float>(get_u32le(b, off));
}

inline double get_f64le(const std::string& b, std::size_t off) {
  return std::bit_cast<double>(get_u64le(b, off));
}

inline void write_binary_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw input_error("I/O failure writing '" + path + "'");
}

inline std::vector<std::string_view> split_tsv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw input_error(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline long parse_long(std::string_view s, const std::string& where) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw input_error(where + ": cannot parse integer '" + std::string(s) + "'");
  return v;
}

// Calls fn(line_number, line) for every non-empty line; strips trailing \r.
template <typename Fn>
void for_lines(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(lineno, std::string_view(line));
  }
}

}  // namespace ioutil

namespace io {

inline constexpr char kFeatureMagic[4] = {'S', 'P', 'K', 'F'};
inline constexpr std::size_t kFeatureHeaderBytes = 24;

inline void validate_feature_sequence(const FeatureSequence& seq) {
  if (seq.n_frames() < 1 || seq.dim() < 1)
    throw input_error("feature sequence '" + seq.utterance_id + "' is empty");
  if (!(seq.frame_rate > 0.0) || !std::isfinite(seq.frame_rate))
    throw input_error("feature sequence '" + seq.utterance_id + "' has invalid frame rate");
  for (float v : seq.data.storage())
    if (!std::isfinite(v))
      throw input_error("feature sequence '" + seq.utterance_id + "' contains non-finite values");
}

inline void write_feature_file(const FeatureSequence& seq, const std::string& path) {
  validate_feature_sequence(seq);
  std::string bytes;
  bytes.reserve(kFeatureHeaderBytes + 4 * seq.data.storage().size());
  bytes.append(kFeatureMagic, 4);
  ioutil::put_u32le(bytes, 1u);
  ioutil::put_u32le(bytes, static_cast<std::uint32_t>(seq.n_frames()));
  ioutil::put_u32le(bytes, static_cast<std::uint32_t>(seq.dim()));
  ioutil::put_u64le(bytes, std::bit_cast<std::uint64_t>(seq.frame_rate));
  for (float v : seq.data.storage()) ioutil::put_u32le(bytes, std::bit_cast<std::uint32_t>(v));
  ioutil::write_binary_file(path, bytes);
}

inline FeatureSequence read_feature_file(const std::string& path, std::string utterance_id = "") {
  const std::string bytes = ioutil::read_binary_file(path);
  auto fail = [&](std::size_t offset, const std::string& what) -> input_error {
    return input_error("'" + path + "': " + what + " at byte " + std::to_string(offset));
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0)
    throw fail(0, "bad magic");
  if (bytes.size() < kFeatureHeaderBytes)
    throw fail(bytes.size(), "truncated header (24 bytes required)");
  const std::uint32_t version = ioutil::get_u32le(bytes, 4);
  if (version != 1) throw fail(4, "unsupported version " + std::to_string(version));
  const std::uint64_t n_frames = ioutil::get_u32le(bytes, 8);
  const std::uint64_t dim = ioutil::get_u32le(bytes, 12);
  if (n_frames < 1) throw fail(8, "header declares zero frames");
  if (dim < 1) throw fail(12, "header declares zero dimension");
  const double frame_rate = ioutil::get_f64le(bytes, 16);
  if (!std::isfinite(frame_rate) || !(frame_rate > 0.0)) throw fail(16, "invalid frame rate");
  const std::uint64_t expected = kFeatureHeaderBytes + 4 * n_frames * dim;
  if (bytes.size() < expected)
    throw fail(bytes.size(), "truncated payload (expected " + std::to_string(expected) + " bytes)");
  if (bytes.size() > expected) throw fail(expected, "trailing data beyond declared payload");

  FeatureSequence seq;
  if (utterance_id.empty()) utterance_id = std::filesystem::path(path).stem().string();
  seq.utterance_id = std::move(utterance_id);
  seq.frame_rate = frame_rate;
  seq.data = Matrix<float>(n_frames, dim);
  for (std::size_t i = 0; i < n_frames * dim; ++i) {
    const std::size_t off = kFeatureHeaderBytes + 4 * i;
    const float v = ioutil::get_f32le(bytes, off);
    if (!std::isfinite(v)) throw fail(off, "non-finite value");
    seq.data.storage()[i] = v;
  }
  return seq;
}

inline AlignmentTable read_alignment(const std::string& path) {
  AlignmentTable table;
  ioutil::for_lines(path, [&](std::size_t lineno, std::string_view line) {
    const std::string where = path + ":" + std::to_string(lineno);
    auto cols = ioutil::split_tsv(line);
    if (cols.size() != 5)
      throw input_error(where + ": expected 5 tab-separated columns, got " +
                        std::to_string(cols.size()));
    AlignmentSegment seg;
    seg.onset = ioutil::parse_double(cols[1], where);
    seg.offset = ioutil::parse_double(cols[2], where);
    seg.phone = std::string(cols[3]);
    seg.speaker = std::string(cols[4]);
    if (!(seg.offset > seg.onset))
      throw input_error(where + ": offset must exceed onset");
    if (seg.onset < 0.0) throw input_error(where + ": negative onset");
    table.utterances[std::string(cols[0])].push_back(std::move(seg));
  });
  for (auto& [utt, segs] : table.utterances) {
    std::stable_sort(segs.begin(), segs.end(),
                     [](const AlignmentSegment& a, const AlignmentSegment& b) {
                       return a.onset < b.onset;
                     });
    for (std::size_t i = 1; i < segs.size(); ++i) {
      if (segs[i - 1].offset > segs[i].onset)
        throw input_error(path + ": overlapping segments in utterance '" + utt + "' near " +
                          std::to_string(segs[i].onset) + " s");
    }
  }
  return table;
}

// Frame i covers [i/rate, (i+1)/rate). A segment that rounds to zero frames
// is snapped to the single frame containing its midpoint (snap=true); with
// snap disabled it is an error.
inline std::pair<std::size_t, std::size_t> frames_for_segment(const FeatureSequence& seq,
                                                              double onset, double offset,
                                                              bool snap = true) {
  constexpr double kEps = 1e-9;
  const double r = seq.frame_rate;
  const auto n = static_cast<long>(seq.n_frames());
  if (!(onset >= 0.0) || !(offset > onset))
    throw input_error("segment [" + std::to_string(onset) + ", " + std::to_string(offset) +
                      ") is not a valid time range");
  if (offset > seq.duration() + kEps)
    throw input_error("segment offset " + std::to_string(offset) +
                      " s exceeds duration of utterance '" + seq.utterance_id + "'");
  long first = static_cast<long>(std::ceil(onset * r - kEps));
  long past = static_cast<long>(std::ceil(offset * r - kEps));
  if (first < 0) first = 0;
  if (past > n) past = n;
  if (first >= past) {
    if (!snap)
      throw input_error("segment [" + std::to_string(onset) + ", " + std::to_string(offset) +
                        ") is shorter than one frame and snapping is disabled");
    long mid = static_cast<long>(std::floor(((onset + offset) * 0.5) * r + kEps));
    mid = std::clamp(mid, 0L, n - 1);
    return {static_cast<std::size_t>(mid), 1};
  }
  return {static_cast<std::size_t>(first), static_cast<std::size_t>(past - first)};
}

inline FeatureSequence slice_frames(const FeatureSequence& seq, double onset, double offset,
                                    bool snap = true) {
  auto [first, count] = frames_for_segment(seq, onset, offset, snap);
  FeatureSequence out;
  out.utterance_id = seq.utterance_id;
  out.frame_rate = seq.frame_rate;
  out.data = Matrix<float>(count, seq.dim());
  for (std::size_t i = 0; i < count; ++i) {
    auto src = seq.data.row(first + i);
    std::copy(src.begin(), src.end(), out.data.row(i).begin());
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::map<std::string_view, bool> seen;
  ioutil::for_lines(path, [&](std::size_t lineno, std::string_view line) {
    const std::string where = path + ":" + std::to_string(lineno);
    auto cols = ioutil::split_tsv(line);
    if (cols.size() != 2)
      throw input_error(where + ": expected 2 tab-separated columns");
    entries.emplace_back(std::string(cols[0]), std::string(cols[1]));
  });
  std::map<std::string, bool> ids;
  for (auto& [id, rel] : entries) {
    if (ids.count(id)) throw input_error(path + ": duplicate utterance id '" + id + "'");
    ids[id] = true;
  }
  return entries;
}

class FeatureStore {
 public:
  static FeatureStore load(const std::string& dir, const std::string& manifest_name = "manifest.tsv") {
    namespace fs = std::filesystem;
    FeatureStore store;
    const std::string manifest_path = (fs::path(dir) / manifest_name).string();
    if (!fs::exists(manifest_path))
      throw input_error("missing manifest '" + manifest_path + "'");
    store.manifest_ = read_manifest(manifest_path);
    for (const auto& [id, rel] : store.manifest_) {
      const std::string fpath = (fs::path(dir) / rel).string();
      store.seqs_.emplace(id, read_feature_file(fpath, id));
    }
    return store;
  }

  static FeatureStore from_sequences(std::vector<FeatureSequence> seqs) {
    FeatureStore store;
    for (auto& s : seqs) {
      std::string id = s.utterance_id;
      store.manifest_.emplace_back(id, "");
      store.seqs_.emplace(std::move(id), std::move(s));
    }
    return store;
  }

  const FeatureSequence* find(const std::string& id) const {
    auto it = seqs_.find(id);
    return it == seqs_.end() ? nullptr : &it->second;
  }

  const FeatureSequence& get(const std::string& id) const {
    const FeatureSequence* p = find(id);
    if (!p) throw input_error("utterance '" + id + "' missing from feature store");
    return *p;
  }

  const std::vector<std::pair<std::string, std::string>>& manifest() const { return manifest_; }
  std::size_t size() const { return seqs_.size(); }

  std::map<std::string, FeatureSequence>& sequences() { return seqs_; }
  const std::map<std::string, FeatureSequence>& sequences() const { return seqs_; }

 private:
  std::map<std::string, FeatureSequence> seqs_;
  std::vector<std::pair<std::string, std::string>> manifest_;
};

// Generic "id<TAB>tok tok tok" reader shared by unit and label files.
// The token field may be empty.
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_id_tokens_file(
    const std::string& path) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  ioutil::for_lines(path, [&](std::size_t lineno, std::string_view line) {
    const std::string where = path + ":" + std::to_string(lineno);
    auto cols = ioutil::split_tsv(line);
    if (cols.size() != 2)
      throw input_error(where + ": expected 2 tab-separated columns");
    std::vector<std::string> toks;
    std::string_view rest = cols[1];
    std::size_t start = 0;
    for (std::size_t i = 0; i <= rest.size(); ++i) {
      if (i == rest.size() || rest[i] == ' ') {
        if (i > start) toks.emplace_back(rest.substr(start, i - start));
        start = i + 1;
      }
    }
    rows.emplace_back(std::string(cols[0]), std::move(toks));
  });
  return rows;
}

inline std::vector<PairEntry> read_pair_manifest(const std::string& path) {
  std::vector<PairEntry> pairs;
  std::map<std::string, bool> ids;
  ioutil::for_lines(path, [&](std::size_t lineno, std::string_view line) {
    const std::string where = path + ":" + std::to_string(lineno);
    auto cols = ioutil::split_tsv(line);
    if (cols.size() != 5)
      throw input_error(where + ": expected 5 tab-separated columns");
    PairEntry p;
    p.pair_id = std::string(cols[0]);
    p.member_a = std::string(cols[1]);
    p.member_b = std::string(cols[2]);
    if (cols[3] == "a")
      p.correct_is_a = true;
    else if (cols[3] == "b")
      p.correct_is_a = false;
    else
      throw input_error(where + ": correct column must be 'a' or 'b'");
    if (cols[4] == "0")
      p.in_vocab = false;
    else if (cols[4] == "1")
      p.in_vocab = true;
    else
      throw input_error(where + ": in_vocab column must be '0' or '1'");
    if (ids.count(p.pair_id)) throw input_error(where + ": duplicate pair id '" + p.pair_id + "'");
    ids[p.pair_id] = true;
    pairs.push_back(std::move(p));
  });
  return pairs;
}

}  // namespace io
}  // namespace spkeval
