#pragma once
// Unit-quality metrics: PNMI, cluster purity, phone purity, frame accuracy,
// and phone error rate over deduplicated sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/io.hpp"
#include "spkeval/quantize.hpp"
#include "spkeval/threading.hpp"

namespace spkeval::unitmetrics {

struct JointTable {
  Matrix<std::uint64_t> counts;          // units x phones
  std::vector<std::string> phone_labels;  // column names, sorted
  std::uint64_t total = 0;

  std::size_t n_units() const { return counts.rows(); }
  std::size_t n_phones() const { return counts.cols(); }
};

// Paints each frame of an utterance with its aligned phone index, applying
// the same snapping rule as frames_for_segment: sub-frame segments claim the
// frame containing their midpoint, overriding the covering segment.
inline std::vector<std::int32_t> phone_of_frames(const std::vector<AlignmentSegment>& segs,
                                                 std::size_t n_frames, double frame_rate,
                                                 const std::map<std::string, std::int32_t>& phone_ids,
                                                 const std::string& utt) {
  constexpr double kEps = 1e-9;
  std::vector<std::int32_t> paint(n_frames, -1);
  const double duration = static_cast<double>(n_frames) / frame_rate;
  std::vector<std::pair<std::size_t, std::int32_t>> snapped;
  for (const auto& seg : segs) {
    if (seg.offset > duration + kEps)
      throw input_error("alignment segment ending at " + std::to_string(seg.offset) +
                        " s extends beyond utterance '" + utt + "'");
    long first = static_cast<long>(std::ceil(seg.onset * frame_rate - kEps));
    long past = static_cast<long>(std::ceil(seg.offset * frame_rate - kEps));
    if (first < 0) first = 0;
    if (past > static_cast<long>(n_frames)) past = static_cast<long>(n_frames);
    const std::int32_t pid = phone_ids.at(seg.phone);
    if (first >= past) {
      long mid = static_cast<long>(std::floor(((seg.onset + seg.offset) * 0.5) * frame_rate + kEps));
      mid = std::clamp(mid, 0L, static_cast<long>(n_frames) - 1);
      snapped.emplace_back(static_cast<std::size_t>(mid), pid);
      continue;
    }
    for (long f = first; f < past; ++f) paint[static_cast<std::size_t>(f)] = pid;
  }
  for (auto& [frame, pid] : snapped) paint[frame] = pid;
  return paint;
}

inline JointTable joint_counts(const std::vector<quantize::UnitSequence>& units,
                               const AlignmentTable& align, std::size_t n_units = 0) {
  if (units.empty()) throw input_error("joint_counts: no unit sequences");
  if (n_units == 0) {
    std::int32_t max_unit = 0;
    for (const auto& us : units)
      for (auto u : us.units) max_unit = std::max(max_unit, u);
    n_units = static_cast<std::size_t>(max_unit) + 1;
  }
  std::map<std::string, std::int32_t> phone_ids;
  for (const auto& [utt, segs] : align.utterances)
    for (const auto& seg : segs) phone_ids.emplace(seg.phone, 0);
  {
    std::int32_t next = 0;
    for (auto& [phone, id] : phone_ids) id = next++;
  }

  JointTable table;
  table.phone_labels.reserve(phone_ids.size());
  for (const auto& [phone, id] : phone_ids) table.phone_labels.push_back(phone);
  table.counts = Matrix<std::uint64_t>(n_units, phone_ids.size(), 0);

  // parallel over utterances with per-chunk tables merged in chunk order
  const std::size_t n_seq = units.size();
  const std::size_t chunk = std::max<std::size_t>(1, (n_seq + 63) / 64);
  const std::size_t n_chunks = (n_seq + chunk - 1) / chunk;
  std::vector<Matrix<std::uint64_t>> partial(n_chunks);
  for_chunks(n_seq, chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
    Matrix<std::uint64_t> local(n_units, phone_ids.size(), 0);
    for (std::size_t s = b; s < e; ++s) {
      const auto& us = units[s];
      auto it = align.utterances.find(us.utterance_id);
      if (it == align.utterances.end())
        throw input_error("utterance '" + us.utterance_id + "' missing from alignment");
      auto paint =
          phone_of_frames(it->second, us.units.size(), us.frame_rate, phone_ids, us.utterance_id);
      for (std::size_t f = 0; f < us.units.size(); ++f) {
        if (paint[f] < 0)
          throw input_error("frame " + std::to_string(f) + " of utterance '" + us.utterance_id +
                            "' lies outside every aligned segment");
        const auto u = us.units[f];
        if (u < 0 || static_cast<std::size_t>(u) >= n_units)
          throw input_error("unit " + std::to_string(u) + " out of range in utterance '" +
                            us.utterance_id + "'");
        ++local(static_cast<std::size_t>(u), static_cast<std::size_t>(paint[f]));
      }
    }
    partial[c] = std::move(local);
  });
  for (std::size_t c = 0; c < n_chunks; ++c) {
    if (partial[c].empty()) continue;
    for (std::size_t i = 0; i < table.counts.storage().size(); ++i)
      table.counts.storage()[i] += partial[c].storage()[i];
  }
  for (auto v : table.counts.storage()) table.total += v;
  if (table.total == 0) throw input_error("joint_counts: empty table");
  return table;
}

// sum over units of max_phone p(unit, phone)
inline double phone_purity(const JointTable& t) {
  if (t.total == 0) throw input_error("phone_purity: empty table");
  double acc = 0.0;
  for (std::size_t u = 0; u < t.n_units(); ++u) {
    std::uint64_t best = 0;
    for (std::size_t p = 0; p < t.n_phones(); ++p) best = std::max(best, t.counts(u, p));
    acc += static_cast<double>(best);
  }
  return acc / static_cast<double>(t.total);
}

// sum over phones of max_unit p(unit, phone)
inline double cluster_purity(const JointTable& t) {
  if (t.total == 0) throw input_error("cluster_purity: empty table");
  double acc = 0.0;
  for (std::size_t p = 0; p < t.n_phones(); ++p) {
    std::uint64_t best = 0;
    for (std::size_t u = 0; u < t.n_units(); ++u) best = std::max(best, t.counts(u, p));
    acc += static_cast<double>(best);
  }
  return acc / static_cast<double>(t.total);
}

// I(U;P) / H(P) with natural-log entropies and 0*log 0 := 0.
inline double pnmi(const JointTable& t) {
  if (t.total == 0) throw input_error("pnmi: empty table");
  const double total = static_cast<double>(t.total);
  std::vector<double> pu(t.n_units(), 0.0), pp(t.n_phones(), 0.0);
  for (std::size_t u = 0; u < t.n_units(); ++u)
    for (std::size_t p = 0; p < t.n_phones(); ++p) {
      const double v = static_cast<double>(t.counts(u, p)) / total;
      pu[u] += v;
      pp[p] += v;
    }
  double hp = 0.0;
  for (double v : pp)
    if (v > 0.0) hp -= v * std::log(v);
  if (!(hp > 0.0))
    throw input_error("pnmi: phone entropy is zero (single-phone table)");
  double mi = 0.0;
  for (std::size_t u = 0; u < t.n_units(); ++u) {
    for (std::size_t p = 0; p < t.n_phones(); ++p) {
      if (t.counts(u, p) == 0) continue;
      const double v = static_cast<double>(t.counts(u, p)) / total;
      mi += v * std::log(v / (pu[u] * pp[p]));
    }
  }
  return std::clamp(mi / hp, 0.0, 1.0);
}

template <typename T>
double frame_accuracy(const std::vector<T>& pred, const std::vector<T>& gold) {
  if (pred.size() != gold.size())
    throw input_error("frame_accuracy: length mismatch (" + std::to_string(pred.size()) + " vs " +
                      std::to_string(gold.size()) + ")");
  if (pred.empty()) throw input_error("frame_accuracy: empty sequences");
  std::size_t eq = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == gold[i]) ++eq;
  return static_cast<double>(eq) / static_cast<double>(pred.size());
}

template <typename T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Levenshtein(dedup(pred), gold') / |gold'| where gold' is the deduplicated
// gold by default (collapse_gold=false scores against the raw gold).
template <typename T>
double phone_error_rate(const std::vector<T>& pred, const std::vector<T>& gold,
                        bool collapse_gold = true) {
  if (gold.empty()) throw input_error("phone_error_rate: empty gold sequence");
  const std::vector<T> p = collapse_runs(pred);
  const std::vector<T> g = collapse_gold ? collapse_runs(gold) : gold;
  return static_cast<double>(levenshtein(p, g)) / static_cast<double>(g.size());
}

}  // namespace spkeval::unitmetrics
