#pragma once
// Mel-cepstral distortion between original and resynthesized audio.
//
// Analysis chain: 16-bit PCM mono WAV -> windowed magnitude STFT (periodic
// Hann) -> triangular mel filterbank -> log with a 1e-10 floor -> orthonormal
// DCT-II, keeping coefficients 1..n (c0 excluded, so MCD is gain-invariant).
// MCD = (10 * sqrt(2) / ln 10) * mean over aligned frame pairs of the
// Euclidean distance between coefficient vectors; alignment is either
// frame-by-frame (equal lengths required) or DTW with symmetric steps and
// mean-over-path normalization.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/distance.hpp"
#include "spkeval/io.hpp"
#include "spkeval/threading.hpp"

namespace spkeval::mcd {

inline constexpr double kMcdConstant = 6.141851463713754;  // 10 * sqrt(2) / ln 10

struct McdConfig {
  int sample_rate = 16000;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 80;
  int n_coeffs = 13;  // c1..c13, c0 excluded
  double fmin = 0.0;
  double fmax = 8000.0;

  bool operator==(const McdConfig&) const = default;
};

struct CepstralSequence {
  Matrix<double> coeffs;  // n_frames x n_coeffs
  McdConfig config;
  std::string id;
};

enum class McdAlign { Dtw, Frame };

struct Wav {
  std::vector<double> samples;  // mono, in [-1, 1)
  int sample_rate = 0;
};

inline Wav read_wav_mono16(const std::string& path) {
  const std::string b = ioutil::read_binary_file(path);
  auto fail = [&](const std::string& what) -> input_error {
    return input_error("'" + path + "': " + what);
  };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");
  Wav wav;
  bool have_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= b.size()) {
    const std::string chunk_id = b.substr(off, 4);
    const std::uint32_t chunk_size = ioutil::get_u32le(b, off + 4);
    const std::size_t body = off + 8;
    if (body + chunk_size > b.size()) throw fail("truncated chunk '" + chunk_id + "'");
    if (chunk_id == "fmt ") {
      if (chunk_size < 16) throw fail("fmt chunk too small");
      const std::uint16_t format = static_cast<std::uint16_t>(ioutil::get_u32le(b, body) & 0xffff);
      const std::uint16_t channels =
          static_cast<std::uint16_t>((ioutil::get_u32le(b, body) >> 16) & 0xffff);
      const std::uint32_t rate = ioutil::get_u32le(b, body + 4);
      const std::uint16_t bits =
          static_cast<std::uint16_t>((ioutil::get_u32le(b, body + 12) >> 16) & 0xffff);
      if (format != 1) throw fail("only PCM wav is supported");
      if (channels != 1) throw fail("only mono wav is supported");
      if (bits != 16) throw fail("only 16-bit wav is supported");
      wav.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (chunk_id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      const std::size_t n = chunk_size / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto lo = static_cast<std::uint16_t>(static_cast<unsigned char>(b[body + 2 * i]));
        const auto hi =
            static_cast<std::uint16_t>(static_cast<unsigned char>(b[body + 2 * i + 1]));
        const auto s = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return wav;
    }
    off = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw fail("no data chunk");
}

inline void write_wav_mono16(const std::string& path, std::span<const double> samples,
                             int sample_rate) {
  std::string b;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  b.append("RIFF", 4);
  ioutil::put_u32le(b, 36 + data_bytes);
  b.append("WAVE", 4);
  b.append("fmt ", 4);
  ioutil::put_u32le(b, 16);
  ioutil::put_u32le(b, 1u | (1u << 16));  // PCM, mono
  ioutil::put_u32le(b, static_cast<std::uint32_t>(sample_rate));
  ioutil::put_u32le(b, static_cast<std::uint32_t>(sample_rate * 2));  // byte rate
  ioutil::put_u32le(b, 2u | (16u << 16));                             // block align, bits
  b.append("data", 4);
  ioutil::put_u32le(b, data_bytes);
  for (double v : samples) {
    const double clamped = std::clamp(v, -1.0, 32767.0 / 32768.0);
    const auto s = static_cast<std::int16_t>(std::lround(clamped * 32768.0));
    b.push_back(static_cast<char>(s & 0xff));
    b.push_back(static_cast<char>((s >> 8) & 0xff));
  }
  ioutil::write_binary_file(path, b);
}

namespace detail {

inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// n_mels triangular filters over the magnitude spectrum bins 0..n_fft/2.
inline Matrix<double> mel_filterbank(const McdConfig& cfg, std::size_t n_fft) {
  const std::size_t n_bins = n_fft / 2 + 1;
  Matrix<double> fb(static_cast<std::size_t>(cfg.n_mels), n_bins, 0.0);
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.n_mels + 1));
  for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.n_mels); ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(n_fft);
      if (f <= left || f >= right) continue;
      fb(m, k) = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
    }
  }
  return fb;
}

}  // namespace detail

// Log mel filterbank energies of the windowed magnitude STFT, one row per
// frame. This is the stage the cepstra are derived from.
inline Matrix<double> log_mel(std::span<const double> audio, const McdConfig& cfg) {
  if (audio.empty()) throw input_error("mfcc: empty audio");
  const auto win = static_cast<std::size_t>(std::lround(cfg.win_ms * cfg.sample_rate / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.hop_ms * cfg.sample_rate / 1000.0));
  if (win == 0 || hop == 0) throw input_error("mfcc: window and hop must be positive");
  if (audio.size() < win)
    throw input_error("mfcc: audio shorter than one analysis window (" + std::to_string(win) +
                      " samples)");
  std::size_t n_fft = 1;
  while (n_fft < win) n_fft <<= 1;
  const std::size_t n_bins = n_fft / 2 + 1;
  const std::size_t n_frames = 1 + (audio.size() - win) / hop;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(win));

  const Matrix<double> fb = detail::mel_filterbank(cfg, n_fft);
  Matrix<double> out(n_frames, static_cast<std::size_t>(cfg.n_mels));

  parallel_for(n_frames, [&](std::size_t t) {
    std::vector<std::complex<double>> spec(n_fft, {0.0, 0.0});
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < win; ++i) spec[i] = audio[start + i] * window[i];
    detail::fft_radix2(spec);
    std::vector<double> mag(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) mag[k] = std::abs(spec[k]);
    for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.n_mels); ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += fb(m, k) * mag[k];
      out(t, m) = std::log(std::max(e, 1e-10));
    }
  });
  return out;
}

inline CepstralSequence mfcc(std::span<const double> audio, const McdConfig& cfg,
                             const std::string& id = "") {
  const Matrix<double> lm = log_mel(audio, cfg);

  // orthonormal DCT-II rows for coefficients 1..n_coeffs
  Matrix<double> dct(static_cast<std::size_t>(cfg.n_coeffs), static_cast<std::size_t>(cfg.n_mels));
  const double scale = std::sqrt(2.0 / static_cast<double>(cfg.n_mels));
  for (std::size_t c = 0; c < static_cast<std::size_t>(cfg.n_coeffs); ++c)
    for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.n_mels); ++m)
      dct(c, m) = scale * std::cos(std::numbers::pi * static_cast<double>(c + 1) *
                                   (static_cast<double>(m) + 0.5) / static_cast<double>(cfg.n_mels));

  CepstralSequence out;
  out.config = cfg;
  out.id = id;
  out.coeffs = Matrix<double>(lm.rows(), static_cast<std::size_t>(cfg.n_coeffs));
  parallel_for(lm.rows(), [&](std::size_t t) {
    for (std::size_t c = 0; c < static_cast<std::size_t>(cfg.n_coeffs); ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.n_mels); ++m)
        acc += dct(c, m) * lm(t, m);
      out.coeffs(t, c) = acc;
    }
  });
  return out;
}

inline double mcd(const CepstralSequence& ref, const CepstralSequence& syn,
                  McdAlign align = McdAlign::Dtw) {
  if (!(ref.config == syn.config)) throw input_error("mcd: analysis configs differ");
  if (ref.coeffs.rows() == 0 || syn.coeffs.rows() == 0)
    throw input_error("mcd: empty cepstral sequence");
  auto frame_cost = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    auto a = ref.coeffs.row(i);
    auto b = syn.coeffs.row(j);
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double d = a[c] - b[c];
      s += d * d;
    }
    return std::sqrt(s);
  };
  double mean;
  if (align == McdAlign::Frame) {
    if (ref.coeffs.rows() != syn.coeffs.rows())
      throw input_error("mcd: frame alignment requires equal lengths (" +
                        std::to_string(ref.coeffs.rows()) + " vs " +
                        std::to_string(syn.coeffs.rows()) + ")");
    double acc = 0.0;
    for (std::size_t t = 0; t < ref.coeffs.rows(); ++t) acc += frame_cost(t, t);
    mean = acc / static_cast<double>(ref.coeffs.rows());
  } else {
    auto [sum, len] = distance::dtw_accumulate(ref.coeffs.rows(), syn.coeffs.rows(), frame_cost);
    mean = sum / static_cast<double>(len);
  }
  return kMcdConstant * mean;
}

struct McdPair {
  std::string ref_path;
  std::string syn_path;
  std::string group;
};

inline std::vector<McdPair> read_mcd_pairs(const std::string& path) {
  std::vector<McdPair> pairs;
  ioutil::for_lines(path, [&](std::size_t lineno, std::string_view line) {
    auto cols = ioutil::split_tsv(line);
    if (cols.size() != 3)
      throw input_error(path + ":" + std::to_string(lineno) +
                        ": expected 3 tab-separated columns (ref_wav, syn_wav, group)");
    pairs.push_back({std::string(cols[0]), std::string(cols[1]), std::string(cols[2])});
  });
  return pairs;
}

struct GroupStats {
  double mean = 0.0;
  std::size_t n = 0;
};

struct GroupReport {
  std::map<std::string, GroupStats> groups;  // sorted by label
  double overall = 0.0;                      // unweighted mean of group means
  std::size_t n_pairs = 0;
};

inline GroupReport mcd_by_group(const std::vector<std::pair<std::string, double>>& values) {
  if (values.empty()) throw input_error("mcd_by_group: no pairs");
  GroupReport report;
  report.n_pairs = values.size();
  std::map<std::string, std::vector<double>> by_group;
  for (const auto& [group, v] : values) by_group[group].push_back(v);
  double acc = 0.0;
  for (const auto& [group, vs] : by_group) {
    double s = 0.0;
    for (double v : vs) s += v;
    GroupStats g{s / static_cast<double>(vs.size()), vs.size()};
    report.groups.emplace(group, g);
    acc += g.mean;
  }
  report.overall = acc / static_cast<double>(by_group.size());
  return report;
}

}  // namespace spkeval::mcd
