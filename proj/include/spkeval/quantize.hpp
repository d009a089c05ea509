#pragma once
// k-means codebook training (k-means++ init, Lloyd iterations), frame-to-unit
// assignment, and the centroid / one-hot derived representations.
//
// All reductions run over chunk boundaries that depend only on the data size,
// so a fit with a fixed seed is bit-reproducible for any thread count.
//
// Codebook binary layout (little-endian):
//   magic "SPKC", u32 version (1), u32 k, u32 dim, u64 seed, f64 inertia,
//   then k * dim f32 centroids, row-major.
//
// Unit file: utterance_id<TAB>space-separated integer units, one row per
// utterance.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/io.hpp"
#include "spkeval/threading.hpp"

namespace spkeval::quantize {

struct Codebook {
  Matrix<double> centroids;  // k x dim
  std::uint64_t seed = 0;
  double final_inertia = 0.0;
  std::size_t iterations_run = 0;

  std::size_t k() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

struct UnitSequence {
  std::vector<std::int32_t> units;
  double frame_rate = 0.0;
  std::string utterance_id;
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  double rel_tol = 1e-6;
};

namespace detail {

inline double sqdist(std::span<const float> x, std::span<const double> c) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - c[i];
    s += d * d;
  }
  return s;
}

inline constexpr std::size_t kAssignChunk = 4096;
// Update-step partial sums use a fixed small chunk count to bound memory at
// n_chunks * k * dim doubles while staying thread-count independent.
inline constexpr std::size_t kUpdateChunks = 16;

struct AssignPass {
  std::vector<std::int32_t> assignment;
  std::vector<double> dmin;
  std::vector<std::size_t> counts;  // per cluster
  double inertia = 0.0;
};

inline void assign_pass(const Matrix<float>& samples, const Matrix<double>& centroids,
                        AssignPass& out) {
  const std::size_t n = samples.rows();
  const std::size_t k = centroids.rows();
  out.assignment.assign(n, 0);
  out.dmin.assign(n, 0.0);
  const std::size_t n_chunks = (n + kAssignChunk - 1) / kAssignChunk;
  std::vector<double> partial_inertia(n_chunks, 0.0);
  std::vector<std::size_t> partial_counts(n_chunks * k, 0);
  for_chunks(n, kAssignChunk, [&](std::size_t c, std::size_t b, std::size_t e) {
    double local = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      auto x = samples.row(i);
      double best = sqdist(x, centroids.row(0));
      std::size_t best_j = 0;
      for (std::size_t j = 1; j < k; ++j) {
        const double d = sqdist(x, centroids.row(j));
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      out.assignment[i] = static_cast<std::int32_t>(best_j);
      out.dmin[i] = best;
      local += best;
      ++partial_counts[c * k + best_j];
    }
    partial_inertia[c] = local;
  });
  out.inertia = 0.0;
  out.counts.assign(k, 0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    out.inertia += partial_inertia[c];
    for (std::size_t j = 0; j < k; ++j) out.counts[j] += partial_counts[c * k + j];
  }
}

}  // namespace detail

inline Codebook kmeans_fit(const Matrix<float>& samples, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& opts = {},
                           std::vector<double>* inertia_history = nullptr) {
  const std::size_t n = samples.rows();
  const std::size_t dim = samples.cols();
  if (k < 1) throw input_error("kmeans: k must be at least 1");
  if (n < k)
    throw input_error("kmeans: " + std::to_string(n) + " samples for k=" + std::to_string(k));
  for (float v : samples.storage())
    if (!std::isfinite(v)) throw input_error("kmeans: non-finite training sample");

  Codebook cb;
  cb.seed = seed;
  cb.centroids = Matrix<double>(k, dim);
  Rng rng(seed);

  // k-means++ seeding
  {
    const std::size_t first = rng.next_below(n);
    auto src = samples.row(first);
    for (std::size_t d = 0; d < dim; ++d) cb.centroids(0, d) = src[d];
    std::vector<double> d2(n);
    parallel_for(n, [&](std::size_t i) { d2[i] = detail::sqdist(samples.row(i), cb.centroids.row(0)); });
    std::vector<double> cum(n);
    for (std::size_t j = 1; j < k; ++j) {
      double run = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        run += d2[i];
        cum[i] = run;
      }
      std::size_t pick;
      if (run > 0.0) {
        const double r = rng.next_double() * run;
        pick = static_cast<std::size_t>(
            std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
        if (pick >= n) pick = n - 1;
      } else {
        pick = rng.next_below(n);  // all residual distances zero
      }
      auto psrc = samples.row(pick);
      for (std::size_t d = 0; d < dim; ++d) cb.centroids(j, d) = psrc[d];
      parallel_for(n, [&](std::size_t i) {
        const double d = detail::sqdist(samples.row(i), cb.centroids.row(j));
        if (d < d2[i]) d2[i] = d;
      });
    }
  }

  detail::AssignPass pass;
  double prev_inertia = std::numeric_limits<double>::infinity();
  const std::size_t update_chunk = (n + detail::kUpdateChunks - 1) / detail::kUpdateChunks;

  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    // assignment; re-run after reseeding any empty cluster to the point
    // farthest from its current centroid
    for (std::size_t pass_no = 0; pass_no <= k; ++pass_no) {
      detail::assign_pass(samples, cb.centroids, pass);
      std::vector<std::size_t> empties;
      for (std::size_t j = 0; j < k; ++j)
        if (pass.counts[j] == 0) empties.push_back(j);
      if (empties.empty()) break;
      if (pass_no == k)
        throw invariant_error("kmeans: unable to fill empty clusters (degenerate data)");
      std::vector<char> taken(n, 0);
      for (std::size_t e : empties) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (!taken[i] && pass.dmin[i] > far_d) {
            far_d = pass.dmin[i];
            far = i;
          }
        }
        taken[far] = 1;
        auto src = samples.row(far);
        for (std::size_t d = 0; d < dim; ++d) cb.centroids(e, d) = src[d];
      }
    }

    if (inertia_history) inertia_history->push_back(pass.inertia);
    if (pass.inertia > prev_inertia * (1.0 + 1e-9) + 1e-300)
      throw invariant_error("kmeans: inertia increased across iterations");
    const bool converged =
        pass.inertia == 0.0 ||
        (std::isfinite(prev_inertia) && prev_inertia - pass.inertia < opts.rel_tol * prev_inertia);
    prev_inertia = pass.inertia;
    cb.final_inertia = pass.inertia;
    cb.iterations_run = iter;
    if (converged || iter == opts.max_iter) break;

    // centroid update: per-chunk partial sums merged in chunk order
    const std::size_t n_chunks = (n + update_chunk - 1) / update_chunk;
    std::vector<double> sums(n_chunks * k * dim, 0.0);
    for_chunks(n, update_chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
      double* base = sums.data() + c * k * dim;
      for (std::size_t i = b; i < e; ++i) {
        auto x = samples.row(i);
        double* dst = base + static_cast<std::size_t>(pass.assignment[i]) * dim;
        for (std::size_t d = 0; d < dim; ++d) dst[d] += x[d];
      }
    });
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t d = 0; d < dim; ++d) {
        double total = 0.0;
        for (std::size_t c = 0; c < n_chunks; ++c) total += sums[(c * k + j) * dim + d];
        cb.centroids(j, d) = total / static_cast<double>(pass.counts[j]);
      }
    }
  }

  // duplicate centroids mean the data could not support k distinct clusters
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = cb.centroids(a, d) - cb.centroids(b, d);
        s += diff * diff;
      }
      if (s < 1e-24)
        throw invariant_error("kmeans: duplicate centroids " + std::to_string(a) + " and " +
                              std::to_string(b) + " at convergence");
    }
  }
  return cb;
}

// Per-frame argmin of squared Euclidean distance; ties go to the lowest index.
inline UnitSequence assign(const Codebook& cb, const FeatureSequence& seq) {
  if (seq.dim() != cb.dim())
    throw input_error("assign: feature dim " + std::to_string(seq.dim()) +
                      " does not match codebook dim " + std::to_string(cb.dim()));
  UnitSequence out;
  out.frame_rate = seq.frame_rate;
  out.utterance_id = seq.utterance_id;
  out.units.assign(seq.n_frames(), 0);
  const std::size_t k = cb.k();
  parallel_for(seq.n_frames(), [&](std::size_t i) {
    auto x = seq.data.row(i);
    double best = detail::sqdist(x, cb.centroids.row(0));
    std::size_t best_j = 0;
    for (std::size_t j = 1; j < k; ++j) {
      const double d = detail::sqdist(x, cb.centroids.row(j));
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    out.units[i] = static_cast<std::int32_t>(best_j);
  });
  return out;
}

inline FeatureSequence centroid_features(const Codebook& cb, const UnitSequence& us) {
  FeatureSequence out;
  out.utterance_id = us.utterance_id;
  out.frame_rate = us.frame_rate;
  out.data = Matrix<float>(us.units.size(), cb.dim());
  for (std::size_t i = 0; i < us.units.size(); ++i) {
    const auto u = us.units[i];
    if (u < 0 || static_cast<std::size_t>(u) >= cb.k())
      throw input_error("centroid_features: unit " + std::to_string(u) + " out of range");
    auto c = cb.centroids.row(static_cast<std::size_t>(u));
    auto dst = out.data.row(i);
    for (std::size_t d = 0; d < cb.dim(); ++d) dst[d] = static_cast<float>(c[d]);
  }
  return out;
}

inline FeatureSequence one_hot_features(const UnitSequence& us, std::size_t k) {
  FeatureSequence out;
  out.utterance_id = us.utterance_id;
  out.frame_rate = us.frame_rate;
  out.data = Matrix<float>(us.units.size(), k, 0.0f);
  for (std::size_t i = 0; i < us.units.size(); ++i) {
    const auto u = us.units[i];
    if (u < 0 || static_cast<std::size_t>(u) >= k)
      throw input_error("one_hot_features: unit " + std::to_string(u) + " out of range for k=" +
                        std::to_string(k));
    out.data(i, static_cast<std::size_t>(u)) = 1.0f;
  }
  return out;
}

inline UnitSequence dedup(const UnitSequence& us) {
  UnitSequence out;
  out.frame_rate = us.frame_rate;
  out.utterance_id = us.utterance_id;
  out.units = collapse_runs(us.units);
  return out;
}

inline constexpr char kCodebookMagic[4] = {'S', 'P', 'K', 'C'};

inline void write_codebook(const Codebook& cb, const std::string& path) {
  std::string bytes;
  bytes.append(kCodebookMagic, 4);
  ioutil::put_u32le(bytes, 1u);
  ioutil::put_u32le(bytes, static_cast<std::uint32_t>(cb.k()));
  ioutil::put_u32le(bytes, static_cast<std::uint32_t>(cb.dim()));
  ioutil::put_u64le(bytes, cb.seed);
  ioutil::put_u64le(bytes, std::bit_cast<std::uint64_t>(cb.final_inertia));
  for (double v : cb.centroids.storage())
    ioutil::put_u32le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  ioutil::write_binary_file(path, bytes);
}

inline Codebook read_codebook(const std::string& path) {
  const std::string bytes = ioutil::read_binary_file(path);
  auto fail = [&](std::size_t offset, const std::string& what) -> input_error {
    return input_error("'" + path + "': " + what + " at byte " + std::to_string(offset));
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCodebookMagic, 4) != 0)
    throw fail(0, "bad magic");
  if (bytes.size() < 32) throw fail(bytes.size(), "truncated header (32 bytes required)");
  const std::uint32_t version = ioutil::get_u32le(bytes, 4);
  if (version != 1) throw fail(4, "unsupported version " + std::to_string(version));
  const std::uint64_t k = ioutil::get_u32le(bytes, 8);
  const std::uint64_t dim = ioutil::get_u32le(bytes, 12);
  if (k < 1 || dim < 1) throw fail(8, "empty codebook declared");
  Codebook cb;
  cb.seed = ioutil::get_u64le(bytes, 16);
  cb.final_inertia = ioutil::get_f64le(bytes, 24);
  const std::uint64_t expected = 32 + 4 * k * dim;
  if (bytes.size() < expected)
    throw fail(bytes.size(), "truncated payload (expected " + std::to_string(expected) + " bytes)");
  if (bytes.size() > expected) throw fail(expected, "trailing data beyond declared payload");
  cb.centroids = Matrix<double>(k, dim);
  for (std::size_t i = 0; i < k * dim; ++i) {
    const float v = ioutil::get_f32le(bytes, 32 + 4 * i);
    if (!std::isfinite(v)) throw fail(32 + 4 * i, "non-finite centroid value");
    cb.centroids.storage()[i] = v;
  }
  return cb;
}

inline void write_unit_file(const std::vector<UnitSequence>& seqs, const std::string& path) {
  std::string out;
  for (const auto& s : seqs) {
    out += s.utterance_id;
    out += '\t';
    for (std::size_t i = 0; i < s.units.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(s.units[i]);
    }
    out += '\n';
  }
  ioutil::write_binary_file(path, out);
}

inline std::vector<UnitSequence> read_unit_file(const std::string& path, double frame_rate = 50.0) {
  std::vector<UnitSequence> seqs;
  for (auto& [id, toks] : io::read_id_tokens_file(path)) {
    UnitSequence us;
    us.utterance_id = id;
    us.frame_rate = frame_rate;
    us.units.reserve(toks.size());
    for (const auto& t : toks) {
      const long v = ioutil::parse_long(t, path + " (utterance '" + id + "')");
      if (v < 0) throw input_error(path + ": negative unit in utterance '" + id + "'");
      us.units.push_back(static_cast<std::int32_t>(v));
    }
    seqs.push_back(std::move(us));
  }
  return seqs;
}

}  // namespace spkeval::quantize
