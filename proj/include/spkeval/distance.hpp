#pragma once
// Frame-level angular distance and DTW-aligned sequence dissimilarity.
//
// The DTW dissimilarity is the mean frame distance along the optimal
// alignment path: the DP minimizes cumulative cost over the step set
// {(1,0),(0,1),(1,1)} with ties broken toward shorter paths, then divides
// the winning sum by the number of cells on that path.

#include <cmath>
#include <cstring>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/io.hpp"

namespace spkeval::distance {

namespace detail {

// Scales a frame to unit norm. Division by the norm commutes with power-of-
// two scaling of the input, which keeps the scale-invariance property exact
// for exactly representable scale factors.
inline void normalize_frame(std::span<const float> u, std::span<double> out) {
  double nsq = 0.0;
  for (float v : u) nsq += static_cast<double>(v) * static_cast<double>(v);
  if (!std::isfinite(nsq)) throw input_error("non-finite frame vector");
  if (!(nsq > 0.0)) throw input_error("zero-norm frame vector");
  const double inv = 1.0 / std::sqrt(nsq);
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<double>(u[i]) * inv;
}

inline double unit_cosine_distance(std::span<const double> wu, std::span<const double> wv) {
  if (std::memcmp(wu.data(), wv.data(), wu.size() * sizeof(double)) == 0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < wu.size(); ++i) dot += wu[i] * wv[i];
  if (dot > 1.0) dot = 1.0;
  if (dot < -1.0) dot = -1.0;
  return std::acos(dot) / std::numbers::pi;
}

}  // namespace detail

// arccos(clamped cosine similarity) / pi, in [0, 1].
inline double angular_distance(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size())
    throw input_error("angular_distance: dimension mismatch (" + std::to_string(u.size()) +
                      " vs " + std::to_string(v.size()) + ")");
  if (u.empty()) throw input_error("angular_distance: empty vectors");
  std::vector<double> wu(u.size()), wv(v.size());
  detail::normalize_frame(u, wu);
  detail::normalize_frame(v, wv);
  return detail::unit_cosine_distance(wu, wv);
}

// A contiguous run of frames inside a feature matrix.
struct FrameSpan {
  const Matrix<float>* frames = nullptr;
  std::size_t first = 0;
  std::size_t count = 0;

  FrameSpan() = default;
  FrameSpan(const Matrix<float>& m) : frames(&m), first(0), count(m.rows()) {}
  FrameSpan(const Matrix<float>& m, std::size_t first_, std::size_t count_)
      : frames(&m), first(first_), count(count_) {}
  FrameSpan(const FeatureSequence& s) : FrameSpan(s.data) {}

  std::span<const float> row(std::size_t i) const { return frames->row(first + i); }
  std::size_t dim() const { return frames->cols(); }
};

// DP over (cumulative sum, path length in cells). Returns both for the best
// path to the final cell: minimal sum, then minimal length. Equal (sum, len)
// candidates resolve diagonal-first; the reported sum/len is unaffected.
template <typename CostFn>
std::pair<double, std::size_t> dtw_accumulate(std::size_t nx, std::size_t ny, CostFn&& cost) {
  if (nx == 0 || ny == 0) throw input_error("dtw: empty sequence");
  std::vector<double> sums(nx * ny);
  std::vector<std::uint32_t> lens(nx * ny);
  auto idx = [ny](std::size_t i, std::size_t j) { return i * ny + j; };

  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const double c = cost(i, j);
      if (i == 0 && j == 0) {
        sums[0] = c;
        lens[0] = 1;
        continue;
      }
      double best_sum = 0.0;
      std::uint32_t best_len = 0;
      bool have = false;
      auto consider = [&](std::size_t pi, std::size_t pj) {
        const double s = sums[idx(pi, pj)];
        const std::uint32_t l = lens[idx(pi, pj)];
        if (!have || s < best_sum || (s == best_sum && l < best_len)) {
          best_sum = s;
          best_len = l;
          have = true;
        }
      };
      if (i > 0 && j > 0) consider(i - 1, j - 1);
      if (i > 0) consider(i - 1, j);
      if (j > 0) consider(i, j - 1);
      sums[idx(i, j)] = best_sum + c;
      lens[idx(i, j)] = best_len + 1;
    }
  }
  return {sums[idx(nx - 1, ny - 1)], lens[idx(nx - 1, ny - 1)]};
}

// Scales every frame of a span to unit norm.
inline Matrix<double> normalize_frames(const FrameSpan& X) {
  Matrix<double> w(X.count, X.dim());
  for (std::size_t i = 0; i < X.count; ++i) detail::normalize_frame(X.row(i), w.row(i));
  return w;
}

// Mean angular distance along the optimal DTW path for pre-normalized
// frames. Lets callers that compare one token against many normalize it
// once.
inline double dtw_distance_normalized(const Matrix<double>& wx, const Matrix<double>& wy) {
  if (wx.rows() == 0 || wy.rows() == 0) throw input_error("dtw_distance: empty sequence");
  if (wx.cols() != wy.cols())
    throw input_error("dtw_distance: dimension mismatch (" + std::to_string(wx.cols()) + " vs " +
                      std::to_string(wy.cols()) + ")");
  auto [sum, len] = dtw_accumulate(wx.rows(), wy.rows(), [&](std::size_t i, std::size_t j) {
    return detail::unit_cosine_distance(wx.row(i), wy.row(j));
  });
  return sum / static_cast<double>(len);
}

// Mean angular distance along the optimal DTW path, in [0, 1].
inline double dtw_distance(const FrameSpan& X, const FrameSpan& Y) {
  if (X.count == 0 || Y.count == 0) throw input_error("dtw_distance: empty sequence");
  return dtw_distance_normalized(normalize_frames(X), normalize_frames(Y));
}

inline double dtw_distance(const FeatureSequence& X, const FeatureSequence& Y) {
  return dtw_distance(FrameSpan(X), FrameSpan(Y));
}

}  // namespace spkeval::distance
