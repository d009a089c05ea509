#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "spkeval/mcd.hpp"
#include "test_util.hpp"

using namespace spkeval;
namespace mcd = spkeval::mcd;

namespace {

std::vector<double> sine(double freq, double amp, double seconds, int rate) {
  std::vector<double> s(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
  return s;
}

mcd::McdConfig small_config() {
  mcd::McdConfig cfg;
  cfg.n_mels = 24;
  cfg.n_coeffs = 13;
  return cfg;
}

}  // namespace

TEST_CASE("wav round trip") {
  testutil::TempDir tmp("spkeval_wav");
  const auto s = sine(440.0, 0.5, 0.2, 16000);
  mcd::write_wav_mono16(tmp.file("a.wav"), s, 16000);
  const auto back = mcd::read_wav_mono16(tmp.file("a.wav"));
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == s.size());
  for (std::size_t i = 0; i < s.size(); i += 97)
    CHECK(back.samples[i] == doctest::Approx(s[i]).epsilon(1e-3));

  testutil::write_text(tmp.file("junk.wav"), "not audio");
  CHECK_THROWS_AS(mcd::read_wav_mono16(tmp.file("junk.wav")), input_error);
}

TEST_CASE("mfcc of silence gives identical frames") {
  const std::vector<double> silence(16000, 0.0);
  const auto c = mcd::mfcc(silence, small_config());
  REQUIRE(c.coeffs.rows() > 1);
  for (std::size_t t = 1; t < c.coeffs.rows(); ++t)
    for (std::size_t i = 0; i < c.coeffs.cols(); ++i)
      CHECK(c.coeffs(t, i) == doctest::Approx(c.coeffs(0, i)).epsilon(1e-12));
}

TEST_CASE("mfcc errors") {
  CHECK_THROWS_AS(mcd::mfcc(std::vector<double>{}, small_config()), input_error);
  CHECK_THROWS_AS(mcd::mfcc(std::vector<double>(10, 0.0), small_config()), input_error);
}

TEST_CASE("pure sine concentrates energy in its mel band") {
  // closed-form filterbank response: a tone at a band center has triangular
  // weight 1 in that band and 0 at the neighboring centers, so the band's
  // log energy dominates every frame
  const auto cfg = small_config();
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double lo = mel(cfg.fmin), hi = mel(cfg.fmax);
  for (int band : {6, 11, 17}) {
    const double center = imel(lo + (hi - lo) * (band + 1) / (cfg.n_mels + 1));
    const auto lmel = mcd::log_mel(sine(center, 0.5, 0.3, cfg.sample_rate), cfg);
    for (std::size_t t = 0; t < lmel.rows(); ++t) {
      std::size_t argmax = 0;
      for (std::size_t m = 1; m < lmel.cols(); ++m)
        if (lmel(t, m) > lmel(t, argmax)) argmax = m;
      CHECK(argmax == static_cast<std::size_t>(band));
    }
  }
}

TEST_CASE("hop-aligned sine gives time-invariant frames") {
  // 1000 Hz advances by an integer number of cycles per 10 ms hop, so every
  // analysis window sees the same waveform
  const auto cfg = small_config();
  const auto c = mcd::mfcc(sine(1000.0, 0.5, 0.3, cfg.sample_rate), cfg);
  REQUIRE(c.coeffs.rows() > 2);
  for (std::size_t t = 1; t < c.coeffs.rows(); ++t)
    for (std::size_t i = 0; i < c.coeffs.cols(); ++i)
      CHECK(std::abs(c.coeffs(t, i) - c.coeffs(0, i)) <= 1e-7);
}

TEST_CASE("gain invariance: doubling amplitude leaves c1..c13 unchanged") {
  const auto cfg = small_config();
  const auto quiet = sine(1000.0, 0.25, 0.3, cfg.sample_rate);
  auto loud = quiet;
  for (auto& v : loud) v *= 2.0;
  const auto cq = mcd::mfcc(quiet, cfg);
  const auto cl = mcd::mfcc(loud, cfg);
  REQUIRE(cq.coeffs.rows() == cl.coeffs.rows());
  for (std::size_t t = 0; t < cq.coeffs.rows(); ++t)
    for (std::size_t i = 0; i < cq.coeffs.cols(); ++i)
      CHECK(cq.coeffs(t, i) == doctest::Approx(cl.coeffs(t, i)).epsilon(1e-6));
}

TEST_CASE("mcd of a sequence with itself is zero") {
  const auto cfg = small_config();
  const auto c = mcd::mfcc(sine(500.0, 0.4, 0.2, cfg.sample_rate), cfg);
  CHECK(mcd::mcd(c, c, mcd::McdAlign::Frame) == 0.0);
  CHECK(mcd::mcd(c, c, mcd::McdAlign::Dtw) == 0.0);
}

TEST_CASE("constant offset in one coefficient has a closed form") {
  const auto cfg = small_config();
  const auto ref = mcd::mfcc(sine(700.0, 0.4, 0.25, cfg.sample_rate), cfg);
  for (double delta : {0.5, -1.25, 2.0}) {
    auto syn = ref;
    for (std::size_t t = 0; t < syn.coeffs.rows(); ++t) syn.coeffs(t, 0) += delta;
    const double got = mcd::mcd(ref, syn, mcd::McdAlign::Frame);
    CHECK(std::abs(got - mcd::kMcdConstant * std::abs(delta)) <= 1e-9);
  }
}

TEST_CASE("frame-mode mcd with a constant offset vector equals the norm rule") {
  const auto cfg = small_config();
  const auto ref = mcd::mfcc(sine(300.0, 0.4, 0.25, cfg.sample_rate), cfg);
  auto syn = ref;
  std::vector<double> d(static_cast<std::size_t>(cfg.n_coeffs));
  Rng rng(5);
  double norm_sq = 0.0;
  for (auto& v : d) {
    v = rng.next_gaussian();
    norm_sq += v * v;
  }
  for (std::size_t t = 0; t < syn.coeffs.rows(); ++t)
    for (std::size_t i = 0; i < syn.coeffs.cols(); ++i) syn.coeffs(t, i) += d[i];
  const double got = mcd::mcd(ref, syn, mcd::McdAlign::Frame);
  CHECK(got == doctest::Approx(mcd::kMcdConstant * std::sqrt(norm_sq)).epsilon(1e-12));
}

TEST_CASE("mcd symmetry, preconditions, and dtw oracle equivalence") {
  const auto cfg = small_config();
  const auto a = mcd::mfcc(sine(400.0, 0.4, 0.22, cfg.sample_rate), cfg);
  const auto b = mcd::mfcc(sine(900.0, 0.3, 0.25, cfg.sample_rate), cfg);
  CHECK(mcd::mcd(a, b, mcd::McdAlign::Dtw) == doctest::Approx(mcd::mcd(b, a, mcd::McdAlign::Dtw)));
  CHECK(mcd::mcd(a, b, mcd::McdAlign::Dtw) >= 0.0);
  CHECK_THROWS_AS(mcd::mcd(a, b, mcd::McdAlign::Frame), input_error);  // unequal lengths
  auto other_cfg = a;
  other_cfg.config.n_mels += 1;
  CHECK_THROWS_AS(mcd::mcd(a, other_cfg, mcd::McdAlign::Dtw), input_error);

  // tiny sequences against path enumeration
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    mcd::CepstralSequence x, y;
    x.config = cfg;
    y.config = cfg;
    x.coeffs = Matrix<double>(1 + rng.next_below(5), 3);
    y.coeffs = Matrix<double>(1 + rng.next_below(5), 3);
    for (auto& v : x.coeffs.storage()) v = rng.next_gaussian();
    for (auto& v : y.coeffs.storage()) v = rng.next_gaussian();
    mcd::McdConfig c3 = cfg;
    c3.n_coeffs = 3;
    x.config = c3;
    y.config = c3;
    Matrix<double> cost(x.coeffs.rows(), y.coeffs.rows());
    for (std::size_t i = 0; i < cost.rows(); ++i)
      for (std::size_t j = 0; j < cost.cols(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double diff = x.coeffs(i, k) - y.coeffs(j, k);
          s += diff * diff;
        }
        cost(i, j) = std::sqrt(s);
      }
    const double want = mcd::kMcdConstant * oracles::dtw_path_enumeration(cost);
    CHECK(std::abs(mcd::mcd(x, y, mcd::McdAlign::Dtw) - want) <= 1e-12);
  }
}

TEST_CASE("mcd_by_group aggregates unweighted") {
  using Entry = std::pair<std::string, double>;
  SUBCASE("one group") {
    const auto r = mcd::mcd_by_group({Entry{"read", 3.0}, Entry{"read", 5.0}});
    CHECK(r.overall == 4.0);
    CHECK(r.groups.at("read").mean == 4.0);
    CHECK(r.groups.at("read").n == 2);
  }
  SUBCASE("two groups average to one") {
    const auto r = mcd::mcd_by_group({Entry{"g1", 0.0}, Entry{"g2", 2.0}});
    CHECK(r.overall == 1.0);
  }
  SUBCASE("permutation invariance") {
    const std::vector<Entry> fwd{{"a", 1.0}, {"b", 2.0}, {"a", 3.0}, {"c", 4.0}};
    std::vector<Entry> rev(fwd.rbegin(), fwd.rend());
    const auto r1 = mcd::mcd_by_group(fwd);
    const auto r2 = mcd::mcd_by_group(rev);
    CHECK(r1.overall == r2.overall);
    CHECK(r1.groups.at("a").mean == r2.groups.at("a").mean);
  }
  SUBCASE("empty input raises") { CHECK_THROWS_AS(mcd::mcd_by_group({}), input_error); }
}
