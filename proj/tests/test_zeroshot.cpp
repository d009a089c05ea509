#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "spkeval/zeroshot.hpp"

using namespace spkeval;
namespace zs = spkeval::zeroshot;

namespace {

std::vector<PairEntry> three_pairs() {
  // win, lose, tie under the score map below
  return {{"p1", "t1", "f1", true, true},
          {"p2", "t2", "f2", true, false},
          {"p3", "t3", "f3", true, true}};
}

zs::SequenceScore score_of(const std::map<std::string, double>& m, const std::string& id) {
  auto it = m.find(id);
  if (it == m.end()) throw input_error("sequence '" + id + "' unresolvable");
  return {it->second, std::nullopt};
}

}  // namespace

TEST_CASE("constant scorer lands at exactly one half") {
  const auto pairs = three_pairs();
  const auto r = zs::pair_accuracy(
      [](const std::string&) { return zs::SequenceScore{-3.25, 7}; }, pairs);
  CHECK(r.accuracy_raw == 0.5);
  REQUIRE(r.accuracy_per_token.has_value());
  CHECK(*r.accuracy_per_token == 0.5);
  CHECK(r.n_pairs == 3);
}

TEST_CASE("oracle scorer reaches one") {
  const auto pairs = three_pairs();
  const auto r = zs::pair_accuracy(
      [](const std::string& id) {
        return zs::SequenceScore{id[0] == 't' ? 1.0 : -1.0, std::nullopt};
      },
      pairs);
  CHECK(r.accuracy_raw == 1.0);
  CHECK_FALSE(r.accuracy_per_token.has_value());
}

TEST_CASE("win, lose, tie arithmetic") {
  const std::map<std::string, double> scores{{"t1", 2.0}, {"f1", 1.0}, {"t2", 0.0},
                                             {"f2", 1.0}, {"t3", 4.0}, {"f3", 4.0}};
  const auto r = zs::pair_accuracy(
      [&](const std::string& id) { return score_of(scores, id); }, three_pairs());
  CHECK(r.accuracy_raw == doctest::Approx(0.5).epsilon(1e-15));  // (1 + 0 + 0.5)/3
  REQUIRE(r.pairs.size() == 3);
  CHECK(r.pairs[0].credit_raw == 1.0);
  CHECK(r.pairs[1].credit_raw == 0.0);
  CHECK(r.pairs[2].credit_raw == 0.5);
}

TEST_CASE("in-vocab filter keeps exactly the flagged subset") {
  const std::map<std::string, double> scores{{"t1", 2.0}, {"f1", 1.0}, {"t2", 0.0},
                                             {"f2", 1.0}, {"t3", 4.0}, {"f3", 4.0}};
  const auto r = zs::pair_accuracy(
      [&](const std::string& id) { return score_of(scores, id); }, three_pairs(), true);
  CHECK(r.n_pairs == 2);  // p1 and p3
  CHECK(r.accuracy_raw == doctest::Approx(0.75));
}

TEST_CASE("accuracy is invariant under strictly increasing transforms") {
  Rng rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::string, double> scores;
    std::vector<PairEntry> pairs;
    for (int i = 0; i < 20; ++i) {
      const std::string t = "t" + std::to_string(i);
      const std::string f = "f" + std::to_string(i);
      scores[t] = rng.next_gaussian();
      scores[f] = rng.next_gaussian();
      pairs.push_back({"p" + std::to_string(i), t, f, true, rng.next_below(2) == 0});
    }
    auto base = zs::pair_accuracy(
        [&](const std::string& id) { return score_of(scores, id); }, pairs);
    for (auto transform : {+[](double x) { return 3.0 * x + 1.0; },
                           +[](double x) { return std::atan(x); },
                           +[](double x) { return std::exp(x / 4.0); }}) {
      auto warped = zs::pair_accuracy(
          [&](const std::string& id) {
            return zs::SequenceScore{transform(score_of(scores, id).logprob), std::nullopt};
          },
          pairs);
      CHECK(warped.accuracy_raw == base.accuracy_raw);
    }
  }
}

TEST_CASE("swapping members while fixing the correct flag changes nothing") {
  Rng rng(53);
  std::map<std::string, double> scores;
  std::vector<PairEntry> pairs, swapped;
  for (int i = 0; i < 25; ++i) {
    const std::string a = "a" + std::to_string(i);
    const std::string b = "b" + std::to_string(i);
    scores[a] = rng.next_gaussian();
    scores[b] = rng.next_gaussian();
    const bool correct_a = rng.next_below(2) == 0;
    pairs.push_back({"p" + std::to_string(i), a, b, correct_a, false});
    swapped.push_back({"p" + std::to_string(i), b, a, !correct_a, false});
  }
  auto scorer = [&](const std::string& id) { return score_of(scores, id); };
  CHECK(zs::pair_accuracy(scorer, pairs).accuracy_raw ==
        zs::pair_accuracy(scorer, swapped).accuracy_raw);
}

TEST_CASE("per-token and raw normalizations are reported independently") {
  // true member: higher total, lower per-token
  std::vector<PairEntry> pairs{{"p", "t", "f", true, false}};
  auto r = zs::pair_accuracy(
      [](const std::string& id) -> zs::SequenceScore {
        if (id == "t") return {-10.0, 20};  // per-token -0.5
        return {-12.0, 10};                 // per-token -1.2... no: -1.2 < -0.5
      },
      pairs);
  CHECK(r.accuracy_raw == 1.0);  // -10 > -12
  REQUIRE(r.accuracy_per_token.has_value());
  CHECK(*r.accuracy_per_token == 1.0);  // -0.5 > -1.2

  auto r2 = zs::pair_accuracy(
      [](const std::string& id) -> zs::SequenceScore {
        if (id == "t") return {-10.0, 4};  // per-token -2.5
        return {-12.0, 10};                // per-token -1.2
      },
      pairs);
  CHECK(r2.accuracy_raw == 1.0);
  CHECK(*r2.accuracy_per_token == 0.0);  // loses per token
}

TEST_CASE("empty selections raise") {
  std::vector<PairEntry> none;
  auto scorer = [](const std::string&) { return zs::SequenceScore{0.0, std::nullopt}; };
  CHECK_THROWS_AS(zs::pair_accuracy(scorer, none), input_error);
  std::vector<PairEntry> no_vocab{{"p", "a", "b", true, false}};
  CHECK_THROWS_AS(zs::pair_accuracy(scorer, no_vocab, true), input_error);
}

TEST_CASE("unresolvable sequence reference propagates") {
  std::vector<PairEntry> pairs{{"p", "known", "unknown", true, false}};
  const std::map<std::string, double> scores{{"known", 1.0}};
  CHECK_THROWS_WITH_AS(
      zs::pair_accuracy([&](const std::string& id) { return score_of(scores, id); }, pairs),
      doctest::Contains("unresolvable"), input_error);
}
