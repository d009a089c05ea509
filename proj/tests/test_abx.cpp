#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spkeval/abx.hpp"
#include "spkeval/quantize.hpp"
#include "test_util.hpp"

using namespace spkeval;
namespace abx = spkeval::abx;

namespace {

AlignmentTable three_phone_utterance() {
  AlignmentTable align;
  align.utterances["u1"] = {{0.00, 0.04, "AA", "spk1"},
                            {0.04, 0.08, "B", "spk1"},
                            {0.08, 0.12, "K", "spk1"}};
  return align;
}

// Items constructed directly: one utterance per token with the given label
// layout. Features are attached separately.
struct DirectCorpus {
  abx::ItemSet items;
  std::vector<FeatureSequence> seqs;

  void add_token(const std::string& center, const std::string& prev, const std::string& next,
                 const std::string& speaker, const Matrix<float>& frames) {
    const std::string utt = "tok" + std::to_string(items.size());
    abx::Item it;
    it.utterance_id = utt;
    it.onset = 0.0;
    it.offset = static_cast<double>(frames.rows()) / 50.0;
    it.center = center;
    it.prev = prev;
    it.next = next;
    it.speaker = speaker;
    items.push_back(it);
    FeatureSequence seq;
    seq.utterance_id = utt;
    seq.frame_rate = 50.0;
    seq.data = frames;
    seqs.push_back(std::move(seq));
  }

  io::FeatureStore store() const { return io::FeatureStore::from_sequences(seqs); }
};

Matrix<float> const_frames(std::size_t n, std::initializer_list<float> dir) {
  Matrix<float> m(n, dir.size());
  for (std::size_t i = 0; i < n; ++i) std::copy(dir.begin(), dir.end(), m.row(i).begin());
  return m;
}

}  // namespace

TEST_CASE("extract_items spans and edge handling") {
  const auto align = three_phone_utterance();

  const auto triphone = abx::extract_items(align, abx::Span::Triphone);
  REQUIRE(triphone.size() == 1);
  CHECK(triphone[0].center == "B");
  CHECK(triphone[0].prev == "AA");
  CHECK(triphone[0].next == "K");
  CHECK(triphone[0].onset == 0.0);
  CHECK(triphone[0].offset == doctest::Approx(0.12));

  const auto phone = abx::extract_items(align, abx::Span::Phone);
  REQUIRE(phone.size() == 3);
  CHECK(phone[0].prev == abx::kEdgeMarker);
  CHECK(phone[2].next == abx::kEdgeMarker);
  CHECK(phone[1].onset == doctest::Approx(0.04));
  for (const auto& it : phone) CHECK(it.speaker == "spk1");
}

TEST_CASE("item file round trip") {
  testutil::TempDir tmp("spkeval_items");
  const auto items = abx::extract_items(three_phone_utterance(), abx::Span::Phone);
  abx::write_item_file(items, tmp.file("items.tsv"));
  const auto back = abx::read_item_file(tmp.file("items.tsv"));
  REQUIRE(back.size() == items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(back[i].utterance_id == items[i].utterance_id);
    CHECK(back[i].center == items[i].center);
    CHECK(back[i].prev == items[i].prev);
    CHECK(back[i].onset == doctest::Approx(items[i].onset).epsilon(1e-9));
  }
}

TEST_CASE("build_cells enumerates the within and across arrangements") {
  // 2 speakers x 2 triphones (b-a-d / b-i-d), 2 tokens each
  DirectCorpus corpus;
  Rng rng(4);
  for (const std::string spk : {"s1", "s2"}) {
    for (const std::string center : {"a", "i"}) {
      for (int tok = 0; tok < 2; ++tok) {
        Matrix<float> m(2, 2);
        for (auto& v : m.storage()) v = static_cast<float>(rng.next_gaussian());
        corpus.add_token(center, "b", "d", spk, m);
      }
    }
  }

  SUBCASE("within-speaker task yields 2 cells per ordered contrast") {
    const auto cs = abx::build_cells(corpus.items, abx::Task::TriphoneWithinSpk);
    CHECK(cs.cells.size() == 4);  // 2 ordered contrasts x 2 speakers
    for (const auto& c : cs.cells) {
      CHECK(c.mode == abx::SpeakerMode::Within);
      CHECK(c.a.size() == 2);
      CHECK(c.b.size() == 2);
      CHECK(c.x == c.a);
    }
  }
  SUBCASE("across-speaker pools X from the other speakers") {
    const auto cs = abx::build_cells(corpus.items, abx::Task::TriphoneAcrossSpk);
    CHECK(cs.cells.size() == 4);
    for (const auto& c : cs.cells) {
      CHECK(c.mode == abx::SpeakerMode::Across);
      CHECK(c.x.size() == 2);  // the other speaker's tokens of label A
      for (auto xi : c.x)
        for (auto ai : c.a) CHECK(corpus.items[xi].speaker != corpus.items[ai].speaker);
    }
  }
  SUBCASE("single-token categories produce no cell") {
    DirectCorpus tiny;
    tiny.add_token("a", "b", "d", "s1", const_frames(2, {1.0f, 0.0f}));
    tiny.add_token("i", "b", "d", "s1", const_frames(2, {0.0f, 1.0f}));
    const auto cs = abx::build_cells(tiny.items, abx::Task::TriphoneWithinSpk);
    CHECK(cs.cells.empty());
    CHECK(cs.n_skipped == 2);
  }
  SUBCASE("cell list is invariant to item order") {
    auto shuffled = corpus.items;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto a = abx::build_cells(corpus.items, abx::Task::TriphoneWithinSpk);
    const auto b = abx::build_cells(shuffled, abx::Task::TriphoneWithinSpk);
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
      CHECK(a.cells[i].label_a == b.cells[i].label_a);
      CHECK(a.cells[i].speaker == b.cells[i].speaker);
      CHECK(a.cells[i].a.size() == b.cells[i].a.size());
    }
  }
}

TEST_CASE("build_cells caps cell rolls with a seeded subsample") {
  DirectCorpus corpus;
  Rng rng(9);
  for (int tok = 0; tok < 30; ++tok) {
    Matrix<float> m(1, 2);
    for (auto& v : m.storage()) v = static_cast<float>(rng.next_gaussian());
    corpus.add_token(tok % 2 == 0 ? "a" : "i", "b", "d", "s1", m);
  }
  abx::BuildOptions opts;
  opts.max_cell_size = 5;
  opts.seed = 123;
  const auto cs = abx::build_cells(corpus.items, abx::Task::TriphoneWithinSpk, opts);
  REQUIRE(!cs.cells.empty());
  for (const auto& c : cs.cells) {
    CHECK(c.a.size() == 5);
    CHECK(c.b.size() == 5);
  }
  // reproducible and order-independent
  auto shuffled = corpus.items;
  std::rotate(shuffled.begin(), shuffled.begin() + 7, shuffled.end());
  const auto cs2 = abx::build_cells(shuffled, abx::Task::TriphoneWithinSpk, opts);
  for (std::size_t i = 0; i < cs.cells.size(); ++i) {
    for (std::size_t t = 0; t < cs.cells[i].a.size(); ++t) {
      CHECK(corpus.items[cs.cells[i].a[t]].utterance_id ==
            shuffled[cs2.cells[i].a[t]].utterance_id);
    }
  }
}

TEST_CASE("score_cell credit rules") {
  SUBCASE("X copies of A direction score 1") {
    DirectCorpus corpus;
    corpus.add_token("a", "b", "d", "s1", const_frames(2, {1.0f, 0.0f}));
    corpus.add_token("a", "b", "d", "s1", const_frames(3, {1.0f, 0.0f}));
    corpus.add_token("i", "b", "d", "s1", const_frames(2, {0.0f, 1.0f}));
    const auto cs = abx::build_cells(corpus.items, abx::Task::TriphoneWithinSpk);
    const auto store = corpus.store();
    bool saw_a_first = false;
    for (const auto& c : cs.cells) {
      if (c.label_a != "b-a-d") continue;
      saw_a_first = true;
      const auto s = abx::score_cell(c, corpus.items, store);
      CHECK(s.score == 1.0);  // d(x,a)=0 < d(x,b)=0.5
      CHECK(s.n_triplets == 2);
    }
    CHECK(saw_a_first);
  }
  SUBCASE("identical A and B feature sets tie at one half") {
    DirectCorpus corpus;
    for (int tok = 0; tok < 2; ++tok)
      corpus.add_token("a", "b", "d", "s1", const_frames(2, {1.0f, 1.0f}));
    for (int tok = 0; tok < 2; ++tok)
      corpus.add_token("i", "b", "d", "s1", const_frames(2, {1.0f, 1.0f}));
    const auto cs = abx::build_cells(corpus.items, abx::Task::TriphoneWithinSpk);
    const auto store = corpus.store();
    for (const auto& c : cs.cells) CHECK(abx::score_cell(c, corpus.items, store).score == 0.5);
  }
  SUBCASE("missing features raise an error naming the token") {
    DirectCorpus corpus;
    corpus.add_token("a", "b", "d", "s1", const_frames(2, {1.0f, 0.0f}));
    corpus.add_token("a", "b", "d", "s1", const_frames(2, {1.0f, 0.0f}));
    corpus.add_token("i", "b", "d", "s1", const_frames(2, {0.0f, 1.0f}));
    const auto cs = abx::build_cells(corpus.items, abx::Task::TriphoneWithinSpk);
    auto seqs = corpus.seqs;
    seqs.pop_back();  // drop tok2's features
    const auto store = io::FeatureStore::from_sequences(seqs);
    CHECK_THROWS_WITH_AS(abx::score_cell(cs.cells[0], corpus.items, store),
                         doctest::Contains("tok2"), input_error);
  }
}

TEST_CASE("aggregate_scores symmetrizes and averages unweighted") {
  DirectCorpus corpus;
  corpus.add_token("a", "b", "d", "s1", const_frames(1, {1.0f, 0.0f}));
  corpus.add_token("a", "b", "d", "s1", const_frames(1, {1.0f, 0.1f}));
  corpus.add_token("i", "b", "d", "s1", const_frames(1, {0.0f, 1.0f}));
  corpus.add_token("i", "b", "d", "s1", const_frames(1, {0.1f, 1.0f}));
  const auto r =
      abx::evaluate(corpus.items, corpus.store(), abx::Task::TriphoneWithinSpk);
  // both directions separate cleanly: score 1, error 0
  CHECK(r.score == 1.0);
  CHECK(r.error_rate == 0.0);
  REQUIRE(r.modes.size() == 1);
  REQUIRE(r.modes[0].contrasts.size() == 1);
  CHECK(r.modes[0].contrasts[0].n_cells == 2);  // (A,B) and (B,A)

  SUBCASE("two contrasts average unweighted") {
    // add a second contrast that ties at 0.5 everywhere
    DirectCorpus more = corpus;
    more.add_token("u", "b", "d", "s1", const_frames(1, {1.0f, 0.0f}));
    more.add_token("u", "b", "d", "s1", const_frames(1, {1.0f, 0.0f}));
    more.add_token("o", "b", "d", "s1", const_frames(1, {1.0f, 0.0f}));
    more.add_token("o", "b", "d", "s1", const_frames(1, {1.0f, 0.0f}));
    // u and o are identical directions: their contrast ties at 0.5; the
    // mixed contrasts (a|u etc.) are clean; unweighted mean over 6 contrasts
    const auto r2 = abx::evaluate(more.items, more.store(), abx::Task::TriphoneWithinSpk);
    REQUIRE(r2.modes[0].contrasts.size() == 6);
    bool found_tie = false;
    for (const auto& c : r2.modes[0].contrasts)
      if (c.label_a == "b-o-d" && c.label_b == "b-u-d") {
        CHECK(c.score == 0.5);
        found_tie = true;
      }
    CHECK(found_tie);
  }
}

TEST_CASE("abx error rate arithmetic at the aggregation levels") {
  auto make_cell = [](const std::string& la, const std::string& lb) {
    abx::Cell c;
    c.task = abx::Task::TriphoneWithinSpk;
    c.mode = abx::SpeakerMode::Within;
    c.label_a = la;
    c.label_b = lb;
    c.speaker = "s1";
    c.ctx_prev = "b";
    c.ctx_next = "d";
    c.a = {0, 1};
    c.b = {2};
    c.x = c.a;
    return c;
  };
  SUBCASE("one cell with score 1 gives error 0") {
    const std::vector<abx::Cell> cells{make_cell("b-a-d", "b-i-d")};
    const std::vector<abx::CellScore> scores{{1.0, 2}};
    const auto r = abx::aggregate_scores(abx::Task::TriphoneWithinSpk, cells, scores, 3, 1, 0);
    CHECK(r.error_rate == 0.0);
    CHECK(r.score == 1.0);
  }
  SUBCASE("two contrasts with scores 1.0 and 0.5 average to error 0.25") {
    const std::vector<abx::Cell> cells{make_cell("b-a-d", "b-i-d"), make_cell("b-e-d", "b-u-d")};
    const std::vector<abx::CellScore> scores{{1.0, 2}, {0.5, 2}};
    const auto r = abx::aggregate_scores(abx::Task::TriphoneWithinSpk, cells, scores, 6, 2, 0);
    CHECK(r.error_rate == 0.25);
  }
  SUBCASE("ordered directions of one contrast symmetrize before averaging") {
    const std::vector<abx::Cell> cells{make_cell("b-a-d", "b-i-d"), make_cell("b-i-d", "b-a-d"),
                                       make_cell("b-e-d", "b-u-d")};
    const std::vector<abx::CellScore> scores{{1.0, 2}, {0.5, 2}, {1.0, 2}};
    // contrast {a,i} symmetrizes to 0.75; mean(0.75, 1.0) = 0.875
    const auto r = abx::aggregate_scores(abx::Task::TriphoneWithinSpk, cells, scores, 6, 3, 0);
    CHECK(r.score == 0.875);
    CHECK(r.error_rate == 0.125);
  }
  SUBCASE("zero cells raise") {
    CHECK_THROWS_WITH_AS(
        abx::aggregate_scores(abx::Task::TriphoneWithinSpk, {}, {}, 0, 0, 0),
        doctest::Contains("no cells"), input_error);
  }
}

TEST_CASE("evaluate raises on empty cell sets") {
  DirectCorpus corpus;
  corpus.add_token("a", "b", "d", "s1", const_frames(1, {1.0f, 0.0f}));
  CHECK_THROWS_WITH_AS(abx::evaluate(corpus.items, corpus.store(), abx::Task::TriphoneWithinSpk),
                       doctest::Contains("no cells"), input_error);
}

TEST_CASE("full pipeline matches the flat oracle on a synthetic corpus") {
  oracles::SynthSpec spec;
  spec.n_speakers = 2;
  spec.n_phones = 3;
  spec.n_utterances = 8;
  const auto corpus = oracles::make_random_corpus(2024, spec);
  abx::BuildOptions opts;
  opts.max_cell_size = 100000;  // no capping against the uncapped oracle

  for (auto task : {abx::Task::TriphoneWithinSpk, abx::Task::TriphoneAcrossSpk,
                    abx::Task::PhoneWithinCtx, abx::Task::PhoneAnyCtx}) {
    const auto want = oracles::oracle_condition(corpus.align, corpus.store, task);
    if (!want.valid) continue;
    const auto items = abx::extract_items(corpus.align, abx::task_span(task));
    const auto got = abx::evaluate(items, corpus.store, task, opts);
    CHECK(std::abs(got.error_rate - want.error) <= 1e-12);
  }
}

TEST_CASE("scores are invariant under positive feature scaling") {
  oracles::SynthSpec spec;
  spec.n_phones = 3;
  spec.n_utterances = 6;
  auto corpus = oracles::make_random_corpus(77, spec);
  const auto items = abx::extract_items(corpus.align, abx::Span::Triphone);
  const auto base = abx::evaluate(items, corpus.store, abx::Task::TriphoneWithinSpk);

  auto scaled = corpus.store;
  for (auto& [id, seq] : scaled.sequences())
    for (auto& v : seq.data.storage()) v *= 7.3f;
  const auto after = abx::evaluate(items, scaled, abx::Task::TriphoneWithinSpk);
  CHECK(base.score == after.score);
  CHECK(base.n_triplets == after.n_triplets);
}

TEST_CASE("centroid features of a degenerate codebook tie everything at 0.5") {
  // all centroids equal: every token collapses to the same direction
  quantize::Codebook cb;
  cb.centroids = Matrix<double>(3, 2);
  for (std::size_t j = 0; j < 3; ++j) {
    cb.centroids(j, 0) = 0.5;
    cb.centroids(j, 1) = 1.5;
  }
  DirectCorpus corpus;
  Rng rng(6);
  for (const std::string center : {"a", "i"}) {
    for (int tok = 0; tok < 3; ++tok) {
      quantize::UnitSequence us;
      us.frame_rate = 50.0;
      us.units = {static_cast<std::int32_t>(rng.next_below(3)),
                  static_cast<std::int32_t>(rng.next_below(3))};
      const auto feats = quantize::centroid_features(cb, us);
      corpus.add_token(center, "b", "d", "s1", feats.data);
    }
  }
  const auto r = abx::evaluate(corpus.items, corpus.store(), abx::Task::TriphoneWithinSpk);
  CHECK(r.score == 0.5);
  CHECK(r.error_rate == 0.5);
}

TEST_CASE("one-hot length-1 items tie when unit multisets are permutations") {
  // every token one frame, unit one-hot over k=4; A and B tokens carry
  // different units, so every pairwise distance is 0.5 and everything ties
  DirectCorpus corpus;
  auto one_hot = [](std::size_t k, std::size_t idx) {
    Matrix<float> m(1, k, 0.0f);
    m(0, idx) = 1.0f;
    return m;
  };
  corpus.add_token("a", "b", "d", "s1", one_hot(4, 0));
  corpus.add_token("a", "b", "d", "s1", one_hot(4, 1));
  corpus.add_token("i", "b", "d", "s1", one_hot(4, 2));
  corpus.add_token("i", "b", "d", "s1", one_hot(4, 3));
  const auto r = abx::evaluate(corpus.items, corpus.store(), abx::Task::TriphoneWithinSpk);
  CHECK(r.score == 0.5);
  CHECK(r.error_rate == 0.5);
}
