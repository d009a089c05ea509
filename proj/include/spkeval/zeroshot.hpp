#pragma once
// Paired zero-shot evaluation: a pair is correct when the true member scores
// strictly higher than its foil, with half credit on an exact tie, so a
// degenerate constant scorer sits at exactly 50%.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/io.hpp"
#include "spkeval/threading.hpp"

namespace spkeval::zeroshot {

struct SequenceScore {
  double logprob = 0.0;
  std::optional<std::uint64_t> n_tokens;  // enables per-token normalization
};

struct PairResult {
  std::string pair_id;
  bool in_vocab = false;
  double logprob_true = 0.0;
  double logprob_other = 0.0;
  double credit_raw = 0.0;
  std::optional<double> credit_per_token;
};

struct Report {
  std::size_t n_pairs = 0;
  double accuracy_raw = 0.0;
  std::optional<double> accuracy_per_token;
  std::vector<PairResult> pairs;  // manifest order
};

namespace detail {

inline double credit(double score_true, double score_other) {
  if (score_true > score_other) return 1.0;
  if (score_true == score_other) return 0.5;
  return 0.0;
}

}  // namespace detail

// Scorer: SequenceScore(const std::string& sequence_id). Must be pure; pairs
// are scored data-parallel and reduced in manifest order.
template <typename Scorer>
Report pair_accuracy(Scorer&& scorer, const std::vector<PairEntry>& manifest,
                     bool in_vocab_only = false) {
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (!in_vocab_only || manifest[i].in_vocab) selected.push_back(i);
  if (selected.empty())
    throw input_error(in_vocab_only ? "pair_accuracy: no in-vocab pairs"
                                    : "pair_accuracy: no pairs");

  Report report;
  report.pairs.resize(selected.size());
  parallel_for(selected.size(), [&](std::size_t s) {
    const PairEntry& p = manifest[selected[s]];
    const SequenceScore sa = scorer(p.member_a);
    const SequenceScore sb = scorer(p.member_b);
    const SequenceScore& st = p.correct_is_a ? sa : sb;
    const SequenceScore& so = p.correct_is_a ? sb : sa;
    PairResult r;
    r.pair_id = p.pair_id;
    r.in_vocab = p.in_vocab;
    r.logprob_true = st.logprob;
    r.logprob_other = so.logprob;
    r.credit_raw = detail::credit(st.logprob, so.logprob);
    if (st.n_tokens && so.n_tokens && *st.n_tokens > 0 && *so.n_tokens > 0) {
      r.credit_per_token = detail::credit(st.logprob / static_cast<double>(*st.n_tokens),
                                          so.logprob / static_cast<double>(*so.n_tokens));
    }
    report.pairs[s] = std::move(r);
  });

  report.n_pairs = report.pairs.size();
  double raw = 0.0, pt = 0.0;
  bool have_pt = true;
  for (const auto& r : report.pairs) {
    raw += r.credit_raw;
    if (r.credit_per_token)
      pt += *r.credit_per_token;
    else
      have_pt = false;
  }
  report.accuracy_raw = raw / static_cast<double>(report.n_pairs);
  if (have_pt) report.accuracy_per_token = pt / static_cast<double>(report.n_pairs);
  return report;
}

}  // namespace spkeval::zeroshot
