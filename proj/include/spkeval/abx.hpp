#pragma once
// ABX discriminability: item extraction from forced alignments, condition
// cell construction, triplet scoring, and the aggregation hierarchy
// cell -> symmetrized unordered contrast -> condition.
//
// Four task conditions are supported. Triphone tasks contrast triphones that
// differ only in the central phoneme, in a within-speaker or across-speaker
// arrangement. Phoneme tasks contrast single phones, either with a shared
// (prev, next) context or with no context constraint; each phoneme condition
// is the unweighted mean of its within- and across-speaker variants.
//
// Item file TSV: utterance_id \t onset \t offset \t center \t prev \t next
// \t speaker, with "#" marking an utterance edge.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/distance.hpp"
#include "spkeval/io.hpp"
#include "spkeval/threading.hpp"

namespace spkeval::abx {

inline constexpr const char* kEdgeMarker = "#";

enum class Span { Phone, Triphone };

enum class Task { TriphoneWithinSpk, TriphoneAcrossSpk, PhoneWithinCtx, PhoneAnyCtx };

enum class SpeakerMode { Within, Across };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::TriphoneWithinSpk: return "triphone-within-spk";
    case Task::TriphoneAcrossSpk: return "triphone-across-spk";
    case Task::PhoneWithinCtx: return "phone-within-ctx";
    case Task::PhoneAnyCtx: return "phone-any-ctx";
  }
  return "?";
}

inline std::optional<Task> task_from_name(const std::string& s) {
  if (s == "triphone-within-spk") return Task::TriphoneWithinSpk;
  if (s == "triphone-across-spk") return Task::TriphoneAcrossSpk;
  if (s == "phone-within-ctx") return Task::PhoneWithinCtx;
  if (s == "phone-any-ctx") return Task::PhoneAnyCtx;
  return std::nullopt;
}

inline Span task_span(Task t) {
  return (t == Task::TriphoneWithinSpk || t == Task::TriphoneAcrossSpk) ? Span::Triphone
                                                                        : Span::Phone;
}

inline const char* mode_name(SpeakerMode m) {
  return m == SpeakerMode::Within ? "within-speaker" : "across-speaker";
}

struct Item {
  std::string utterance_id;
  double onset = 0.0;
  double offset = 0.0;
  std::string center;
  std::string prev;
  std::string next;
  std::string speaker;
};

using ItemSet = std::vector<Item>;

// One item per phone occurrence; triphone span keeps interior occurrences
// only and widens (onset, offset) to cover all three phones.
inline ItemSet extract_items(const AlignmentTable& align, Span span) {
  ItemSet items;
  for (const auto& [utt, segs] : align.utterances) {
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const bool has_prev = i > 0;
      const bool has_next = i + 1 < segs.size();
      Item item;
      item.utterance_id = utt;
      item.center = segs[i].phone;
      item.speaker = segs[i].speaker;
      item.prev = has_prev ? segs[i - 1].phone : kEdgeMarker;
      item.next = has_next ? segs[i + 1].phone : kEdgeMarker;
      if (span == Span::Triphone) {
        if (!has_prev || !has_next) continue;
        item.onset = segs[i - 1].onset;
        item.offset = segs[i + 1].offset;
      } else {
        item.onset = segs[i].onset;
        item.offset = segs[i].offset;
      }
      items.push_back(std::move(item));
    }
  }
  return items;
}

inline void write_item_file(const ItemSet& items, const std::string& path) {
  std::string out;
  char buf[64];
  for (const auto& it : items) {
    out += it.utterance_id;
    std::snprintf(buf, sizeof(buf), "\t%.9f\t%.9f\t", it.onset, it.offset);
    out += buf;
    out += it.center;
    out += '\t';
    out += it.prev;
    out += '\t';
    out += it.next;
    out += '\t';
    out += it.speaker;
    out += '\n';
  }
  ioutil::write_binary_file(path, out);
}

inline ItemSet read_item_file(const std::string& path) {
  ItemSet items;
  ioutil::for_lines(path, [&](std::size_t lineno, std::string_view line) {
    const std::string where = path + ":" + std::to_string(lineno);
    auto cols = ioutil::split_tsv(line);
    if (cols.size() != 7)
      throw input_error(where + ": expected 7 tab-separated columns");
    Item it;
    it.utterance_id = std::string(cols[0]);
    it.onset = ioutil::parse_double(cols[1], where);
    it.offset = ioutil::parse_double(cols[2], where);
    it.center = std::string(cols[3]);
    it.prev = std::string(cols[4]);
    it.next = std::string(cols[5]);
    it.speaker = std::string(cols[6]);
    if (!(it.offset > it.onset)) throw input_error(where + ": offset must exceed onset");
    items.push_back(std::move(it));
  });
  return items;
}

struct Cell {
  Task task = Task::TriphoneWithinSpk;
  SpeakerMode mode = SpeakerMode::Within;
  std::string label_a;
  std::string label_b;
  std::string speaker;   // speaker shared by A and B
  std::string ctx_prev;  // empty for any-context cells
  std::string ctx_next;
  std::vector<std::size_t> a, b, x;  // indices into the ItemSet
};

struct BuildOptions {
  std::size_t max_cell_size = 20;
  std::size_t min_a = 2;
  std::size_t min_b = 1;
  std::uint64_t seed = 0;
};

struct CellSet {
  std::vector<Cell> cells;
  std::size_t n_candidates = 0;  // cells where both categories occur
  std::size_t n_skipped = 0;     // candidates failing the population minimums
};

namespace detail {

// Canonical item order: grouping below follows this order, so the cell set
// is independent of the item-file row order.
inline std::vector<std::size_t> canonical_order(const ItemSet& items) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
    const Item& a = items[lhs];
    const Item& b = items[rhs];
    auto ka = std::tie(a.utterance_id, a.onset, a.offset, a.center, a.prev, a.next, a.speaker);
    auto kb = std::tie(b.utterance_id, b.onset, b.offset, b.center, b.prev, b.next, b.speaker);
    if (ka != kb) return ka < kb;
    return lhs < rhs;
  });
  return order;
}

inline std::uint64_t cell_role_seed(std::uint64_t seed, const Cell& cell, const char* role) {
  std::uint64_t h = fnv1a64_bytes(&seed, sizeof(seed));
  h = fnv1a64(task_name(cell.task), h);
  h = fnv1a64(mode_name(cell.mode), h);
  h = fnv1a64(cell.label_a, h);
  h = fnv1a64("|", h);
  h = fnv1a64(cell.label_b, h);
  h = fnv1a64("|", h);
  h = fnv1a64(cell.speaker, h);
  h = fnv1a64("|", h);
  h = fnv1a64(cell.ctx_prev, h);
  h = fnv1a64("|", h);
  h = fnv1a64(cell.ctx_next, h);
  h = fnv1a64(role, h);
  return h;
}

// Seeded sample of `cap` entries, preserving the canonical order of the
// survivors. Input must already be canonically ordered.
inline void subsample(std::vector<std::size_t>& tokens, std::size_t cap, std::uint64_t seed) {
  if (tokens.size() <= cap) return;
  Rng rng(seed);
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + rng.next_below(positions.size() - i);
    std::swap(positions[i], positions[j]);
  }
  positions.resize(cap);
  std::sort(positions.begin(), positions.end());
  std::vector<std::size_t> kept;
  kept.reserve(cap);
  for (std::size_t p : positions) kept.push_back(tokens[p]);
  tokens = std::move(kept);
}

using TokenGroups =
    std::map<std::pair<std::string, std::string>,               // (prev, next) or ("","")
             std::map<std::string,                              // center phone
                      std::map<std::string, std::vector<std::size_t>>>>;  // speaker -> tokens

inline TokenGroups group_tokens(const ItemSet& items, bool keyed_by_context, Span span) {
  TokenGroups groups;
  const auto order = canonical_order(items);
  for (std::size_t idx : order) {
    const Item& it = items[idx];
    if (span == Span::Triphone && (it.prev == kEdgeMarker || it.next == kEdgeMarker))
      continue;  // triphone tokens need both neighbors
    const auto key = keyed_by_context ? std::make_pair(it.prev, it.next)
                                      : std::make_pair(std::string(), std::string());
    groups[key][it.center][it.speaker].push_back(idx);
  }
  return groups;
}

inline std::string make_label(Span span, const std::string& prev, const std::string& center,
                              const std::string& next) {
  if (span == Span::Phone) return center;
  return prev + "-" + center + "-" + next;
}

}  // namespace detail

inline CellSet build_cells(const ItemSet& items, Task task, const BuildOptions& opts = {}) {
  const Span span = task_span(task);
  const bool keyed_by_context = (task != Task::PhoneAnyCtx);
  const auto groups = detail::group_tokens(items, keyed_by_context, span);

  std::vector<SpeakerMode> modes;
  if (task == Task::TriphoneWithinSpk)
    modes = {SpeakerMode::Within};
  else if (task == Task::TriphoneAcrossSpk)
    modes = {SpeakerMode::Across};
  else
    modes = {SpeakerMode::Within, SpeakerMode::Across};

  CellSet out;
  for (const auto& [ctx, by_center] : groups) {
    for (const auto& [center_a, speakers_a] : by_center) {
      for (const auto& [center_b, speakers_b] : by_center) {
        if (center_a == center_b) continue;
        for (SpeakerMode mode : modes) {
          for (const auto& [spk, tokens_a] : speakers_a) {
            auto itb = speakers_b.find(spk);
            if (itb == speakers_b.end()) continue;
            const auto& tokens_b = itb->second;
            Cell cell;
            cell.task = task;
            cell.mode = mode;
            cell.label_a = detail::make_label(span, ctx.first, center_a, ctx.second);
            cell.label_b = detail::make_label(span, ctx.first, center_b, ctx.second);
            cell.speaker = spk;
            cell.ctx_prev = ctx.first;
            cell.ctx_next = ctx.second;
            cell.a = tokens_a;
            cell.b = tokens_b;
            if (mode == SpeakerMode::Across) {
              for (const auto& [other_spk, tokens_x] : speakers_a) {
                if (other_spk == spk) continue;
                cell.x.insert(cell.x.end(), tokens_x.begin(), tokens_x.end());
              }
            }
            ++out.n_candidates;
            const bool x_ok = mode == SpeakerMode::Within || !cell.x.empty();
            if (cell.a.size() < opts.min_a || cell.b.size() < opts.min_b || !x_ok) {
              ++out.n_skipped;
              continue;
            }
            detail::subsample(cell.a, opts.max_cell_size,
                              detail::cell_role_seed(opts.seed, cell, "A"));
            detail::subsample(cell.b, opts.max_cell_size,
                              detail::cell_role_seed(opts.seed, cell, "B"));
            if (mode == SpeakerMode::Within)
              cell.x = cell.a;
            else
              detail::subsample(cell.x, opts.max_cell_size,
                                detail::cell_role_seed(opts.seed, cell, "X"));
            out.cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  std::stable_sort(out.cells.begin(), out.cells.end(), [](const Cell& l, const Cell& r) {
    auto kl = std::tie(l.mode, l.label_a, l.label_b, l.speaker, l.ctx_prev, l.ctx_next);
    auto kr = std::tie(r.mode, r.label_a, r.label_b, r.speaker, r.ctx_prev, r.ctx_next);
    return kl < kr;
  });
  return out;
}

struct CellScore {
  double score = 0.0;
  std::size_t n_triplets = 0;
};

// Mean over triplets (a in A, b in B, x in X, x != a) of 1 if d(x,a) < d(x,b),
// 0.5 on an exact tie, 0 otherwise. Tokens are normalized once per cell, and
// within-speaker cells (X is A) fill the symmetric half of the A distances
// by mirroring, which is exact: transposing the cost matrix leaves the
// optimal path sum and length unchanged.
inline CellScore score_cell(const Cell& cell, const ItemSet& items, const io::FeatureStore& store) {
  std::map<std::size_t, Matrix<double>> normalized;
  auto token = [&](std::size_t idx) -> const Matrix<double>& {
    auto it = normalized.find(idx);
    if (it != normalized.end()) return it->second;
    const Item& item = items[idx];
    const FeatureSequence* seq = store.find(item.utterance_id);
    if (!seq)
      throw input_error("token " + item.utterance_id + "@" + std::to_string(item.onset) +
                        "s: utterance missing from feature store");
    auto [first, count] = io::frames_for_segment(*seq, item.onset, item.offset);
    return normalized
        .emplace(idx, distance::normalize_frames({seq->data, first, count}))
        .first->second;
  };
  for (auto i : cell.a) token(i);
  for (auto i : cell.b) token(i);
  for (auto i : cell.x) token(i);

  const bool x_is_a = cell.x == cell.a;
  Matrix<double> dxa(cell.x.size(), cell.a.size());
  Matrix<double> dxb(cell.x.size(), cell.b.size());
  for (std::size_t xi = 0; xi < cell.x.size(); ++xi) {
    for (std::size_t ai = 0; ai < cell.a.size(); ++ai) {
      if (cell.x[xi] == cell.a[ai]) {
        dxa(xi, ai) = 0.0;  // excluded from the triplet loop
        continue;
      }
      if (x_is_a && ai < xi) {
        dxa(xi, ai) = dxa(ai, xi);
        continue;
      }
      dxa(xi, ai) = distance::dtw_distance_normalized(token(cell.x[xi]), token(cell.a[ai]));
    }
    for (std::size_t bi = 0; bi < cell.b.size(); ++bi)
      dxb(xi, bi) = distance::dtw_distance_normalized(token(cell.x[xi]), token(cell.b[bi]));
  }

  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t ai = 0; ai < cell.a.size(); ++ai) {
    for (std::size_t bi = 0; bi < cell.b.size(); ++bi) {
      for (std::size_t xi = 0; xi < cell.x.size(); ++xi) {
        if (cell.x[xi] == cell.a[ai]) continue;
        const double da = dxa(xi, ai);
        const double db = dxb(xi, bi);
        if (da < db)
          acc += 1.0;
        else if (da == db)
          acc += 0.5;
        ++n;
      }
    }
  }
  if (n == 0) throw invariant_error("score_cell: no scorable triplets");
  return {acc / static_cast<double>(n), n};
}

struct ContrastStats {
  std::string label_a;  // unordered: label_a <= label_b
  std::string label_b;
  double score = 0.0;
  std::size_t n_cells = 0;
};

struct ModeStats {
  SpeakerMode mode = SpeakerMode::Within;
  double score = 0.0;
  std::size_t n_cells = 0;
  std::size_t n_triplets = 0;
  std::vector<ContrastStats> contrasts;
};

struct ScoredCell {
  SpeakerMode mode = SpeakerMode::Within;
  std::string label_a;
  std::string label_b;
  std::string speaker;
  std::string ctx_prev;
  std::string ctx_next;
  std::size_t n_a = 0, n_b = 0, n_x = 0;
  double score = 0.0;
  std::size_t n_triplets = 0;
};

struct ConditionReport {
  Task task = Task::TriphoneWithinSpk;
  double score = 0.0;
  double error_rate = 1.0;
  std::size_t n_items = 0;
  std::size_t n_candidates = 0;
  std::size_t n_cells = 0;
  std::size_t n_cells_skipped = 0;
  std::size_t n_triplets = 0;
  std::vector<ModeStats> modes;
  std::vector<ScoredCell> cells;
};

// Aggregation: mean the ordered (A,B)/(B,A) scores per shared key, mean those
// over keys within an unordered contrast, mean contrasts within a speaker
// mode, then mean the modes present. Unweighted at every level.
inline ConditionReport aggregate_scores(Task task, const std::vector<Cell>& cells,
                                        const std::vector<CellScore>& scores,
                                        std::size_t n_items, std::size_t n_candidates,
                                        std::size_t n_skipped) {
  if (cells.size() != scores.size()) throw invariant_error("aggregate_scores: size mismatch");
  ConditionReport report;
  report.task = task;
  report.n_items = n_items;
  report.n_candidates = n_candidates;
  report.n_cells = cells.size();
  report.n_cells_skipped = n_skipped;

  using ContrastKey = std::pair<std::string, std::string>;
  using SharedKey = std::tuple<std::string, std::string, std::string>;  // speaker, prev, next
  std::map<SpeakerMode, std::map<ContrastKey, std::map<SharedKey, std::vector<double>>>> grouped;
  std::map<SpeakerMode, std::size_t> mode_triplets;

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    ContrastKey ck = c.label_a <= c.label_b ? ContrastKey{c.label_a, c.label_b}
                                            : ContrastKey{c.label_b, c.label_a};
    grouped[c.mode][ck][{c.speaker, c.ctx_prev, c.ctx_next}].push_back(scores[i].score);
    mode_triplets[c.mode] += scores[i].n_triplets;
    report.n_triplets += scores[i].n_triplets;
    report.cells.push_back({c.mode, c.label_a, c.label_b, c.speaker, c.ctx_prev, c.ctx_next,
                            c.a.size(), c.b.size(), c.x.size(), scores[i].score,
                            scores[i].n_triplets});
  }
  if (cells.empty()) throw input_error("abx: no cells to aggregate");

  double condition_sum = 0.0;
  std::size_t condition_modes = 0;
  for (auto& [mode, by_contrast] : grouped) {
    ModeStats ms;
    ms.mode = mode;
    ms.n_triplets = mode_triplets[mode];
    double mode_sum = 0.0;
    for (auto& [ck, by_key] : by_contrast) {
      double contrast_sum = 0.0;
      std::size_t contrast_cells = 0;
      for (auto& [key, ordered_scores] : by_key) {
        double s = 0.0;
        for (double v : ordered_scores) s += v;  // symmetrize: mean of (A,B) and (B,A)
        contrast_sum += s / static_cast<double>(ordered_scores.size());
        contrast_cells += ordered_scores.size();
      }
      const double contrast_score = contrast_sum / static_cast<double>(by_key.size());
      ms.contrasts.push_back({ck.first, ck.second, contrast_score, contrast_cells});
      ms.n_cells += contrast_cells;
      mode_sum += contrast_score;
    }
    ms.score = mode_sum / static_cast<double>(by_contrast.size());
    condition_sum += ms.score;
    ++condition_modes;
    report.modes.push_back(std::move(ms));
  }
  report.score = condition_sum / static_cast<double>(condition_modes);
  report.error_rate = 1.0 - report.score;
  return report;
}

// Full pipeline for one task over one item set / feature store. Cells are
// scored data-parallel; the reduction follows the sorted cell order, so the
// report is identical for any thread count.
inline ConditionReport evaluate(const ItemSet& items, const io::FeatureStore& store, Task task,
                                const BuildOptions& opts = {}) {
  CellSet cs = build_cells(items, task, opts);
  if (cs.cells.empty())
    throw input_error(std::string("abx: no cells for task ") + task_name(task));
  std::vector<CellScore> scores(cs.cells.size());
  for_chunks(cs.cells.size(), 1, [&](std::size_t c, std::size_t b, std::size_t e) {
    (void)c;
    for (std::size_t i = b; i < e; ++i) scores[i] = score_cell(cs.cells[i], items, store);
  });
  return aggregate_scores(task, cs.cells, scores, items.size(), cs.n_candidates, cs.n_skipped);
}

}  // namespace spkeval::abx
