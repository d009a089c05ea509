#pragma once
// Interpolated absolute-discounting n-gram model over discrete unit
// sequences. Every sentence is padded with order-1 BOS symbols and one EOS;
// the prediction vocabulary is the trained unit inventory plus EOS, and the
// base case of the interpolation is uniform over that vocabulary, so every
// probability is strictly positive and each context distribution sums to 1.
//
// Model file (little-endian): magic "SPKL", u32 version (1), u32 order,
// f64 discount, u8 dedup flag, u32 vocab size, vocab unit ids (i32), then per
// order: u64 entry count and entries of (order i32 symbols, u64 count) in
// sorted order. BOS is stored as -1 and EOS as -2.

#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "spkeval/core.hpp"
#include "spkeval/io.hpp"
#include "spkeval/quantize.hpp"

namespace spkeval::lm {

inline constexpr std::int32_t kBos = -1;
inline constexpr std::int32_t kEos = -2;

struct ContextStats {
  std::uint64_t total = 0;
  std::map<std::int32_t, std::uint64_t> words;
};

struct NGramModel {
  std::size_t order = 0;
  double discount = 0.75;
  bool dedup_applied = false;
  std::vector<std::int32_t> unit_vocab;  // sorted unit ids, EOS excluded
  // tables[o-1]: context of o-1 symbols -> successor counts
  std::vector<std::map<std::vector<std::int32_t>, ContextStats>> tables;

  std::size_t vocab_size() const { return unit_vocab.size() + 1; }  // + EOS

  std::vector<std::int32_t> event_vocab() const {
    std::vector<std::int32_t> v;
    v.reserve(vocab_size());
    v.push_back(kEos);
    v.insert(v.end(), unit_vocab.begin(), unit_vocab.end());
    return v;
  }
};

namespace detail {

inline std::vector<std::int32_t> padded_stream(const std::vector<std::int32_t>& units,
                                               std::size_t order) {
  std::vector<std::int32_t> s;
  s.reserve(units.size() + order);
  for (std::size_t i = 0; i + 1 < order; ++i) s.push_back(kBos);
  s.insert(s.end(), units.begin(), units.end());
  s.push_back(kEos);
  return s;
}

}  // namespace detail

inline NGramModel ngram_train(const std::vector<quantize::UnitSequence>& corpus,
                              std::size_t order = 5, double discount = 0.75) {
  if (corpus.empty()) throw input_error("ngram_train: empty corpus");
  if (order < 1) throw input_error("ngram_train: order must be at least 1");
  if (!(discount > 0.0 && discount < 1.0))
    throw input_error("ngram_train: discount must lie in (0, 1)");

  NGramModel m;
  m.order = order;
  m.discount = discount;
  m.tables.resize(order);

  std::set<std::int32_t> vocab;
  for (const auto& seq : corpus)
    for (auto u : seq.units) {
      if (u < 0) throw input_error("ngram_train: negative unit id");
      vocab.insert(u);
    }
  m.unit_vocab.assign(vocab.begin(), vocab.end());

  std::vector<std::int32_t> ctx;
  for (const auto& seq : corpus) {
    const auto stream = detail::padded_stream(seq.units, order);
    const std::size_t first_event = order - 1;
    for (std::size_t t = first_event; t < stream.size(); ++t) {
      const std::int32_t w = stream[t];
      for (std::size_t o = 1; o <= order; ++o) {
        ctx.assign(stream.begin() + static_cast<std::ptrdiff_t>(t - (o - 1)),
                   stream.begin() + static_cast<std::ptrdiff_t>(t));
        auto& cs = m.tables[o - 1][ctx];
        ++cs.total;
        ++cs.words[w];
      }
    }
  }
  return m;
}

namespace detail {

inline double probability_rec(const NGramModel& m, std::span<const std::int32_t> ctx,
                              std::int32_t w, std::size_t ord) {
  if (ord == 0) return 1.0 / static_cast<double>(m.vocab_size());
  const auto& table = m.tables[ord - 1];
  thread_local std::vector<std::int32_t> key;
  key.assign(ctx.begin(), ctx.end());
  auto it = table.find(key);
  if (it == table.end())
    return probability_rec(m, ctx.empty() ? ctx : ctx.subspan(1), w, ord - 1);
  const ContextStats& cs = it->second;
  const double total = static_cast<double>(cs.total);
  double c_w = 0.0;
  if (auto wit = cs.words.find(w); wit != cs.words.end())
    c_w = static_cast<double>(wit->second);
  const double discounted = std::max(c_w - m.discount, 0.0) / total;
  const double lambda = m.discount * static_cast<double>(cs.words.size()) / total;
  return discounted +
         lambda * probability_rec(m, ctx.empty() ? ctx : ctx.subspan(1), w, ord - 1);
}

}  // namespace detail

// p(w | ctx): ctx holds the most recent symbols, oldest first. Only the last
// order-1 symbols are consulted.
inline double probability(const NGramModel& m, std::span<const std::int32_t> ctx,
                          std::int32_t w) {
  if (ctx.size() > m.order - 1) ctx = ctx.subspan(ctx.size() - (m.order - 1));
  // shorter histories are padded with BOS to the full context width
  if (ctx.size() < m.order - 1) {
    std::vector<std::int32_t> full(m.order - 1, kBos);
    std::copy(ctx.begin(), ctx.end(), full.end() - static_cast<std::ptrdiff_t>(ctx.size()));
    return detail::probability_rec(m, full, w, m.order);
  }
  return detail::probability_rec(m, ctx, w, m.order);
}

struct SequenceScore {
  double logprob = 0.0;
  std::size_t n_tokens = 0;  // scored events, EOS included
};

inline SequenceScore sequence_logprob(const NGramModel& m, const std::vector<std::int32_t>& units) {
  const auto stream = detail::padded_stream(units, m.order);
  SequenceScore out;
  for (std::size_t t = m.order - 1; t < stream.size(); ++t) {
    std::span<const std::int32_t> ctx(stream.data() + t - (m.order - 1), m.order - 1);
    out.logprob += std::log(detail::probability_rec(m, ctx, stream[t], m.order));
    ++out.n_tokens;
  }
  return out;
}

inline double perplexity(const NGramModel& m, const std::vector<quantize::UnitSequence>& corpus) {
  if (corpus.empty()) throw input_error("perplexity: empty corpus");
  double lp = 0.0;
  std::size_t n = 0;
  for (const auto& seq : corpus) {
    const auto s = sequence_logprob(m, seq.units);
    lp += s.logprob;
    n += s.n_tokens;
  }
  return std::exp(-lp / static_cast<double>(n));
}

inline constexpr char kModelMagic[4] = {'S', 'P', 'K', 'L'};

inline void write_ngram(const NGramModel& m, const std::string& path) {
  std::string bytes;
  bytes.append(kModelMagic, 4);
  ioutil::put_u32le(bytes, 1u);
  ioutil::put_u32le(bytes, static_cast<std::uint32_t>(m.order));
  ioutil::put_u64le(bytes, std::bit_cast<std::uint64_t>(m.discount));
  bytes.push_back(m.dedup_applied ? 1 : 0);
  ioutil::put_u32le(bytes, static_cast<std::uint32_t>(m.unit_vocab.size()));
  for (auto u : m.unit_vocab) ioutil::put_u32le(bytes, static_cast<std::uint32_t>(u));
  for (std::size_t o = 1; o <= m.order; ++o) {
    std::uint64_t n_entries = 0;
    for (const auto& [ctx, cs] : m.tables[o - 1]) n_entries += cs.words.size();
    ioutil::put_u64le(bytes, n_entries);
    for (const auto& [ctx, cs] : m.tables[o - 1]) {
      for (const auto& [w, count] : cs.words) {
        for (auto sym : ctx) ioutil::put_u32le(bytes, static_cast<std::uint32_t>(sym));
        ioutil::put_u32le(bytes, static_cast<std::uint32_t>(w));
        ioutil::put_u64le(bytes, count);
      }
    }
  }
  ioutil::write_binary_file(path, bytes);
}

inline NGramModel read_ngram(const std::string& path) {
  const std::string bytes = ioutil::read_binary_file(path);
  auto fail = [&](std::size_t offset, const std::string& what) -> input_error {
    return input_error("'" + path + "': " + what + " at byte " + std::to_string(offset));
  };
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (off + n > bytes.size()) throw fail(bytes.size(), "truncated model file");
  };
  need(4);
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw fail(0, "bad magic");
  off = 4;
  need(4);
  const std::uint32_t version = ioutil::get_u32le(bytes, off);
  if (version != 1) throw fail(off, "unsupported version " + std::to_string(version));
  off += 4;
  NGramModel m;
  need(4);
  m.order = ioutil::get_u32le(bytes, off);
  off += 4;
  if (m.order < 1) throw fail(off - 4, "order must be at least 1");
  need(8);
  m.discount = ioutil::get_f64le(bytes, off);
  off += 8;
  if (!(m.discount > 0.0 && m.discount < 1.0)) throw fail(off - 8, "discount out of range");
  need(1);
  m.dedup_applied = bytes[off] != 0;
  off += 1;
  need(4);
  const std::uint32_t vocab_size = ioutil::get_u32le(bytes, off);
  off += 4;
  m.unit_vocab.reserve(vocab_size);
  for (std::uint32_t i = 0; i < vocab_size; ++i) {
    need(4);
    m.unit_vocab.push_back(static_cast<std::int32_t>(ioutil::get_u32le(bytes, off)));
    off += 4;
  }
  m.tables.resize(m.order);
  for (std::size_t o = 1; o <= m.order; ++o) {
    need(8);
    const std::uint64_t n_entries = ioutil::get_u64le(bytes, off);
    off += 8;
    for (std::uint64_t e = 0; e < n_entries; ++e) {
      std::vector<std::int32_t> ctx(o - 1);
      for (std::size_t i = 0; i + 1 < o; ++i) {
        need(4);
        ctx[i] = static_cast<std::int32_t>(ioutil::get_u32le(bytes, off));
        off += 4;
      }
      need(4);
      const auto w = static_cast<std::int32_t>(ioutil::get_u32le(bytes, off));
      off += 4;
      need(8);
      const std::uint64_t count = ioutil::get_u64le(bytes, off);
      off += 8;
      auto& cs = m.tables[o - 1][ctx];
      cs.total += count;
      cs.words[w] += count;
    }
  }
  if (off != bytes.size()) throw fail(off, "trailing data beyond declared payload");
  return m;
}

inline std::string symbol_name(std::int32_t s) {
  if (s == kBos) return "<s>";
  if (s == kEos) return "</s>";
  return std::to_string(s);
}

inline void dump_ngram(const NGramModel& m, std::ostream& out) {
  out << "order\t" << m.order << "\n";
  out << "discount\t" << m.discount << "\n";
  out << "vocab\t" << m.vocab_size() << "\n";
  for (std::size_t o = 1; o <= m.order; ++o) {
    for (const auto& [ctx, cs] : m.tables[o - 1]) {
      for (const auto& [w, count] : cs.words) {
        out << o << '\t';
        for (std::size_t i = 0; i < ctx.size(); ++i) {
          if (i) out << ' ';
          out << symbol_name(ctx[i]);
        }
        out << '\t' << symbol_name(w) << '\t' << count << "\n";
      }
    }
  }
}

}  // namespace spkeval::lm
