// spkeval command-line front end. Every subcommand writes machine-readable
// reports (JSON, and CSV where tabular) under --out, embedding the resolved
// configuration, the global seed, and input digests. Exit codes: 0 success,
// 2 input error, 3 internal invariant violation.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spkeval/abx.hpp"
#include "spkeval/core.hpp"
#include "spkeval/distance.hpp"
#include "spkeval/io.hpp"
#include "spkeval/lm.hpp"
#include "spkeval/mcd.hpp"
#include "spkeval/quantize.hpp"
#include "spkeval/report.hpp"
#include "spkeval/threading.hpp"
#include "spkeval/unitmetrics.hpp"
#include "spkeval/zeroshot.hpp"

namespace fs = std::filesystem;
using spkeval::input_error;
using spkeval::report::ojson;
namespace abx = spkeval::abx;
namespace io = spkeval::io;
namespace lm = spkeval::lm;
namespace mcd = spkeval::mcd;
namespace quantize = spkeval::quantize;
namespace report = spkeval::report;
namespace um = spkeval::unitmetrics;
namespace zeroshot = spkeval::zeroshot;

namespace {

struct Global {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware default
};

std::string out_path(const Global& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / name).string();
}

// Explicit output paths (--codebook, --units, --model, ...) get their parent
// directory created the same way --out does.
std::string ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  return path;
}

// Digest of a feature directory: the manifest digest chained with every
// listed file's digest, in manifest order.
std::string digest_feature_dir(const std::string& dir, const std::string& manifest_name) {
  const std::string manifest_path = (fs::path(dir) / manifest_name).string();
  if (!fs::exists(manifest_path)) throw input_error("missing manifest '" + manifest_path + "'");
  std::string acc = report::digest_file(manifest_path);
  for (const auto& [id, rel] : io::read_manifest(manifest_path))
    acc = spkeval::to_hex(spkeval::fnv1a64(
        report::digest_file((fs::path(dir) / rel).string()), spkeval::fnv1a64(acc)));
  return "fnv1a64:" + spkeval::to_hex(spkeval::fnv1a64(acc));
}

// ---------------------------------------------------------------------------
// abx / sweep

std::vector<abx::Task> resolve_tasks(const std::vector<std::string>& names) {
  std::vector<abx::Task> tasks;
  for (const auto& name : names) {
    if (name == "all") {
      return {abx::Task::TriphoneWithinSpk, abx::Task::TriphoneAcrossSpk,
              abx::Task::PhoneWithinCtx, abx::Task::PhoneAnyCtx};
    }
    auto t = abx::task_from_name(name);
    if (!t) throw input_error("unknown task '" + name + "'");
    tasks.push_back(*t);
  }
  return tasks;
}

struct ItemsSource {
  std::string items_path;      // pre-built item file (single span)
  std::string alignment_path;  // alignment to extract items from
};

// Items per span, loaded or extracted on demand.
class ItemsProvider {
 public:
  ItemsProvider(const ItemsSource& src, const std::vector<abx::Task>& tasks) : src_(src) {
    if (src.items_path.empty() == src.alignment_path.empty())
      throw input_error("provide exactly one of --items and --alignment");
    if (!src.items_path.empty()) {
      abx::Span span = abx::task_span(tasks.front());
      for (auto t : tasks)
        if (abx::task_span(t) != span)
          throw input_error("--items holds one item span; use --alignment to run tasks of "
                            "both spans in one invocation");
      items_[span] = abx::read_item_file(src.items_path);
    } else {
      const spkeval::AlignmentTable align = io::read_alignment(src.alignment_path);
      for (auto t : tasks) {
        abx::Span span = abx::task_span(t);
        if (!items_.count(span)) items_[span] = abx::extract_items(align, span);
      }
    }
  }

  const abx::ItemSet& items(abx::Span span) const { return items_.at(span); }

 private:
  ItemsSource src_;
  std::map<abx::Span, abx::ItemSet> items_;
};

ojson condition_to_json(const abx::ConditionReport& r, bool with_cells) {
  ojson j;
  j["error_rate"] = r.error_rate;
  j["score"] = r.score;
  j["n_items"] = r.n_items;
  j["n_candidates"] = r.n_candidates;
  j["n_cells"] = r.n_cells;
  j["n_cells_skipped"] = r.n_cells_skipped;
  j["n_triplets"] = r.n_triplets;
  ojson modes = ojson::array();
  for (const auto& m : r.modes) {
    ojson mj;
    mj["mode"] = abx::mode_name(m.mode);
    mj["score"] = m.score;
    mj["error_rate"] = 1.0 - m.score;
    mj["n_cells"] = m.n_cells;
    mj["n_triplets"] = m.n_triplets;
    ojson contrasts = ojson::array();
    for (const auto& c : m.contrasts) {
      contrasts.push_back({{"contrast", c.label_a + "|" + c.label_b},
                           {"score", c.score},
                           {"error_rate", 1.0 - c.score},
                           {"n_cells", c.n_cells}});
    }
    mj["contrasts"] = contrasts;
    modes.push_back(mj);
  }
  j["speaker_modes"] = modes;
  if (with_cells) {
    ojson cells = ojson::array();
    for (const auto& c : r.cells) {
      cells.push_back({{"mode", abx::mode_name(c.mode)},
                       {"labels", c.label_a + "|" + c.label_b},
                       {"speaker", c.speaker},
                       {"context", c.ctx_prev + "_" + c.ctx_next},
                       {"score", c.score},
                       {"error_rate", 1.0 - c.score},
                       {"n_triplets", c.n_triplets},
                       {"n_a", c.n_a},
                       {"n_b", c.n_b},
                       {"n_x", c.n_x}});
    }
    j["cells"] = cells;
  }
  return j;
}

const std::vector<std::string> kAbxCsvHeader = {
    "dataset", "task",    "level",      "speaker_mode", "contrast",  "speaker",
    "context", "score",   "error_rate", "n_cells",      "n_triplets"};

void abx_csv_rows(report::CsvWriter& csv, const std::string& dataset,
                  const abx::ConditionReport& r) {
  const std::string task = abx::task_name(r.task);
  for (const auto& c : r.cells) {
    csv.row({dataset, task, "cell", abx::mode_name(c.mode), c.label_a + "|" + c.label_b,
             c.speaker, c.ctx_prev + "_" + c.ctx_next, report::fmt_double(c.score),
             report::fmt_double(1.0 - c.score), "1", std::to_string(c.n_triplets)});
  }
  for (const auto& m : r.modes) {
    for (const auto& c : m.contrasts) {
      csv.row({dataset, task, "contrast", abx::mode_name(m.mode), c.label_a + "|" + c.label_b,
               "", "", report::fmt_double(c.score), report::fmt_double(1.0 - c.score),
               std::to_string(c.n_cells), ""});
    }
    csv.row({dataset, task, "mode", abx::mode_name(m.mode), "", "", "",
             report::fmt_double(m.score), report::fmt_double(1.0 - m.score),
             std::to_string(m.n_cells), std::to_string(m.n_triplets)});
  }
  csv.row({dataset, task, "condition", "", "", "", "", report::fmt_double(r.score),
           report::fmt_double(r.error_rate), std::to_string(r.n_cells),
           std::to_string(r.n_triplets)});
}

struct AbxArgs {
  std::vector<std::string> features;
  std::string manifest = "manifest.tsv";
  std::vector<std::string> items;
  std::vector<std::string> alignments;
  std::vector<std::string> dataset_names;
  std::vector<std::string> tasks = {"all"};
  std::size_t max_cell_size = 20;
  std::size_t min_a = 2;
  std::size_t min_b = 1;
};

void run_abx(const Global& g, const AbxArgs& a) {
  const auto tasks = resolve_tasks(a.tasks);
  abx::BuildOptions opts;
  opts.max_cell_size = a.max_cell_size;
  opts.min_a = a.min_a;
  opts.min_b = a.min_b;
  opts.seed = g.seed;

  const std::size_t n_datasets = a.features.size();
  if (n_datasets == 0) throw input_error("at least one --features directory is required");
  const auto& sources = a.items.empty() ? a.alignments : a.items;
  if (!a.items.empty() && !a.alignments.empty())
    throw input_error("provide exactly one of --items and --alignment");
  if (sources.size() != n_datasets)
    throw input_error("need one --items/--alignment per --features directory");
  if (!a.dataset_names.empty() && a.dataset_names.size() != n_datasets)
    throw input_error("--dataset-name count must match --features count");

  report::Inputs inputs;
  ojson datasets_json = ojson::array();
  std::map<abx::Task, std::vector<double>> cross_errors;

  auto csv_path = out_path(g, "abx_report.csv");
  report::CsvWriter csv(csv_path);
  csv.row(kAbxCsvHeader);

  for (std::size_t d = 0; d < n_datasets; ++d) {
    const std::string name =
        a.dataset_names.empty() ? "ds" + std::to_string(d) : a.dataset_names[d];
    ItemsSource src;
    if (!a.items.empty())
      src.items_path = sources[d];
    else
      src.alignment_path = sources[d];
    inputs.add_digest("features:" + a.features[d], digest_feature_dir(a.features[d], a.manifest));
    inputs.add_file((a.items.empty() ? "alignment:" : "items:") + sources[d], sources[d]);

    const io::FeatureStore store = io::FeatureStore::load(a.features[d], a.manifest);
    ItemsProvider provider(src, tasks);

    ojson conditions = ojson::object();
    for (auto task : tasks) {
      const abx::ConditionReport r =
          abx::evaluate(provider.items(abx::task_span(task)), store, task, opts);
      conditions[abx::task_name(task)] = condition_to_json(r, true);
      abx_csv_rows(csv, name, r);
      cross_errors[task].push_back(r.error_rate);
    }
    datasets_json.push_back({{"name", name}, {"conditions", conditions}});
  }

  ojson cross = ojson::object();
  for (const auto& [task, errors] : cross_errors) {
    double s = 0.0;
    for (double e : errors) s += e;
    const double mean_error = s / static_cast<double>(errors.size());
    cross[abx::task_name(task)] = {{"error_rate", mean_error}, {"score", 1.0 - mean_error}};
    csv.row({"*", abx::task_name(task), "cross-dataset", "", "", "", "",
             report::fmt_double(1.0 - mean_error), report::fmt_double(mean_error), "", ""});
  }

  ojson config;
  config["features"] = a.features;
  config["manifest"] = a.manifest;
  config["items"] = a.items;
  config["alignment"] = a.alignments;
  config["task"] = a.tasks;
  config["max_cell_size"] = a.max_cell_size;
  config["min_a"] = a.min_a;
  config["min_b"] = a.min_b;
  config["out"] = g.out_dir;

  ojson j = report::envelope("abx", g.seed, config, inputs);
  j["results"] = {{"datasets", datasets_json}, {"cross_dataset", cross}};
  report::write_json_file(out_path(g, "abx_report.json"), j);
}

struct SweepArgs {
  std::vector<std::string> features;
  std::string manifest = "manifest.tsv";
  std::string items;
  std::string alignment;
  std::vector<std::string> tasks = {"all"};
  std::size_t max_cell_size = 20;
  std::size_t min_a = 2;
  std::size_t min_b = 1;
};

void run_sweep(const Global& g, const SweepArgs& a) {
  if (a.features.empty()) throw input_error("at least one --features directory is required");
  const auto tasks = resolve_tasks(a.tasks);
  abx::BuildOptions opts;
  opts.max_cell_size = a.max_cell_size;
  opts.min_a = a.min_a;
  opts.min_b = a.min_b;
  opts.seed = g.seed;

  ItemsSource src;
  src.items_path = a.items;
  src.alignment_path = a.alignment;
  ItemsProvider provider(src, tasks);

  report::Inputs inputs;
  inputs.add_file(a.items.empty() ? "alignment:" + a.alignment : "items:" + a.items,
                  a.items.empty() ? a.alignment : a.items);

  report::CsvWriter csv(out_path(g, "sweep_report.csv"));
  csv.row({"feature_set", "task", "score", "error_rate", "n_cells", "n_triplets"});

  ojson rows = ojson::array();
  for (const auto& dir : a.features) {
    inputs.add_digest("features:" + dir, digest_feature_dir(dir, a.manifest));
    const io::FeatureStore store = io::FeatureStore::load(dir, a.manifest);
    for (auto task : tasks) {
      const abx::ConditionReport r =
          abx::evaluate(provider.items(abx::task_span(task)), store, task, opts);
      csv.row({dir, abx::task_name(task), report::fmt_double(r.score),
               report::fmt_double(r.error_rate), std::to_string(r.n_cells),
               std::to_string(r.n_triplets)});
      rows.push_back({{"feature_set", dir},
                      {"task", abx::task_name(task)},
                      {"score", r.score},
                      {"error_rate", r.error_rate},
                      {"n_cells", r.n_cells},
                      {"n_triplets", r.n_triplets}});
    }
  }

  ojson config;
  config["features"] = a.features;
  config["manifest"] = a.manifest;
  config["items"] = a.items;
  config["alignment"] = a.alignment;
  config["task"] = a.tasks;
  config["max_cell_size"] = a.max_cell_size;
  config["min_a"] = a.min_a;
  config["min_b"] = a.min_b;
  config["out"] = g.out_dir;

  ojson j = report::envelope("sweep", g.seed, config, inputs);
  j["results"] = {{"rows", rows}};
  report::write_json_file(out_path(g, "sweep_report.json"), j);
}

// ---------------------------------------------------------------------------
// quantize / assign

struct QuantizeArgs {
  std::string features;
  std::string manifest = "manifest.tsv";
  std::size_t k = 500;
  std::size_t max_iter = 300;
  double rel_tol = 1e-6;
  std::string codebook;
};

void run_quantize(const Global& g, const QuantizeArgs& a) {
  report::Inputs inputs;
  inputs.add_digest("features:" + a.features, digest_feature_dir(a.features, a.manifest));
  const io::FeatureStore store = io::FeatureStore::load(a.features, a.manifest);

  std::size_t n_frames = 0;
  std::size_t dim = 0;
  for (const auto& [id, rel] : store.manifest()) {
    const auto& seq = store.get(id);
    if (dim == 0)
      dim = seq.dim();
    else if (dim != seq.dim())
      throw input_error("utterance '" + id + "' has dim " + std::to_string(seq.dim()) +
                        ", expected " + std::to_string(dim));
    n_frames += seq.n_frames();
  }
  spkeval::Matrix<float> samples(n_frames, dim);
  std::size_t row = 0;
  for (const auto& [id, rel] : store.manifest()) {
    const auto& seq = store.get(id);
    for (std::size_t i = 0; i < seq.n_frames(); ++i, ++row) {
      auto src = seq.data.row(i);
      std::copy(src.begin(), src.end(), samples.row(row).begin());
    }
  }

  quantize::KMeansOptions opts;
  opts.max_iter = a.max_iter;
  opts.rel_tol = a.rel_tol;
  std::vector<double> history;
  const quantize::Codebook cb = quantize::kmeans_fit(samples, a.k, g.seed, opts, &history);

  const std::string cb_path = a.codebook.empty() ? out_path(g, "codebook.spkc") : ensure_parent(a.codebook);
  quantize::write_codebook(cb, cb_path);

  ojson config;
  config["features"] = a.features;
  config["manifest"] = a.manifest;
  config["k"] = a.k;
  config["max_iter"] = a.max_iter;
  config["rel_tol"] = a.rel_tol;
  config["codebook"] = cb_path;
  config["out"] = g.out_dir;

  ojson j = report::envelope("quantize", g.seed, config, inputs);
  j["results"] = {{"k", cb.k()},
                  {"dim", cb.dim()},
                  {"n_samples", n_frames},
                  {"iterations", cb.iterations_run},
                  {"inertia", cb.final_inertia},
                  {"inertia_history", history},
                  {"codebook_digest", report::digest_file(cb_path)}};
  report::write_json_file(out_path(g, "quantize_report.json"), j);
}

struct AssignArgs {
  std::string features;
  std::string manifest = "manifest.tsv";
  std::string codebook;
  bool argmax = false;
  std::string units;
  std::string emit_centroid;
  std::string emit_onehot;
};

void write_feature_dir(const std::string& dir, const std::vector<spkeval::FeatureSequence>& seqs) {
  fs::create_directories(dir);
  std::string manifest;
  for (const auto& seq : seqs) {
    const std::string rel = seq.utterance_id + ".spkf";
    io::write_feature_file(seq, (fs::path(dir) / rel).string());
    manifest += seq.utterance_id + "\t" + rel + "\n";
  }
  spkeval::ioutil::write_binary_file((fs::path(dir) / "manifest.tsv").string(), manifest);
}

void run_assign(const Global& g, const AssignArgs& a) {
  if (a.codebook.empty() == !a.argmax)
    throw input_error("provide exactly one of --codebook and --argmax");
  report::Inputs inputs;
  inputs.add_digest("features:" + a.features, digest_feature_dir(a.features, a.manifest));
  const io::FeatureStore store = io::FeatureStore::load(a.features, a.manifest);

  std::optional<quantize::Codebook> cb;
  if (!a.argmax) {
    cb = quantize::read_codebook(a.codebook);
    inputs.add_file("codebook:" + a.codebook, a.codebook);
  }

  std::vector<quantize::UnitSequence> units;
  std::size_t n_frames = 0;
  std::size_t k = 0;
  for (const auto& [id, rel] : store.manifest()) {
    const auto& seq = store.get(id);
    quantize::UnitSequence us;
    if (a.argmax) {
      // logit path: the predicted label is the per-frame argmax
      us.utterance_id = id;
      us.frame_rate = seq.frame_rate;
      us.units.resize(seq.n_frames());
      for (std::size_t i = 0; i < seq.n_frames(); ++i) {
        auto x = seq.data.row(i);
        std::size_t best = 0;
        for (std::size_t d = 1; d < x.size(); ++d)
          if (x[d] > x[best]) best = d;
        us.units[i] = static_cast<std::int32_t>(best);
      }
      k = std::max(k, seq.dim());
    } else {
      us = quantize::assign(*cb, seq);
      k = cb->k();
    }
    n_frames += us.units.size();
    units.push_back(std::move(us));
  }

  const std::string units_path = a.units.empty() ? out_path(g, "units.tsv") : ensure_parent(a.units);
  quantize::write_unit_file(units, units_path);

  if (!a.emit_centroid.empty()) {
    if (a.argmax) throw input_error("--emit-centroid requires --codebook");
    std::vector<spkeval::FeatureSequence> seqs;
    for (const auto& us : units) seqs.push_back(quantize::centroid_features(*cb, us));
    write_feature_dir(a.emit_centroid, seqs);
  }
  if (!a.emit_onehot.empty()) {
    std::vector<spkeval::FeatureSequence> seqs;
    for (const auto& us : units) seqs.push_back(quantize::one_hot_features(us, k));
    write_feature_dir(a.emit_onehot, seqs);
  }

  ojson config;
  config["features"] = a.features;
  config["manifest"] = a.manifest;
  config["codebook"] = a.codebook;
  config["argmax"] = a.argmax;
  config["units"] = units_path;
  config["emit_centroid"] = a.emit_centroid;
  config["emit_onehot"] = a.emit_onehot;
  config["out"] = g.out_dir;

  ojson j = report::envelope("assign", g.seed, config, inputs);
  j["results"] = {{"n_utterances", units.size()},
                  {"n_frames", n_frames},
                  {"k", k},
                  {"units_digest", report::digest_file(units_path)}};
  report::write_json_file(out_path(g, "assign_report.json"), j);
}

// ---------------------------------------------------------------------------
// unit-metrics / per

struct UnitMetricsArgs {
  std::string units;
  std::string alignment;
  double frame_rate = 50.0;
  std::size_t n_units = 0;
};

void run_unit_metrics(const Global& g, const UnitMetricsArgs& a) {
  report::Inputs inputs;
  inputs.add_file("units:" + a.units, a.units);
  inputs.add_file("alignment:" + a.alignment, a.alignment);
  const auto units = quantize::read_unit_file(a.units, a.frame_rate);
  const auto align = io::read_alignment(a.alignment);
  const um::JointTable table = um::joint_counts(units, align, a.n_units);

  const double v_pnmi = um::pnmi(table);
  const double v_phone_purity = um::phone_purity(table);
  const double v_cluster_purity = um::cluster_purity(table);

  ojson config;
  config["units"] = a.units;
  config["alignment"] = a.alignment;
  config["frame_rate"] = a.frame_rate;
  config["n_units"] = a.n_units;
  config["out"] = g.out_dir;

  auto metric_row = [&](const std::string& name, double value) {
    return ojson{{"metric", name},
                 {"value", value},
                 {"n_frames", table.total},
                 {"n_units", table.n_units()},
                 {"n_phones", table.n_phones()}};
  };
  ojson j = report::envelope("unit-metrics", g.seed, config, inputs);
  j["metrics"] = ojson::array({metric_row("pnmi", v_pnmi),
                               metric_row("phone_purity", v_phone_purity),
                               metric_row("cluster_purity", v_cluster_purity)});
  report::write_json_file(out_path(g, "unit_metrics.json"), j);

  report::CsvWriter csv(out_path(g, "unit_metrics.csv"));
  csv.row({"metric", "value", "n_frames", "n_units", "n_phones"});
  for (auto [name, value] : std::initializer_list<std::pair<const char*, double>>{
           {"pnmi", v_pnmi}, {"phone_purity", v_phone_purity}, {"cluster_purity", v_cluster_purity}})
    csv.row({name, report::fmt_double(value), std::to_string(table.total),
             std::to_string(table.n_units()), std::to_string(table.n_phones())});
}

struct PerArgs {
  std::string pred;
  std::string gold;
  std::string gold_alignment;
  double frame_rate = 50.0;
  bool collapse_gold = true;
};

void run_per(const Global& g, const PerArgs& a) {
  if (a.gold.empty() == a.gold_alignment.empty())
    throw input_error("provide exactly one of --gold and --gold-alignment");
  report::Inputs inputs;
  inputs.add_file("pred:" + a.pred, a.pred);
  const auto pred_rows = io::read_id_tokens_file(a.pred);

  std::map<std::string, std::vector<std::string>> gold_map;
  if (!a.gold.empty()) {
    inputs.add_file("gold:" + a.gold, a.gold);
    for (auto& [id, toks] : io::read_id_tokens_file(a.gold)) gold_map[id] = toks;
  } else {
    inputs.add_file("gold_alignment:" + a.gold_alignment, a.gold_alignment);
    const auto align = io::read_alignment(a.gold_alignment);
    std::map<std::string, std::int32_t> phone_ids;
    std::vector<std::string> phone_names;
    for (const auto& [utt, segs] : align.utterances)
      for (const auto& seg : segs) phone_ids.emplace(seg.phone, 0);
    {
      std::int32_t next = 0;
      for (auto& [phone, id] : phone_ids) {
        id = next++;
        phone_names.push_back(phone);
      }
    }
    for (const auto& [id, toks] : pred_rows) {
      auto it = align.utterances.find(id);
      if (it == align.utterances.end())
        throw input_error("utterance '" + id + "' missing from alignment");
      auto paint = um::phone_of_frames(it->second, toks.size(), a.frame_rate, phone_ids, id);
      std::vector<std::string> gold;
      gold.reserve(paint.size());
      for (std::size_t f = 0; f < paint.size(); ++f) {
        if (paint[f] < 0)
          throw input_error("frame " + std::to_string(f) + " of utterance '" + id +
                            "' lies outside every aligned segment");
        gold.push_back(phone_names[static_cast<std::size_t>(paint[f])]);
      }
      gold_map[id] = std::move(gold);
    }
  }

  report::CsvWriter csv(out_path(g, "per_report.csv"));
  csv.row({"utterance_id", "per", "edits", "gold_len", "frame_accuracy", "n_frames"});

  std::size_t total_edits = 0, total_gold = 0, total_eq = 0, total_frames = 0;
  double macro_per = 0.0;
  bool all_lengths_match = true;
  ojson rows = ojson::array();
  for (const auto& [id, pred_toks] : pred_rows) {
    auto it = gold_map.find(id);
    if (it == gold_map.end()) throw input_error("utterance '" + id + "' missing from gold");
    const auto& gold_toks = it->second;
    if (gold_toks.empty()) throw input_error("empty gold sequence for utterance '" + id + "'");
    const auto p = spkeval::collapse_runs(pred_toks);
    const auto gll = a.collapse_gold ? spkeval::collapse_runs(gold_toks) : gold_toks;
    const std::size_t edits = um::levenshtein(p, gll);
    const double per = static_cast<double>(edits) / static_cast<double>(gll.size());
    total_edits += edits;
    total_gold += gll.size();
    macro_per += per;

    std::string fa_str;
    ojson fa_json = nullptr;
    if (pred_toks.size() == gold_toks.size()) {
      const double fa = um::frame_accuracy(pred_toks, gold_toks);
      std::size_t eq = 0;
      for (std::size_t f = 0; f < pred_toks.size(); ++f)
        if (pred_toks[f] == gold_toks[f]) ++eq;
      total_eq += eq;
      total_frames += pred_toks.size();
      fa_str = report::fmt_double(fa);
      fa_json = fa;
    } else {
      all_lengths_match = false;
    }
    csv.row({id, report::fmt_double(per), std::to_string(edits), std::to_string(gll.size()),
             fa_str, std::to_string(pred_toks.size())});
    rows.push_back({{"utterance_id", id},
                    {"per", per},
                    {"edits", edits},
                    {"gold_len", gll.size()},
                    {"frame_accuracy", fa_json}});
  }
  if (pred_rows.empty()) throw input_error("no predictions in '" + a.pred + "'");

  const double micro_per = static_cast<double>(total_edits) / static_cast<double>(total_gold);
  macro_per /= static_cast<double>(pred_rows.size());
  ojson fa_overall = nullptr;
  if (all_lengths_match && total_frames > 0)
    fa_overall = static_cast<double>(total_eq) / static_cast<double>(total_frames);
  csv.row({"*", report::fmt_double(micro_per), std::to_string(total_edits),
           std::to_string(total_gold),
           fa_overall.is_null() ? "" : report::fmt_double(fa_overall.get<double>()),
           std::to_string(total_frames)});

  ojson config;
  config["pred"] = a.pred;
  config["gold"] = a.gold;
  config["gold_alignment"] = a.gold_alignment;
  config["frame_rate"] = a.frame_rate;
  config["collapse_gold"] = a.collapse_gold;
  config["out"] = g.out_dir;

  ojson j = report::envelope("per", g.seed, config, inputs);
  j["results"] = {{"per_micro", micro_per},
                  {"per_macro", macro_per},
                  {"frame_accuracy", fa_overall},
                  {"n_utterances", pred_rows.size()},
                  {"utterances", rows}};
  report::write_json_file(out_path(g, "per_report.json"), j);
}

// ---------------------------------------------------------------------------
// lm-train / lm-score / zeroshot

struct LmTrainArgs {
  std::string units;
  std::size_t order = 5;
  double discount = 0.75;
  bool dedup = true;
  double frame_rate = 50.0;
  std::string model;
  std::string dump;
};

void run_lm_train(const Global& g, const LmTrainArgs& a) {
  report::Inputs inputs;
  inputs.add_file("units:" + a.units, a.units);
  auto corpus = quantize::read_unit_file(a.units, a.frame_rate);
  std::size_t n_tokens = 0;
  if (a.dedup)
    for (auto& seq : corpus) seq = quantize::dedup(seq);
  for (const auto& seq : corpus) n_tokens += seq.units.size();

  lm::NGramModel model = lm::ngram_train(corpus, a.order, a.discount);
  model.dedup_applied = a.dedup;
  const double train_ppl = lm::perplexity(model, corpus);

  const std::string model_path = a.model.empty() ? out_path(g, "lm.spkl") : ensure_parent(a.model);
  lm::write_ngram(model, model_path);
  if (!a.dump.empty()) {
    ensure_parent(a.dump);
    std::ofstream out(a.dump, std::ios::binary | std::ios::trunc);
    if (!out) throw input_error("cannot write '" + a.dump + "'");
    lm::dump_ngram(model, out);
  }

  ojson config;
  config["units"] = a.units;
  config["order"] = a.order;
  config["discount"] = a.discount;
  config["dedup"] = a.dedup;
  config["frame_rate"] = a.frame_rate;
  config["model"] = model_path;
  config["dump"] = a.dump;
  config["out"] = g.out_dir;

  ojson j = report::envelope("lm-train", g.seed, config, inputs);
  j["results"] = {{"order", model.order},
                  {"discount", model.discount},
                  {"dedup", model.dedup_applied},
                  {"vocab_size", model.vocab_size()},
                  {"n_sequences", corpus.size()},
                  {"n_tokens", n_tokens},
                  {"train_ppl", train_ppl},
                  {"model_digest", report::digest_file(model_path)}};
  report::write_json_file(out_path(g, "lm_train_report.json"), j);
}

struct LmScoreArgs {
  std::string model;
  std::string units;
  bool dedup = true;
  double frame_rate = 50.0;
};

void run_lm_score(const Global& g, const LmScoreArgs& a) {
  report::Inputs inputs;
  inputs.add_file("model:" + a.model, a.model);
  inputs.add_file("units:" + a.units, a.units);
  const lm::NGramModel model = lm::read_ngram(a.model);
  auto seqs = quantize::read_unit_file(a.units, a.frame_rate);
  if (a.dedup)
    for (auto& seq : seqs) seq = quantize::dedup(seq);

  std::vector<lm::SequenceScore> scores(seqs.size());
  spkeval::parallel_for(seqs.size(),
                        [&](std::size_t i) { scores[i] = lm::sequence_logprob(model, seqs[i].units); });

  std::string tsv;
  double total_lp = 0.0;
  std::size_t total_tokens = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    tsv += seqs[i].utterance_id + "\t" + report::fmt_double(scores[i].logprob) + "\t" +
           std::to_string(scores[i].n_tokens) + "\n";
    total_lp += scores[i].logprob;
    total_tokens += scores[i].n_tokens;
  }
  spkeval::ioutil::write_binary_file(out_path(g, "lm_scores.tsv"), tsv);

  ojson config;
  config["model"] = a.model;
  config["units"] = a.units;
  config["dedup"] = a.dedup;
  config["frame_rate"] = a.frame_rate;
  config["out"] = g.out_dir;

  ojson j = report::envelope("lm-score", g.seed, config, inputs);
  j["results"] = {{"n_sequences", seqs.size()},
                  {"total_logprob", total_lp},
                  {"ppl", std::exp(-total_lp / static_cast<double>(std::max<std::size_t>(1, total_tokens)))}};
  report::write_json_file(out_path(g, "lm_score_report.json"), j);
}

struct ZeroshotArgs {
  std::string pairs;
  std::string model;
  std::string units;
  std::string scores;
  std::string filter = "both";
  bool dedup = true;
  double frame_rate = 50.0;
};

void run_zeroshot(const Global& g, const ZeroshotArgs& a) {
  const bool lm_mode = !a.model.empty();
  if (lm_mode == !a.scores.empty())
    throw input_error("provide either --model with --units, or --scores");
  if (lm_mode && a.units.empty()) throw input_error("--model requires --units");
  if (a.filter != "both" && a.filter != "all" && a.filter != "in-vocab")
    throw input_error("--filter must be one of: all, in-vocab, both");

  report::Inputs inputs;
  inputs.add_file("pairs:" + a.pairs, a.pairs);
  const auto pairs = io::read_pair_manifest(a.pairs);

  std::function<zeroshot::SequenceScore(const std::string&)> scorer;
  std::optional<lm::NGramModel> model;
  std::map<std::string, std::vector<std::int32_t>> unit_map;
  std::map<std::string, zeroshot::SequenceScore> score_map;
  if (lm_mode) {
    inputs.add_file("model:" + a.model, a.model);
    inputs.add_file("units:" + a.units, a.units);
    model = lm::read_ngram(a.model);
    for (auto& seq : quantize::read_unit_file(a.units, a.frame_rate)) {
      auto s = a.dedup ? quantize::dedup(seq) : seq;
      unit_map[s.utterance_id] = s.units;
    }
    scorer = [&](const std::string& id) -> zeroshot::SequenceScore {
      auto it = unit_map.find(id);
      if (it == unit_map.end())
        throw input_error("sequence '" + id + "' unresolvable in '" + a.units + "'");
      const auto s = lm::sequence_logprob(*model, it->second);
      return {s.logprob, s.n_tokens};
    };
  } else {
    inputs.add_file("scores:" + a.scores, a.scores);
    spkeval::ioutil::for_lines(a.scores, [&](std::size_t lineno, std::string_view line) {
      const std::string where = a.scores + ":" + std::to_string(lineno);
      auto cols = spkeval::ioutil::split_tsv(line);
      if (cols.size() != 2 && cols.size() != 3)
        throw input_error(where + ": expected (sequence_id, logprob[, n_tokens])");
      zeroshot::SequenceScore s;
      s.logprob = spkeval::ioutil::parse_double(cols[1], where);
      if (cols.size() == 3)
        s.n_tokens = static_cast<std::uint64_t>(spkeval::ioutil::parse_long(cols[2], where));
      score_map[std::string(cols[0])] = s;
    });
    scorer = [&](const std::string& id) -> zeroshot::SequenceScore {
      auto it = score_map.find(id);
      if (it == score_map.end())
        throw input_error("sequence '" + id + "' unresolvable in '" + a.scores + "'");
      return it->second;
    };
  }

  ojson conditions = ojson::array();
  std::optional<zeroshot::Report> all_report;
  auto emit = [&](const std::string& name, bool in_vocab_only) {
    const zeroshot::Report r = zeroshot::pair_accuracy(scorer, pairs, in_vocab_only);
    ojson c;
    c["condition"] = name;
    c["n_pairs"] = r.n_pairs;
    c["accuracy_raw"] = r.accuracy_raw;
    c["accuracy_per_token"] =
        r.accuracy_per_token ? ojson(*r.accuracy_per_token) : ojson(nullptr);
    conditions.push_back(c);
    if (name == "all") all_report = r;
    return r;
  };
  zeroshot::Report primary;
  if (a.filter == "both") {
    primary = emit("all", false);
    emit("in-vocab", true);
  } else if (a.filter == "all") {
    primary = emit("all", false);
  } else {
    primary = emit("in-vocab", true);
  }

  report::CsvWriter csv(out_path(g, "zeroshot_report.csv"));
  csv.row({"pair_id", "in_vocab", "logprob_true", "logprob_other", "credit_raw",
           "credit_per_token"});
  const zeroshot::Report& rows_src = all_report ? *all_report : primary;
  for (const auto& r : rows_src.pairs) {
    csv.row({r.pair_id, r.in_vocab ? "1" : "0", report::fmt_double(r.logprob_true),
             report::fmt_double(r.logprob_other), report::fmt_double(r.credit_raw),
             r.credit_per_token ? report::fmt_double(*r.credit_per_token) : ""});
  }

  ojson config;
  config["pairs"] = a.pairs;
  config["model"] = a.model;
  config["units"] = a.units;
  config["scores"] = a.scores;
  config["filter"] = a.filter;
  config["dedup"] = a.dedup;
  config["frame_rate"] = a.frame_rate;
  config["out"] = g.out_dir;

  ojson j = report::envelope("zeroshot", g.seed, config, inputs);
  j["results"] = {{"conditions", conditions}};
  report::write_json_file(out_path(g, "zeroshot_report.json"), j);
}

// ---------------------------------------------------------------------------
// mcd

struct McdArgs {
  std::string pairs;
  std::string align = "dtw";
  mcd::McdConfig config;
};

void run_mcd(const Global& g, const McdArgs& a) {
  if (a.align != "dtw" && a.align != "frame")
    throw input_error("--align must be 'dtw' or 'frame'");
  const mcd::McdAlign align = a.align == "dtw" ? mcd::McdAlign::Dtw : mcd::McdAlign::Frame;

  report::Inputs inputs;
  inputs.add_file("pairs:" + a.pairs, a.pairs);
  const auto pairs = mcd::read_mcd_pairs(a.pairs);
  if (pairs.empty()) throw input_error("no pairs in '" + a.pairs + "'");
  for (const auto& p : pairs) {
    inputs.add_file("ref:" + p.ref_path, p.ref_path);
    inputs.add_file("syn:" + p.syn_path, p.syn_path);
  }

  std::vector<double> values(pairs.size());
  spkeval::parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& p = pairs[i];
    auto load = [&](const std::string& path) {
      const mcd::Wav wav = mcd::read_wav_mono16(path);
      if (wav.sample_rate != a.config.sample_rate)
        throw input_error("'" + path + "': sample rate " + std::to_string(wav.sample_rate) +
                          " does not match configured " + std::to_string(a.config.sample_rate) +
                          " (resampling is out of scope)");
      return mcd::mfcc(wav.samples, a.config, path);
    };
    values[i] = mcd::mcd(load(p.ref_path), load(p.syn_path), align);
  });

  std::vector<std::pair<std::string, double>> grouped;
  grouped.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) grouped.emplace_back(pairs[i].group, values[i]);
  const mcd::GroupReport gr = mcd::mcd_by_group(grouped);

  report::CsvWriter csv(out_path(g, "mcd_report.csv"));
  csv.row({"level", "group", "ref", "syn", "mcd", "n"});
  for (std::size_t i = 0; i < pairs.size(); ++i)
    csv.row({"pair", pairs[i].group, pairs[i].ref_path, pairs[i].syn_path,
             report::fmt_double(values[i]), "1"});
  for (const auto& [group, stats] : gr.groups)
    csv.row({"group", group, "", "", report::fmt_double(stats.mean), std::to_string(stats.n)});
  csv.row({"overall", "", "", "", report::fmt_double(gr.overall), std::to_string(gr.n_pairs)});

  ojson config;
  config["pairs"] = a.pairs;
  config["align"] = a.align;
  config["sample_rate"] = a.config.sample_rate;
  config["win_ms"] = a.config.win_ms;
  config["hop_ms"] = a.config.hop_ms;
  config["n_mels"] = a.config.n_mels;
  config["n_coeffs"] = a.config.n_coeffs;
  config["fmin"] = a.config.fmin;
  config["fmax"] = a.config.fmax;
  config["out"] = g.out_dir;

  ojson groups_json = ojson::object();
  for (const auto& [group, stats] : gr.groups)
    groups_json[group] = {{"mcd", stats.mean}, {"n", stats.n}};
  ojson pair_rows = ojson::array();
  for (std::size_t i = 0; i < pairs.size(); ++i)
    pair_rows.push_back({{"ref", pairs[i].ref_path},
                         {"syn", pairs[i].syn_path},
                         {"group", pairs[i].group},
                         {"mcd", values[i]}});

  ojson j = report::envelope("mcd", g.seed, config, inputs);
  j["results"] = {{"overall", gr.overall},
                  {"n_pairs", gr.n_pairs},
                  {"groups", groups_json},
                  {"pairs", pair_rows}};
  report::write_json_file(out_path(g, "mcd_report.json"), j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete speech unit evaluation toolkit"};
  app.set_version_flag("--version", std::string(spkeval::kToolName) + " " + spkeval::kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML configuration file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Global g;
  app.add_option("--out", g.out_dir, "Directory for report files")->capture_default_str();
  app.add_option("--seed", g.seed, "Global seed for k-means and cell capping")
      ->capture_default_str();
  app.add_option("--threads", g.threads,
                 "Worker threads (0 = hardware); changes wall time only, never results")
      ->envname("SPKEVAL_THREADS")
      ->capture_default_str();

  AbxArgs abx_args;
  auto* abx_cmd = app.add_subcommand("abx", "ABX discriminability over feature directories");
  abx_cmd->add_option("--features", abx_args.features, "Feature directory (repeat per dataset)")
      ->required();
  abx_cmd->add_option("--manifest", abx_args.manifest, "Manifest file name inside --features")
      ->capture_default_str();
  abx_cmd->add_option("--items", abx_args.items, "Item file (one per dataset)");
  abx_cmd->add_option("--alignment", abx_args.alignments, "Alignment TSV (one per dataset)");
  abx_cmd->add_option("--dataset-name", abx_args.dataset_names, "Dataset names for the report");
  abx_cmd->add_option("--task", abx_args.tasks,
                      "triphone-within-spk, triphone-across-spk, phone-within-ctx, "
                      "phone-any-ctx, or all")
      ->capture_default_str();
  abx_cmd->add_option("--max-cell-size", abx_args.max_cell_size,
                      "Cap on tokens per cell role (seeded subsample)")
      ->capture_default_str();
  abx_cmd->add_option("--min-a", abx_args.min_a, "Minimum A tokens per cell")
      ->capture_default_str();
  abx_cmd->add_option("--min-b", abx_args.min_b, "Minimum B tokens per cell")
      ->capture_default_str();

  SweepArgs sweep_args;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "ABX over several feature sets (layer-wise comparisons)");
  sweep_cmd->add_option("--features", sweep_args.features, "Feature directory (repeatable)")
      ->required();
  sweep_cmd->add_option("--manifest", sweep_args.manifest, "Manifest file name")
      ->capture_default_str();
  sweep_cmd->add_option("--items", sweep_args.items, "Item file");
  sweep_cmd->add_option("--alignment", sweep_args.alignment, "Alignment TSV");
  sweep_cmd->add_option("--task", sweep_args.tasks, "Task list or all")->capture_default_str();
  sweep_cmd->add_option("--max-cell-size", sweep_args.max_cell_size, "Cap on tokens per cell role")
      ->capture_default_str();
  sweep_cmd->add_option("--min-a", sweep_args.min_a, "Minimum A tokens per cell")
      ->capture_default_str();
  sweep_cmd->add_option("--min-b", sweep_args.min_b, "Minimum B tokens per cell")
      ->capture_default_str();

  QuantizeArgs quantize_args;
  auto* quantize_cmd = app.add_subcommand("quantize", "Train a k-means codebook on features");
  quantize_cmd->add_option("--features", quantize_args.features, "Feature directory")->required();
  quantize_cmd->add_option("--manifest", quantize_args.manifest, "Manifest file name")
      ->capture_default_str();
  quantize_cmd->add_option("--k", quantize_args.k, "Number of clusters")->capture_default_str();
  quantize_cmd->add_option("--max-iter", quantize_args.max_iter, "Maximum Lloyd iterations")
      ->capture_default_str();
  quantize_cmd->add_option("--rel-tol", quantize_args.rel_tol,
                           "Relative inertia improvement stopping threshold")
      ->capture_default_str();
  quantize_cmd->add_option("--codebook", quantize_args.codebook,
                           "Codebook output path (default <out>/codebook.spkc)");

  AssignArgs assign_args;
  auto* assign_cmd = app.add_subcommand("assign", "Assign units and derive representations");
  assign_cmd->add_option("--features", assign_args.features, "Feature directory")->required();
  assign_cmd->add_option("--manifest", assign_args.manifest, "Manifest file name")
      ->capture_default_str();
  assign_cmd->add_option("--codebook", assign_args.codebook, "Codebook file");
  assign_cmd->add_flag("--argmax", assign_args.argmax,
                       "Treat features as logits: unit = per-frame argmax");
  assign_cmd->add_option("--units", assign_args.units, "Units output path (default <out>/units.tsv)");
  assign_cmd->add_option("--emit-centroid", assign_args.emit_centroid,
                         "Write centroid features to this directory");
  assign_cmd->add_option("--emit-onehot", assign_args.emit_onehot,
                         "Write one-hot features to this directory");

  UnitMetricsArgs um_args;
  auto* um_cmd = app.add_subcommand("unit-metrics", "PNMI and purities of units vs phones");
  um_cmd->add_option("--units", um_args.units, "Unit file")->required();
  um_cmd->add_option("--alignment", um_args.alignment, "Alignment TSV")->required();
  um_cmd->add_option("--frame-rate", um_args.frame_rate, "Unit frame rate in Hz")
      ->capture_default_str();
  um_cmd->add_option("--n-units", um_args.n_units, "Unit inventory size (0 = infer)")
      ->capture_default_str();

  PerArgs per_args;
  auto* per_cmd = app.add_subcommand("per", "Phone error rate and frame accuracy");
  per_cmd->add_option("--pred", per_args.pred, "Predicted label file")->required();
  per_cmd->add_option("--gold", per_args.gold, "Gold label file");
  per_cmd->add_option("--gold-alignment", per_args.gold_alignment,
                      "Alignment TSV to paint frame-level gold labels from");
  per_cmd->add_option("--frame-rate", per_args.frame_rate, "Frame rate for --gold-alignment")
      ->capture_default_str();
  per_cmd->add_flag("--collapse-gold,!--no-collapse-gold", per_args.collapse_gold,
                    "Deduplicate gold before scoring (default on)");

  LmTrainArgs lm_train_args;
  auto* lm_train_cmd = app.add_subcommand("lm-train", "Train the unit n-gram language model");
  lm_train_cmd->add_option("--units", lm_train_args.units, "Training unit file")->required();
  lm_train_cmd->add_option("--order", lm_train_args.order, "n-gram order")->capture_default_str();
  lm_train_cmd->add_option("--discount", lm_train_args.discount, "Absolute discount in (0,1)")
      ->capture_default_str();
  lm_train_cmd->add_flag("--dedup,!--no-dedup", lm_train_args.dedup,
                         "Collapse repeated units before training (default on)");
  lm_train_cmd->add_option("--frame-rate", lm_train_args.frame_rate, "Unit frame rate in Hz")
      ->capture_default_str();
  lm_train_cmd->add_option("--model", lm_train_args.model,
                           "Model output path (default <out>/lm.spkl)");
  lm_train_cmd->add_option("--dump", lm_train_args.dump, "Also write a text dump to this path");

  LmScoreArgs lm_score_args;
  auto* lm_score_cmd = app.add_subcommand("lm-score", "Score unit sequences with a trained model");
  lm_score_cmd->add_option("--model", lm_score_args.model, "Model file")->required();
  lm_score_cmd->add_option("--units", lm_score_args.units, "Unit sequences to score")->required();
  lm_score_cmd->add_flag("--dedup,!--no-dedup", lm_score_args.dedup,
                         "Collapse repeated units before scoring (default on)");
  lm_score_cmd->add_option("--frame-rate", lm_score_args.frame_rate, "Unit frame rate in Hz")
      ->capture_default_str();

  ZeroshotArgs zs_args;
  auto* zs_cmd = app.add_subcommand("zeroshot", "Paired zero-shot evaluation (sWUGGY/sBLIMP style)");
  zs_cmd->add_option("--pairs", zs_args.pairs, "Pair manifest TSV")->required();
  zs_cmd->add_option("--model", zs_args.model, "n-gram model (requires --units)");
  zs_cmd->add_option("--units", zs_args.units, "Unit sequences referenced by the manifest");
  zs_cmd->add_option("--scores", zs_args.scores,
                     "External scores TSV (sequence_id, logprob[, n_tokens])");
  zs_cmd->add_option("--filter", zs_args.filter, "all, in-vocab, or both")->capture_default_str();
  zs_cmd->add_flag("--dedup,!--no-dedup", zs_args.dedup,
                   "Collapse repeated units before scoring (default on)");
  zs_cmd->add_option("--frame-rate", zs_args.frame_rate, "Unit frame rate in Hz")
      ->capture_default_str();

  McdArgs mcd_args;
  auto* mcd_cmd = app.add_subcommand("mcd", "Mel-cepstral distortion between wav pairs");
  mcd_cmd->add_option("--pairs", mcd_args.pairs, "Pair list TSV (ref_wav, syn_wav, group)")
      ->required();
  mcd_cmd->add_option("--align", mcd_args.align, "dtw or frame")->capture_default_str();
  mcd_cmd->add_option("--sample-rate", mcd_args.config.sample_rate, "Expected wav sample rate")
      ->capture_default_str();
  mcd_cmd->add_option("--win-ms", mcd_args.config.win_ms, "Analysis window in ms")
      ->capture_default_str();
  mcd_cmd->add_option("--hop-ms", mcd_args.config.hop_ms, "Hop in ms")->capture_default_str();
  mcd_cmd->add_option("--n-mels", mcd_args.config.n_mels, "Mel bands")->capture_default_str();
  mcd_cmd->add_option("--n-coeffs", mcd_args.config.n_coeffs, "Cepstral coefficients kept (c1..)")
      ->capture_default_str();
  mcd_cmd->add_option("--fmin", mcd_args.config.fmin, "Filterbank lower edge in Hz")
      ->capture_default_str();
  mcd_cmd->add_option("--fmax", mcd_args.config.fmax, "Filterbank upper edge in Hz")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (g.threads > 0)
      spkeval::set_thread_count(g.threads);
    else
      spkeval::set_thread_count(spkeval::default_thread_count());

    if (abx_cmd->parsed()) run_abx(g, abx_args);
    if (sweep_cmd->parsed()) run_sweep(g, sweep_args);
    if (quantize_cmd->parsed()) run_quantize(g, quantize_args);
    if (assign_cmd->parsed()) run_assign(g, assign_args);
    if (um_cmd->parsed()) run_unit_metrics(g, um_args);
    if (per_cmd->parsed()) run_per(g, per_args);
    if (lm_train_cmd->parsed()) run_lm_train(g, lm_train_args);
    if (lm_score_cmd->parsed()) run_lm_score(g, lm_score_args);
    if (zs_cmd->parsed()) run_zeroshot(g, zs_args);
    if (mcd_cmd->parsed()) run_mcd(g, mcd_args);
  } catch (const input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
