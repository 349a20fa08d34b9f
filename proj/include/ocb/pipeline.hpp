#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <random>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ocb/aggregation.hpp"
#include "ocb/io.hpp"
#include "ocb/metrics.hpp"
#include "ocb/predictor.hpp"
#include "ocb/refine.hpp"

namespace ocb {

struct PipelinePaths {
  std::string train, val, test, labels, model_out, report_out;

  friend bool operator==(const PipelinePaths&, const PipelinePaths&) = default;
};

/// Full configuration of one refine -> aggregate -> train -> evaluate run.
/// `refine.k` is the object budget shared by refinement and aggregation.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string preset = "rcnn";
  RefineConfig refine = rcnn_defaults();
  AggregationKind agg;
  TrainConfig train;
  std::string task = "auto";  // auto | single_label | multi_label
  bool image_only = false;    // drop object slots (whole-image baseline)
  PipelinePaths paths;

  std::size_t k() const { return refine.k; }

  void validate() const {
    refine.validate();
    agg.validate();
    train.validate();
    if (task != "auto") task_mode_from_string(task);
    if (preset != "rcnn" && preset != "sam") throw ConfigError("unknown preset '" + preset + "'");
  }

  /// Training seed always follows the top-level seed.
  TrainConfig resolved_train() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  Json to_json() const {
    Json j;
    j["seed"] = seed;
    j["preset"] = preset;
    j["refine"] = {{"t_min", refine.t_min}, {"t_max", refine.t_max}, {"t_cer", refine.t_cer},
                   {"t_iou", refine.t_iou}, {"k", refine.k}};
    j["aggregation"] = {{"kind", to_string(agg.kind)}, {"epsilon", agg.epsilon}};
    Json t = ocb::to_json(resolved_train());
    t.erase("seed");
    j["train"] = t;
    j["task"] = task;
    j["image_only"] = image_only;
    j["paths"] = {{"train", paths.train},           {"val", paths.val},
                  {"test", paths.test},             {"labels", paths.labels},
                  {"model_out", paths.model_out},   {"report_out", paths.report_out}};
    return j;
  }
};

/// Overlays the fields present in `j` onto `base`.
inline PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig base = {}) {
  try {
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("preset")) {
      base.preset = j["preset"].get<std::string>();
      const std::size_t k = base.refine.k;
      if (base.preset == "sam") base.refine = sam_defaults(k);
      else if (base.preset == "rcnn") base.refine = rcnn_defaults(k);
      else throw ConfigError("unknown preset '" + base.preset + "'");
    }
    if (j.contains("refine")) {
      const auto& r = j["refine"];
      if (r.contains("t_min")) base.refine.t_min = r["t_min"].get<double>();
      if (r.contains("t_max")) base.refine.t_max = r["t_max"].get<double>();
      if (r.contains("t_cer")) base.refine.t_cer = r["t_cer"].get<double>();
      if (r.contains("t_iou")) base.refine.t_iou = r["t_iou"].get<double>();
      if (r.contains("k")) base.refine.k = r["k"].get<std::size_t>();
    }
    if (j.contains("aggregation")) {
      const auto& a = j["aggregation"];
      if (a.contains("kind")) base.agg.kind = agg_kind_from_string(a["kind"].get<std::string>());
      if (a.contains("epsilon")) base.agg.epsilon = a["epsilon"].get<double>();
    }
    if (j.contains("train")) base.train = train_config_from_json(j["train"], base.train);
    if (j.contains("task")) base.task = j["task"].get<std::string>();
    if (j.contains("image_only")) base.image_only = j["image_only"].get<bool>();
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      auto str = [&](const char* key, std::string& dst) {
        if (p.contains(key)) dst = p[key].get<std::string>();
      };
      str("train", base.paths.train);
      str("val", base.paths.val);
      str("test", base.paths.test);
      str("labels", base.paths.labels);
      str("model_out", base.paths.model_out);
      str("report_out", base.paths.report_out);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return base;
}

/// Records of one split with their labels, in file order.
struct LabeledSplit {
  std::vector<ImageActivationRecord> records;
  std::vector<Label> labels;
  bool raw = false;
};

inline LabeledSplit attach_labels(ActivationFile file, const LabelFile& labels) {
  LabeledSplit split;
  split.raw = file.header.raw;
  for (auto& r : file.records) {
    auto it = labels.labels.find(r.image_id);
    if (it == labels.labels.end()) throw DataError("no label for image '" + r.image_id + "'");
    split.labels.push_back(it->second);
    split.records.push_back(std::move(r));
  }
  return split;
}

namespace detail {

template <typename Fn>
auto with_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(std::string("[") + stage + "] " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("[") + stage + "] " + e.what());
  } catch (const ParseError& e) {
    throw DataError(std::string("[") + stage + "] " + e.what());
  } catch (const Error& e) {
    throw Error(std::string("[") + stage + "] " + e.what());
  }
}

}  // namespace detail

/// Raw proposals are refined with the config; already refined records are
/// truncated to their first k objects. image_only drops all objects.
inline std::vector<ImageActivationRecord> prepare_records(const std::vector<ImageActivationRecord>& records, bool raw,
                                                          const PipelineConfig& cfg) {
  std::vector<ImageActivationRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (cfg.image_only) {
      out.push_back(image_only(r));
    } else if (raw) {
      out.push_back(refine_record(r, cfg.refine));
    } else {
      auto t = r;
      if (t.objects.size() > cfg.k()) t.objects.resize(cfg.k());
      out.push_back(std::move(t));
    }
  }
  return out;
}

inline std::vector<AggregatedEncoding> encode(const std::vector<ImageActivationRecord>& records,
                                              const PipelineConfig& cfg) {
  std::vector<AggregatedEncoding> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(aggregate(r, cfg.k(), cfg.agg));
  return out;
}

inline EvalReport evaluate(const LinearPredictor& p, const std::vector<AggregatedEncoding>& encodings,
                           const std::vector<Label>& labels) {
  if (encodings.empty()) throw DataError("evaluation set is empty");
  if (encodings.size() != labels.size()) throw DataError("encodings and labels differ in count");
  EvalReport report;
  report.n_examples = encodings.size();
  const std::size_t m = p.num_classes();
  if (p.label_spec.mode == TaskMode::single_label) {
    std::vector<std::size_t> preds, truth;
    for (std::size_t i = 0; i < encodings.size(); ++i) {
      validate_label(labels[i], p.label_spec);
      preds.push_back(argmax(predict(p, encodings[i])));
      truth.push_back(labels[i].front());
    }
    const auto ba = balanced_accuracy_detail(preds, truth, m);
    report.metrics["accuracy"] = accuracy(preds, truth);
    report.metrics["balanced_accuracy"] = ba.value;
    report.per_class_recall = ba.recall;
    report.excluded_classes = ba.unsupported;
  } else {
    std::vector<double> scores;
    std::vector<char> truth(encodings.size() * m, 0);
    for (std::size_t i = 0; i < encodings.size(); ++i) {
      validate_label(labels[i], p.label_spec);
      const auto s = predict(p, encodings[i]);
      scores.insert(scores.end(), s.begin(), s.end());
      for (auto c : labels[i]) truth[i * m + c] = 1;
    }
    const auto map = mean_average_precision(scores, truth, encodings.size(), m);
    report.metrics["mAP"] = map.value;
    report.per_class_ap = map.per_class;
    report.excluded_classes = map.excluded;
    report.metadata["ap_definition"] = "rank-based: mean precision at each positive rank; ties broken by example index";
  }
  return report;
}

struct PipelineResult {
  LinearPredictor predictor;
  std::optional<EvalReport> validation;
  std::optional<EvalReport> test;
};

inline TaskMode resolve_mode(const PipelineConfig& cfg, const LabelSpec& spec) {
  if (cfg.task != "auto" && task_mode_from_string(cfg.task) != spec.mode)
    throw ConfigError("configured task '" + cfg.task + "' does not match label file mode '" + to_string(spec.mode) + "'");
  return spec.mode;
}

/// In-memory pipeline over already loaded splits.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const LabelSpec& spec, const LabeledSplit& train,
                                   const LabeledSplit* test, const LabeledSplit* val = nullptr) {
  detail::with_stage("config", [&] {
    cfg.validate();
    resolve_mode(cfg, spec);
    return 0;
  });
  auto stage_encode = [&](const LabeledSplit& split, const char* name) {
    auto recs = detail::with_stage("refine", [&] { return prepare_records(split.records, split.raw, cfg); });
    return detail::with_stage(name, [&] { return encode(recs, cfg); });
  };
  PipelineResult result;
  const auto train_enc = stage_encode(train, "aggregate");
  result.predictor =
      detail::with_stage("train", [&] { return ocb::train(train_enc, train.labels, cfg.resolved_train(), spec); });
  if (val) {
    const auto enc = stage_encode(*val, "aggregate");
    result.validation = detail::with_stage("eval", [&] { return evaluate(result.predictor, enc, val->labels); });
  }
  if (test) {
    const auto enc = stage_encode(*test, "aggregate");
    result.test = detail::with_stage("eval", [&] { return evaluate(result.predictor, enc, test->labels); });
  }
  return result;
}

inline Json pipeline_metrics_json(const PipelineResult& r, const LabelSpec& spec) {
  Json m = Json::object();
  if (r.validation) m["validation"] = to_json(*r.validation, spec);
  if (r.test) m["test"] = to_json(*r.test, spec);
  return m;
}

/// File-based pipeline: loads the splits named in cfg.paths, runs, and writes
/// the model and report files when their paths are set.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  if (cfg.paths.train.empty()) throw ConfigError("no training file given");
  if (cfg.paths.labels.empty()) throw ConfigError("no label file given");
  const LabelFile labels = detail::with_stage("load", [&] { return load_labels(cfg.paths.labels); });
  auto load = [&](const std::string& path) {
    return detail::with_stage("load", [&] { return attach_labels(load_activations(path), labels); });
  };
  const LabeledSplit train = load(cfg.paths.train);
  std::optional<LabeledSplit> test, val;
  if (!cfg.paths.test.empty()) test = load(cfg.paths.test);
  if (!cfg.paths.val.empty()) val = load(cfg.paths.val);

  PipelineResult result = run_pipeline(cfg, labels.spec, train, test ? &*test : nullptr, val ? &*val : nullptr);

  const Json metrics = pipeline_metrics_json(result, labels.spec);
  if (!cfg.paths.model_out.empty()) {
    auto out = detail::open_out(cfg.paths.model_out);
    out << model_to_json(result.predictor, cfg.resolved_train(), metrics, cfg.to_json()).dump(2) << '\n';
  }
  if (!cfg.paths.report_out.empty()) {
    auto out = detail::open_out(cfg.paths.report_out);
    Json report = {{"config", cfg.to_json()}};
    for (auto& [k, v] : metrics.items()) report[k] = v;
    out << report.dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Splits

/// Seeded partition of 0..n-1 into consecutive shares given by `fractions`
/// (normalised to sum 1). Each part lists its indices in ascending order; the
/// last part absorbs rounding.
inline std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const std::vector<double>& fractions,
                                                           std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split needs at least one fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (!(total > 0.0)) throw ConfigError("split fractions sum to zero");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  std::size_t start = 0;
  double cumulative = 0.0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    cumulative += fractions[p];
    const std::size_t stop =
        p + 1 == fractions.size() ? n : std::min(n, static_cast<std::size_t>(std::llround(cumulative / total * static_cast<double>(n))));
    parts[p].assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(std::max(start, stop)));
    std::sort(parts[p].begin(), parts[p].end());
    start = std::max(start, stop);
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepGrid {
  std::vector<AggKind> aggs;
  std::vector<std::size_t> ks;
  std::vector<double> t_mins;

  std::size_t size() const { return aggs.size() * ks.size() * t_mins.size(); }
};

struct SweepRow {
  std::size_t index = 0;
  AggKind agg = AggKind::max;
  std::size_t k = 0;
  double t_min = 0.0;
  bool ok = false;
  std::string error;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  EvalReport report;
};

/// Runs every grid cell (agg outer, then k, then t_min). Cells run on a pool
/// of `threads` workers; rows come back in grid order and a failing cell is
/// recorded without stopping the sweep.
inline std::vector<SweepRow> run_sweep(const SweepGrid& grid, const PipelineConfig& base, const LabelSpec& spec,
                                       const LabeledSplit& train, const LabeledSplit& test, std::size_t threads = 1) {
  if (grid.size() == 0) throw ConfigError("sweep grid is empty");
  std::vector<SweepRow> rows(grid.size());
  std::size_t idx = 0;
  for (auto a : grid.aggs)
    for (auto k : grid.ks)
      for (auto t : grid.t_mins) {
        rows[idx].index = idx;
        rows[idx].agg = a;
        rows[idx].k = k;
        rows[idx].t_min = t;
        ++idx;
      }

  auto run_cell = [&](SweepRow& row) {
    PipelineConfig cfg = base;
    cfg.agg.kind = row.agg;
    cfg.refine.k = row.k;
    cfg.refine.t_min = row.t_min;
    row.n_train = train.records.size();
    row.n_test = test.records.size();
    try {
      auto r = run_pipeline(cfg, spec, train, &test);
      row.report = *r.test;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  };

  threads = std::max<std::size_t>(1, std::min(threads, rows.size()));
  if (threads == 1) {
    for (auto& row : rows) run_cell(row);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) run_cell(rows[i]);
    });
  pool.clear();
  return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "index,agg,k,t_min,status,n_train,n_test,accuracy,balanced_accuracy,mAP,error";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << kSweepCsvHeader << "\n";
  auto metric = [](const SweepRow& r, const char* name) {
    auto it = r.report.metrics.find(name);
    if (!r.ok || it == r.report.metrics.end()) return std::string();
    std::ostringstream v;
    v << std::fixed << std::setprecision(6) << it->second;
    return v.str();
  };
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    std::replace(err.begin(), err.end(), '\n', ' ');
    std::ostringstream tm;
    tm << r.t_min;
    os << r.index << ',' << to_string(r.agg) << ',' << r.k << ',' << tm.str() << ',' << (r.ok ? "ok" : "failed")
       << ',' << r.n_train << ',' << r.n_test << ',' << metric(r, "accuracy") << ','
       << metric(r, "balanced_accuracy") << ',' << metric(r, "mAP") << ','
       << (err.empty() ? "" : "\"" + err + "\"") << "\n";
  }
  return os.str();
}

inline Json sweep_json(const std::vector<SweepRow>& rows, const LabelSpec& spec, const PipelineConfig& base) {
  Json arr = Json::array();
  for (const auto& r : rows) {
    Json j = {{"index", r.index}, {"agg", to_string(r.agg)}, {"k", r.k},
              {"t_min", r.t_min}, {"status", r.ok ? "ok" : "failed"}};
    if (r.ok) j["report"] = to_json(r.report, spec);
    else j["error"] = r.error;
    arr.push_back(std::move(j));
  }
  return {{"config", base.to_json()}, {"rows", arr}};
}

}  // namespace ocb
