#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "ocb/ocb.hpp"

namespace {

using ocb::ConfigError;
using ocb::DataError;
using ocb::Json;

// ---------------------------------------------------------------------------
// Option bindings
//
// Every option writes into one JSON document ("user config") at a fixed JSON
// pointer. The document starts as the --config file; env values and flags are
// then overlaid. CLI11 consults the env var only when the flag is absent, so
// flags beat env and both beat the file. Defaults fill whatever is left.

enum class Kind { integer, real, text, flag, integer_list, real_list, text_list };

struct Binding {
  std::string flag;
  std::string pointer;
  Kind kind = Kind::text;
  CLI::Option* opt = nullptr;
  std::string text;
  std::vector<std::string> list;
  bool on = false;
};

std::string env_name(const std::string& flag) {
  std::string e = "OCB_";
  for (char c : flag.substr(flag.find_first_not_of('-')))
    e += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

Json parse_scalar(const std::string& flag, Kind kind, const std::string& s) {
  if (kind == Kind::integer || kind == Kind::integer_list) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size())
      throw ConfigError(flag + ": expected a nonnegative integer, got '" + s + "'");
    return v;
  }
  if (kind == Kind::real || kind == Kind::real_list) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
      throw ConfigError(flag + ": expected a number, got '" + s + "'");
    return v;
  }
  return s;
}

class Bindings {
 public:
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, Kind kind,
                   const std::string& help) {
    auto& b = items_.emplace_back();
    b.flag = flag;
    b.pointer = pointer;
    b.kind = kind;
    switch (kind) {
      case Kind::flag: b.opt = app->add_flag(flag, b.on, help); break;
      case Kind::integer_list:
      case Kind::real_list:
      case Kind::text_list: b.opt = app->add_option(flag, b.list, help)->delimiter(','); break;
      default: b.opt = app->add_option(flag, b.text, help);
    }
    b.opt->envname(env_name(flag));
    return b.opt;
  }

  void overlay(Json& doc) const {
    for (const auto& b : items_) {
      if (b.opt->count() == 0) continue;
      Json v;
      switch (b.kind) {
        case Kind::flag: v = b.on; break;
        case Kind::integer_list:
        case Kind::real_list:
        case Kind::text_list:
          v = Json::array();
          for (const auto& s : b.list) v.push_back(parse_scalar(b.flag, b.kind, s));
          break;
        default: v = parse_scalar(b.flag, b.kind, b.text);
      }
      doc[Json::json_pointer(b.pointer)] = std::move(v);
    }
  }

 private:
  std::deque<Binding> items_;  // stable addresses for CLI11
};

void add_refine_options(CLI::App* app, Bindings& b) {
  b.add(app, "--preset", "/preset", Kind::text, "threshold preset: rcnn | sam");
  b.add(app, "--t-min", "/refine/t_min", Kind::real, "minimum relative box size");
  b.add(app, "--t-max", "/refine/t_max", Kind::real, "maximum relative box size");
  b.add(app, "--t-cer", "/refine/t_cer", Kind::real, "minimum proposal score");
  b.add(app, "--t-iou", "/refine/t_iou", Kind::real, "suppression IoU threshold");
  b.add(app, "--k", "/refine/k", Kind::integer, "object budget per image");
}

void add_aggregation_options(CLI::App* app, Bindings& b) {
  b.add(app, "--agg", "/aggregation/kind", Kind::text, "concat | sum | max | count | sum_count");
  b.add(app, "--epsilon", "/aggregation/epsilon", Kind::real, "count threshold");
  b.add(app, "--image-only", "/image_only", Kind::flag, "drop object slots (whole-image baseline)");
}

void add_pipeline_options(CLI::App* app, Bindings& b) {
  b.add(app, "--seed", "/seed", Kind::integer, "top-level seed");
  add_refine_options(app, b);
  add_aggregation_options(app, b);
  b.add(app, "--lr", "/train/learning_rate", Kind::real, "SGD learning rate");
  b.add(app, "--epochs", "/train/epochs", Kind::integer, "training epochs");
  b.add(app, "--batch-size", "/train/batch_size", Kind::integer, "minibatch size");
  b.add(app, "--weight-decay", "/train/weight_decay", Kind::real, "L2 penalty");
  b.add(app, "--class-weighting", "/train/class_weighting", Kind::text, "none | inverse_frequency");
  b.add(app, "--max-scale", "/train/max_scale", Kind::flag, "scale features by their training maximum");
  b.add(app, "--task", "/task", Kind::text, "auto | single_label | multi_label");
}

// ---------------------------------------------------------------------------
// Resolved configuration

const std::vector<std::string> kTopLevelKeys = {"seed", "preset", "refine", "aggregation", "train", "task",
                                                "image_only", "paths", "synth", "split", "sweep", "commands"};

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
  for (const auto& [key, value] : j.items())
    if (std::find(kTopLevelKeys.begin(), kTopLevelKeys.end(), key) == kTopLevelKeys.end())
      throw ConfigError("config file '" + path + "': unknown key '" + key + "'");
  return j;
}

/// `defaults` with the user's entries at `pointer` patched over them.
Json section(const Json& user, const std::string& pointer, Json defaults) {
  const Json::json_pointer p(pointer);
  if (user.contains(p)) {
    if (!user[p].is_object()) throw ConfigError("config section '" + pointer + "' must be an object");
    defaults.merge_patch(user[p]);
  }
  return defaults;
}

template <typename T>
T field(const Json& sec, const char* key, const std::string& where) {
  try {
    return sec.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string required_path(const Json& sec, const char* key, const std::string& where, const std::string& flag) {
  auto v = field<std::string>(sec, key, where);
  if (v.empty()) throw ConfigError("missing required " + flag);
  return v;
}

std::uint64_t top_seed(const Json& user) {
  try {
    return user.value("seed", std::uint64_t{0});
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("seed: ") + e.what());
  }
}

void print_resolved(const std::string& command, const Json& resolved) {
  std::cerr << "resolved config (" << command << "): " << resolved.dump() << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const Json& user) {
  ocb::SynthConfig sc = ocb::synth_config_from_json(user.value("synth", Json::object()));
  sc.seed = top_seed(user);
  const Json io = section(user, "/commands/synth", {{"out", ""}, {"labels", ""}, {"manifest", ""}});
  Json resolved = {{"seed", sc.seed}, {"synth", ocb::to_json(sc)}, {"commands", {{"synth", io}}}};
  resolved["synth"].erase("seed");
  print_resolved("synth", resolved);
  const auto out = required_path(io, "out", "commands.synth", "--out");
  const auto labels = required_path(io, "labels", "commands.synth", "--labels");

  const auto data = ocb::generate(sc);
  ocb::ActivationHeader h;
  h.dim = sc.dim;
  h.backend = "synth";
  h.raw = data.raw;
  std::vector<std::string> vocab;
  const auto& cats = ocb::SynthConfig::synth_categories();
  for (std::size_t c = 0; c < sc.dim; ++c)
    vocab.push_back(sc.task == ocb::SynthTask::cocologic_like && c < cats.size() ? cats[c]
                                                                                 : "concept_" + std::to_string(c));
  h.vocabulary = vocab;
  ocb::save_activations(out, h, data.records);
  std::vector<std::string> ids;
  for (const auto& r : data.records) ids.push_back(r.image_id);
  ocb::save_labels(labels, data.label_spec, ids, data.labels);
  const auto manifest = field<std::string>(io, "manifest", "commands.synth");
  if (!manifest.empty()) write_text(manifest, ocb::manifest_to_json(data, sc).dump(2) + "\n");
  std::cout << "wrote " << data.records.size() << " images to " << out << "\n";
  return 0;
}

int cmd_split(const Json& user) {
  const Json sec = section(user, "/split",
                           {{"input", ""}, {"fractions", {0.8, 0.2}}, {"train_out", ""}, {"val_out", ""}, {"test_out", ""}});
  const std::uint64_t seed = top_seed(user);
  print_resolved("split", {{"seed", seed}, {"split", sec}});
  const auto input = required_path(sec, "input", "split", "--input");
  const auto fractions = field<std::vector<double>>(sec, "fractions", "split");
  std::vector<std::string> outs;
  if (fractions.size() == 2) {
    outs = {required_path(sec, "train_out", "split", "--train-out"), required_path(sec, "test_out", "split", "--test-out")};
  } else if (fractions.size() == 3) {
    outs = {required_path(sec, "train_out", "split", "--train-out"), required_path(sec, "val_out", "split", "--val-out"),
            required_path(sec, "test_out", "split", "--test-out")};
  } else {
    throw ConfigError("--fractions takes 2 (train,test) or 3 (train,val,test) values");
  }
  const auto file = ocb::load_activations(input);
  const auto parts = ocb::split_indices(file.records.size(), fractions, seed);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    std::vector<ocb::ImageActivationRecord> recs;
    for (auto i : parts[p]) recs.push_back(file.records[i]);
    ocb::save_activations(outs[p], file.header, recs);
    std::cout << outs[p] << ": " << recs.size() << " images\n";
  }
  return 0;
}

ocb::PipelineConfig pipeline_config(const Json& user) {
  Json p = user;
  for (const char* key : {"synth", "split", "sweep", "commands"}) p.erase(key);
  return ocb::pipeline_config_from_json(p);
}

int cmd_refine(const Json& user) {
  const auto cfg = pipeline_config(user);
  const Json io = section(user, "/commands/refine", {{"input", ""}, {"out", ""}});
  const Json full = cfg.to_json();
  print_resolved("refine", {{"preset", full["preset"]}, {"refine", full["refine"]}, {"commands", {{"refine", io}}}});
  cfg.refine.validate();
  const auto input = required_path(io, "input", "commands.refine", "--input");
  const auto out = required_path(io, "out", "commands.refine", "--out");
  auto file = ocb::load_activations(input);
  std::size_t before = 0, after = 0;
  for (auto& r : file.records) {
    before += r.objects.size();
    r = ocb::refine_record(r, cfg.refine);
    after += r.objects.size();
  }
  file.header.raw = false;
  ocb::save_activations(out, file.header, file.records);
  std::cout << "refined " << file.records.size() << " images: " << before << " proposals -> " << after
            << " objects\n";
  return 0;
}

int cmd_aggregate(const Json& user) {
  const auto cfg = pipeline_config(user);
  const Json io = section(user, "/commands/aggregate", {{"input", ""}, {"out", ""}});
  Json full = cfg.to_json();
  Json resolved = {{"preset", full["preset"]},           {"refine", full["refine"]},
                   {"aggregation", full["aggregation"]}, {"image_only", full["image_only"]},
                   {"commands", {{"aggregate", io}}}};
  print_resolved("aggregate", resolved);
  cfg.refine.validate();
  cfg.agg.validate();
  const auto input = required_path(io, "input", "commands.aggregate", "--input");
  const auto out_path = required_path(io, "out", "commands.aggregate", "--out");
  const auto file = ocb::load_activations(input);
  const auto encodings = ocb::encode(ocb::prepare_records(file.records, file.header.raw, cfg), cfg);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + out_path + "' for writing");
  out << Json{{"format_version", ocb::kFormatVersion},
              {"kind", ocb::to_string(cfg.agg.kind)},
              {"epsilon", cfg.agg.epsilon},
              {"k", cfg.k()},
              {"dim", file.header.dim},
              {"length", ocb::encoded_length(cfg.agg.kind, cfg.k(), file.header.dim)},
              {"config", resolved}}
             .dump()
      << "\n";
  for (std::size_t i = 0; i < encodings.size(); ++i)
    out << Json{{"image_id", file.records[i].image_id}, {"vector", encodings[i].vector}}.dump() << "\n";
  std::cout << "aggregated " << encodings.size() << " images with " << ocb::to_string(cfg.agg.kind) << "\n";
  return 0;
}

int cmd_train(const Json& user) {
  const auto cfg = pipeline_config(user);
  print_resolved("train", cfg.to_json());
  const auto result = ocb::run_pipeline(cfg);
  const auto labels = ocb::load_labels(cfg.paths.labels);
  if (result.validation) std::cout << "== validation ==\n" << ocb::format_report(*result.validation, labels.spec);
  if (result.test) std::cout << "== test ==\n" << ocb::format_report(*result.test, labels.spec);
  if (!result.validation && !result.test) std::cout << "trained; no evaluation split given\n";
  return 0;
}

struct LoadedModel {
  ocb::LinearPredictor predictor;
  ocb::PipelineConfig config;  // training config with the model's k and aggregation enforced
};

/// The model's stored config supplies refinement defaults; user refine
/// settings overlay them; k and aggregation always come from the model.
LoadedModel load_model_with_config(const std::string& path, const Json& user) {
  Json doc;
  try {
    doc = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw DataError("model file '" + path + "': " + e.what());
  }
  LoadedModel m{ocb::model_from_json(doc), {}};
  const Json stored = doc.value("config", Json::object());
  m.config = stored.is_object() && !stored.empty() ? ocb::pipeline_config_from_json(stored) : ocb::PipelineConfig{};
  Json overlay = Json::object();
  for (const char* key : {"preset", "refine"})
    if (user.contains(key)) overlay[key] = user[key];
  m.config = ocb::pipeline_config_from_json(overlay, m.config);
  m.config.refine.k = m.predictor.k;
  m.config.agg = m.predictor.agg;
  return m;
}

int cmd_eval(const Json& user) {
  const Json io = section(user, "/commands/eval", {{"model", ""}, {"input", ""}, {"labels", ""}, {"report_out", ""}});
  const auto model_path = required_path(io, "model", "commands.eval", "--model");
  const auto m = load_model_with_config(model_path, user);
  Json resolved = m.config.to_json();
  resolved.erase("paths");
  resolved.erase("train");
  resolved["commands"] = {{"eval", io}};
  print_resolved("eval", resolved);
  const auto input = required_path(io, "input", "commands.eval", "--input");
  const auto labels_path = required_path(io, "labels", "commands.eval", "--labels");

  const auto labels = ocb::load_labels(labels_path);
  if (labels.spec.class_names != m.predictor.label_spec.class_names || labels.spec.mode != m.predictor.label_spec.mode)
    throw DataError("label file classes do not match the model's label spec");
  const auto split = ocb::attach_labels(ocb::load_activations(input), labels);
  const auto enc = ocb::encode(ocb::prepare_records(split.records, split.raw, m.config), m.config);
  const auto report = ocb::evaluate(m.predictor, enc, split.labels);
  std::cout << ocb::format_report(report, labels.spec);
  const auto report_out = field<std::string>(io, "report_out", "commands.eval");
  if (!report_out.empty())
    write_text(report_out, Json{{"config", resolved}, {"test", ocb::to_json(report, labels.spec)}}.dump(2) + "\n");
  return 0;
}

int cmd_explain(const Json& user) {
  const Json io = section(user, "/commands/explain",
                          {{"model", ""}, {"input", ""}, {"image_id", ""}, {"class", ""}, {"top_n", 10}, {"json", false}});
  const auto model_path = required_path(io, "model", "commands.explain", "--model");
  const auto m = load_model_with_config(model_path, user);
  Json resolved = m.config.to_json();
  resolved.erase("paths");
  resolved.erase("train");
  resolved["commands"] = {{"explain", io}};
  print_resolved("explain", resolved);
  const auto input = required_path(io, "input", "commands.explain", "--input");
  const auto image_id = required_path(io, "image_id", "commands.explain", "--image-id");
  const auto top_n = field<std::size_t>(io, "top_n", "commands.explain");
  const auto as_json = field<bool>(io, "json", "commands.explain");

  const auto file = ocb::load_activations(input);
  auto it = std::find_if(file.records.begin(), file.records.end(),
                         [&](const auto& r) { return r.image_id == image_id; });
  if (it == file.records.end()) throw DataError("image '" + image_id + "' not found in " + input);
  const auto record = ocb::prepare_records({*it}, file.header.raw, m.config).front();
  const auto& p = m.predictor;
  const auto& names = p.label_spec.class_names;

  std::size_t cls = 0;
  const auto class_arg = field<std::string>(io, "class", "commands.explain");
  if (class_arg.empty()) {
    const auto enc = ocb::aggregate(record, p.k, p.agg);
    cls = ocb::argmax(ocb::predict(p, enc));
  } else if (auto pos = std::find(names.begin(), names.end(), class_arg); pos != names.end()) {
    cls = static_cast<std::size_t>(pos - names.begin());
  } else {
    const auto [end, ec] = std::from_chars(class_arg.data(), class_arg.data() + class_arg.size(), cls);
    if (ec != std::errc() || end != class_arg.data() + class_arg.size() || cls >= names.size())
      throw ConfigError("--class: unknown class '" + class_arg + "'");
  }

  const auto ex = ocb::explain(p, record, cls, top_n);
  auto concept_name = [&](std::size_t c) {
    if (file.header.vocabulary && c < file.header.vocabulary->size()) return (*file.header.vocabulary)[c];
    return "concept_" + std::to_string(c);
  };
  if (as_json) {
    Json rows = Json::array();
    for (const auto& c : ex.contributions) {
      Json r = {{"source", ocb::to_string(c.source)}, {"concept", concept_name(c.concept_index)},
                {"concept_index", c.concept_index},   {"feature_index", c.feature_index},
                {"activation", c.activation},         {"contribution", c.contribution}};
      if (c.source == ocb::SourceKind::object) r["object"] = c.object_index;
      rows.push_back(std::move(r));
    }
    std::cout << Json{{"image_id", image_id}, {"class", names[cls]}, {"logit", ex.logit}, {"bias", ex.bias},
                      {"contributions", rows},  {"omitted", ex.omitted}}
                     .dump(2)
              << "\n";
    return 0;
  }
  std::size_t w = 7;
  for (const auto& c : ex.contributions) w = std::max(w, concept_name(c.concept_index).size());
  const int cw = static_cast<int>(w);
  std::cout << "image " << image_id << "  class " << names[cls] << "\n" << std::fixed << std::setprecision(4)
            << "logit " << ex.logit << "  bias " << ex.bias << "\n\n"
            << std::left << std::setw(8) << "source" << std::setw(8) << "object" << std::setw(cw + 2) << "concept"
            << std::right << std::setw(12) << "activation" << std::setw(14) << "contribution" << "\n";
  for (const auto& c : ex.contributions) {
    std::cout << std::left << std::setw(8) << ocb::to_string(c.source) << std::setw(8)
              << (c.source == ocb::SourceKind::object ? std::to_string(c.object_index) : "-") << std::setw(cw + 2)
              << concept_name(c.concept_index) << std::right << std::setw(12) << c.activation << std::setw(14)
              << c.contribution << "\n";
  }
  if (ex.omitted != 0.0) std::cout << "(remaining terms: " << ex.omitted << ")\n";
  return 0;
}

int cmd_build_cocologic(const Json& user) {
  const Json io = section(user, "/commands/build_cocologic",
                          {{"rules", ""}, {"annotations", ""}, {"universe", ""}, {"out", ""}, {"report", ""}});
  print_resolved("build-cocologic", {{"commands", {{"build_cocologic", io}}}});
  const auto annotations = required_path(io, "annotations", "commands.build_cocologic", "--annotations");
  const auto out = required_path(io, "out", "commands.build_cocologic", "--out");
  const auto universe_path = field<std::string>(io, "universe", "commands.build_cocologic");
  const auto rules_path = field<std::string>(io, "rules", "commands.build_cocologic");

  const auto universe = universe_path.empty() ? ocb::coco_universe() : ocb::load_universe(universe_path);
  const auto rules = rules_path.empty() ? ocb::parse_rule_file(ocb::kCocoLogicRules, universe)
                                        : ocb::parse_rule_file(read_text(rules_path), universe);
  if (rules.rules.empty()) throw DataError("rule file defines no classes");
  const auto ds = ocb::build_dataset(rules, ocb::load_annotations(annotations, universe));

  std::vector<std::string> ids;
  std::vector<ocb::Label> labels;
  for (const auto& img : ds.images) {
    ids.push_back(img.image_id);
    labels.push_back({img.class_index});
  }
  ocb::save_labels(out, ocb::label_spec_for(rules), ids, labels);
  const auto report_path = field<std::string>(io, "report", "commands.build_cocologic");
  if (!report_path.empty())
    write_text(report_path, Json{{"config", io}, {"report", ocb::to_json(ds.report)}}.dump(2) + "\n");

  std::size_t w = 5;
  for (const auto& [name, n] : ds.report.per_class) w = std::max(w, name.size());
  std::cout << "input images     " << ds.report.n_input << "\n"
            << "kept             " << ds.report.n_kept << "\n"
            << "no rule matched  " << ds.report.discarded_no_match << "\n"
            << "several matched  " << ds.report.discarded_multi_match << "\n\n";
  for (const auto& [name, n] : ds.report.per_class)
    std::cout << std::left << std::setw(static_cast<int>(w)) << name << "  " << n << "\n";
  return 0;
}

int cmd_sweep(const Json& user) {
  const auto cfg = pipeline_config(user);
  Json agg_names = Json::array();
  for (auto a : ocb::kAllAggKinds) agg_names.push_back(ocb::to_string(a));
  const Json sec = section(user, "/sweep",
                           {{"aggs", agg_names},
                            {"ks", {1, 3, 7}},
                            {"t_mins", {cfg.refine.t_min}},
                            {"threads", 0},
                            {"csv_out", ""},
                            {"json_out", ""}});
  Json resolved = cfg.to_json();
  resolved["sweep"] = sec;
  print_resolved("sweep", resolved);

  ocb::SweepGrid grid;
  for (const auto& a : field<std::vector<std::string>>(sec, "aggs", "sweep")) grid.aggs.push_back(ocb::agg_kind_from_string(a));
  grid.ks = field<std::vector<std::size_t>>(sec, "ks", "sweep");
  grid.t_mins = field<std::vector<double>>(sec, "t_mins", "sweep");
  std::size_t threads = field<std::size_t>(sec, "threads", "sweep");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());

  if (cfg.paths.train.empty()) throw ConfigError("missing required --train");
  if (cfg.paths.test.empty()) throw ConfigError("missing required --test");
  if (cfg.paths.labels.empty()) throw ConfigError("missing required --labels");
  const auto labels = ocb::load_labels(cfg.paths.labels);
  const auto train = ocb::attach_labels(ocb::load_activations(cfg.paths.train), labels);
  const auto test = ocb::attach_labels(ocb::load_activations(cfg.paths.test), labels);
  const auto rows = ocb::run_sweep(grid, cfg, labels.spec, train, test, threads);

  const auto csv = ocb::sweep_csv(rows);
  std::cout << csv;
  const auto csv_out = field<std::string>(sec, "csv_out", "sweep");
  const auto json_out = field<std::string>(sec, "json_out", "sweep");
  if (!csv_out.empty()) write_text(csv_out, csv);
  if (!json_out.empty()) {
    Json j = ocb::sweep_json(rows, labels.spec, cfg);
    j["config"]["sweep"] = sec;
    j["config"]["sweep"].erase("threads");  // output must not depend on the worker count
    write_text(json_out, j.dump(2) + "\n");
  }
  const auto failed = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok; });
  if (failed) std::cerr << failed << " of " << rows.size() << " sweep cells failed\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"Object-centric concept bottleneck pipeline"};
  app.set_version_flag("--version", "ocb 0.1.0");
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (see README)")->envname("OCB_CONFIG");

  Bindings b;
  using Fn = int (*)(const Json&);
  std::vector<std::pair<CLI::App*, Fn>> commands;

  auto* synth = app.add_subcommand("synth", "generate a synthetic activation file and labels");
  b.add(synth, "--seed", "/seed", Kind::integer, "top-level seed");
  b.add(synth, "--task", "/synth/task", Kind::text, "presence | counting | cocologic_like");
  b.add(synth, "--n-images", "/synth/n_images", Kind::integer, "number of images");
  b.add(synth, "--dim", "/synth/dim", Kind::integer, "concept dimension");
  b.add(synth, "--min-objects", "/synth/min_objects", Kind::integer, "fewest objects per image");
  b.add(synth, "--max-objects", "/synth/max_objects", Kind::integer, "most objects per image");
  b.add(synth, "--min-concepts", "/synth/min_concepts", Kind::integer, "fewest concepts per object");
  b.add(synth, "--max-concepts", "/synth/max_concepts", Kind::integer, "most concepts per object");
  b.add(synth, "--noise-rate", "/synth/noise_rate", Kind::real, "spurious activation probability");
  b.add(synth, "--n-classes", "/synth/n_classes", Kind::integer, "number of classes");
  b.add(synth, "--target-rate", "/synth/target_rate", Kind::real, "counting: chance an object carries concept 0");
  b.add(synth, "--raw", "/synth/raw_proposals", Kind::flag, "emit unrefined proposals");
  b.add(synth, "--clutter-rate", "/synth/clutter_rate", Kind::real, "raw mode clutter probability");
  b.add(synth, "--out", "/commands/synth/out", Kind::text, "activation file to write");
  b.add(synth, "--labels", "/commands/synth/labels", Kind::text, "label file to write");
  b.add(synth, "--manifest", "/commands/synth/manifest", Kind::text, "optional ground-truth manifest");
  commands.emplace_back(synth, cmd_synth);

  auto* split = app.add_subcommand("split", "seeded train/val/test split of an activation file");
  b.add(split, "--seed", "/seed", Kind::integer, "top-level seed");
  b.add(split, "--input", "/split/input", Kind::text, "activation file");
  b.add(split, "--fractions", "/split/fractions", Kind::real_list, "train,test or train,val,test shares");
  b.add(split, "--train-out", "/split/train_out", Kind::text, "train split file");
  b.add(split, "--val-out", "/split/val_out", Kind::text, "validation split file");
  b.add(split, "--test-out", "/split/test_out", Kind::text, "test split file");
  commands.emplace_back(split, cmd_split);

  auto* refine = app.add_subcommand("refine", "filter and suppress raw proposals");
  add_refine_options(refine, b);
  b.add(refine, "--input", "/commands/refine/input", Kind::text, "activation file");
  b.add(refine, "--out", "/commands/refine/out", Kind::text, "refined activation file");
  commands.emplace_back(refine, cmd_refine);

  auto* aggregate = app.add_subcommand("aggregate", "write aggregated encodings as JSON lines");
  add_refine_options(aggregate, b);
  add_aggregation_options(aggregate, b);
  b.add(aggregate, "--input", "/commands/aggregate/input", Kind::text, "activation file");
  b.add(aggregate, "--out", "/commands/aggregate/out", Kind::text, "encoding file");
  commands.emplace_back(aggregate, cmd_aggregate);

  auto* train = app.add_subcommand("train", "refine, aggregate, train and evaluate");
  add_pipeline_options(train, b);
  b.add(train, "--train", "/paths/train", Kind::text, "training activation file");
  b.add(train, "--val", "/paths/val", Kind::text, "validation activation file");
  b.add(train, "--test", "/paths/test", Kind::text, "test activation file");
  b.add(train, "--labels", "/paths/labels", Kind::text, "label file");
  b.add(train, "--model-out", "/paths/model_out", Kind::text, "model JSON to write");
  b.add(train, "--report-out", "/paths/report_out", Kind::text, "report JSON to write");
  commands.emplace_back(train, cmd_train);

  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_refine_options(eval, b);
  b.add(eval, "--model", "/commands/eval/model", Kind::text, "model JSON");
  b.add(eval, "--input", "/commands/eval/input", Kind::text, "activation file");
  b.add(eval, "--labels", "/commands/eval/labels", Kind::text, "label file");
  b.add(eval, "--report-out", "/commands/eval/report_out", Kind::text, "report JSON to write");
  commands.emplace_back(eval, cmd_eval);

  auto* explain = app.add_subcommand("explain", "attribute one prediction to concepts");
  add_refine_options(explain, b);
  b.add(explain, "--model", "/commands/explain/model", Kind::text, "model JSON");
  b.add(explain, "--input", "/commands/explain/input", Kind::text, "activation file");
  b.add(explain, "--image-id", "/commands/explain/image_id", Kind::text, "image to explain");
  b.add(explain, "--class", "/commands/explain/class", Kind::text, "class name or index (default: predicted)");
  b.add(explain, "--top-n", "/commands/explain/top_n", Kind::integer, "terms to list, 0 for all");
  b.add(explain, "--json", "/commands/explain/json", Kind::flag, "emit JSON");
  commands.emplace_back(explain, cmd_explain);

  auto* cocologic = app.add_subcommand("build-cocologic", "label images by logical class rules");
  b.add(cocologic, "--rules", "/commands/build_cocologic/rules", Kind::text, "rule file (default: bundled)");
  b.add(cocologic, "--annotations", "/commands/build_cocologic/annotations", Kind::text,
        "COCO instances JSON or JSON lines");
  b.add(cocologic, "--universe", "/commands/build_cocologic/universe", Kind::text,
        "category list (default: COCO 2017)");
  b.add(cocologic, "--out", "/commands/build_cocologic/out", Kind::text, "label file to write");
  b.add(cocologic, "--report", "/commands/build_cocologic/report", Kind::text, "dataset report JSON");
  commands.emplace_back(cocologic, cmd_build_cocologic);

  auto* sweep = app.add_subcommand("sweep", "grid over aggregation, k and t_min");
  add_pipeline_options(sweep, b);
  b.add(sweep, "--train", "/paths/train", Kind::text, "training activation file");
  b.add(sweep, "--test", "/paths/test", Kind::text, "test activation file");
  b.add(sweep, "--labels", "/paths/labels", Kind::text, "label file");
  b.add(sweep, "--aggs", "/sweep/aggs", Kind::text_list, "aggregation kinds");
  b.add(sweep, "--ks", "/sweep/ks", Kind::integer_list, "object budgets");
  b.add(sweep, "--t-mins", "/sweep/t_mins", Kind::real_list, "minimum relative sizes");
  b.add(sweep, "--threads", "/sweep/threads", Kind::integer, "worker threads, 0 for all cores");
  b.add(sweep, "--csv-out", "/sweep/csv_out", Kind::text, "CSV table to write");
  b.add(sweep, "--json-out", "/sweep/json_out", Kind::text, "JSON table to write");
  commands.emplace_back(sweep, cmd_sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Json user = config_path.empty() ? Json::object() : load_config_file(config_path);
  b.overlay(user);
  for (const auto& [sub, fn] : commands)
    if (sub->parsed()) return fn(user);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "ocb: configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "ocb: data error: " << e.what() << "\n";
    return 2;
  } catch (const ocb::ParseError& e) {
    std::cerr << "ocb: rule error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ocb: internal error: " << e.what() << "\n";
    return 3;
  }
}
