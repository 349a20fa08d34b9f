#pragma once

// File formats.
//
// Activation file (JSON lines). First line is a header:
//   {"format_version":"1.0","dim":C,"vocabulary":[...]|null,"backend":"...",
//    "proposals":"refined"|"raw","box_units":"pixel"|"normalized"}
// then one record per line:
//   {"image_id":"...","image_size":[w,h],"image_vector":[[idx,val],...],
//    "objects":[{"box":[x0,y0,x1,y1],"score":s,"vector":[[idx,val],...]},...]}
//
// Label file (JSON lines). Header {"format_version":"1.0","mode":"single_label"|
// "multi_label","classes":[...]}, then {"image_id":"...","labels":["name",...]}.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ocb/aggregation.hpp"
#include "ocb/cocologic.hpp"
#include "ocb/core.hpp"
#include "ocb/metrics.hpp"
#include "ocb/predictor.hpp"
#include "ocb/synth.hpp"

namespace ocb {

using Json = nlohmann::ordered_json;

inline constexpr const char* kFormatVersion = "1.0";

namespace detail {

inline void check_version(const Json& header, const std::string& what) {
  if (!header.contains("format_version") || !header["format_version"].is_string())
    throw DataError(what + ": missing format_version", 1);
  const std::string v = header["format_version"].get<std::string>();
  const auto major = v.substr(0, v.find('.'));
  if (major != "1") throw DataError(what + ": unsupported format version " + v, 1);
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

inline Json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what(), line_no);
  }
}

template <typename T>
T get_field(const Json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return obj[key].get<T>();
  } catch (const Json::exception&) {
    throw DataError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline Json to_json(const SparseConceptVector& v) {
  Json arr = Json::array();
  for (const auto& e : v.entries()) arr.push_back(Json::array({e.index, e.value}));
  return arr;
}

inline SparseConceptVector sparse_from_json(const Json& j, std::size_t dim) {
  if (!j.is_array()) throw DataError("concept vector must be an array of [index, value] pairs");
  std::vector<ConceptEntry> entries;
  entries.reserve(j.size());
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number())
      throw DataError("concept entry must be [index, value]");
    const auto idx = pair[0].get<long long>();
    if (idx < 0 || static_cast<unsigned long long>(idx) >= dim)
      throw DataError("concept index " + std::to_string(idx) + " out of range for dim " + std::to_string(dim));
    entries.push_back({static_cast<ConceptIndex>(idx), pair[1].get<double>()});
  }
  return SparseConceptVector(dim, std::move(entries));
}

// ---------------------------------------------------------------------------
// Activation files

struct ActivationHeader {
  std::size_t dim = 0;
  std::optional<std::vector<std::string>> vocabulary;
  std::string backend = "unknown";
  bool raw = false;         // objects are unrefined proposals
  bool normalized = false;  // boxes in [0,1] image coordinates
  Json extra = Json::object();  // producer metadata (crop policy, solver settings), carried through unchanged

  Json to_json() const {
    Json h;
    h["format_version"] = kFormatVersion;
    h["dim"] = dim;
    h["vocabulary"] = vocabulary ? Json(*vocabulary) : Json(nullptr);
    h["backend"] = backend;
    h["proposals"] = raw ? "raw" : "refined";
    h["box_units"] = normalized ? "normalized" : "pixel";
    for (const auto& [key, value] : extra.items())
      if (!h.contains(key)) h[key] = value;
    return h;
  }
};

struct ActivationFile {
  ActivationHeader header;
  std::vector<ImageActivationRecord> records;
};

inline ActivationHeader parse_activation_header(const Json& h) {
  detail::check_version(h, "activation file");
  ActivationHeader out;
  try {
    const auto dim = detail::get_field<long long>(h, "dim");
    if (dim <= 0) throw DataError("dim must be positive");
    out.dim = static_cast<std::size_t>(dim);
    if (h.contains("vocabulary") && !h["vocabulary"].is_null()) {
      out.vocabulary = detail::get_field<std::vector<std::string>>(h, "vocabulary");
      if (out.vocabulary->size() != out.dim) throw DataError("vocabulary size differs from dim");
    }
    if (h.contains("backend")) out.backend = detail::get_field<std::string>(h, "backend");
    const std::string proposals = h.value("proposals", std::string("refined"));
    if (proposals != "raw" && proposals != "refined") throw DataError("proposals must be raw or refined");
    out.raw = proposals == "raw";
    const std::string units = h.value("box_units", std::string("pixel"));
    if (units != "pixel" && units != "normalized") throw DataError("box_units must be pixel or normalized");
    out.normalized = units == "normalized";
    for (const auto& [key, value] : h.items())
      if (key != "format_version" && key != "dim" && key != "vocabulary" && key != "backend" && key != "proposals" &&
          key != "box_units")
        out.extra[key] = value;
  } catch (const DataError& e) {
    throw DataError("header: " + e.detail(), 1);
  }
  return out;
}

inline ImageActivationRecord parse_activation_record(const Json& j, const ActivationHeader& header) {
  ImageActivationRecord rec;
  rec.image_id = detail::get_field<std::string>(j, "image_id");
  const auto size = detail::get_field<std::vector<double>>(j, "image_size");
  if (size.size() != 2 || !(size[0] > 0) || !(size[1] > 0))
    throw DataError("image_size must be [width, height] with positive entries");
  rec.image_size = {size[0], size[1]};
  if (!j.contains("image_vector")) throw DataError("missing field 'image_vector'");
  rec.image_vector = sparse_from_json(j["image_vector"], header.dim);
  if (j.contains("objects")) {
    if (!j["objects"].is_array()) throw DataError("objects must be an array");
    for (const auto& o : j["objects"]) {
      auto box = detail::get_field<std::vector<double>>(o, "box");
      if (box.size() != 4) throw DataError("box must have four coordinates");
      if (header.normalized) {
        box[0] *= rec.image_size.width;
        box[2] *= rec.image_size.width;
        box[1] *= rec.image_size.height;
        box[3] *= rec.image_size.height;
      }
      const double score = detail::get_field<double>(o, "score");
      if (!o.contains("vector")) throw DataError("object missing field 'vector'");
      rec.objects.push_back({ScoredProposal(BoundingBox(box[0], box[1], box[2], box[3]), score),
                             sparse_from_json(o["vector"], header.dim)});
    }
  }
  rec.validate(!header.raw);
  return rec;
}

inline Json to_json(const ImageActivationRecord& rec) {
  Json j;
  j["image_id"] = rec.image_id;
  j["image_size"] = Json::array({rec.image_size.width, rec.image_size.height});
  j["image_vector"] = to_json(rec.image_vector);
  Json objs = Json::array();
  for (const auto& o : rec.objects) {
    const auto& b = o.proposal.box;
    objs.push_back({{"box", Json::array({b.x_min, b.y_min, b.x_max, b.y_max})},
                    {"score", o.proposal.score},
                    {"vector", to_json(o.vector)}});
  }
  j["objects"] = std::move(objs);
  return j;
}

/// Streams records one line at a time; every validation error carries the
/// 1-based line number of the offending record.
inline ActivationHeader read_activations(std::istream& in,
                                         const std::function<void(ImageActivationRecord&&)>& sink) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("activation file is empty (missing header)", 1);
  const ActivationHeader header = parse_activation_header(detail::parse_line(line, 1));
  std::set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = detail::parse_line(line, line_no);
    try {
      auto rec = parse_activation_record(j, header);
      if (!ids.insert(rec.image_id).second) throw DataError("duplicate image_id '" + rec.image_id + "'");
      sink(std::move(rec));
    } catch (const DataError& e) {
      throw DataError(e.detail(), line_no);
    }
  }
  return header;
}

inline ActivationFile load_activations(const std::string& path) {
  auto in = detail::open_in(path);
  ActivationFile file;
  file.header = read_activations(in, [&](ImageActivationRecord&& r) { file.records.push_back(std::move(r)); });
  return file;
}

inline void write_activations(std::ostream& out, const ActivationHeader& header,
                              const std::vector<ImageActivationRecord>& records) {
  out << header.to_json().dump() << '\n';
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline void save_activations(const std::string& path, const ActivationHeader& header,
                             const std::vector<ImageActivationRecord>& records) {
  auto out = detail::open_out(path);
  write_activations(out, header, records);
}

// ---------------------------------------------------------------------------
// Label files

struct LabelFile {
  LabelSpec spec;
  std::map<std::string, Label> labels;
};

inline void write_labels(std::ostream& out, const LabelSpec& spec, const std::vector<std::string>& ids,
                         const std::vector<Label>& labels) {
  out << Json{{"format_version", kFormatVersion}, {"mode", to_string(spec.mode)}, {"classes", spec.class_names}}.dump()
      << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Json names = Json::array();
    for (auto c : labels[i]) names.push_back(spec.class_names[c]);
    out << Json{{"image_id", ids[i]}, {"labels", names}}.dump() << '\n';
  }
}

inline void save_labels(const std::string& path, const LabelSpec& spec, const std::vector<std::string>& ids,
                        const std::vector<Label>& labels) {
  auto out = detail::open_out(path);
  write_labels(out, spec, ids, labels);
}

inline LabelFile read_labels(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("label file is empty (missing header)", 1);
  const Json h = detail::parse_line(line, 1);
  detail::check_version(h, "label file");
  LabelFile file;
  try {
    file.spec = LabelSpec(task_mode_from_string(detail::get_field<std::string>(h, "mode")),
                          detail::get_field<std::vector<std::string>>(h, "classes"));
  } catch (const Error& e) {
    throw DataError(std::string("header: ") + e.what(), 1);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = detail::parse_line(line, line_no);
    try {
      const auto id = detail::get_field<std::string>(j, "image_id");
      Label label;
      for (const auto& name : detail::get_field<std::vector<std::string>>(j, "labels"))
        label.push_back(file.spec.index_of(name));
      std::sort(label.begin(), label.end());
      validate_label(label, file.spec);
      if (!file.labels.emplace(id, std::move(label)).second) throw DataError("duplicate image_id '" + id + "'");
    } catch (const DataError& e) {
      throw DataError(e.detail(), line_no);
    }
  }
  return file;
}

inline LabelFile load_labels(const std::string& path) {
  auto in = detail::open_in(path);
  return read_labels(in);
}

// ---------------------------------------------------------------------------
// Annotations (COCO instances JSON or JSON lines {image_id, counts})

inline std::vector<AnnotationRecord> parse_coco_instances(const Json& doc) {
  std::map<long long, std::string> categories;
  for (const auto& c : doc.value("categories", Json::array()))
    categories[detail::get_field<long long>(c, "id")] = detail::get_field<std::string>(c, "name");
  auto id_string = [](const Json& id) { return id.is_string() ? id.get<std::string>() : id.dump(); };

  std::map<std::string, AnnotationRecord> by_image;
  for (const auto& img : doc.value("images", Json::array())) {
    if (!img.contains("id")) throw DataError("image entry without id");
    const auto id = id_string(img["id"]);
    by_image[id].image_id = id;
  }
  for (const auto& a : doc.value("annotations", Json::array())) {
    if (!a.contains("image_id")) throw DataError("annotation without image_id");
    const auto id = id_string(a["image_id"]);
    const auto cat = detail::get_field<long long>(a, "category_id");
    auto it = categories.find(cat);
    if (it == categories.end()) throw DataError("annotation refers to unknown category_id " + std::to_string(cat));
    auto& rec = by_image[id];
    rec.image_id = id;
    ++rec.category_counts[it->second];
  }
  std::vector<AnnotationRecord> out;
  for (auto& [id, rec] : by_image) out.push_back(std::move(rec));
  return out;
}

inline std::vector<AnnotationRecord> load_annotations(const std::string& path, const CategoryUniverse& universe) {
  std::vector<AnnotationRecord> out;
  {
    auto in = detail::open_in(path);
    Json doc = Json::parse(in, nullptr, false);
    if (!doc.is_discarded() && doc.is_object() && (doc.contains("annotations") || doc.contains("images"))) {
      out = parse_coco_instances(doc);
      for (const auto& a : out) validate_annotation(a, universe);
      return out;
    }
  }
  auto in = detail::open_in(path);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = detail::parse_line(line, line_no);
    try {
      AnnotationRecord rec;
      if (!j.contains("image_id")) throw DataError("missing field 'image_id'");
      rec.image_id = j["image_id"].is_string() ? j["image_id"].get<std::string>() : j["image_id"].dump();
      if (j.contains("counts")) rec.category_counts = detail::get_field<std::map<std::string, long>>(j, "counts");
      validate_annotation(rec, universe);
      if (!ids.insert(rec.image_id).second) throw DataError("duplicate image_id '" + rec.image_id + "'");
      out.push_back(std::move(rec));
    } catch (const DataError& e) {
      throw DataError(e.detail(), line_no);
    }
  }
  return out;
}

inline CategoryUniverse load_universe(const std::string& path) {
  auto in = detail::open_in(path);
  CategoryUniverse u;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    u.insert(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
  }
  if (u.empty()) throw DataError("category universe '" + path + "' is empty");
  return u;
}

// ---------------------------------------------------------------------------
// Models

inline Json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"seed", c.seed},
          {"weight_decay", c.weight_decay},   {"class_weighting", to_string(c.class_weighting)},
          {"max_scale", c.max_scale}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  try {
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("class_weighting")) c.class_weighting = class_weighting_from_string(j["class_weighting"].get<std::string>());
    if (j.contains("max_scale")) c.max_scale = j["max_scale"].get<bool>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

/// Model document: label spec, aggregation, k, dim, row-major weights, bias,
/// feature scale, training config and arbitrary extra sections.
inline Json model_to_json(const LinearPredictor& p, const TrainConfig& train_cfg, const Json& metrics = Json::object(),
                          const Json& config = Json::object()) {
  Json j;
  j["format_version"] = kFormatVersion;
  j["label_spec"] = {{"mode", to_string(p.label_spec.mode)}, {"classes", p.label_spec.class_names}};
  j["agg_kind"] = {{"kind", to_string(p.agg.kind)}, {"epsilon", p.agg.epsilon}};
  j["k"] = p.k;
  j["dim"] = p.dim;
  j["input_dim"] = p.input_dim;
  j["weights"] = p.weights;
  j["bias"] = p.bias;
  j["feature_scale"] = p.feature_scale;
  j["train_config"] = to_json(train_cfg);
  j["metrics"] = metrics;
  j["config"] = config;
  return j;
}

inline LinearPredictor model_from_json(const Json& j) {
  detail::check_version(j, "model file");
  LinearPredictor p;
  try {
    const auto& ls = j.at("label_spec");
    p.label_spec = LabelSpec(task_mode_from_string(ls.at("mode").get<std::string>()),
                             ls.at("classes").get<std::vector<std::string>>());
    p.agg = {agg_kind_from_string(j.at("agg_kind").at("kind").get<std::string>()),
             j.at("agg_kind").at("epsilon").get<double>()};
    p.k = j.at("k").get<std::size_t>();
    p.dim = j.at("dim").get<std::size_t>();
    p.input_dim = j.at("input_dim").get<std::size_t>();
    p.weights = j.at("weights").get<std::vector<double>>();
    p.bias = j.at("bias").get<std::vector<double>>();
    p.feature_scale = j.value("feature_scale", std::vector<double>{});
  } catch (const Json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  if (p.input_dim != encoded_length(p.agg.kind, p.k, p.dim))
    throw DataError("model file: input_dim inconsistent with aggregation and k");
  if (p.weights.size() != p.num_classes() * p.input_dim || p.bias.size() != p.num_classes())
    throw DataError("model file: weight or bias shape mismatch");
  if (!p.feature_scale.empty() && p.feature_scale.size() != p.input_dim)
    throw DataError("model file: feature_scale shape mismatch");
  return p;
}

inline LinearPredictor load_model(const std::string& path) {
  auto in = detail::open_in(path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

// ---------------------------------------------------------------------------
// Reports

inline Json to_json(const EvalReport& r, const LabelSpec& spec) {
  Json j;
  j["n_examples"] = r.n_examples;
  j["metrics"] = Json::object();
  for (const auto& [k, v] : r.metrics) j["metrics"][k] = v;
  Json per_class = Json::array();
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    Json row = {{"class", spec.class_names[c]}};
    if (c < r.per_class_recall.size()) row["recall"] = r.per_class_recall[c];
    if (c < r.per_class_ap.size()) row["ap"] = r.per_class_ap[c];
    row["excluded"] = std::find(r.excluded_classes.begin(), r.excluded_classes.end(), c) != r.excluded_classes.end();
    per_class.push_back(std::move(row));
  }
  j["per_class"] = std::move(per_class);
  j["metadata"] = Json::object();
  for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
  return j;
}

/// Aligned plain-text table of the report.
inline std::string format_report(const EvalReport& r, const LabelSpec& spec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  std::size_t w = 5;
  for (const auto& n : spec.class_names) w = std::max(w, n.size());
  for (const auto& [k, v] : r.metrics) w = std::max(w, k.size());
  os << "examples: " << r.n_examples << "\n";
  for (const auto& [k, v] : r.metrics) os << std::left << std::setw(static_cast<int>(w)) << k << "  " << v << "\n";
  const bool single = !r.per_class_recall.empty();
  os << "\n" << std::left << std::setw(static_cast<int>(w)) << "class" << "  " << (single ? "recall" : "AP") << "\n";
  const auto& values = single ? r.per_class_recall : r.per_class_ap;
  for (std::size_t c = 0; c < spec.num_classes() && c < values.size(); ++c) {
    os << std::left << std::setw(static_cast<int>(w)) << spec.class_names[c] << "  ";
    if (std::find(r.excluded_classes.begin(), r.excluded_classes.end(), c) != r.excluded_classes.end())
      os << "n/a (no support)";
    else
      os << values[c];
    os << "\n";
  }
  return os.str();
}

inline Json to_json(const DatasetReport& r) {
  Json per_class = Json::object();
  for (const auto& [name, n] : r.per_class) per_class[name] = n;
  return {{"n_input", r.n_input},
          {"n_kept", r.n_kept},
          {"discarded_no_match", r.discarded_no_match},
          {"discarded_multi_match", r.discarded_multi_match},
          {"per_class", per_class}};
}

inline Json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"task", to_string(c.task)},
          {"n_images", c.n_images},
          {"dim", c.dim},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"min_concepts", c.min_concepts},
          {"max_concepts", c.max_concepts},
          {"activation_lo", c.activation_lo},
          {"activation_hi", c.activation_hi},
          {"noise_rate", c.noise_rate},
          {"n_classes", c.n_classes},
          {"target_rate", c.target_rate},
          {"raw_proposals", c.raw_proposals},
          {"clutter_rate", c.clutter_rate},
          {"image_width", c.image_size.width},
          {"image_height", c.image_size.height}};
}

/// Overlays the fields present in `j` onto `c`.
inline SynthConfig synth_config_from_json(const Json& j, SynthConfig c = {}) {
  auto set = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j[key].get<std::remove_reference_t<decltype(dst)>>();
  };
  try {
    set("seed", c.seed);
    if (j.contains("task")) c.task = synth_task_from_string(j["task"].get<std::string>());
    set("n_images", c.n_images);
    set("dim", c.dim);
    set("min_objects", c.min_objects);
    set("max_objects", c.max_objects);
    set("min_concepts", c.min_concepts);
    set("max_concepts", c.max_concepts);
    set("activation_lo", c.activation_lo);
    set("activation_hi", c.activation_hi);
    set("noise_rate", c.noise_rate);
    set("n_classes", c.n_classes);
    set("target_rate", c.target_rate);
    set("raw_proposals", c.raw_proposals);
    set("clutter_rate", c.clutter_rate);
    set("image_width", c.image_size.width);
    set("image_height", c.image_size.height);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  return c;
}

inline Json manifest_to_json(const SynthData& data, const SynthConfig& cfg) {
  Json images = Json::array();
  for (const auto& t : data.manifest) {
    Json objs = Json::array();
    for (const auto& o : t.objects) {
      Json jo = {{"concepts", o.concepts}};
      if (!o.category.empty()) jo["category"] = o.category;
      objs.push_back(std::move(jo));
    }
    Json names = Json::array();
    for (auto c : t.label) names.push_back(data.label_spec.class_names[c]);
    images.push_back({{"image_id", t.image_id}, {"objects", objs}, {"target_count", t.target_count}, {"labels", names}});
  }
  return {{"config", to_json(cfg)}, {"images", images}};
}

}  // namespace ocb
