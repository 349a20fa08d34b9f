#pragma once

// Synthetic scenes with known object-level structure. Scenes exist only as
// boxes plus concept activations; the whole-image vector is the elementwise
// max of the object vectors (plus noise), which keeps presence information
// and discards counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ocb/cocologic.hpp"
#include "ocb/core.hpp"
#include "ocb/rules.hpp"

namespace ocb {

enum class SynthTask { presence, counting, cocologic_like };

inline std::string to_string(SynthTask t) {
  switch (t) {
    case SynthTask::presence: return "presence";
    case SynthTask::counting: return "counting";
    case SynthTask::cocologic_like: return "cocologic_like";
  }
  return "?";
}

inline SynthTask synth_task_from_string(const std::string& s) {
  for (auto t : {SynthTask::presence, SynthTask::counting, SynthTask::cocologic_like})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown synth task '" + s + "' (expected presence|counting|cocologic_like)");
}

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 32;
  std::size_t n_images = 1000;
  std::size_t min_objects = 1;
  std::size_t max_objects = 5;
  std::size_t min_concepts = 1;  // per object
  std::size_t max_concepts = 3;
  double activation_lo = 0.2;
  double activation_hi = 1.0;
  double noise_rate = 0.0;  // per (vector, concept) probability of a spurious activation
  SynthTask task = SynthTask::presence;
  std::size_t n_classes = 4;   // presence: classes are concepts 0..n-1; counting: counts 0..n-1 (last capped)
  double target_rate = 0.5;    // counting: probability that an object carries concept 0
  bool raw_proposals = false;  // emit unrefined proposals (duplicates, tiny and low-score boxes)
  double clutter_rate = 0.3;   // raw mode: per-object probability of each kind of clutter proposal
  ImageSize image_size{640, 480};

  static constexpr std::size_t kGridCols = 4;
  static constexpr std::size_t kGridRows = 3;

  void validate() const {
    if (dim == 0) throw ConfigError("synth dim must be positive");
    if (n_images == 0) throw ConfigError("n_images must be positive");
    if (min_objects > max_objects) throw ConfigError("min_objects exceeds max_objects");
    if (max_objects > kGridCols * kGridRows)
      throw ConfigError("at most " + std::to_string(kGridCols * kGridRows) + " objects per image");
    if (min_concepts == 0 || min_concepts > max_concepts)
      throw ConfigError("min_concepts must be at least 1 and at most max_concepts");
    if (!(activation_lo > 0.0) || !(activation_lo <= activation_hi))
      throw ConfigError("activation range must satisfy 0 < lo <= hi");
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ConfigError("noise_rate must lie in [0,1]");
    if (!(target_rate >= 0.0 && target_rate <= 1.0)) throw ConfigError("target_rate must lie in [0,1]");
    if (!(clutter_rate >= 0.0 && clutter_rate <= 1.0)) throw ConfigError("clutter_rate must lie in [0,1]");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (!(image_size.width >= 160 && image_size.height >= 120)) throw ConfigError("image too small");
    switch (task) {
      case SynthTask::presence:
        if (n_classes > dim) throw ConfigError("presence task needs n_classes <= dim");
        if (max_concepts > dim) throw ConfigError("max_concepts exceeds dim");
        break;
      case SynthTask::counting:
        if (dim < 2 || max_concepts > dim - 1) throw ConfigError("counting task needs max_concepts < dim");
        break;
      case SynthTask::cocologic_like:
        if (dim < synth_categories().size() + max_concepts)
          throw ConfigError("cocologic_like task needs dim >= " +
                            std::to_string(synth_categories().size() + max_concepts));
        break;
    }
  }

  /// Categories of the cocologic_like task; category i is concept i.
  static const std::vector<std::string>& synth_categories() {
    static const std::vector<std::string> cats = {"cat", "dog", "bird", "car", "person", "chair", "cow", "bowl"};
    return cats;
  }
};

/// Rules used to label cocologic_like scenes.
inline constexpr std::string_view kSynthRules = R"(Leash vs Licence: dog XOR car
Pair of Pets: distinct{cat, dog, bird} == 2
Empty Seat: chair AND NOT person
Crowd: count(person) >= 2
)";

inline RuleSet synth_rules() {
  const auto& cats = SynthConfig::synth_categories();
  return parse_rule_file(kSynthRules, CategoryUniverse(cats.begin(), cats.end()));
}

struct ObjectTruth {
  std::vector<ConceptIndex> concepts;  // true (noise-free) concepts, sorted
  std::string category;                // cocologic_like only
};

struct ImageTruth {
  std::string image_id;
  std::vector<ObjectTruth> objects;
  std::size_t target_count = 0;  // counting: objects carrying concept 0
  Label label;
};

struct SynthData {
  std::vector<ImageActivationRecord> records;
  std::vector<Label> labels;
  LabelSpec label_spec;
  std::vector<ImageTruth> manifest;
  bool raw = false;
};

/// Elementwise max over a set of vectors of dimension `dim`.
inline SparseConceptVector max_pool(const std::vector<SparseConceptVector>& vectors, std::size_t dim) {
  SparseConceptVector out(dim);
  for (const auto& v : vectors) out = sparse_max(out, v);
  return out;
}

inline LabelSpec synth_label_spec(const SynthConfig& cfg) {
  std::vector<std::string> names;
  switch (cfg.task) {
    case SynthTask::presence:
      for (std::size_t m = 0; m < cfg.n_classes; ++m) names.push_back("concept_" + std::to_string(m));
      return LabelSpec(TaskMode::multi_label, names);
    case SynthTask::counting:
      for (std::size_t m = 0; m + 1 < cfg.n_classes; ++m) names.push_back("count_" + std::to_string(m));
      names.push_back("count_" + std::to_string(cfg.n_classes - 1) + "+");
      return LabelSpec(TaskMode::single_label, names);
    case SynthTask::cocologic_like:
      return label_spec_for(synth_rules());
  }
  return {};
}

namespace detail {

class SceneSampler {
 public:
  explicit SceneSampler(const SynthConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  std::size_t uniform_int(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p) { return p > 0.0 && std::bernoulli_distribution(p)(rng_); }
  double activation() { return uniform(cfg_.activation_lo, std::nextafter(cfg_.activation_hi, 1e300)); }

  /// `count` distinct concepts drawn from [lo, hi), sorted.
  std::vector<ConceptIndex> draw_concepts(std::size_t count, std::size_t lo, std::size_t hi) {
    std::vector<ConceptIndex> pool(hi - lo);
    std::iota(pool.begin(), pool.end(), static_cast<ConceptIndex>(lo));
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[uniform_int(i, pool.size() - 1)]);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  /// Activations for the true concepts plus spurious noise entries.
  SparseConceptVector activate(const std::vector<ConceptIndex>& concepts) {
    std::vector<double> dense(cfg_.dim, 0.0);
    for (auto c : concepts) dense[c] = activation();
    if (cfg_.noise_rate > 0.0)
      for (std::size_t c = 0; c < cfg_.dim; ++c)
        if (dense[c] == 0.0 && coin(cfg_.noise_rate)) dense[c] = activation();
    return SparseConceptVector::from_dense(dense);
  }

  ObjectTruth draw_object() {
    ObjectTruth obj;
    const std::size_t n = uniform_int(cfg_.min_concepts, cfg_.max_concepts);
    switch (cfg_.task) {
      case SynthTask::presence: obj.concepts = draw_concepts(n, 0, cfg_.dim); break;
      case SynthTask::counting:
        if (coin(cfg_.target_rate)) {
          obj.concepts = draw_concepts(n - 1, 1, cfg_.dim);
          obj.concepts.insert(obj.concepts.begin(), 0);
        } else {
          obj.concepts = draw_concepts(n, 1, cfg_.dim);
        }
        break;
      case SynthTask::cocologic_like: {
        const auto& cats = SynthConfig::synth_categories();
        const std::size_t cat = uniform_int(0, cats.size() - 1);
        obj.category = cats[cat];
        obj.concepts = draw_concepts(n - 1, cats.size(), cfg_.dim);
        obj.concepts.insert(obj.concepts.begin(), static_cast<ConceptIndex>(cat));
        break;
      }
    }
    return obj;
  }

  /// One box per grid cell, so true objects never overlap.
  BoundingBox box_in_cell(std::size_t cell) {
    const double cw = cfg_.image_size.width / SynthConfig::kGridCols;
    const double ch = cfg_.image_size.height / SynthConfig::kGridRows;
    const double x0 = static_cast<double>(cell % SynthConfig::kGridCols) * cw;
    const double y0 = static_cast<double>(cell / SynthConfig::kGridCols) * ch;
    const double w = cw * uniform(0.6, 1.0);
    const double h = ch * uniform(0.6, 1.0);
    const double ox = uniform(0.0, cw - w);
    const double oy = uniform(0.0, ch - h);
    return {x0 + ox, y0 + oy, x0 + ox + w, y0 + oy + h};
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
};

}  // namespace detail

/// Deterministic for a given config (including seed).
inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  detail::SceneSampler s(cfg);
  SynthData out;
  out.label_spec = synth_label_spec(cfg);
  out.raw = cfg.raw_proposals;
  const RuleSet rules = cfg.task == SynthTask::cocologic_like ? synth_rules() : RuleSet{};
  const std::size_t width = std::to_string(cfg.n_images).size();

  for (std::size_t img = 0; img < cfg.n_images; ++img) {
    ImageTruth truth;
    std::string id = std::to_string(img);
    truth.image_id = "synth_" + std::string(width - std::min(width, id.size()), '0') + id;

    // Scene content and label.
    for (std::size_t attempt = 0;; ++attempt) {
      truth.objects.clear();
      const std::size_t n_obj = s.uniform_int(cfg.min_objects, cfg.max_objects);
      for (std::size_t i = 0; i < n_obj; ++i) truth.objects.push_back(s.draw_object());
      truth.label.clear();
      if (cfg.task == SynthTask::presence) {
        std::vector<char> on(cfg.n_classes, 0);
        for (const auto& o : truth.objects)
          for (auto c : o.concepts)
            if (c < cfg.n_classes) on[c] = 1;
        for (std::size_t m = 0; m < cfg.n_classes; ++m)
          if (on[m]) truth.label.push_back(m);
        break;
      }
      if (cfg.task == SynthTask::counting) {
        truth.target_count = static_cast<std::size_t>(std::count_if(
            truth.objects.begin(), truth.objects.end(),
            [](const ObjectTruth& o) { return !o.concepts.empty() && o.concepts.front() == 0; }));
        truth.label = {std::min(truth.target_count, cfg.n_classes - 1)};
        break;
      }
      AnnotationRecord ann{truth.image_id, {}};
      for (const auto& o : truth.objects) ++ann.category_counts[o.category];
      std::vector<std::size_t> hits;
      for (std::size_t r = 0; r < rules.rules.size(); ++r)
        if (eval_rule(rules.rules[r], ann)) hits.push_back(r);
      if (hits.size() == 1) {
        truth.label = hits;
        break;
      }
      if (attempt > 100000) throw ConfigError("cannot sample a scene matching exactly one rule");
    }

    // Geometry, scores and activations.
    ImageActivationRecord rec;
    rec.image_id = truth.image_id;
    rec.image_size = cfg.image_size;
    std::vector<std::size_t> cells(SynthConfig::kGridCols * SynthConfig::kGridRows);
    std::iota(cells.begin(), cells.end(), std::size_t{0});
    std::shuffle(cells.begin(), cells.end(), s.rng());

    std::vector<SparseConceptVector> object_vectors;
    for (std::size_t i = 0; i < truth.objects.size(); ++i) {
      ObjectActivation oa{ScoredProposal(s.box_in_cell(cells[i]), s.uniform(0.5, 1.0)),
                          s.activate(truth.objects[i].concepts)};
      object_vectors.push_back(oa.vector);
      rec.objects.push_back(std::move(oa));
    }
    rec.image_vector = sparse_max(max_pool(object_vectors, cfg.dim), s.activate({}));

    if (cfg.raw_proposals) {
      std::vector<ObjectActivation> clutter;
      for (const auto& o : rec.objects) {
        if (s.coin(cfg.clutter_rate)) {
          // near duplicate: shifted by at most 10% per axis, lower score
          const auto& b = o.proposal.box;
          const double dx = s.uniform(-0.1, 0.1) * b.width();
          const double dy = s.uniform(-0.1, 0.1) * b.height();
          clutter.push_back({ScoredProposal(BoundingBox(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy),
                                            o.proposal.score * 0.9),
                             o.vector});
        }
        if (s.coin(cfg.clutter_rate)) {
          // tiny fragment inside the object
          const auto& b = o.proposal.box;
          const double side = std::sqrt(0.002 * cfg.image_size.area());
          clutter.push_back({ScoredProposal(BoundingBox(b.x_min, b.y_min, b.x_min + side, b.y_min + side),
                                            s.uniform(0.5, 1.0)),
                             o.vector});
        }
        if (s.coin(cfg.clutter_rate)) {
          // low-certainty proposal
          const auto& b = o.proposal.box;
          clutter.push_back({ScoredProposal(BoundingBox(b.x_min, b.y_min, b.x_max, b.y_max), s.uniform(0.0, 0.1)),
                             s.activate(s.draw_object().concepts)});
        }
      }
      for (auto& c : clutter) rec.objects.push_back(std::move(c));
      std::shuffle(rec.objects.begin(), rec.objects.end(), s.rng());
    } else {
      std::stable_sort(rec.objects.begin(), rec.objects.end(), [](const auto& a, const auto& b) {
        return a.proposal.score > b.proposal.score;
      });
    }

    out.records.push_back(std::move(rec));
    out.labels.push_back(truth.label);
    out.manifest.push_back(std::move(truth));
  }
  return out;
}

/// Pairs of images whose whole-image vectors activate exactly the same
/// concepts while their target counts differ.
inline std::vector<std::pair<std::size_t, std::size_t>> find_count_collisions(const SynthData& data) {
  std::map<std::vector<ConceptIndex>, std::vector<std::size_t>> by_support;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    std::vector<ConceptIndex> support;
    for (const auto& e : data.records[i].image_vector.entries()) support.push_back(e.index);
    by_support[support].push_back(i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [support, ids] : by_support)
    for (std::size_t a = 0; a < ids.size(); ++a)
      for (std::size_t b = a + 1; b < ids.size(); ++b)
        if (data.manifest[ids[a]].target_count != data.manifest[ids[b]].target_count)
          out.emplace_back(ids[a], ids[b]);
  return out;
}

}  // namespace ocb
