#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ocb/aggregation.hpp"
#include "ocb/core.hpp"

namespace ocb {

enum class ClassWeighting { none, inverse_frequency };

inline std::string to_string(ClassWeighting w) {
  return w == ClassWeighting::none ? "none" : "inverse_frequency";
}

inline ClassWeighting class_weighting_from_string(const std::string& s) {
  if (s == "none") return ClassWeighting::none;
  if (s == "inverse_frequency") return ClassWeighting::inverse_frequency;
  throw ConfigError("unknown class weighting '" + s + "'");
}

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  ClassWeighting class_weighting = ClassWeighting::none;
  bool max_scale = false;  // divide each feature by its max |value| on the training set

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Single linear layer over aggregated concept encodings.
struct LinearPredictor {
  LabelSpec label_spec;
  AggregationKind agg;
  std::size_t k = 0;
  std::size_t dim = 0;        // concept vocabulary size
  std::size_t input_dim = 0;  // aggregated encoding length
  std::vector<double> weights;        // num_classes x input_dim, row-major
  std::vector<double> bias;           // num_classes
  std::vector<double> feature_scale;  // empty when inputs are used unscaled

  std::size_t num_classes() const { return label_spec.num_classes(); }

  double weight(std::size_t cls, std::size_t feature) const {
    return weights[cls * input_dim + feature];
  }

  void check_encoding(const AggregatedEncoding& enc) const {
    if (enc.kind.kind != agg.kind || enc.k != k || enc.dim != dim)
      throw DataError("encoding (" + to_string(enc.kind.kind) + ", k=" + std::to_string(enc.k) +
                      ", dim=" + std::to_string(enc.dim) + ") does not match predictor (" +
                      to_string(agg.kind) + ", k=" + std::to_string(k) +
                      ", dim=" + std::to_string(dim) + ")");
    if (enc.vector.size() != input_dim)
      throw DataError("encoding length " + std::to_string(enc.vector.size()) + " != " +
                      std::to_string(input_dim));
  }

  double scaled(std::size_t feature, double value) const {
    return feature_scale.empty() ? value : value / feature_scale[feature];
  }

  /// Pre-activation scores.
  std::vector<double> logits(std::span<const double> x) const {
    if (x.size() != input_dim) throw DataError("input length mismatch");
    std::vector<double> z(bias);
    for (std::size_t c = 0; c < num_classes(); ++c) {
      const double* row = weights.data() + c * input_dim;
      double acc = 0.0;
      for (std::size_t d = 0; d < input_dim; ++d)
        if (x[d] != 0.0) acc += row[d] * scaled(d, x[d]);
      z[c] += acc;
    }
    return z;
  }
};

namespace detail {

inline double log_sigmoid(double z) {
  // log(1 / (1 + e^-z)) without overflow
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace detail

/// Class-probability scores: softmax for single-label, per-class sigmoid for
/// multi-label.
inline std::vector<double> predict(const LinearPredictor& p, const AggregatedEncoding& enc) {
  p.check_encoding(enc);
  auto z = p.logits(enc.vector);
  if (p.label_spec.mode == TaskMode::single_label) return detail::softmax(z);
  for (auto& v : z) v = detail::sigmoid(v);
  return z;
}

inline std::size_t argmax(std::span<const double> scores) {
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

/// Per-class loss weights. For multi-label tasks positives and negatives of
/// each class are weighted separately; single-label tasks use `positive` only.
struct LossWeights {
  std::vector<double> positive;
  std::vector<double> negative;
};

inline LossWeights make_loss_weights(std::span<const Label> labels, const LabelSpec& spec,
                                     ClassWeighting weighting) {
  const std::size_t m = spec.num_classes();
  LossWeights w{std::vector<double>(m, 1.0), std::vector<double>(m, 1.0)};
  if (weighting == ClassWeighting::none) return w;
  const double n = static_cast<double>(labels.size());
  std::vector<double> positives(m, 0.0);
  for (const auto& l : labels)
    for (auto c : l) positives[c] += 1.0;
  for (std::size_t c = 0; c < m; ++c) {
    if (spec.mode == TaskMode::single_label) {
      if (positives[c] > 0) w.positive[c] = n / (static_cast<double>(m) * positives[c]);
    } else {
      if (positives[c] > 0) w.positive[c] = n / (2.0 * positives[c]);
      if (n - positives[c] > 0) w.negative[c] = n / (2.0 * (n - positives[c]));
    }
  }
  return w;
}

struct Gradient {
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Mean loss over `batch` (indices into features/labels) plus the L2 term
/// 0.5 * weight_decay * |W|^2. Softmax cross-entropy for single-label,
/// class-averaged sigmoid binary cross-entropy for multi-label. Fills `grad`
/// when non-null. Features are taken as already scaled.
inline double loss_and_gradient(const LinearPredictor& p, const LossWeights& lw, double weight_decay,
                                std::span<const std::vector<double>> features,
                                std::span<const Label> labels, std::span<const std::size_t> batch,
                                Gradient* grad) {
  const std::size_t m = p.num_classes();
  const std::size_t d = p.input_dim;
  const bool single = p.label_spec.mode == TaskMode::single_label;
  if (grad) {
    grad->weights.assign(m * d, 0.0);
    grad->bias.assign(m, 0.0);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> z(m), dz(m);
  std::vector<char> target(m);

  for (std::size_t idx : batch) {
    const auto& x = features[idx];
    for (std::size_t c = 0; c < m; ++c) {
      double acc = p.bias[c];
      const double* row = p.weights.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * x[j];
      z[c] = acc;
    }
    std::fill(target.begin(), target.end(), 0);
    for (auto c : labels[idx]) target[c] = 1;

    if (single) {
      const std::size_t y = labels[idx].front();
      const double mx = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (std::size_t c = 0; c < m; ++c) s += std::exp(z[c] - mx);
      const double lse = mx + std::log(s);
      const double wy = lw.positive[y];
      loss += wy * (lse - z[y]) * inv_b;
      for (std::size_t c = 0; c < m; ++c)
        dz[c] = wy * (std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0)) * inv_b;
    } else {
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t c = 0; c < m; ++c) {
        const double sig = detail::sigmoid(z[c]);
        if (target[c]) {
          loss -= lw.positive[c] * detail::log_sigmoid(z[c]) * inv_m * inv_b;
          dz[c] = lw.positive[c] * (sig - 1.0) * inv_m * inv_b;
        } else {
          loss -= lw.negative[c] * detail::log_sigmoid(-z[c]) * inv_m * inv_b;
          dz[c] = lw.negative[c] * sig * inv_m * inv_b;
        }
      }
    }

    if (grad) {
      for (std::size_t c = 0; c < m; ++c) {
        if (dz[c] == 0.0) continue;
        double* g = grad->weights.data() + c * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += dz[c] * x[j];
        grad->bias[c] += dz[c];
      }
    }
  }

  if (weight_decay > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      sq += p.weights[i] * p.weights[i];
      if (grad) grad->weights[i] += weight_decay * p.weights[i];
    }
    loss += 0.5 * weight_decay * sq;
  }
  return loss;
}

struct TrainResult {
  LinearPredictor predictor;
  std::vector<double> epoch_loss;  // full-dataset loss after each epoch (when tracked)
};

namespace detail {

inline TrainResult train_impl(std::span<const AggregatedEncoding> data, std::span<const Label> labels,
                              const TrainConfig& cfg, const LabelSpec& spec, bool track_loss) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  if (data.size() != labels.size()) throw DataError("encodings and labels differ in count");
  const auto& first = data.front();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data[i];
    if (e.kind.kind != first.kind.kind || e.k != first.k || e.dim != first.dim ||
        e.vector.size() != first.vector.size())
      throw DataError("inconsistent encoding at example " + std::to_string(i));
    validate_label(labels[i], spec);
  }

  LinearPredictor p;
  p.label_spec = spec;
  p.agg = first.kind;
  p.k = first.k;
  p.dim = first.dim;
  p.input_dim = first.vector.size();
  p.weights.assign(spec.num_classes() * p.input_dim, 0.0);
  p.bias.assign(spec.num_classes(), 0.0);

  if (cfg.max_scale) {
    p.feature_scale.assign(p.input_dim, 0.0);
    for (const auto& e : data)
      for (std::size_t j = 0; j < p.input_dim; ++j)
        p.feature_scale[j] = std::max(p.feature_scale[j], std::abs(e.vector[j]));
    for (auto& s : p.feature_scale)
      if (s == 0.0) s = 1.0;
  }

  std::vector<std::vector<double>> features;
  features.reserve(data.size());
  for (const auto& e : data) {
    auto x = e.vector;
    if (!p.feature_scale.empty())
      for (std::size_t j = 0; j < x.size(); ++j) x[j] /= p.feature_scale[j];
    features.push_back(std::move(x));
  }

  const LossWeights lw = make_loss_weights(labels, spec, cfg.class_weighting);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  Gradient grad;
  TrainResult result;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, stop - start);
      loss_and_gradient(p, lw, cfg.weight_decay, features, labels, batch, &grad);
      for (std::size_t i = 0; i < p.weights.size(); ++i)
        p.weights[i] -= cfg.learning_rate * grad.weights[i];
      for (std::size_t c = 0; c < p.bias.size(); ++c) p.bias[c] -= cfg.learning_rate * grad.bias[c];
    }
    if (track_loss) {
      std::vector<std::size_t> all(data.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      result.epoch_loss.push_back(
          loss_and_gradient(p, lw, cfg.weight_decay, features, labels, all, nullptr));
    }
  }
  result.predictor = std::move(p);
  return result;
}

}  // namespace detail

/// Seeded mini-batch gradient descent from zero-initialised weights.
/// Bit-deterministic for a given seed and data order.
inline LinearPredictor train(std::span<const AggregatedEncoding> data, std::span<const Label> labels,
                             const TrainConfig& cfg, const LabelSpec& spec) {
  return detail::train_impl(data, labels, cfg, spec, false).predictor;
}

/// Same as train() but also records the full-dataset loss after every epoch.
inline TrainResult train_with_history(std::span<const AggregatedEncoding> data,
                                      std::span<const Label> labels, const TrainConfig& cfg,
                                      const LabelSpec& spec) {
  return detail::train_impl(data, labels, cfg, spec, true);
}

// ---------------------------------------------------------------------------
// Explanations

enum class SourceKind { image, object, pooled };

inline std::string to_string(SourceKind s) {
  switch (s) {
    case SourceKind::image: return "image";
    case SourceKind::object: return "object";
    case SourceKind::pooled: return "pooled";
  }
  return "?";
}

struct Contribution {
  SourceKind source = SourceKind::pooled;
  std::size_t object_index = 0;  // meaningful for SourceKind::object
  std::size_t concept_index = 0;
  std::size_t feature_index = 0;  // position in the aggregated encoding
  double activation = 0.0;        // encoding value (after feature scaling)
  double contribution = 0.0;      // weight * activation
};

/// Invariant: sum(contributions) + omitted + bias == logit.
struct Explanation {
  std::size_t class_index = 0;
  double logit = 0.0;
  double bias = 0.0;
  std::vector<Contribution> contributions;  // sorted by |contribution| descending
  double omitted = 0.0;                     // total of contributions cut by top-n
};

/// Attributes the class logit to (source, concept) pairs. With concat
/// encodings each term maps back to the image or a specific object; pooled
/// encodings only resolve to concepts. top_n == 0 keeps every term.
inline Explanation explain(const LinearPredictor& p, const ImageActivationRecord& record,
                           std::size_t class_index, std::size_t top_n = 10) {
  if (class_index >= p.num_classes())
    throw DataError("class index " + std::to_string(class_index) + " out of range");
  const auto enc = aggregate(record, p.k, p.agg);
  p.check_encoding(enc);

  Explanation ex;
  ex.class_index = class_index;
  ex.bias = p.bias[class_index];
  std::vector<Contribution> all;
  for (std::size_t j = 0; j < enc.vector.size(); ++j) {
    if (enc.vector[j] == 0.0) continue;
    Contribution c;
    c.feature_index = j;
    c.concept_index = j % p.dim;
    c.activation = p.scaled(j, enc.vector[j]);
    c.contribution = p.weight(class_index, j) * c.activation;
    if (p.agg.kind == AggKind::concat) {
      const std::size_t slot = j / p.dim;
      c.source = slot == 0 ? SourceKind::image : SourceKind::object;
      c.object_index = slot == 0 ? 0 : slot - 1;
    }
    all.push_back(c);
  }
  ex.logit = p.logits(enc.vector)[class_index];

  std::stable_sort(all.begin(), all.end(), [](const Contribution& a, const Contribution& b) {
    return std::abs(a.contribution) > std::abs(b.contribution);
  });
  if (top_n != 0 && all.size() > top_n) {
    for (std::size_t i = top_n; i < all.size(); ++i) ex.omitted += all[i].contribution;
    all.resize(top_n);
  }
  ex.contributions = std::move(all);
  return ex;
}

}  // namespace ocb
