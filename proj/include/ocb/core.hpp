#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ocb/error.hpp"

namespace ocb {

using ConceptIndex = std::uint32_t;

struct ConceptEntry {
  ConceptIndex index = 0;
  double value = 0.0;

  friend bool operator==(const ConceptEntry&, const ConceptEntry&) = default;
};

/// Nonnegative sparse concept activations over a vocabulary of `dim` concepts.
/// Entries are kept sorted by index with strictly positive values; zeros are
/// never stored.
class SparseConceptVector {
 public:
  SparseConceptVector() = default;

  /// Empty (all-zero) vector of the given dimension.
  explicit SparseConceptVector(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw DataError("concept vector dimension must be positive");
  }

  /// Validating constructor; rejects unsorted, duplicate, out-of-range or
  /// nonpositive entries.
  SparseConceptVector(std::size_t dim, std::vector<ConceptEntry> entries)
      : dim_(dim), entries_(std::move(entries)) {
    if (dim == 0) throw DataError("concept vector dimension must be positive");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.index >= dim_)
        throw DataError("concept index " + std::to_string(e.index) + " out of range for dim " +
                        std::to_string(dim_));
      if (i > 0 && entries_[i - 1].index >= e.index)
        throw DataError("concept indices must be strictly increasing");
      if (e.value == 0.0) throw DataError("zero stored entry at concept " + std::to_string(e.index));
      if (!(e.value > 0.0))
        throw DataError("nonpositive activation at concept " + std::to_string(e.index));
    }
  }

  /// Builds from a dense nonnegative array, dropping zeros.
  static SparseConceptVector from_dense(std::span<const double> dense) {
    std::vector<ConceptEntry> entries;
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (dense[i] < 0.0) throw DataError("negative activation at concept " + std::to_string(i));
      if (dense[i] > 0.0) entries.push_back({static_cast<ConceptIndex>(i), dense[i]});
    }
    return SparseConceptVector(dense.size(), std::move(entries));
  }

  std::size_t dim() const { return dim_; }
  std::size_t nnz() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ConceptEntry>& entries() const { return entries_; }

  double at(ConceptIndex index) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                               [](const ConceptEntry& e, ConceptIndex i) { return e.index < i; });
    return (it != entries_.end() && it->index == index) ? it->value : 0.0;
  }

  std::vector<double> to_dense() const {
    std::vector<double> out(dim_, 0.0);
    for (const auto& e : entries_) out[e.index] = e.value;
    return out;
  }

  /// Adds the activations into `out` (which must have length dim()).
  void accumulate_into(std::span<double> out) const {
    for (const auto& e : entries_) out[e.index] += e.value;
  }

  friend bool operator==(const SparseConceptVector&, const SparseConceptVector&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<ConceptEntry> entries_;
};

namespace detail {

template <typename Combine>
SparseConceptVector merge_sparse(const SparseConceptVector& a, const SparseConceptVector& b,
                                 Combine combine) {
  if (a.dim() != b.dim())
    throw DataError("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()));
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  std::vector<ConceptEntry> out;
  out.reserve(ea.size() + eb.size());
  std::size_t i = 0, j = 0;
  while (i < ea.size() || j < eb.size()) {
    ConceptEntry next;
    if (j == eb.size() || (i < ea.size() && ea[i].index < eb[j].index)) {
      next = ea[i++];
    } else if (i == ea.size() || eb[j].index < ea[i].index) {
      next = eb[j++];
    } else {
      next = {ea[i].index, combine(ea[i].value, eb[j].value)};
      ++i;
      ++j;
    }
    if (next.value != 0.0) out.push_back(next);
  }
  return SparseConceptVector(a.dim(), std::move(out));
}

}  // namespace detail

inline SparseConceptVector sparse_add(const SparseConceptVector& a, const SparseConceptVector& b) {
  return detail::merge_sparse(a, b, [](double x, double y) { return x + y; });
}

inline SparseConceptVector sparse_max(const SparseConceptVector& a, const SparseConceptVector& b) {
  return detail::merge_sparse(a, b, [](double x, double y) { return std::max(x, y); });
}

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  BoundingBox() = default;
  BoundingBox(double x0, double y0, double x1, double y1)
      : x_min(x0), y_min(y0), x_max(x1), y_max(y1) {
    if (!(x0 < x1) || !(y0 < y1))
      throw DataError("degenerate bounding box (" + std::to_string(x0) + "," + std::to_string(y0) +
                      "," + std::to_string(x1) + "," + std::to_string(y1) + ")");
  }

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ImageSize {
  double width = 0;
  double height = 0;

  double area() const { return width * height; }
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct ScoredProposal {
  BoundingBox box;
  double score = 0.0;

  ScoredProposal() = default;
  ScoredProposal(BoundingBox b, double s) : box(b), score(s) {
    if (!(s >= 0.0 && s <= 1.0)) throw DataError("proposal score outside [0,1]");
  }

  friend bool operator==(const ScoredProposal&, const ScoredProposal&) = default;
};

/// One object proposal together with the concept activations of its crop.
struct ObjectActivation {
  ScoredProposal proposal;
  SparseConceptVector vector;

  friend bool operator==(const ObjectActivation&, const ObjectActivation&) = default;
};

/// Whole-image activations plus per-object activations for a single image.
struct ImageActivationRecord {
  std::string image_id;
  ImageSize image_size;
  SparseConceptVector image_vector;
  std::vector<ObjectActivation> objects;

  std::size_t dim() const { return image_vector.dim(); }

  /// Checks shared dimension; with `require_sorted` also checks that objects
  /// are in descending score order (the refined-record invariant).
  void validate(bool require_sorted) const {
    for (std::size_t i = 0; i < objects.size(); ++i) {
      if (objects[i].vector.dim() != image_vector.dim())
        throw DataError("object " + std::to_string(i) + " has dim " +
                        std::to_string(objects[i].vector.dim()) + ", image vector has dim " +
                        std::to_string(image_vector.dim()));
      if (require_sorted && i > 0 && objects[i - 1].proposal.score < objects[i].proposal.score)
        throw DataError("objects are not in descending score order");
    }
  }

  friend bool operator==(const ImageActivationRecord&, const ImageActivationRecord&) = default;
};

enum class TaskMode { single_label, multi_label };

inline std::string to_string(TaskMode mode) {
  return mode == TaskMode::single_label ? "single_label" : "multi_label";
}

inline TaskMode task_mode_from_string(const std::string& s) {
  if (s == "single_label") return TaskMode::single_label;
  if (s == "multi_label") return TaskMode::multi_label;
  throw ConfigError("unknown task mode '" + s + "' (expected single_label or multi_label)");
}

struct LabelSpec {
  TaskMode mode = TaskMode::single_label;
  std::vector<std::string> class_names;

  LabelSpec() = default;
  LabelSpec(TaskMode m, std::vector<std::string> names) : mode(m), class_names(std::move(names)) {
    if (class_names.size() < 2) throw ConfigError("a label spec needs at least two classes");
    std::set<std::string> seen;
    for (const auto& n : class_names)
      if (!seen.insert(n).second) throw ConfigError("duplicate class name '" + n + "'");
  }

  std::size_t num_classes() const { return class_names.size(); }

  std::size_t index_of(const std::string& name) const {
    auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) throw DataError("unknown class '" + name + "'");
    return static_cast<std::size_t>(it - class_names.begin());
  }

  friend bool operator==(const LabelSpec&, const LabelSpec&) = default;
};

/// Positive class indices of one example. Single-label tasks carry exactly one.
using Label = std::vector<std::size_t>;

inline void validate_label(const Label& label, const LabelSpec& spec) {
  if (spec.mode == TaskMode::single_label && label.size() != 1)
    throw DataError("single-label example must have exactly one class, got " +
                    std::to_string(label.size()));
  std::set<std::size_t> seen;
  for (auto c : label) {
    if (c >= spec.num_classes())
      throw DataError("label " + std::to_string(c) + " out of range for " +
                      std::to_string(spec.num_classes()) + " classes");
    if (!seen.insert(c).second) throw DataError("duplicate label " + std::to_string(c));
  }
}

}  // namespace ocb
