#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ocb/core.hpp"

namespace ocb {

enum class AggKind { concat, sum, max, count, sum_count };

inline constexpr std::array<AggKind, 5> kAllAggKinds = {AggKind::concat, AggKind::sum, AggKind::max,
                                                        AggKind::count, AggKind::sum_count};

inline std::string to_string(AggKind kind) {
  switch (kind) {
    case AggKind::concat: return "concat";
    case AggKind::sum: return "sum";
    case AggKind::max: return "max";
    case AggKind::count: return "count";
    case AggKind::sum_count: return "sum_count";
  }
  return "?";
}

inline AggKind agg_kind_from_string(const std::string& s) {
  for (auto k : kAllAggKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown aggregation '" + s + "' (expected concat|sum|max|count|sum_count)");
}

/// Aggregation operator plus the activation threshold used by count.
struct AggregationKind {
  AggKind kind = AggKind::max;
  double epsilon = 0.0;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("count epsilon must be nonnegative");
  }

  friend bool operator==(const AggregationKind&, const AggregationKind&) = default;
};

inline std::size_t encoded_length(AggKind kind, std::size_t k, std::size_t dim) {
  switch (kind) {
    case AggKind::sum:
    case AggKind::max:
    case AggKind::count: return dim;
    case AggKind::sum_count: return 2 * dim;
    case AggKind::concat: return (k + 1) * dim;
  }
  return 0;
}

struct AggregatedEncoding {
  AggregationKind kind;
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> vector;

  friend bool operator==(const AggregatedEncoding&, const AggregatedEncoding&) = default;
};

/// Object slots padded with empty vectors up to exactly k.
inline std::vector<SparseConceptVector> pad_to_k(const ImageActivationRecord& record, std::size_t k) {
  if (record.objects.size() > k)
    throw DataError("record '" + record.image_id + "' has " + std::to_string(record.objects.size()) +
                    " objects but k = " + std::to_string(k));
  std::vector<SparseConceptVector> slots;
  slots.reserve(k);
  for (const auto& o : record.objects) slots.push_back(o.vector);
  while (slots.size() < k) slots.emplace_back(record.dim());
  return slots;
}

inline AggregatedEncoding aggregate(const ImageActivationRecord& record, std::size_t k,
                                    const AggregationKind& kind) {
  kind.validate();
  record.validate(false);
  const std::size_t dim = record.dim();
  const auto slots = pad_to_k(record, k);

  AggregatedEncoding enc{kind, k, dim, std::vector<double>(encoded_length(kind.kind, k, dim), 0.0)};
  auto& out = enc.vector;

  // Source order: image vector first, then the k object slots.
  auto for_each_source = [&](auto&& fn) {
    fn(record.image_vector, std::size_t{0});
    for (std::size_t i = 0; i < slots.size(); ++i) fn(slots[i], i + 1);
  };

  switch (kind.kind) {
    case AggKind::sum:
      for_each_source([&](const SparseConceptVector& v, std::size_t) { v.accumulate_into(out); });
      break;
    case AggKind::max:
      for_each_source([&](const SparseConceptVector& v, std::size_t) {
        for (const auto& e : v.entries()) out[e.index] = std::max(out[e.index], e.value);
      });
      break;
    case AggKind::count:
      for_each_source([&](const SparseConceptVector& v, std::size_t) {
        for (const auto& e : v.entries())
          if (e.value > kind.epsilon) out[e.index] += 1.0;
      });
      break;
    case AggKind::sum_count:
      for_each_source([&](const SparseConceptVector& v, std::size_t) {
        for (const auto& e : v.entries()) {
          out[e.index] += e.value;
          if (e.value > kind.epsilon) out[dim + e.index] += 1.0;
        }
      });
      break;
    case AggKind::concat:
      for_each_source([&](const SparseConceptVector& v, std::size_t slot) {
        for (const auto& e : v.entries()) out[slot * dim + e.index] = e.value;
      });
      break;
  }
  return enc;
}

/// Drops all object slots; the result encodes the whole-image vector only.
inline ImageActivationRecord image_only(const ImageActivationRecord& record) {
  return {record.image_id, record.image_size, record.image_vector, {}};
}

}  // namespace ocb
