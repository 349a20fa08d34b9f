#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ocb/error.hpp"

namespace ocb {

/// Metric values plus per-class breakdowns. Classes without support are
/// listed in `excluded_classes` and left out of the averages.
struct EvalReport {
  std::map<std::string, double> metrics;
  std::vector<double> per_class_recall;  // single-label; NaN-free, 0 for excluded classes
  std::vector<double> per_class_ap;      // multi-label
  std::vector<std::size_t> excluded_classes;
  std::size_t n_examples = 0;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth) {
  if (preds.empty()) throw DataError("accuracy of an empty prediction set");
  if (preds.size() != truth.size()) throw DataError("prediction/truth length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

struct BalancedAccuracy {
  double value = 0.0;
  std::vector<double> recall;              // per class, 0 where unsupported
  std::vector<std::size_t> unsupported;    // classes with no truth instance
};

inline BalancedAccuracy balanced_accuracy_detail(std::span<const std::size_t> preds,
                                                 std::span<const std::size_t> truth,
                                                 std::size_t num_classes) {
  if (preds.empty()) throw DataError("balanced accuracy of an empty prediction set");
  if (preds.size() != truth.size()) throw DataError("prediction/truth length mismatch");
  std::vector<std::size_t> support(num_classes, 0), hits(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth[i] >= num_classes || preds[i] >= num_classes)
      throw DataError("class index out of range");
    ++support[truth[i]];
    hits[truth[i]] += preds[i] == truth[i];
  }
  BalancedAccuracy out;
  out.recall.assign(num_classes, 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (support[c] == 0) {
      out.unsupported.push_back(c);
      continue;
    }
    out.recall[c] = static_cast<double>(hits[c]) / static_cast<double>(support[c]);
    total += out.recall[c];
    ++counted;
  }
  out.value = total / static_cast<double>(counted);
  return out;
}

inline double balanced_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                std::size_t num_classes) {
  return balanced_accuracy_detail(preds, truth, num_classes).value;
}

/// Rank-based average precision for one class. Examples are ranked by
/// descending score, ties broken by ascending example index. Returns 0 when
/// there are no positives (callers exclude such classes).
inline double average_precision(std::span<const double> scores, std::span<const char> positive) {
  if (scores.size() != positive.size()) throw DataError("score/truth length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // extended-precision sum, one final rounding: small cases come out correctly rounded
  long double sum = 0.0L;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (positive[order[r]]) {
      ++hits;
      sum += static_cast<long double>(hits) / static_cast<long double>(r + 1);
    }
  }
  return hits == 0 ? 0.0 : static_cast<double>(sum / static_cast<long double>(hits));
}

struct MeanAveragePrecision {
  double value = 0.0;
  std::vector<double> per_class;         // 0 for excluded classes
  std::vector<std::size_t> excluded;     // classes with zero positives
};

/// scores and truth are N x M, row-major.
inline MeanAveragePrecision mean_average_precision(std::span<const double> scores,
                                                   std::span<const char> truth, std::size_t n,
                                                   std::size_t m) {
  if (scores.size() != n * m || truth.size() != n * m) throw DataError("score/truth shape mismatch");
  MeanAveragePrecision out;
  out.per_class.assign(m, 0.0);
  std::vector<double> col(n);
  std::vector<char> pos(n);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < m; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i * m + c];
      pos[i] = truth[i * m + c] ? 1 : 0;
      any = any || pos[i];
    }
    if (!any) {
      out.excluded.push_back(c);
      continue;
    }
    out.per_class[c] = average_precision(col, pos);
    total += out.per_class[c];
    ++counted;
  }
  if (counted == 0) throw DataError("no class has a positive example; mAP undefined");
  out.value = total / static_cast<double>(counted);
  return out;
}

}  // namespace ocb
