#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ocb/core.hpp"

namespace ocb {

/// Thresholds for proposal refinement. Sizes are fractions of the image area.
struct RefineConfig {
  double t_min = 0.01;
  double t_max = 0.85;
  double t_cer = 0.2;
  double t_iou = 0.5;
  std::size_t k = 7;

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
    };
    unit(t_min, "t_min");
    unit(t_max, "t_max");
    unit(t_cer, "t_cer");
    unit(t_iou, "t_iou");
    if (!(t_min < t_max)) throw ConfigError("t_min must be smaller than t_max");
    if (k == 0) throw ConfigError("k must be positive");
  }

  friend bool operator==(const RefineConfig&, const RefineConfig&) = default;
};

/// Mask-RCNN style defaults.
inline RefineConfig rcnn_defaults(std::size_t k = 7) { return {0.01, 0.85, 0.2, 0.5, k}; }

/// SAM style defaults; the certainty score is SAM's stability factor.
inline RefineConfig sam_defaults(std::size_t k = 7) { return {0.02, 0.85, 0.94, 0.5, k}; }

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Area of the part of `b` inside the image, divided by the image area.
/// Returns 0 for boxes entirely outside the image.
inline double relative_size(const BoundingBox& b, const ImageSize& image) {
  if (!(image.width > 0.0) || !(image.height > 0.0)) throw DataError("image area must be positive");
  const double w = std::min(b.x_max, image.width) - std::max(b.x_min, 0.0);
  const double h = std::min(b.y_max, image.height) - std::max(b.y_min, 0.0);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return std::clamp(w * h / image.area(), 0.0, 1.0);
}

/// Indices (into `proposals`) of the refined set, in output order.
///
/// Size and certainty filter, stable descending sort by score, greedy IoU
/// suppression against already kept boxes (a box is dropped iff its IoU with
/// some kept box exceeds t_iou), then the first k survivors.
inline std::vector<std::size_t> refine_indices(const std::vector<ScoredProposal>& proposals,
                                               const ImageSize& image, const RefineConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const double size = relative_size(proposals[i].box, image);
    if (size <= 0.0) continue;  // fully outside the image
    if (cfg.t_min <= size && size <= cfg.t_max && proposals[i].score >= cfg.t_cer)
      candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].score > proposals[b].score;
  });

  std::vector<std::size_t> kept;
  for (std::size_t i : candidates) {
    if (kept.size() == cfg.k) break;
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](std::size_t j) {
      return iou(proposals[i].box, proposals[j].box) > cfg.t_iou;
    });
    if (!overlaps) kept.push_back(i);
  }
  return kept;
}

inline std::vector<ScoredProposal> refine(const std::vector<ScoredProposal>& proposals,
                                          const ImageSize& image, const RefineConfig& cfg) {
  std::vector<ScoredProposal> out;
  for (std::size_t i : refine_indices(proposals, image, cfg)) out.push_back(proposals[i]);
  return out;
}

/// Applies refinement to the objects of a raw-proposal record.
inline ImageActivationRecord refine_record(const ImageActivationRecord& record,
                                           const RefineConfig& cfg) {
  std::vector<ScoredProposal> proposals;
  proposals.reserve(record.objects.size());
  for (const auto& o : record.objects) proposals.push_back(o.proposal);
  ImageActivationRecord out{record.image_id, record.image_size, record.image_vector, {}};
  for (std::size_t i : refine_indices(proposals, record.image_size, cfg))
    out.objects.push_back(record.objects[i]);
  return out;
}

}  // namespace ocb
