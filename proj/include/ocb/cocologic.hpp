#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ocb/core.hpp"
#include "ocb/rules.hpp"

namespace ocb {

/// The 80 COCO instance category names.
inline const CategoryUniverse& coco_universe() {
  static const CategoryUniverse names = {
      "person",        "bicycle",      "car",           "motorcycle",    "airplane",     "bus",
      "train",         "truck",        "boat",          "traffic light", "fire hydrant", "stop sign",
      "parking meter", "bench",        "bird",          "cat",           "dog",          "horse",
      "sheep",         "cow",          "elephant",      "bear",          "zebra",        "giraffe",
      "backpack",      "umbrella",     "handbag",       "tie",           "suitcase",     "frisbee",
      "skis",          "snowboard",    "sports ball",   "kite",          "baseball bat", "baseball glove",
      "skateboard",    "surfboard",    "tennis racket", "bottle",        "wine glass",   "cup",
      "fork",          "knife",        "spoon",         "bowl",          "banana",       "apple",
      "sandwich",      "orange",       "broccoli",      "carrot",        "hot dog",      "pizza",
      "donut",         "cake",         "chair",         "couch",         "potted plant", "bed",
      "dining table",  "toilet",       "tv",            "laptop",        "mouse",        "remote",
      "keyboard",      "cell phone",   "microwave",     "oven",          "toaster",      "sink",
      "refrigerator",  "book",         "clock",         "vase",          "scissors",     "teddy bear",
      "hair drier",    "toothbrush"};
  return names;
}

/// The ten COCOLogic classes in rule-file form.
inline constexpr std::string_view kCocoLogicRules = R"(# COCOLogic class definitions
Ambiguous Pairs: (cat XOR dog) AND (bicycle XOR motorcycle)
Pair of Pets: distinct{cat, dog, bird} == 2
Rural Animal Scene: any{cow, horse, sheep} AND NOT person
Leash vs Licence: dog XOR car
Animal Meets Traffic: any{horse, cow, sheep} AND any{car, bus, traffic light}
Occupied Interior: (couch OR chair) AND person
Empty Seat: (couch OR chair) AND NOT person
Odd Ride Out: distinct{bicycle, motorcycle, car, bus} == 1
Personal Transport: person AND (bicycle XOR car)
Breakfast Guests: bowl AND any{dog, cat, horse, cow, sheep}
)";

inline RuleSet cocologic_rules() { return parse_rule_file(kCocoLogicRules, coco_universe()); }

struct LabeledImage {
  std::string image_id;
  std::size_t class_index = 0;
  std::string class_name;

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

struct DatasetReport {
  std::size_t n_input = 0;
  std::size_t n_kept = 0;
  std::size_t discarded_no_match = 0;
  std::size_t discarded_multi_match = 0;
  std::vector<std::pair<std::string, std::size_t>> per_class;  // rule order

  friend bool operator==(const DatasetReport&, const DatasetReport&) = default;
};

struct CocoLogicDataset {
  std::vector<LabeledImage> images;  // sorted by image_id
  DatasetReport report;
};

/// Keeps images that satisfy exactly one rule and labels them with it.
inline CocoLogicDataset build_dataset(const RuleSet& rules, std::vector<AnnotationRecord> anns) {
  std::sort(anns.begin(), anns.end(),
            [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  for (std::size_t i = 1; i < anns.size(); ++i)
    if (anns[i].image_id == anns[i - 1].image_id)
      throw DataError("duplicate image id '" + anns[i].image_id + "' in annotations");

  CocoLogicDataset out;
  out.report.n_input = anns.size();
  for (const auto& r : rules.rules) out.report.per_class.emplace_back(r.name, 0);

  for (const auto& ann : anns) {
    std::size_t matches = 0, which = 0;
    for (std::size_t r = 0; r < rules.rules.size(); ++r) {
      if (eval_rule(rules.rules[r], ann)) {
        ++matches;
        which = r;
      }
    }
    if (matches == 0) {
      ++out.report.discarded_no_match;
    } else if (matches > 1) {
      ++out.report.discarded_multi_match;
    } else {
      out.images.push_back({ann.image_id, which, rules.rules[which].name});
      ++out.report.per_class[which].second;
    }
  }
  out.report.n_kept = out.images.size();
  return out;
}

/// Label spec for a dataset built from `rules`.
inline LabelSpec label_spec_for(const RuleSet& rules) {
  return LabelSpec(TaskMode::single_label, rules.names());
}

/// Rejects annotation records mentioning categories outside the universe or
/// carrying negative counts.
inline void validate_annotation(const AnnotationRecord& ann, const CategoryUniverse& universe) {
  for (const auto& [name, n] : ann.category_counts) {
    if (!universe.count(name))
      throw DataError("image '" + ann.image_id + "': unknown category '" + name + "'");
    if (n < 0) throw DataError("image '" + ann.image_id + "': negative count for '" + name + "'");
  }
}

}  // namespace ocb
