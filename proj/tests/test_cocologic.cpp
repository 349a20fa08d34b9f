#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "cocologic_fixtures.hpp"
#include "ocb/cocologic.hpp"
#include "ocb/io.hpp"

using namespace ocb;

namespace {

using fixtures::Fixture;

const std::vector<Fixture>& positives() { return fixtures::cocologic_positives(); }

std::vector<std::string> matches(const RuleSet& rules, const AnnotationRecord& a) {
  std::vector<std::string> out;
  for (const auto& r : rules.rules)
    if (eval_rule(r, a)) out.push_back(r.name);
  return out;
}

}  // namespace

TEST(CocoLogic, BundledRulesParse) {
  const auto rules = cocologic_rules();
  ASSERT_EQ(rules.rules.size(), 10u);
  EXPECT_EQ(coco_universe().size(), 80u);
  EXPECT_EQ(rules.rules[3].expr, parse_expression("dog XOR car", coco_universe()));
}

TEST(CocoLogic, EachFixtureMatchesOnlyItsClass) {
  const auto rules = cocologic_rules();
  ASSERT_EQ(positives().size(), rules.rules.size());
  for (const auto& f : positives())
    EXPECT_EQ(matches(rules, {"x", f.counts}), std::vector<std::string>{f.expected}) << f.expected;
}

TEST(CocoLogic, MultiAndZeroMatchAreDiscarded) {
  const auto rules = cocologic_rules();
  std::vector<AnnotationRecord> anns = {
      {"a", fixtures::cocologic_two_rule()[0].counts},
      {"b", fixtures::cocologic_two_rule()[1].counts},
      {"c", {}},
      {"d", {{"person", 1}}},
      {"e", {{"couch", 1}}},
  };
  EXPECT_EQ(matches(rules, anns[0]).size(), 2u);
  EXPECT_EQ(matches(rules, anns[1]).size(), 2u);
  const auto ds = build_dataset(rules, anns);
  EXPECT_EQ(ds.report.n_input, 5u);
  EXPECT_EQ(ds.report.discarded_multi_match, 2u);
  EXPECT_EQ(ds.report.discarded_no_match, 2u);
  ASSERT_EQ(ds.images.size(), 1u);
  EXPECT_EQ(ds.images[0], (LabeledImage{"e", 6, "Empty Seat"}));
}

TEST(CocoLogic, RejectsDuplicateIds) {
  EXPECT_THROW(build_dataset(cocologic_rules(), {{"a", {}}, {"a", {}}}), DataError);
}

TEST(CocoLogic, GeneratedCorpusCountsMatchBookkeeping) {
  // Fixtures plus categories no rule mentions keep their class; the two-rule and
  // empty fixtures keep theirs too. Track the expected outcome while generating.
  const auto rules = cocologic_rules();
  const std::vector<std::string> filler = {"kite", "toaster", "laptop", "pizza", "umbrella", "clock"};
  std::mt19937_64 rng(77);
  std::vector<AnnotationRecord> anns;
  std::map<std::string, std::size_t> expected;
  std::size_t expect_none = 0, expect_multi = 0;
  for (int i = 0; i < 3000; ++i) {
    AnnotationRecord a{"img" + std::to_string(100000 + i), {}};
    const auto pick = rng() % 12;
    if (pick < 10) {
      a.category_counts = positives()[pick].counts;
      ++expected[positives()[pick].expected];
    } else if (pick == 10) {
      a.category_counts = {{"cat", 1}, {"dog", 2}};
      ++expect_multi;
    } else {
      ++expect_none;
    }
    for (const auto& f : filler)
      if (rng() % 3 == 0) a.category_counts[f] = 1 + static_cast<long>(rng() % 4);
    anns.push_back(std::move(a));
  }
  std::shuffle(anns.begin(), anns.end(), rng);
  const auto ds = build_dataset(rules, anns);
  EXPECT_EQ(ds.report.discarded_no_match, expect_none);
  EXPECT_EQ(ds.report.discarded_multi_match, expect_multi);
  for (const auto& [name, n] : ds.report.per_class) EXPECT_EQ(n, expected[name]) << name;

  // partition, re-checked post hoc
  std::map<std::string, const AnnotationRecord*> by_id;
  for (const auto& a : anns) by_id[a.image_id] = &a;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& img = ds.images[i];
    EXPECT_TRUE(seen.insert(img.image_id).second);
    if (i > 0) {
      EXPECT_LT(ds.images[i - 1].image_id, img.image_id);
    }
    for (std::size_t r = 0; r < rules.rules.size(); ++r)
      EXPECT_EQ(eval_rule(rules.rules[r], *by_id[img.image_id]), r == img.class_index);
  }
}

TEST(CocoLogic, ValidateAnnotation) {
  EXPECT_NO_THROW(validate_annotation({"a", {{"cat", 1}}}, coco_universe()));
  EXPECT_THROW(validate_annotation({"a", {{"kat", 1}}}, coco_universe()), DataError);
  EXPECT_THROW(validate_annotation({"a", {{"cat", -1}}}, coco_universe()), DataError);
}

TEST(CocoLogic, LabelSpec) {
  const auto spec = label_spec_for(cocologic_rules());
  EXPECT_EQ(spec.mode, TaskMode::single_label);
  EXPECT_EQ(spec.class_names.front(), "Ambiguous Pairs");
  EXPECT_EQ(spec.num_classes(), 10u);
}

#ifdef OCB_DATA_DIR
TEST(CocoLogic, ShippedDataFilesMatchBundledCopies) {
  std::ifstream in(std::string(OCB_DATA_DIR) + "/cocologic.rules");
  ASSERT_TRUE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto from_file = parse_rule_file(ss.str(), coco_universe());
  const auto bundled = cocologic_rules();
  ASSERT_EQ(from_file.rules.size(), bundled.rules.size());
  for (std::size_t i = 0; i < bundled.rules.size(); ++i) {
    EXPECT_EQ(from_file.rules[i].name, bundled.rules[i].name);
    EXPECT_EQ(from_file.rules[i].expr, bundled.rules[i].expr);
  }
  EXPECT_EQ(load_universe(std::string(OCB_DATA_DIR) + "/coco_categories.txt"), coco_universe());
}
#endif
