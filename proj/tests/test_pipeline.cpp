#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ocb/pipeline.hpp"
#include "ocb/synth.hpp"

using namespace ocb;

namespace {

struct Splits {
  LabelSpec spec;
  LabeledSplit train, test;
};

Splits split(const SynthData& d, double train_fraction = 0.75) {
  Splits s{d.label_spec, {}, {}};
  const auto cut = static_cast<std::size_t>(static_cast<double>(d.records.size()) * train_fraction);
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    auto& part = i < cut ? s.train : s.test;
    part.records.push_back(d.records[i]);
    part.labels.push_back(d.labels[i]);
    part.raw = d.raw;
  }
  return s;
}

SynthData counting_data(std::size_t n = 1000) {
  SynthConfig c;
  c.seed = 11;
  c.task = SynthTask::counting;
  c.n_images = n;
  return generate(c);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Pipeline, PresenceSumReachesHighMap) {
  SynthConfig c;
  c.seed = 5;
  c.task = SynthTask::presence;
  c.n_images = 1000;
  auto s = split(generate(c));
  PipelineConfig cfg;
  cfg.agg.kind = AggKind::sum;
  cfg.refine.k = 4;
  const auto r = run_pipeline(cfg, s.spec, s.train, &s.test);
  ASSERT_TRUE(r.test);
  EXPECT_GE(r.test->metrics.at("mAP"), 0.99);
  EXPECT_TRUE(r.test->metadata.count("ap_definition"));
}

TEST(Pipeline, CountingNeedsObjectCounts) {
  auto s = split(counting_data());
  PipelineConfig cfg;
  cfg.agg.kind = AggKind::count;
  const double count_acc = run_pipeline(cfg, s.spec, s.train, &s.test).test->metrics.at("accuracy");
  cfg.agg.kind = AggKind::max;
  const double max_acc = run_pipeline(cfg, s.spec, s.train, &s.test).test->metrics.at("accuracy");
  EXPECT_GE(count_acc, 0.95);
  EXPECT_LT(max_acc, count_acc - 0.2);
}

TEST(Pipeline, SmallKTruncatesRefinedRecords) {
  auto s = split(counting_data(300));
  PipelineConfig cfg;
  cfg.refine.k = 2;
  const auto prepared = prepare_records(s.train.records, false, cfg);
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    EXPECT_LE(prepared[i].objects.size(), 2u);
    EXPECT_TRUE(std::equal(prepared[i].objects.begin(), prepared[i].objects.end(), s.train.records[i].objects.begin()));
  }
  for (auto kind : kAllAggKinds) {
    cfg.agg.kind = kind;
    EXPECT_NO_THROW(run_pipeline(cfg, s.spec, s.train, &s.test));
  }
}

TEST(Pipeline, ImageOnlyDropsObjects) {
  auto s = split(counting_data(200));
  PipelineConfig cfg;
  cfg.image_only = true;
  for (const auto& r : prepare_records(s.train.records, false, cfg)) EXPECT_TRUE(r.objects.empty());
}

TEST(Pipeline, RawModeMatchesRefinedAccuracy) {
  SynthConfig c;
  c.seed = 13;
  c.task = SynthTask::counting;
  c.n_images = 1000;
  c.raw_proposals = true;
  auto s = split(generate(c));
  ASSERT_TRUE(s.train.raw);
  PipelineConfig cfg;
  cfg.agg.kind = AggKind::count;
  EXPECT_GE(run_pipeline(cfg, s.spec, s.train, &s.test).test->metrics.at("accuracy"), 0.95);
  // without refinement the clutter (duplicates, fragments) corrupts counts
  auto unrefined = s;
  unrefined.train.raw = unrefined.test.raw = false;
  for (auto* part : {&unrefined.train, &unrefined.test})
    for (auto& r : part->records)
      std::stable_sort(r.objects.begin(), r.objects.end(),
                       [](const auto& a, const auto& b) { return a.proposal.score > b.proposal.score; });
  cfg.refine.k = 12;
  EXPECT_LT(run_pipeline(cfg, s.spec, unrefined.train, &unrefined.test).test->metrics.at("accuracy"), 0.95);
}

TEST(Pipeline, ErrorsCarryStageTag) {
  auto s = split(counting_data(100));
  PipelineConfig cfg;
  cfg.task = "multi_label";
  try {
    run_pipeline(cfg, s.spec, s.train, &s.test);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[config]"), std::string::npos);
  }
  cfg.task = "auto";
  s.train.labels[0] = {99};
  try {
    run_pipeline(cfg, s.spec, s.train, &s.test);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("[train]"), std::string::npos);
  }
}

TEST(PipelineConfig, JsonOverlayAndPresets) {
  PipelineConfig base;
  base.refine.k = 3;
  auto cfg = pipeline_config_from_json(Json::parse(R"({"preset":"sam","aggregation":{"kind":"count"},
      "train":{"epochs":7},"seed":42})"),
                                       base);
  EXPECT_EQ(cfg.refine.t_cer, 0.94);
  EXPECT_EQ(cfg.refine.k, 3u);
  EXPECT_EQ(cfg.agg.kind, AggKind::count);
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(cfg.resolved_train().seed, 42u);
  const auto again = pipeline_config_from_json(cfg.to_json());
  EXPECT_EQ(again.to_json(), cfg.to_json());
  EXPECT_THROW(pipeline_config_from_json(Json::parse(R"({"preset":"yolo"})")), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(Json::parse(R"({"train":{"epochs":"many"}})")), ConfigError);
}

TEST(Sweep, ShapeOrderAndDeterminism) {
  auto s = split(counting_data(400));
  PipelineConfig base;
  base.train.epochs = 30;
  SweepGrid grid{{kAllAggKinds.begin(), kAllAggKinds.end()}, {1, 3, 7}, {0.01}};
  const auto rows = run_sweep(grid, base, s.spec, s.train, s.test, 1);
  ASSERT_EQ(rows.size(), 15u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_TRUE(rows[i].ok) << rows[i].error;
    EXPECT_EQ(rows[i].index, i);
    EXPECT_EQ(rows[i].agg, kAllAggKinds[i / 3]);
    EXPECT_EQ(rows[i].k, (std::vector<std::size_t>{1, 3, 7})[i % 3]);
  }
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kSweepCsvHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
  EXPECT_EQ(sweep_csv(run_sweep(grid, base, s.spec, s.train, s.test, 4)), csv);
  EXPECT_EQ(sweep_csv(run_sweep(grid, base, s.spec, s.train, s.test, 1)), csv);
}

TEST(Sweep, CountingFavoursCountKinds) {
  auto s = split(counting_data(800));
  SweepGrid grid{{AggKind::max, AggKind::count, AggKind::sum_count}, {7}, {0.01}};
  const auto rows = run_sweep(grid, PipelineConfig{}, s.spec, s.train, s.test, 3);
  const double mx = rows[0].report.metrics.at("accuracy");
  EXPECT_GT(rows[1].report.metrics.at("accuracy"), mx);
  EXPECT_GT(rows[2].report.metrics.at("accuracy"), mx);
}

TEST(Sweep, FailingCellIsRecorded) {
  auto s = split(counting_data(100));
  SweepGrid grid{{AggKind::max}, {0, 2}, {0.01}};  // k = 0 is invalid
  const auto rows = run_sweep(grid, PipelineConfig{}, s.spec, s.train, s.test, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_FALSE(rows[0].ok);
  EXPECT_NE(rows[0].error.find("k"), std::string::npos);
  EXPECT_TRUE(rows[1].ok);
  EXPECT_NE(sweep_csv(rows).find("failed"), std::string::npos);
}

TEST(Pipeline, FileRunIsByteDeterministic) {
  const auto dir = std::filesystem::temp_directory_path() / "ocb_test_pipeline";
  std::filesystem::create_directories(dir);
  SynthConfig c;
  c.seed = 3;
  c.task = SynthTask::counting;
  c.n_images = 300;
  const auto d = generate(c);
  ActivationHeader h;
  h.dim = c.dim;
  std::vector<ImageActivationRecord> train(d.records.begin(), d.records.begin() + 200),
      test(d.records.begin() + 200, d.records.end());
  save_activations((dir / "train.jsonl").string(), h, train);
  save_activations((dir / "test.jsonl").string(), h, test);
  std::vector<std::string> ids;
  for (const auto& r : d.records) ids.push_back(r.image_id);
  save_labels((dir / "labels.jsonl").string(), d.label_spec, ids, d.labels);

  PipelineConfig cfg;
  cfg.seed = 9;
  cfg.agg.kind = AggKind::sum_count;
  cfg.paths.train = (dir / "train.jsonl").string();
  cfg.paths.test = (dir / "test.jsonl").string();
  cfg.paths.labels = (dir / "labels.jsonl").string();
  cfg.paths.model_out = (dir / "model.json").string();
  cfg.paths.report_out = (dir / "report.json").string();
  std::string model[2], report[2];
  for (int run = 0; run < 2; ++run) {
    run_pipeline(cfg);
    model[run] = slurp(cfg.paths.model_out);
    report[run] = slurp(cfg.paths.report_out);
  }
  EXPECT_FALSE(model[0].empty());
  EXPECT_EQ(model[0], model[1]);
  EXPECT_EQ(report[0], report[1]);
  const auto loaded = load_model(cfg.paths.model_out);
  EXPECT_EQ(loaded.agg.kind, AggKind::sum_count);
  const auto j = Json::parse(report[0]);
  EXPECT_TRUE(j.contains("config"));
  EXPECT_TRUE(j["test"]["metrics"].contains("balanced_accuracy"));
  std::filesystem::remove_all(dir);
}

TEST(SplitIndices, PartitionIsSeededAndComplete) {
  const auto parts = split_indices(101, {0.7, 0.1, 0.2}, 5);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].size(), 71u);
  EXPECT_EQ(parts[1].size(), 10u);
  EXPECT_EQ(parts[2].size(), 20u);
  std::vector<std::size_t> all;
  for (const auto& p : parts) {
    EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
    all.insert(all.end(), p.begin(), p.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(split_indices(101, {0.7, 0.1, 0.2}, 5), parts);
  EXPECT_NE(split_indices(101, {0.7, 0.1, 0.2}, 6), parts);
  // unnormalised shares behave like their normalised form
  EXPECT_EQ(split_indices(101, {7, 1, 2}, 5), parts);
  EXPECT_EQ(split_indices(0, {1, 1}, 5), (std::vector<std::vector<std::size_t>>{{}, {}}));
  EXPECT_THROW(split_indices(10, {}, 1), ConfigError);
  EXPECT_THROW(split_indices(10, {0.5, -0.1}, 1), ConfigError);
  EXPECT_THROW(split_indices(10, {0, 0}, 1), ConfigError);
}
