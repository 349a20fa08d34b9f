#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ocb/io.hpp"
#include "ocb/synth.hpp"

using namespace ocb;

namespace {

std::string header(std::size_t dim = 4, const std::string& extra = "") {
  return R"({"format_version":"1.0","dim":)" + std::to_string(dim) + extra + "}\n";
}

std::string error_of(const std::string& text) {
  std::istringstream in(text);
  try {
    read_activations(in, [](ImageActivationRecord&&) {});
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ocb_test_io_" + name);
}

}  // namespace

TEST(Activations, RoundTripSynth) {
  for (bool raw : {false, true}) {
    SynthConfig cfg;
    cfg.n_images = 50;
    cfg.dim = 12;
    cfg.noise_rate = 0.1;
    cfg.raw_proposals = raw;
    const auto data = generate(cfg);
    ActivationHeader h;
    h.dim = cfg.dim;
    h.backend = "synth";
    h.raw = raw;
    std::stringstream ss;
    write_activations(ss, h, data.records);
    std::vector<ImageActivationRecord> back;
    const auto h2 = read_activations(ss, [&](ImageActivationRecord&& r) { back.push_back(std::move(r)); });
    EXPECT_EQ(back, data.records);
    EXPECT_EQ(h2.dim, 12u);
    EXPECT_EQ(h2.raw, raw);
    EXPECT_EQ(h2.backend, "synth");
  }
}

TEST(Activations, SaveAndLoadFile) {
  SynthConfig cfg;
  cfg.n_images = 10;
  const auto data = generate(cfg);
  ActivationHeader h;
  h.dim = cfg.dim;
  h.vocabulary = std::vector<std::string>(cfg.dim, "c");
  const auto path = temp_path("acts.jsonl");
  save_activations(path.string(), h, data.records);
  const auto file = load_activations(path.string());
  EXPECT_EQ(file.records, data.records);
  ASSERT_TRUE(file.header.vocabulary.has_value());
  EXPECT_EQ(file.header.vocabulary->size(), cfg.dim);
  std::filesystem::remove(path);
  EXPECT_THROW(load_activations(path.string()), DataError);
}

TEST(Activations, RejectsZeroEntryWithLineNumber) {
  const auto msg = error_of(header() +
                            R"({"image_id":"a","image_size":[10,10],"image_vector":[[0,1.0]],"objects":[]})" "\n"
                            R"({"image_id":"b","image_size":[10,10],"image_vector":[[1,0.0]],"objects":[]})" "\n");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("zero stored entry"), std::string::npos) << msg;
}

TEST(Activations, ValidationErrors) {
  const std::string ok_obj = R"({"box":[0,0,5,5],"score":0.5,"vector":[]})";
  auto line = [](const std::string& body) { return body + "\n"; };
  struct Case {
    std::string text, needle;
  };
  const std::vector<Case> cases = {
      {"", "missing header"},
      {R"({"dim":4})" "\n", "format_version"},
      {R"({"format_version":"2.0","dim":4})" "\n", "unsupported format version"},
      {header(0), "dim must be positive"},
      {header(4, R"(,"vocabulary":["a"])"), "vocabulary size"},
      {header() + "{not json\n", "line 2: malformed JSON"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[[4,1.0]]})"), "out of range"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[[2,1.0],[1,1.0]]})"), "strictly increasing"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[[1,-1.0]]})"), "nonpositive"},
      {header() + line(R"({"image_id":"a","image_size":[10],"image_vector":[]})"), "image_size"},
      {header() + line(R"({"image_size":[10,10],"image_vector":[]})"), "image_id"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[],"objects":[{"box":[0,0,5,5],"score":1.5,"vector":[]}]})"),
       "score"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[],"objects":[{"box":[5,0,5,5],"score":0.5,"vector":[]}]})"),
       "degenerate"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[],"objects":[{"box":[0,0,5,5],"score":0.2,"vector":[]},)" +
                       ok_obj + "]}"),
       "descending score"},
      {header() + line(R"({"image_id":"a","image_size":[10,10],"image_vector":[]})") +
           line(R"({"image_id":"a","image_size":[10,10],"image_vector":[]})"),
       "line 3: duplicate image_id"},
  };
  for (const auto& c : cases) {
    const auto msg = error_of(c.text);
    EXPECT_NE(msg.find(c.needle), std::string::npos) << "expected '" << c.needle << "', got '" << msg << "'";
  }
}

TEST(Activations, RawFilesMayBeUnsorted) {
  const std::string rec =
      R"({"image_id":"a","image_size":[10,10],"image_vector":[],"objects":[{"box":[0,0,5,5],"score":0.2,"vector":[]},{"box":[0,0,5,5],"score":0.5,"vector":[]}]})";
  EXPECT_EQ(error_of(header(4, R"(,"proposals":"raw")") + rec + "\n"), "");
}

TEST(Activations, NormalizedBoxesAreScaled) {
  std::istringstream in(header(4, R"(,"box_units":"normalized")") +
                        R"({"image_id":"a","image_size":[200,100],"image_vector":[],"objects":[{"box":[0.1,0.2,0.5,0.6],"score":0.5,"vector":[[3,0.25]]}]})"
                        "\n");
  std::vector<ImageActivationRecord> recs;
  read_activations(in, [&](ImageActivationRecord&& r) { recs.push_back(std::move(r)); });
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].objects[0].proposal.box, BoundingBox(20, 20, 100, 60));
}

TEST(Activations, StreamsLargeFiles) {
  SynthConfig cfg;
  cfg.n_images = 10000;
  cfg.dim = 8;
  cfg.max_objects = 2;
  cfg.max_concepts = 2;
  const auto data = generate(cfg);
  ActivationHeader h;
  h.dim = cfg.dim;
  std::stringstream ss;
  write_activations(ss, h, data.records);
  std::size_t n = 0, objects = 0;
  read_activations(ss, [&](ImageActivationRecord&& r) {
    ++n;
    objects += r.objects.size();
  });
  EXPECT_EQ(n, 10000u);
  EXPECT_GT(objects, 10000u);
}

TEST(Labels, RoundTripAndErrors) {
  LabelSpec spec(TaskMode::multi_label, {"a", "b", "c"});
  std::stringstream ss;
  write_labels(ss, spec, {"x", "y"}, {{0, 2}, {}});
  const auto file = read_labels(ss);
  EXPECT_EQ(file.spec.class_names, spec.class_names);
  EXPECT_EQ(file.spec.mode, TaskMode::multi_label);
  EXPECT_EQ(file.labels.at("x"), (Label{0, 2}));
  EXPECT_EQ(file.labels.at("y"), Label{});

  std::istringstream bad(R"({"format_version":"1.0","mode":"single_label","classes":["a","b"]})" "\n"
                         R"({"image_id":"x","labels":["a"]})" "\n"
                         R"({"image_id":"y","labels":["z"]})" "\n");
  try {
    read_labels(bad);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("unknown class 'z'"), std::string::npos);
  }
  std::istringstream two(R"({"format_version":"1.0","mode":"single_label","classes":["a","b"]})" "\n"
                         R"({"image_id":"x","labels":["a","b"]})" "\n");
  EXPECT_THROW(read_labels(two), DataError);
}

TEST(Annotations, CocoInstancesAndJsonl) {
  const auto u = coco_universe();
  const auto coco = temp_path("coco.json");
  {
    std::ofstream out(coco);
    out << R"({"images":[{"id":1},{"id":2},{"id":3}],
               "categories":[{"id":17,"name":"cat"},{"id":18,"name":"dog"}],
               "annotations":[{"image_id":1,"category_id":17},{"image_id":1,"category_id":18},
                              {"image_id":1,"category_id":18},{"image_id":3,"category_id":17}]})";
  }
  const auto anns = load_annotations(coco.string(), u);
  ASSERT_EQ(anns.size(), 3u);
  EXPECT_EQ(anns[0].image_id, "1");
  EXPECT_EQ(anns[0].count("dog"), 2);
  EXPECT_EQ(anns[0].count("cat"), 1);
  EXPECT_TRUE(anns[1].category_counts.empty());

  const auto jsonl = temp_path("anns.jsonl");
  {
    std::ofstream out(jsonl);
    out << R"({"image_id":"a","counts":{"traffic light":2}})" "\n"
        << R"({"image_id":"b","counts":{}})" "\n"
        << R"({"image_id":"c","counts":{"kat":1}})" "\n";
  }
  try {
    load_annotations(jsonl.string(), u);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::filesystem::remove(coco);
  std::filesystem::remove(jsonl);
}

TEST(Model, RoundTrip) {
  LinearPredictor p;
  p.label_spec = LabelSpec(TaskMode::single_label, {"x", "y"});
  p.agg = {AggKind::sum_count, 0.25};
  p.k = 2;
  p.dim = 3;
  p.input_dim = 6;
  p.weights = {0.1, -0.2, 1e-17, 3.0, 0.0, 1.0 / 3.0, 5, 6, 7, 8, 9, 10};
  p.bias = {0.5, -0.5};
  p.feature_scale = {1, 2, 3, 4, 5, 6};
  TrainConfig tc;
  tc.seed = 99;
  const auto j = model_to_json(p, tc);
  const auto q = model_from_json(Json::parse(j.dump(2)));
  EXPECT_EQ(q.weights, p.weights);
  EXPECT_EQ(q.bias, p.bias);
  EXPECT_EQ(q.feature_scale, p.feature_scale);
  EXPECT_EQ(q.agg, p.agg);
  EXPECT_EQ(q.k, 2u);
  EXPECT_EQ(train_config_from_json(j["train_config"]), tc);

  auto broken = j;
  broken["weights"].erase(0);
  EXPECT_THROW(model_from_json(broken), DataError);
  broken = j;
  broken["format_version"] = "3.1";
  EXPECT_THROW(model_from_json(broken), DataError);
  broken = j;
  broken["agg_kind"]["kind"] = "concat";  // (k+1)C = 9 != 6
  EXPECT_THROW(model_from_json(broken), DataError);
}

TEST(SynthConfigJson, RoundTripAndOverlay) {
  SynthConfig c;
  c.task = SynthTask::cocologic_like;
  c.n_images = 17;
  c.max_objects = 7;
  c.noise_rate = 0.125;
  c.raw_proposals = true;
  c.image_size = {800, 600};
  const auto back = synth_config_from_json(Json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  const auto partial = synth_config_from_json(Json::parse(R"({"dim":9})"), c);
  EXPECT_EQ(partial.dim, 9u);
  EXPECT_EQ(partial.n_images, 17u);
  EXPECT_THROW(synth_config_from_json(Json::parse(R"({"task":"sorting"})")), ConfigError);
  EXPECT_THROW(synth_config_from_json(Json::parse(R"({"dim":"wide"})")), ConfigError);
}

TEST(Manifest, EmbedsConfig) {
  SynthConfig c;
  c.n_images = 5;
  c.task = SynthTask::counting;
  const auto j = manifest_to_json(generate(c), c);
  EXPECT_EQ(j["config"], to_json(c));
  ASSERT_EQ(j["images"].size(), 5u);
  EXPECT_TRUE(j["images"][0].contains("target_count"));
}

TEST(Activations, ExtractorStyleHeader) {
  // header-only file from an extractor run over zero images, with producer metadata
  std::stringstream ss(R"({"format_version":"1.0","dim":3,"vocabulary":["a","b","c"],"backend":"sam_like",)"
                       R"("proposals":"raw","box_units":"normalized","crop_policy":"resize_224","solver":{"l1":0.2}})"
                       "\n");
  std::size_t n = 0;
  const auto h = read_activations(ss, [&](ImageActivationRecord&&) { ++n; });
  EXPECT_EQ(n, 0u);
  EXPECT_TRUE(h.raw);
  EXPECT_EQ(h.backend, "sam_like");
  EXPECT_EQ(h.extra["crop_policy"], "resize_224");
  EXPECT_EQ(h.extra["solver"]["l1"], 0.2);
  const auto again = h.to_json();
  EXPECT_EQ(again["solver"]["l1"], 0.2);
  EXPECT_EQ(again["proposals"], "raw");
}
