#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hhic/data_synth.hpp"
#include "hhic/error.hpp"

using namespace hhic;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hhic_test_" + name);
  fs::remove_all(p);
  return p;
}

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.image_width = 64;
  s.image_height = 64;
  s.scenes_per_split = {6, 2, 3};
  s.max_cells = 5;
  s.seed = 42;
  return s;
}

const char* kMinimalCoco = R"({
  "images": [{"id": 1, "file_name": "a.png", "width": 32, "height": 32}],
  "annotations": [%ANN%],
  "categories": [{"id": 3, "name": "b"}, {"id": 1, "name": "a"}]
})";

std::string coco_with(const std::string& ann) {
  std::string s = kMinimalCoco;
  s.replace(s.find("%ANN%"), 5, ann);
  return s;
}

}  // namespace

TEST(Appearance, AmbiguityEndpoints) {
  for (int c : {0, 2}) {
    const auto a = appearance_mean(c, 4, 0.0), b = appearance_mean(c + 1, 4, 0.0);
    const auto ja = appearance_jitter(c, 4), jb = appearance_jitter(c + 1, 4);
    // Disjoint ranges along every parameter.
    EXPECT_TRUE(a.hue + ja.hue < b.hue - jb.hue || b.hue + jb.hue < a.hue - ja.hue);
    EXPECT_TRUE(a.semi_major + ja.semi_major < b.semi_major - jb.semi_major ||
                b.semi_major + jb.semi_major < a.semi_major - ja.semi_major);
    const auto m0 = appearance_mean(c, 4, 1.0), m1 = appearance_mean(c + 1, 4, 1.0);
    EXPECT_NEAR(m0.hue, m1.hue, 1e-12);
    EXPECT_NEAR(m0.semi_major, m1.semi_major, 1e-12);
    EXPECT_NEAR(m0.aspect, m1.aspect, 1e-12);
    EXPECT_NEAR(m0.nucleus_ratio, m1.nucleus_ratio, 1e-12);
  }
}

TEST(SampleClass, FrequencyHundredToOne) {
  std::mt19937_64 rng(1);
  int minority = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) minority += sample_class({100, 1}, rng) == 1 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(minority) / n, 1.0 / 101.0, 0.003);
}

TEST(SampleClass, ConvergesToSpecFrequencies) {
  std::mt19937_64 rng(2);
  const std::vector<double> f{100, 50, 10, 2};
  std::vector<int> counts(4, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[sample_class(f, rng)];
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(counts[c] / double(n), f[c] / 162.0, 0.02);
}

TEST(GenerateScene, BoxesInsideImageAndDeterministic) {
  const DatasetSpec spec = tiny_spec();
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 a(s), b(s);
    const auto x = generate_scene(spec, a), y = generate_scene(spec, b);
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.gt, y.gt);
    EXPECT_GE(x.gt.size(), 1u);
    EXPECT_LE(x.gt.size(), 5u);
    for (const auto& g : x.gt) {
      EXPECT_TRUE(g.box.valid());
      EXPECT_GE(g.box.x0, 0);
      EXPECT_GE(g.box.y0, 0);
      EXPECT_LE(g.box.x1, 64);
      EXPECT_LE(g.box.y1, 64);
    }
    for (float p : x.image.pixels) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
}

TEST(DatasetSpec, Validation) {
  DatasetSpec s;
  s.class_frequencies = {1, 0, 1, 1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = DatasetSpec{};
  s.ambiguity = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = DatasetSpec{};
  s.class_frequencies = {1, 2};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(DatasetSpec, ConfigRoundTrip) {
  const DatasetSpec s = tiny_spec();
  const auto back = DatasetSpec::from_config(KeyValueConfig::parse_string(s.to_config_text()));
  EXPECT_EQ(back.to_config_text(), s.to_config_text());
  EXPECT_EQ(back.scenes_per_split, s.scenes_per_split);
}

TEST(GenerateDataset, RoundTripCountsAndDeterminism) {
  const DatasetSpec spec = tiny_spec();
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const Manifest m = load_manifest(generate_dataset(spec, a.string()));
  generate_dataset(spec, b.string());
  EXPECT_EQ(m.num_classes, 4);
  for (int s = 0; s < 3; ++s) {
    const std::string name = kSplitNames[s];
    EXPECT_EQ(slurp(a / "annotations" / (name + ".json")), slurp(b / "annotations" / (name + ".json")));
    const AnnotatedSplit split = m.load_split(name);
    ASSERT_EQ(static_cast<int>(split.scenes.size()), spec.scenes_per_split[s]);
    for (int i = 0; i < spec.scenes_per_split[s]; ++i) {
      std::mt19937_64 rng(scene_seed(spec.seed, s, i));
      const auto scene = generate_scene(spec, rng);
      const auto& ref = split.scenes[i];
      EXPECT_EQ(ref.gt, scene.gt) << name << " " << i;
      const Image img = ref.load_image();
      EXPECT_EQ(img.width, 64);
      for (std::size_t p = 0; p < img.pixels.size(); ++p)
        ASSERT_NEAR(img.pixels[p], scene.image.pixels[p], 0.5f / 255.0f + 1e-6f);
    }
  }
  EXPECT_EQ(slurp(a / "images" / "train_00000.png"), slurp(b / "images" / "train_00000.png"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(ParseAnnotations, EmptyListAndCategoryOrder) {
  const auto s = parse_annotations(coco_with(""), "/data");
  ASSERT_EQ(s.scenes.size(), 1u);
  EXPECT_TRUE(s.scenes[0].gt.empty());
  EXPECT_EQ(s.category_ids, (std::vector<int>{1, 3}));
  EXPECT_EQ(s.category_names, (std::vector<std::string>{"a", "b"}));
  const auto none = parse_annotations(R"({"images": [], "annotations": [], "categories": []})", ".");
  EXPECT_TRUE(none.scenes.empty());
}

TEST(ParseAnnotations, MapsBoxesAndCategories) {
  const auto s = parse_annotations(
      coco_with(R"({"id": 7, "image_id": 1, "bbox": [2, 3, 10.5, 4], "category_id": 3})"), ".");
  ASSERT_EQ(s.scenes[0].gt.size(), 1u);
  EXPECT_EQ(s.scenes[0].gt[0].box, (Box{2, 3, 12.5, 7}));
  EXPECT_EQ(s.scenes[0].gt[0].class_id, 1);
}

TEST(ParseAnnotations, ValidationErrorsNameTheAnnotation) {
  auto expect_named = [](const std::string& ann, const std::string& needle) {
    try {
      parse_annotations(coco_with(ann), ".");
      FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_named(R"({"id": 11, "image_id": 1, "bbox": [5, 5, 0, 4], "category_id": 1})", "11");
  expect_named(R"({"id": 12, "image_id": 1, "bbox": [5, 5, -2, 4], "category_id": 1})", "12");
  expect_named(R"({"id": 13, "image_id": 1, "bbox": [25, 5, 10, 4], "category_id": 1})", "13");
  expect_named(R"({"id": 14, "image_id": 9, "bbox": [1, 1, 2, 2], "category_id": 1})", "14");
  expect_named(R"({"id": 15, "image_id": 1, "bbox": [1, 1, 2, 2], "category_id": 8})", "15");
}

TEST(ParseAnnotations, MalformedJsonReportsPosition) {
  try {
    parse_annotations("{\n  \"images\": [,]\n}", ".");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}
