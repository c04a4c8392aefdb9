#pragma once

// Synthetic imbalanced cell-detection scenes and COCO-style annotation I/O.
//
// Classes come in adjacent pairs (0,1), (2,3), ... Each class has a mean
// appearance (hue, size, aspect ratio, nucleus ratio). The ambiguity knob
// moves the two members of a pair linearly towards each other: at 0 their
// appearance ranges are disjoint, at 1 their means coincide. With an odd
// class count the last class is unpaired.

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hhic/geometry.hpp"
#include "hhic/image.hpp"
#include "hhic/kv_config.hpp"

namespace hhic {

struct DatasetSpec {
  int num_classes = 4;
  std::vector<double> class_frequencies = {100, 50, 10, 2};
  double ambiguity = 0.6;
  int image_width = 128;
  int image_height = 128;
  std::array<int, 3> scenes_per_split = {400, 50, 100};  // train, val, test
  std::uint64_t seed = 0;
  int min_cells = 1;
  int max_cells = 12;

  void validate() const;
  static DatasetSpec from_config(const KeyValueConfig& cfg);
  std::string to_config_text() const;
};

struct CellAppearance {
  double hue = 0;
  double semi_major = 0;     // pixels
  double aspect = 1;         // minor / major
  double nucleus_ratio = 0;  // nucleus semi-axes / cell semi-axes
};

CellAppearance appearance_mean(int class_id, int num_classes, double ambiguity);
// Half-width of the uniform per-cell jitter around the mean.
CellAppearance appearance_jitter(int class_id, int num_classes);
CellAppearance sample_appearance(int class_id, const DatasetSpec& spec, std::mt19937_64& rng);
int sample_class(const std::vector<double>& frequencies, std::mt19937_64& rng);

struct DetectionScene {
  std::string scene_id;
  Image image;
  std::vector<LabeledBox> gt;
};

DetectionScene generate_scene(const DatasetSpec& spec, std::mt19937_64& rng,
                              std::string scene_id = "scene");

// Seed of the randomness stream owned by one scene.
std::uint64_t scene_seed(std::uint64_t base_seed, int split, int index);

inline const std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

// Writes images/<split>_<index>.png, annotations/<split>.json and
// manifest.json under output_dir. Returns the manifest path.
std::string generate_dataset(const DatasetSpec& spec, const std::string& output_dir);

// One annotated image; the pixels are read on demand.
struct SceneRef {
  std::string scene_id;
  std::string image_path;  // resolved path
  int width = 0;
  int height = 0;
  std::vector<LabeledBox> gt;

  Image load_image() const;
};

struct AnnotatedSplit {
  std::vector<SceneRef> scenes;
  std::vector<std::string> category_names;  // index = contiguous class id
  std::vector<int> category_ids;            // original ids, ascending
  int num_classes() const { return static_cast<int>(category_names.size()); }
};

// Parses a COCO-style annotation file. Throws ParseError (with line and
// column) on malformed JSON and ValidationError naming the annotation id on
// invalid or out-of-bounds boxes.
AnnotatedSplit load_annotations(const std::string& path);
AnnotatedSplit parse_annotations(const std::string& json_text, const std::string& base_dir,
                                 const std::string& source = "<annotations>");

struct Manifest {
  std::string path;
  std::map<std::string, std::string> splits;  // split -> resolved annotation path
  int num_classes = 0;

  AnnotatedSplit load_split(const std::string& split) const;
};

Manifest load_manifest(const std::string& path);

}  // namespace hhic
