#include "hhic/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hhic/error.hpp"

namespace hhic {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetSpec::validate() const {
  if (num_classes < 1) throw ConfigError("dataset spec: num_classes must be >= 1");
  if (class_frequencies.size() != static_cast<std::size_t>(num_classes))
    throw ConfigError("dataset spec: need one frequency per class");
  for (double f : class_frequencies)
    if (!(f > 0)) throw ConfigError("dataset spec: class frequencies must be positive");
  if (!(ambiguity >= 0 && ambiguity <= 1)) throw ConfigError("dataset spec: ambiguity must be in [0,1]");
  if (image_width < 32 || image_height < 32) throw ConfigError("dataset spec: image too small");
  for (int n : scenes_per_split)
    if (n < 0) throw ConfigError("dataset spec: negative scene count");
  if (min_cells < 1 || max_cells < min_cells) throw ConfigError("dataset spec: bad cell count range");
}

DatasetSpec DatasetSpec::from_config(const KeyValueConfig& cfg) {
  cfg.check_known({"num_classes", "class_frequencies", "ambiguity", "image_size", "image_width",
                   "image_height", "scenes_per_split", "seed", "min_cells", "max_cells"});
  DatasetSpec s;
  s.num_classes = static_cast<int>(cfg.get_int("num_classes", s.num_classes));
  s.class_frequencies = cfg.get_doubles("class_frequencies", s.class_frequencies);
  s.ambiguity = cfg.get_double("ambiguity", s.ambiguity);
  if (cfg.has("image_size")) {
    s.image_width = s.image_height = static_cast<int>(cfg.get_int("image_size", 128));
  }
  s.image_width = static_cast<int>(cfg.get_int("image_width", s.image_width));
  s.image_height = static_cast<int>(cfg.get_int("image_height", s.image_height));
  const auto splits = cfg.get_ints("scenes_per_split", {s.scenes_per_split.begin(), s.scenes_per_split.end()});
  if (splits.size() != 3) throw ConfigError("dataset spec: scenes_per_split needs train,val,test");
  std::copy(splits.begin(), splits.end(), s.scenes_per_split.begin());
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  s.min_cells = static_cast<int>(cfg.get_int("min_cells", s.min_cells));
  s.max_cells = static_cast<int>(cfg.get_int("max_cells", s.max_cells));
  s.validate();
  return s;
}

std::string DatasetSpec::to_config_text() const {
  std::ostringstream os;
  os << "num_classes = " << num_classes << "\nclass_frequencies = ";
  for (std::size_t i = 0; i < class_frequencies.size(); ++i)
    os << (i ? "," : "") << class_frequencies[i];
  os << "\nambiguity = " << ambiguity << "\nimage_width = " << image_width
     << "\nimage_height = " << image_height << "\nscenes_per_split = " << scenes_per_split[0]
     << "," << scenes_per_split[1] << "," << scenes_per_split[2] << "\nseed = " << seed
     << "\nmin_cells = " << min_cells << "\nmax_cells = " << max_cells << "\n";
  return os.str();
}

namespace {

CellAppearance base_appearance(int c) {
  const int pair = c / 2;
  const bool odd = c % 2 == 1;
  CellAppearance a;
  a.hue = std::fmod(0.05 + 0.27 * pair, 1.0) + (odd ? 0.07 : 0.0);
  a.semi_major = 7.0 + 1.5 * (pair % 3) + (odd ? 3.0 : 0.0);
  a.aspect = odd ? 0.62 : 0.88;
  a.nucleus_ratio = odd ? 0.55 : 0.32;
  return a;
}

int partner(int c, int num_classes) {
  const int p = c ^ 1;
  return p < num_classes ? p : -1;
}

// Within-pair differences of the base table.
constexpr CellAppearance kPairGap{0.07, 3.0, 0.26, 0.23};
constexpr double kJitterFraction = 0.35;

}  // namespace

CellAppearance appearance_mean(int class_id, int num_classes, double ambiguity) {
  const CellAppearance own = base_appearance(class_id);
  const int p = partner(class_id, num_classes);
  if (p < 0) return own;
  const CellAppearance other = base_appearance(p);
  const double t = 0.5 * ambiguity;
  return {own.hue + t * (other.hue - own.hue),
          own.semi_major + t * (other.semi_major - own.semi_major),
          own.aspect + t * (other.aspect - own.aspect),
          own.nucleus_ratio + t * (other.nucleus_ratio - own.nucleus_ratio)};
}

CellAppearance appearance_jitter(int, int) {
  return {kJitterFraction * kPairGap.hue, kJitterFraction * kPairGap.semi_major,
          kJitterFraction * kPairGap.aspect, kJitterFraction * kPairGap.nucleus_ratio};
}

CellAppearance sample_appearance(int class_id, const DatasetSpec& spec, std::mt19937_64& rng) {
  const CellAppearance m = appearance_mean(class_id, spec.num_classes, spec.ambiguity);
  const CellAppearance j = appearance_jitter(class_id, spec.num_classes);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CellAppearance a;
  a.hue = m.hue + j.hue * u(rng);
  a.semi_major = m.semi_major + j.semi_major * u(rng);
  a.aspect = m.aspect + j.aspect * u(rng);
  a.nucleus_ratio = m.nucleus_ratio + j.nucleus_ratio * u(rng);
  return a;
}

int sample_class(const std::vector<double>& frequencies, std::mt19937_64& rng) {
  std::discrete_distribution<int> d(frequencies.begin(), frequencies.end());
  return d(rng);
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Cell {
  int class_id;
  CellAppearance look;
  double cx, cy, angle;
  Box box;
};

Box ellipse_box(double cx, double cy, double a, double b, double angle, int w, int h) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double ex = std::sqrt(a * a * c * c + b * b * s * s);
  const double ey = std::sqrt(a * a * s * s + b * b * c * c);
  // Dyadic (1/16 px) coordinates keep x + w exact through the xywh format.
  const auto lo = [](double v) { return std::floor(v * 16.0) / 16.0; };
  const auto hi = [](double v) { return std::ceil(v * 16.0) / 16.0; };
  return Box{std::max(0.0, lo(cx - ex)), std::max(0.0, lo(cy - ey)),
             std::min(double(w), hi(cx + ex)), std::min(double(h), hi(cy + ey))};
}

void render_background(Image& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Rgb base{0.86 + 0.04 * (u(rng) - 0.5), 0.82 + 0.04 * (u(rng) - 0.5),
                 0.87 + 0.04 * (u(rng) - 0.5)};
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i)
    waves.push_back({0.02 + 0.08 * u(rng), 0.02 + 0.08 * u(rng), 6.283 * u(rng), 0.02 + 0.02 * u(rng)});
  std::normal_distribution<double> noise(0.0, 0.015);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double shade = 0;
      for (const auto& w : waves) shade += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      img.at(y, x, 0) = static_cast<float>(base.r + shade + noise(rng));
      img.at(y, x, 1) = static_cast<float>(base.g + shade + noise(rng));
      img.at(y, x, 2) = static_cast<float>(base.b + shade + noise(rng));
    }
}

void render_cell(Image& img, const Cell& cell, std::mt19937_64& rng) {
  const double a = cell.look.semi_major;
  const double b = a * cell.look.aspect;
  const double na = a * cell.look.nucleus_ratio, nb = b * cell.look.nucleus_ratio;
  const Rgb cyto = hsv(cell.look.hue, 0.45, 0.85);
  const Rgb nucleus = hsv(cell.look.hue + 0.03, 0.65, 0.35);
  const double c = std::cos(cell.angle), s = std::sin(cell.angle);
  std::normal_distribution<double> tex(0.0, 0.02);
  const int x0 = std::max(0, static_cast<int>(cell.box.x0) - 1);
  const int x1 = std::min(img.width - 1, static_cast<int>(cell.box.x1) + 1);
  const int y0 = std::max(0, static_cast<int>(cell.box.y0) - 1);
  const int y1 = std::min(img.height - 1, static_cast<int>(cell.box.y1) + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cell.cx, dy = y + 0.5 - cell.cy;
      const double u = dx * c + dy * s, v = -dx * s + dy * c;
      const double d = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
      const double alpha = std::clamp((1.0 - d) * b + 0.5, 0.0, 1.0);
      if (alpha <= 0) continue;
      const double dn = std::sqrt((u / na) * (u / na) + (v / nb) * (v / nb));
      const double nalpha = std::clamp((1.0 - dn) * nb + 0.5, 0.0, 1.0);
      const double t = tex(rng);
      const double col[3] = {cyto.r + nalpha * (nucleus.r - cyto.r) + t,
                             cyto.g + nalpha * (nucleus.g - cyto.g) + t,
                             cyto.b + nalpha * (nucleus.b - cyto.b) + t};
      for (int ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = static_cast<float>((1 - alpha) * img.at(y, x, ch) + alpha * col[ch]);
    }
}

}  // namespace

DetectionScene generate_scene(const DatasetSpec& spec, std::mt19937_64& rng, std::string scene_id) {
  spec.validate();
  DetectionScene scene;
  scene.scene_id = std::move(scene_id);
  scene.image = Image(spec.image_width, spec.image_height);
  render_background(scene.image, rng);

  std::uniform_int_distribution<int> count(spec.min_cells, spec.max_cells);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = count(rng);
  std::vector<Cell> cells;
  for (int i = 0; i < n; ++i) {
    Cell cell;
    cell.class_id = sample_class(spec.class_frequencies, rng);
    cell.look = sample_appearance(cell.class_id, spec, rng);
    const double a = cell.look.semi_major;
    // Rejection placement against overlap; after the last try the last
    // candidate is kept so placement never biases the class mix.
    for (int attempt = 0; attempt < 24; ++attempt) {
      cell.angle = std::numbers::pi * u(rng);
      cell.cx = a + 1 + (spec.image_width - 2 * a - 2) * u(rng);
      cell.cy = a + 1 + (spec.image_height - 2 * a - 2) * u(rng);
      cell.box = ellipse_box(cell.cx, cell.cy, a, a * cell.look.aspect, cell.angle,
                             spec.image_width, spec.image_height);
      bool clear = true;
      for (const auto& other : cells)
        if (iou(cell.box, other.box) > 0.05 ||
            std::hypot(cell.cx - other.cx, cell.cy - other.cy) <
                0.9 * (a + other.look.semi_major)) {
          clear = false;
          break;
        }
      if (clear) break;
    }
    cells.push_back(cell);
  }
  for (const auto& cell : cells) {
    render_cell(scene.image, cell, rng);
    scene.gt.push_back({cell.box, cell.class_id});
  }
  for (auto& p : scene.image.pixels)
    p = static_cast<float>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return scene;
}

std::uint64_t scene_seed(std::uint64_t base_seed, int split, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed & 0xffffffffu),
                    static_cast<std::uint32_t>(base_seed >> 32), static_cast<std::uint32_t>(split),
                    static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t(out[0]) << 32) | out[1];
}

std::string generate_dataset(const DatasetSpec& spec, const std::string& output_dir) {
  spec.validate();
  const fs::path root(output_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "annotations", ec);
  if (ec) throw IoError("cannot create dataset directories under " + output_dir + ": " + ec.message());

  json manifest;
  manifest["format_version"] = 1;
  manifest["num_classes"] = spec.num_classes;
  manifest["spec"] = spec.to_config_text();
  for (int split = 0; split < 3; ++split) {
    const int n = spec.scenes_per_split[split];
    std::vector<DetectionScene> scenes(n);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%05d", kSplitNames[split], i);
      std::mt19937_64 rng(scene_seed(spec.seed, split, i));
      scenes[i] = generate_scene(spec, rng, name);
      try {
        write_png((root / "images" / (std::string(name) + ".png")).string(), scenes[i].image);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw IoError(e);

    json doc;
    doc["images"] = json::array();
    doc["annotations"] = json::array();
    doc["categories"] = json::array();
    for (int c = 0; c < spec.num_classes; ++c)
      doc["categories"].push_back({{"id", c + 1}, {"name", "class_" + std::to_string(c)}});
    int ann_id = 0;
    for (int i = 0; i < n; ++i) {
      doc["images"].push_back({{"id", i},
                               {"file_name", "../images/" + scenes[i].scene_id + ".png"},
                               {"width", spec.image_width},
                               {"height", spec.image_height}});
      for (const auto& g : scenes[i].gt) {
        const double w = g.box.width(), h = g.box.height();
        doc["annotations"].push_back({{"id", ann_id++},
                                      {"image_id", i},
                                      {"bbox", {g.box.x0, g.box.y0, w, h}},
                                      {"category_id", g.class_id + 1},
                                      {"area", w * h},
                                      {"iscrowd", 0}});
      }
    }
    const fs::path ann = root / "annotations" / (std::string(kSplitNames[split]) + ".json");
    std::ofstream out(ann);
    if (!out) throw IoError("cannot write " + ann.string());
    out << doc.dump(1) << "\n";
    manifest["splits"][kSplitNames[split]] =
        "annotations/" + std::string(kSplitNames[split]) + ".json";
  }
  const fs::path mpath = root / "manifest.json";
  std::ofstream out(mpath);
  if (!out) throw IoError("cannot write " + mpath.string());
  out << manifest.dump(2) << "\n";
  return mpath.string();
}

Image SceneRef::load_image() const {
  Image img = read_png(image_path);
  if (img.width != width || img.height != height)
    throw ValidationError(image_path + ": image is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + ", annotation says " +
                          std::to_string(width) + "x" + std::to_string(height));
  return img;
}

namespace {

std::string line_context(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

AnnotatedSplit parse_annotations(const std::string& text, const std::string& base_dir,
                                 const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": malformed JSON at " + line_context(text, e.byte) + ": " + e.what());
  }
  AnnotatedSplit split;
  try {
    std::map<int, std::string> cats;
    for (const auto& c : doc.value("categories", json::array()))
      cats[c.at("id").get<int>()] = c.value("name", "class_" + std::to_string(c.at("id").get<int>()));
    std::map<int, int> cat_index;
    for (const auto& [id, name] : cats) {
      cat_index[id] = static_cast<int>(split.category_ids.size());
      split.category_ids.push_back(id);
      split.category_names.push_back(name);
    }
    std::map<int, std::size_t> image_index;
    for (const auto& im : doc.value("images", json::array())) {
      SceneRef s;
      const int id = im.at("id").get<int>();
      const std::string file = im.contains("file_name") ? im.at("file_name").get<std::string>()
                                                        : im.at("file").get<std::string>();
      s.scene_id = fs::path(file).stem().string();
      s.image_path = (fs::path(base_dir) / file).lexically_normal().string();
      s.width = im.at("width").get<int>();
      s.height = im.at("height").get<int>();
      if (image_index.count(id)) throw ValidationError(source + ": duplicate image id " + std::to_string(id));
      image_index[id] = split.scenes.size();
      split.scenes.push_back(std::move(s));
    }
    for (const auto& a : doc.value("annotations", json::array())) {
      const auto id = a.at("id").get<long long>();
      const std::string who = source + ": annotation id " + std::to_string(id);
      const auto& bbox = a.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4) throw ValidationError(who + ": bbox must have 4 numbers");
      const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
      const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
      const Box b{x, y, x + w, y + h};
      if (!b.valid()) throw ValidationError(who + ": degenerate box (x1 <= x0 or y1 <= y0)");
      const auto im = image_index.find(a.at("image_id").get<int>());
      if (im == image_index.end()) throw ValidationError(who + ": unknown image_id");
      SceneRef& scene = split.scenes[im->second];
      if (b.x0 < 0 || b.y0 < 0 || b.x1 > scene.width || b.y1 > scene.height)
        throw ValidationError(who + ": box outside image bounds");
      const auto cat = cat_index.find(a.at("category_id").get<int>());
      if (cat == cat_index.end()) throw ValidationError(who + ": unknown category_id");
      scene.gt.push_back({b, cat->second});
    }
  } catch (const json::exception& e) {
    throw ValidationError(source + ": bad annotation structure: " + e.what());
  }
  return split;
}

AnnotatedSplit load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str(), fs::path(path).parent_path().string(), path);
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": malformed JSON at " + line_context(ss.str(), e.byte));
  }
  Manifest m;
  m.path = path;
  const fs::path base = fs::path(path).parent_path();
  try {
    m.num_classes = doc.value("num_classes", 0);
    for (const auto& [split, rel] : doc.at("splits").items())
      m.splits[split] = (base / rel.get<std::string>()).lexically_normal().string();
  } catch (const json::exception& e) {
    throw ValidationError(path + ": bad manifest: " + e.what());
  }
  return m;
}

AnnotatedSplit Manifest::load_split(const std::string& split) const {
  const auto it = splits.find(split);
  if (it == splits.end()) throw ConfigError("manifest " + path + " has no split '" + split + "'");
  AnnotatedSplit s = load_annotations(it->second);
  if (num_classes > 0 && s.num_classes() != num_classes)
    throw ValidationError(it->second + ": category count differs from manifest");
  return s;
}

}  // namespace hhic
