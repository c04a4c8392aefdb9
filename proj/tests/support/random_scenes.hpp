#pragma once

// Random tiny detection scenes in both library and oracle form. Coordinates
// sit on a coarse grid and scores on a few levels, so IoU and score ties
// occur often.

#include <random>
#include <vector>

#include "../oracles/brute_ap.hpp"
#include "hhic/detector.hpp"

namespace support {

struct TinyScenes {
  std::vector<std::vector<hhic::Detection>> dets;
  std::vector<std::vector<hhic::LabeledBox>> gts;
  std::vector<std::vector<oracle::ODet>> odets;
  std::vector<std::vector<oracle::OGt>> ogts;
  int num_classes = 1;
};

inline TinyScenes random_tiny_scenes(std::mt19937_64& rng, int max_images = 3, int max_gt = 5,
                                     int max_dets = 8, int max_classes = 3) {
  TinyScenes s;
  s.num_classes = std::uniform_int_distribution<int>(1, max_classes)(rng);
  const int images = std::uniform_int_distribution<int>(1, max_images)(rng);
  std::uniform_int_distribution<int> cls(0, s.num_classes - 1), coord(0, 12), size(2, 8),
      ngt(0, max_gt), ndet(0, max_dets), level(1, 6);
  auto box = [&] {
    const double x = coord(rng), y = coord(rng);
    return hhic::Box{x, y, x + size(rng), y + size(rng)};
  };
  for (int im = 0; im < images; ++im) {
    s.gts.emplace_back();
    s.ogts.emplace_back();
    s.dets.emplace_back();
    s.odets.emplace_back();
    const int g = ngt(rng), d = ndet(rng);
    for (int i = 0; i < g; ++i) {
      const hhic::Box b = box();
      const int c = cls(rng);
      s.gts.back().push_back({b, c});
      s.ogts.back().push_back({{b.x0, b.y0, b.x1, b.y1}, c});
    }
    for (int i = 0; i < d; ++i) {
      hhic::Box b = box();
      // Half the detections perturb a GT so that matches are common.
      if (g > 0 && rng() % 2 == 0) {
        const auto& t = s.gts.back()[rng() % g].box;
        const double dx = static_cast<double>(rng() % 3) - 1;
        b = {t.x0 + dx, t.y0, t.x1 + dx, t.y1 + static_cast<double>(rng() % 2)};
      }
      const int c = cls(rng);
      const double score = level(rng) / 6.0;
      s.dets.back().push_back({{b, c}, score});
      s.odets.back().push_back({{b.x0, b.y0, b.x1, b.y1}, c, score});
    }
  }
  return s;
}

}  // namespace support
