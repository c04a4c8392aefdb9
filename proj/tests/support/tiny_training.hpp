#pragma once

// In-memory synthetic splits and a small detector configuration so that
// trainer tests run in seconds.

#include <random>

#include "hhic/data_synth.hpp"
#include "hhic/harness.hpp"

namespace support {

inline hhic::LoadedSplit synthetic_split(int scenes, std::uint64_t seed, int size = 64,
                                         int split = 0) {
  hhic::DatasetSpec spec;
  spec.image_width = spec.image_height = size;
  spec.max_cells = 4;
  spec.seed = seed;
  hhic::LoadedSplit out;
  out.num_classes = spec.num_classes;
  for (int i = 0; i < scenes; ++i) {
    std::mt19937_64 rng(hhic::scene_seed(seed, split, i));
    auto scene = hhic::generate_scene(spec, rng, "s" + std::to_string(i));
    out.images.push_back(std::move(scene.image));
    out.gts.push_back(std::move(scene.gt));
    out.ids.push_back(scene.scene_id);
  }
  return out;
}

inline hhic::TrainConfig tiny_train_config() {
  hhic::TrainConfig c;
  c.epochs = 2;
  c.warmup_epochs = 1;
  c.lr_decay_epochs = {};
  c.k = 64;
  c.Q = 16;
  c.tau_c = {0.05};
  c.backbone_channels = {4, 8, 8, 8};
  c.roi_channels = 8;
  c.rpn_channels = 16;
  c.hidden_dim = 32;
  c.eval_each_epoch = false;
  return c;
}

}  // namespace support
