#pragma once

// COCO-style detection metrics: 101-point interpolated AP over IoU
// thresholds 0.50:0.05:0.95, AP50, AP75, AR at <= 100 detections per image
// and per-class AP50.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hhic/detector.hpp"
#include "hhic/geometry.hpp"

namespace hhic {

inline constexpr int kNumIouThresholds = 10;
// 0.50, 0.55, ..., 0.95 (computed as (50 + 5i) / 100).
double iou_threshold(int i);

inline constexpr int kMaxDetectionsPerImage = 100;

// Greedy matching within one image. Detections are visited by descending
// score (ties by input index); each takes the unmatched same-class GT with
// the highest IoU >= iou_thresh (ties by GT index). Returns one flag per
// detection in input order.
std::vector<bool> match_detections(const std::vector<Detection>& detections,
                                   const std::vector<LabeledBox>& gts, double iou_thresh);

// 101-point max-interpolated AP. flags and scores are per detection in any
// order; they are ranked by descending score with ties kept in input order.
// Returns nullopt when num_gt == 0 and there are no detections.
std::optional<double> average_precision(const std::vector<bool>& flags,
                                        const std::vector<double>& scores, int num_gt);

struct ClassMetrics {
  int num_gt = 0;
  int num_detections = 0;
  std::array<double, kNumIouThresholds> ap{};      // valid when has_ap
  std::array<double, kNumIouThresholds> recall{};  // valid when num_gt > 0
  bool has_ap = false;
};

struct EvalReport {
  double ap = 0;
  double ap50 = 0;
  double ap75 = 0;
  double ar = 0;
  std::map<int, double> per_class_ap50;  // only classes with GT
  std::vector<ClassMetrics> per_class;   // index = class id
  int num_images = 0;

  std::string to_json() const;
  // One row per class with GT plus an "all" row.
  std::string to_csv() const;
  void write_json(const std::string& path) const;
  void write_csv(const std::string& path) const;
};

// detections[i] and gts[i] belong to image i. Classes outside
// [0, num_classes) raise ValidationError. Per image only the top 100
// detections by score take part.
EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<LabeledBox>>& gts, int num_classes);

}  // namespace hhic
