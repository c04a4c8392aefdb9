#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace hhic {

// Axis-aligned box in pixel corners. A Box obtained through make_box() or
// any geometry operation always satisfies x0 < x1, y0 < y1 with finite
// coordinates.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
  double area() const noexcept { return width() * height(); }
  double center_x() const noexcept { return 0.5 * (x0 + x1); }
  double center_y() const noexcept { return 0.5 * (y0 + y1); }
  bool valid() const noexcept;

  friend bool operator==(const Box&, const Box&) = default;
};

// Validating constructor; throws InvalidBoxError.
Box make_box(double x0, double y0, double x1, double y1);

struct LabeledBox {
  Box box;
  int class_id = 0;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

Box xywh_to_xyxy(double x0, double y0, double w, double h);

// +1 / -1 per corner coordinate, in the order x0, y0, x1, y1.
using CornerSigns = std::array<int, 4>;

// Ground-truth jitter: every corner moves by +-w/k0 (x) or +-h/k0 (y)
// relative to the box's own xywh form. Throws DegenerateAugmentationError if
// the signs make the corners cross.
Box augment_box_with_signs(const Box& box, double k0, const CornerSigns& signs);

CornerSigns draw_corner_signs(std::mt19937_64& rng);

// Random-sign version. Redraws up to max_retries when a draw produces a
// degenerate box (k0 <= 2) or one that collapses under clipping.
Box augment_box(const Box& box, double k0, std::mt19937_64& rng,
                std::optional<ImageSize> bounds = std::nullopt,
                int max_retries = 16);

double iou(const Box& a, const Box& b);

// Rows index a, columns index b.
std::vector<double> iou_matrix(const std::vector<Box>& a, const std::vector<Box>& b);

Box clip_to_image(const Box& box, double width, double height);

// Greedy non-maximum suppression. Returns kept indices in descending score
// order; ties keep the lower index first.
std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold);

}  // namespace hhic
