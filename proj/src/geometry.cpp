#include "hhic/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hhic/error.hpp"

namespace hhic {

namespace {

std::string describe(double x0, double y0, double x1, double y1) {
  std::ostringstream os;
  os << "(" << x0 << ", " << y0 << ", " << x1 << ", " << y1 << ")";
  return os.str();
}

}  // namespace

bool Box::valid() const noexcept {
  return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) &&
         std::isfinite(y1) && x0 < x1 && y0 < y1;
}

Box make_box(double x0, double y0, double x1, double y1) {
  Box b{x0, y0, x1, y1};
  if (!b.valid()) {
    throw InvalidBoxError("invalid box " + describe(x0, y0, x1, y1));
  }
  return b;
}

Box xywh_to_xyxy(double x0, double y0, double w, double h) {
  if (!(w > 0) || !(h > 0)) {
    throw InvalidBoxError("non-positive box extent w=" + std::to_string(w) +
                          " h=" + std::to_string(h));
  }
  return make_box(x0, y0, x0 + w, y0 + h);
}

Box augment_box_with_signs(const Box& box, double k0, const CornerSigns& signs) {
  if (!box.valid()) throw InvalidBoxError("augment_box: invalid input box");
  if (!(k0 > 0)) throw ConfigError("augment_box: k0 must be positive");
  const double w = box.width();
  const double h = box.height();
  const double dx = w / k0;
  const double dy = h / k0;
  const double x0 = box.x0 + signs[0] * dx;
  const double y0 = box.y0 + signs[1] * dy;
  const double x1 = (box.x0 + w) + signs[2] * dx;
  const double y1 = (box.y0 + h) + signs[3] * dy;
  Box out{x0, y0, x1, y1};
  if (!out.valid()) {
    throw DegenerateAugmentationError("augmentation crossed corners: " +
                                      describe(x0, y0, x1, y1));
  }
  return out;
}

CornerSigns draw_corner_signs(std::mt19937_64& rng) {
  const std::uint64_t bits = rng();
  CornerSigns s{};
  for (int i = 0; i < 4; ++i) s[i] = ((bits >> (60 + i)) & 1U) ? 1 : -1;
  return s;
}

Box augment_box(const Box& box, double k0, std::mt19937_64& rng,
                std::optional<ImageSize> bounds, int max_retries) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const CornerSigns signs = draw_corner_signs(rng);
    try {
      Box out = augment_box_with_signs(box, k0, signs);
      if (bounds) out = clip_to_image(out, bounds->width, bounds->height);
      return out;
    } catch (const DegenerateAugmentationError&) {
    } catch (const DegenerateBoxError&) {
    }
  }
  throw DegenerateAugmentationError("augment_box: no valid sign draw after " +
                                    std::to_string(max_retries + 1) + " tries");
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<double> iou_matrix(const std::vector<Box>& a, const std::vector<Box>& b) {
  std::vector<double> m(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m[i * b.size() + j] = iou(a[i], b[j]);
  return m;
}

Box clip_to_image(const Box& box, double width, double height) {
  if (!(width > 0) || !(height > 0)) throw ConfigError("clip_to_image: bad image size");
  Box out{std::clamp(box.x0, 0.0, width), std::clamp(box.y0, 0.0, height),
          std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height)};
  if (!out.valid()) {
    throw DegenerateBoxError("box collapses when clipped: " +
                             describe(box.x0, box.y0, box.x1, box.y1));
  }
  return out;
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && iou(boxes[i], boxes[j]) > iou_threshold) removed[j] = 1;
    }
  }
  return keep;
}

}  // namespace hhic
