#pragma once

// Bilinear sampling taps shared by the RoIAlign kernels. Coordinates follow
// the half-pixel ("aligned") convention: a feature cell at index i covers
// image pixels [i*stride, (i+1)*stride) and its value sits at its centre.

#include <vector>

#include "hhic/geometry.hpp"
#include "hhic/kernels.hpp"

namespace hhic::kernels::detail {

struct BilinearTap {
  int index[4] = {0, 0, 0, 0};  // y*W + x offsets into one channel plane
  double weight[4] = {0, 0, 0, 0};
};

inline BilinearTap bilinear_tap(int height, int width, double y, double x) {
  BilinearTap t;
  if (y < -1.0 || y > height || x < -1.0 || x > width) return t;  // all-zero
  if (y <= 0) y = 0;
  if (x <= 0) x = 0;
  int y_low = static_cast<int>(y);
  int x_low = static_cast<int>(x);
  int y_high, x_high;
  if (y_low >= height - 1) {
    y_high = y_low = height - 1;
    y = y_low;
  } else {
    y_high = y_low + 1;
  }
  if (x_low >= width - 1) {
    x_high = x_low = width - 1;
    x = x_low;
  } else {
    x_high = x_low + 1;
  }
  const double ly = y - y_low, lx = x - x_low;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  t.index[0] = y_low * width + x_low;
  t.index[1] = y_low * width + x_high;
  t.index[2] = y_high * width + x_low;
  t.index[3] = y_high * width + x_high;
  t.weight[0] = hy * hx;
  t.weight[1] = hy * lx;
  t.weight[2] = ly * hx;
  t.weight[3] = ly * lx;
  return t;
}

// Sample position of sub-sample (iy, ix) in bin (ph, pw), in feature cells.
struct SamplePoint {
  double y, x;
};

inline SamplePoint sample_point(const RoiAlignGeometry& g, const Box& box, int ph,
                                int pw, int iy, int ix) {
  const double start_x = box.x0 * g.spatial_scale - 0.5;
  const double start_y = box.y0 * g.spatial_scale - 0.5;
  const double bin_w = (box.x1 - box.x0) * g.spatial_scale / g.pooled;
  const double bin_h = (box.y1 - box.y0) * g.spatial_scale / g.pooled;
  const int s = g.sampling_ratio;
  return {start_y + ph * bin_h + (iy + 0.5) * bin_h / s,
          start_x + pw * bin_w + (ix + 0.5) * bin_w / s};
}

// All taps for one RoI, ordered bin-major then sub-sample.
inline std::vector<BilinearTap> roi_taps(const RoiAlignGeometry& g, const Box& box) {
  const int s = g.sampling_ratio;
  std::vector<BilinearTap> taps;
  taps.reserve(std::size_t(g.pooled) * g.pooled * s * s);
  for (int ph = 0; ph < g.pooled; ++ph)
    for (int pw = 0; pw < g.pooled; ++pw)
      for (int iy = 0; iy < s; ++iy)
        for (int ix = 0; ix < s; ++ix) {
          const SamplePoint p = sample_point(g, box, ph, pw, iy, ix);
          taps.push_back(bilinear_tap(g.height, g.width, p.y, p.x));
        }
  return taps;
}

}  // namespace hhic::kernels::detail
