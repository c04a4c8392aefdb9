#pragma once

// Direct bilinear sample of a single-channel H x W map. Coordinates are in
// cell units with cell i's value located at i. Points more than one cell
// outside the map read 0; points inside that margin clamp to the border.

#include <cmath>
#include <algorithm>
#include <vector>

namespace oracle {

inline double bilinear(const std::vector<double>& map, int h, int w, double y, double x) {
  if (y < -1.0 || y > h || x < -1.0 || x > w) return 0.0;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  int y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0;
  return (1 - ly) * (1 - lx) * map[y0 * w + x0] + (1 - ly) * lx * map[y0 * w + x1] +
         ly * (1 - lx) * map[y1 * w + x0] + ly * lx * map[y1 * w + x1];
}

// Average-of-samples RoIAlign for one channel, written from the definition:
// box in image pixels, scale = 1 / stride, half-pixel offset.
inline std::vector<double> roi_align_channel(const std::vector<double>& map, int h, int w,
                                             double x0, double y0, double x1, double y1,
                                             double scale, int pooled, int ratio) {
  std::vector<double> out(std::size_t(pooled) * pooled, 0.0);
  const double bw = (x1 - x0) * scale / pooled, bh = (y1 - y0) * scale / pooled;
  for (int ph = 0; ph < pooled; ++ph)
    for (int pw = 0; pw < pooled; ++pw) {
      double acc = 0;
      for (int iy = 0; iy < ratio; ++iy)
        for (int ix = 0; ix < ratio; ++ix) {
          const double y = y0 * scale - 0.5 + bh * (ph + (iy + 0.5) / ratio);
          const double x = x0 * scale - 0.5 + bw * (pw + (ix + 0.5) / ratio);
          acc += bilinear(map, h, w, y, x);
        }
      out[std::size_t(ph) * pooled + pw] = acc / (ratio * ratio);
    }
  return out;
}

}  // namespace oracle
