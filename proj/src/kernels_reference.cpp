#include <algorithm>
#include <cmath>

#include "hhic/error.hpp"
#include "hhic/kernels.hpp"

namespace hhic::kernels::reference {

namespace {


template <typename T>
T sample(const T* plane, int height, int width, double y, double x) {
  if (y < -1.0 || y > height || x < -1.0 || x > width) return T(0);
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1 = y0 + 1, x1 = x0 + 1;
  if (y0 >= height - 1) {
    y0 = y1 = height - 1;
    y = y0;
  }
  if (x0 >= width - 1) {
    x0 = x1 = width - 1;
    x = x0;
  }
  const double ly = y - y0, lx = x - x0;
  return T((1 - ly) * (1 - lx)) * plane[y0 * width + x0] +
         T((1 - ly) * lx) * plane[y0 * width + x1] +
         T(ly * (1 - lx)) * plane[y1 * width + x0] + T(ly * lx) * plane[y1 * width + x1];
}

template <typename T>
void scatter(T* plane, int height, int width, double y, double x, T g) {
  if (y < -1.0 || y > height || x < -1.0 || x > width) return;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1 = y0 + 1, x1 = x0 + 1;
  if (y0 >= height - 1) {
    y0 = y1 = height - 1;
    y = y0;
  }
  if (x0 >= width - 1) {
    x0 = x1 = width - 1;
    x = x0;
  }
  const double ly = y - y0, lx = x - x0;
  plane[y0 * width + x0] += T((1 - ly) * (1 - lx)) * g;
  plane[y0 * width + x1] += T((1 - ly) * lx) * g;
  plane[y1 * width + x0] += T(ly * (1 - lx)) * g;
  plane[y1 * width + x1] += T(ly * lx) * g;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output) {
  if (input.size() != g.input_size() || output.size() != g.output_size())
    throw ShapeError("reference conv2d: size mismatch");
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (int o = 0; o < g.out_channels; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        T acc = bias.empty() ? T(0) : bias[o];
        for (int c = 0; c < g.in_channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * g.stride - g.pad + ky;
              const int ix = x * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
              acc += weight[((o * g.in_channels + c) * k + ky) * k + kx] *
                     input[(c * g.in_height + iy) * g.in_width + ix];
            }
        output[(o * oh + y) * ow + x] = acc;
      }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  if (!grad_input.empty()) std::fill(grad_input.begin(), grad_input.end(), T(0));
  for (int o = 0; o < g.out_channels; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const T go = grad_output[(o * oh + y) * ow + x];
        if (!grad_bias.empty()) grad_bias[o] += go;
        for (int c = 0; c < g.in_channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * g.stride - g.pad + ky;
              const int ix = x * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
              const std::size_t wi = ((o * g.in_channels + c) * k + ky) * k + kx;
              const std::size_t ii = (c * g.in_height + iy) * g.in_width + ix;
              if (!grad_weight.empty()) grad_weight[wi] += go * input[ii];
              if (!grad_input.empty()) grad_input[ii] += go * weight[wi];
            }
      }
}

template <typename T>
void linear_forward(int rows, int in_features, int out_features,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  for (int r = 0; r < rows; ++r)
    for (int o = 0; o < out_features; ++o) {
      T acc = bias.empty() ? T(0) : bias[o];
      for (int i = 0; i < in_features; ++i)
        acc += input[r * in_features + i] * weight[o * in_features + i];
      output[r * out_features + o] = acc;
    }
}

template <typename T>
void linear_backward(int rows, int in_features, int out_features,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
  if (!grad_input.empty()) std::fill(grad_input.begin(), grad_input.end(), T(0));
  for (int r = 0; r < rows; ++r)
    for (int o = 0; o < out_features; ++o) {
      const T go = grad_output[r * out_features + o];
      if (!grad_bias.empty()) grad_bias[o] += go;
      for (int i = 0; i < in_features; ++i) {
        if (!grad_weight.empty()) grad_weight[o * in_features + i] += go * input[r * in_features + i];
        if (!grad_input.empty()) grad_input[r * in_features + i] += go * weight[o * in_features + i];
      }
    }
}

template <typename T>
void roi_align_forward(const RoiAlignGeometry& g, std::span<const T> features,
                       const std::vector<Box>& boxes, std::span<T> output) {
  const int p = g.pooled, s = g.sampling_ratio;
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const Box& b = boxes[r];
    const double sx = b.x0 * g.spatial_scale - 0.5, sy = b.y0 * g.spatial_scale - 0.5;
    const double bw = (b.x1 - b.x0) * g.spatial_scale / p;
    const double bh = (b.y1 - b.y0) * g.spatial_scale / p;
    for (int c = 0; c < g.channels; ++c) {
      const T* plane = features.data() + std::size_t(c) * g.height * g.width;
      for (int ph = 0; ph < p; ++ph)
        for (int pw = 0; pw < p; ++pw) {
          T acc = 0;
          for (int iy = 0; iy < s; ++iy)
            for (int ix = 0; ix < s; ++ix)
              acc += sample(plane, g.height, g.width, sy + ph * bh + (iy + 0.5) * bh / s,
                            sx + pw * bw + (ix + 0.5) * bw / s);
          output[((r * g.channels + c) * p + ph) * p + pw] = acc / T(s * s);
        }
    }
  }
}

template <typename T>
void roi_align_backward(const RoiAlignGeometry& g, const std::vector<Box>& boxes,
                        std::span<const T> grad_output, std::span<T> grad_features) {
  const int p = g.pooled, s = g.sampling_ratio;
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const Box& b = boxes[r];
    const double sx = b.x0 * g.spatial_scale - 0.5, sy = b.y0 * g.spatial_scale - 0.5;
    const double bw = (b.x1 - b.x0) * g.spatial_scale / p;
    const double bh = (b.y1 - b.y0) * g.spatial_scale / p;
    for (int c = 0; c < g.channels; ++c) {
      T* plane = grad_features.data() + std::size_t(c) * g.height * g.width;
      for (int ph = 0; ph < p; ++ph)
        for (int pw = 0; pw < p; ++pw) {
          const T go = grad_output[((r * g.channels + c) * p + ph) * p + pw] / T(s * s);
          for (int iy = 0; iy < s; ++iy)
            for (int ix = 0; ix < s; ++ix)
              scatter(plane, g.height, g.width, sy + ph * bh + (iy + 0.5) * bh / s,
                      sx + pw * bw + (ix + 0.5) * bw / s, go);
        }
    }
  }
}

#define HHIC_INSTANTIATE(T)                                                              \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>,               \
                                  std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>,              \
                                   std::span<const T>, std::span<const T>, std::span<T>, \
                                   std::span<T>, std::span<T>);                          \
  template void linear_forward<T>(int, int, int, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                     \
  template void linear_backward<T>(int, int, int, std::span<const T>,                    \
                                   std::span<const T>, std::span<const T>, std::span<T>, \
                                   std::span<T>, std::span<T>);                          \
  template void roi_align_forward<T>(const RoiAlignGeometry&, std::span<const T>,        \
                                     const std::vector<Box>&, std::span<T>);             \
  template void roi_align_backward<T>(const RoiAlignGeometry&, const std::vector<Box>&,  \
                                      std::span<const T>, std::span<T>);

HHIC_INSTANTIATE(float)
HHIC_INSTANTIATE(double)
#undef HHIC_INSTANTIATE

}  // namespace hhic::kernels::reference
