#include "hhic/kernels.hpp"

#include <Eigen/Dense>
#include <algorithm>

#include "hhic/aligned.hpp"
#include "hhic/error.hpp"
#include "roi_align_taps.hpp"

namespace hhic::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

void check(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

// col is (Cin*K*K) x (Hout*Wout).
template <typename T>
void im2col(const ConvGeometry& g, const T* input, T* col) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  const int rows = g.in_channels * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    const T* plane = input + std::size_t(c) * g.in_height * g.in_width;
    T* dst = col + std::size_t(r) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int iy = y * g.stride - g.pad + ky;
      if (iy < 0 || iy >= g.in_height) {
        std::fill(dst + y * ow, dst + (y + 1) * ow, T(0));
        continue;
      }
      for (int x = 0; x < ow; ++x) {
        const int ix = x * g.stride - g.pad + kx;
        dst[y * ow + x] = (ix >= 0 && ix < g.in_width) ? plane[iy * g.in_width + ix] : T(0);
      }
    }
  }
}

// Each input channel is owned by one thread.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* grad_input) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.in_channels; ++c) {
    T* plane = grad_input + std::size_t(c) * g.in_height * g.in_width;
    std::fill(plane, plane + std::size_t(g.in_height) * g.in_width, T(0));
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + std::size_t((c * k + ky) * k + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_width) plane[iy * g.in_width + ix] += src[y * ow + x];
          }
        }
      }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output) {
  check(input.size() == g.input_size(), "conv2d: input size");
  check(weight.size() == g.weight_size(), "conv2d: weight size");
  check(output.size() == g.output_size(), "conv2d: output size");
  const int kdim = g.in_channels * g.kernel * g.kernel;
  const int n = g.out_height() * g.out_width();
  Map<T> out(output.data(), g.out_channels, n);
  MapC<T> w(weight.data(), g.out_channels, kdim);
  if (g.kernel == 1 && g.stride == 1 && g.pad == 0) {
    out.noalias() = w * MapC<T>(input.data(), kdim, n);
  } else {
    AlignedVector<T> col(std::size_t(kdim) * n);
    im2col(g, input.data(), col.data());
    out.noalias() = w * MapC<T>(col.data(), kdim, n);
  }
  if (!bias.empty()) {
    check(bias.size() == std::size_t(g.out_channels), "conv2d: bias size");
    for (int c = 0; c < g.out_channels; ++c) out.row(c).array() += bias[c];
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  check(grad_output.size() == g.output_size(), "conv2d_backward: grad_output size");
  const int kdim = g.in_channels * g.kernel * g.kernel;
  const int n = g.out_height() * g.out_width();
  MapC<T> dy(grad_output.data(), g.out_channels, n);
  const bool pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
  AlignedVector<T> col;
  const T* colp = input.data();
  if (!pointwise) {
    col.resize(std::size_t(kdim) * n);
    im2col(g, input.data(), col.data());
    colp = col.data();
  }
  if (!grad_weight.empty()) {
    Map<T> dw(grad_weight.data(), g.out_channels, kdim);
    dw.noalias() += dy * MapC<T>(colp, kdim, n).transpose();
  }
  if (!grad_bias.empty()) {
    for (int c = 0; c < g.out_channels; ++c) grad_bias[c] += dy.row(c).sum();
  }
  if (!grad_input.empty()) {
    check(grad_input.size() == g.input_size(), "conv2d_backward: grad_input size");
    MapC<T> w(weight.data(), g.out_channels, kdim);
    if (pointwise) {
      Map<T>(grad_input.data(), kdim, n).noalias() = w.transpose() * dy;
    } else {
      AlignedVector<T> dcol(std::size_t(kdim) * n);
      Map<T>(dcol.data(), kdim, n).noalias() = w.transpose() * dy;
      col2im(g, dcol.data(), grad_input.data());
    }
  }
}

template <typename T>
void linear_forward(int rows, int in_features, int out_features,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  check(input.size() == std::size_t(rows) * in_features, "linear: input size");
  check(weight.size() == std::size_t(out_features) * in_features, "linear: weight size");
  check(output.size() == std::size_t(rows) * out_features, "linear: output size");
  if (rows == 0) return;
  Map<T> y(output.data(), rows, out_features);
  y.noalias() = MapC<T>(input.data(), rows, in_features) *
                MapC<T>(weight.data(), out_features, in_features).transpose();
  if (!bias.empty()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out_features);
    y.rowwise() += b;
  }
}

template <typename T>
void linear_backward(int rows, int in_features, int out_features,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
  if (rows == 0) {
    return;
  }
  MapC<T> dy(grad_output.data(), rows, out_features);
  if (!grad_weight.empty()) {
    Map<T>(grad_weight.data(), out_features, in_features).noalias() +=
        dy.transpose() * MapC<T>(input.data(), rows, in_features);
  }
  if (!grad_bias.empty()) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad_bias.data(), out_features) +=
        dy.colwise().sum();
  }
  if (!grad_input.empty()) {
    Map<T>(grad_input.data(), rows, in_features).noalias() =
        dy * MapC<T>(weight.data(), out_features, in_features);
  }
}

template <typename T>
void roi_align_forward(const RoiAlignGeometry& g, std::span<const T> features,
                       const std::vector<Box>& boxes, std::span<T> output) {
  const std::size_t plane = std::size_t(g.height) * g.width;
  const std::size_t per_roi = g.output_size_per_roi();
  check(features.size() == plane * g.channels, "roi_align: feature size");
  check(output.size() == per_roi * boxes.size(), "roi_align: output size");
  const int bins = g.pooled * g.pooled;
  const int samples = g.sampling_ratio * g.sampling_ratio;
  const T inv_count = T(1) / T(samples);
  const int nroi = static_cast<int>(boxes.size());
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < nroi; ++r) {
    const auto taps = detail::roi_taps(g, boxes[r]);
    for (int c = 0; c < g.channels; ++c) {
      const T* f = features.data() + c * plane;
      T* out = output.data() + r * per_roi + std::size_t(c) * bins;
      for (int b = 0; b < bins; ++b) {
        T acc = 0;
        for (int s = 0; s < samples; ++s) {
          const auto& t = taps[b * samples + s];
          acc += T(t.weight[0]) * f[t.index[0]] + T(t.weight[1]) * f[t.index[1]] +
                 T(t.weight[2]) * f[t.index[2]] + T(t.weight[3]) * f[t.index[3]];
        }
        out[b] = acc * inv_count;
      }
    }
  }
}

template <typename T>
void roi_align_backward(const RoiAlignGeometry& g, const std::vector<Box>& boxes,
                        std::span<const T> grad_output, std::span<T> grad_features) {
  const std::size_t plane = std::size_t(g.height) * g.width;
  const std::size_t per_roi = g.output_size_per_roi();
  check(grad_features.size() == plane * g.channels, "roi_align_backward: feature size");
  check(grad_output.size() == per_roi * boxes.size(), "roi_align_backward: grad size");
  const int bins = g.pooled * g.pooled;
  const int samples = g.sampling_ratio * g.sampling_ratio;
  const T inv_count = T(1) / T(samples);
  std::vector<std::vector<detail::BilinearTap>> taps(boxes.size());
  for (std::size_t r = 0; r < boxes.size(); ++r) taps[r] = detail::roi_taps(g, boxes[r]);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.channels; ++c) {
    T* df = grad_features.data() + c * plane;
    for (std::size_t r = 0; r < boxes.size(); ++r) {
      const T* go = grad_output.data() + r * per_roi + std::size_t(c) * bins;
      for (int b = 0; b < bins; ++b) {
        const T gb = go[b] * inv_count;
        for (int s = 0; s < samples; ++s) {
          const auto& t = taps[r][b * samples + s];
          for (int q = 0; q < 4; ++q) df[t.index[q]] += T(t.weight[q]) * gb;
        }
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> input, std::span<T> output) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(input.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) output[i] = input[i] > T(0) ? input[i] : T(0);
}

template <typename T>
void relu_backward(std::span<const T> output, std::span<const T> grad_output,
                   std::span<T> grad_input) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(output.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    grad_input[i] = output[i] > T(0) ? grad_output[i] : T(0);
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
                                      std::span<const T>, std::span<T>);                 \
  template void relu_forward<T>(std::span<const T>, std::span<T>);                       \
  template void relu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);

HHIC_INSTANTIATE(float)
HHIC_INSTANTIATE(double)
#undef HHIC_INSTANTIATE

}  // namespace hhic::kernels
