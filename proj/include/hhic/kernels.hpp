#pragma once

// Dense kernels used by the detector. The functions in hhic::kernels are the
// OpenMP/Eigen implementations used for training; hhic::kernels::reference
// holds plain serial loops kept as the test baseline and for benchmarking.
//
// Layout conventions: feature maps are C x H x W, conv weights are
// Cout x Cin x K x K, linear weights are Out x In, row batches are N x In.
// Backward routines accumulate into parameter gradients and overwrite input
// gradients; an empty input-gradient span skips that computation. The
// RoIAlign backward is the exception: it accumulates into grad_features so
// several box sets can share one feature gradient.

#include <span>
#include <vector>

#include "hhic/geometry.hpp"

namespace hhic::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const noexcept { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const noexcept { return (in_width + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const noexcept {
    return std::size_t(in_channels) * in_height * in_width;
  }
  std::size_t output_size() const noexcept {
    return std::size_t(out_channels) * out_height() * out_width();
  }
  std::size_t weight_size() const noexcept {
    return std::size_t(out_channels) * in_channels * kernel * kernel;
  }
};

struct RoiAlignGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int pooled = 7;
  int sampling_ratio = 2;
  double spatial_scale = 1.0;

  std::size_t output_size_per_roi() const noexcept {
    return std::size_t(channels) * pooled * pooled;
  }
};

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

template <typename T>
void linear_forward(int rows, int in_features, int out_features,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

template <typename T>
void linear_backward(int rows, int in_features, int out_features,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void roi_align_forward(const RoiAlignGeometry& g, std::span<const T> features,
                       const std::vector<Box>& boxes, std::span<T> output);

template <typename T>
void roi_align_backward(const RoiAlignGeometry& g, const std::vector<Box>& boxes,
                        std::span<const T> grad_output, std::span<T> grad_features);

template <typename T>
void relu_forward(std::span<const T> input, std::span<T> output);

// grad_input = grad_output where output > 0.
template <typename T>
void relu_backward(std::span<const T> output, std::span<const T> grad_output,
                   std::span<T> grad_input);

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

template <typename T>
void linear_forward(int rows, int in_features, int out_features,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

template <typename T>
void linear_backward(int rows, int in_features, int out_features,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void roi_align_forward(const RoiAlignGeometry& g, std::span<const T> features,
                       const std::vector<Box>& boxes, std::span<T> output);

template <typename T>
void roi_align_backward(const RoiAlignGeometry& g, const std::vector<Box>& boxes,
                        std::span<const T> grad_output, std::span<T> grad_features);

}  // namespace reference

}  // namespace hhic::kernels
