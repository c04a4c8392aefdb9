#pragma once

// Desk-scale two-stage detector:
//
//   image -> conv backbone (stride 8) -> 1x1 projection -> RPN
//         -> RoIAlign -> E1 (1x1 conv + ReLU) -> shared head (2 FC + ReLU)
//         -> classification (C+1) / class-agnostic box regression
//
// E1 outputs (flattened) are the RoI-level embeddings, shared-head outputs
// are the class-level embeddings. Both are exposed so the comparison losses
// can inject gradients into them.
//
// The detector is templated on the scalar type; training uses float and the
// finite-difference checks use double.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hhic/embedding_compare.hpp"
#include "hhic/geometry.hpp"
#include "hhic/image.hpp"
#include "hhic/kernels.hpp"
#include "hhic/tensor.hpp"

namespace hhic {

enum class HeadLossMode { CrossEntropy, Focal };

HeadLossMode parse_head_loss_mode(const std::string& s);
std::string to_string(HeadLossMode m);

struct DetectorConfig {
  int num_classes = 4;
  std::vector<int> backbone_channels = {16, 32, 64, 64};  // first stage stride 1, rest stride 2
  int roi_channels = 256;
  int rpn_channels = 256;
  int pooled = 7;
  int sampling_ratio = 2;
  int hidden_dim = 1024;
  std::vector<double> anchor_sizes = {16, 24, 36};

  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  int rpn_pre_nms_train = 1000;
  int rpn_post_nms_train = 600;
  int rpn_pre_nms_test = 1000;
  int rpn_post_nms_test = 300;
  double rpn_nms_iou = 0.7;
  double min_proposal_size = 1.0;

  double roi_fg_iou = 0.5;
  double roi_fg_fraction = 0.25;

  HeadLossMode head_loss_mode = HeadLossMode::CrossEntropy;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 100;

  int stride() const noexcept { return 1 << (static_cast<int>(backbone_channels.size()) - 1); }
  int background() const noexcept { return num_classes; }
  int roi_embedding_dim() const noexcept { return roi_channels * pooled * pooled; }
  void validate() const;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Feature map in C x H' x W' layout.
template <typename T>
struct FeatureMap {
  Tensor<T> values;
  int stride = 1;

  int channels() const { return static_cast<int>(values.dim(0)); }
  int height() const { return static_cast<int>(values.dim(1)); }
  int width() const { return static_cast<int>(values.dim(2)); }
};

struct Proposal {
  Box box;
  double objectness = 0;
};

struct SampledRoI {
  Box box;
  int assigned_class = 0;      // background sentinel == DetectorConfig::background()
  int assigned_gt_index = -1;  // -1 for background
  std::array<double, 4> regression_target{0, 0, 0, 0};
};

struct Detection {
  LabeledBox box;
  double score = 0;
};

template <typename T>
struct DetectorOutput {
  EmbeddingMatrix<T> class_logits;      // R x (C+1)
  EmbeddingMatrix<T> class_scores;      // R x (C+1), softmax rows
  EmbeddingMatrix<T> box_deltas;        // R x 4
  EmbeddingMatrix<T> roi_embeddings;    // R x roi_channels*pooled*pooled (post E1)
  EmbeddingMatrix<T> class_embeddings;  // R x hidden_dim (post shared head)
};

template <typename T>
struct HeadLosses {
  T cls = 0;
  T reg = 0;
  EmbeddingMatrix<T> grad_logits;  // dL_cls / dlogits
  EmbeddingMatrix<T> grad_deltas;  // dL_reg / ddeltas
};

// Random choices made during one training forward. Passing a recorded plan
// back in reproduces the same anchors, RoIs and comparison boxes, which makes
// the loss a deterministic function of the parameters.
struct ImagePlan {
  std::vector<int> anchor_labels;  // 1 positive, 0 negative, -1 unused
  std::vector<int> anchor_gt;      // matched GT per anchor, -1 if none
  std::vector<SampledRoI> rois;
};

struct RpnTargets {
  std::vector<int> labels;   // per anchor before sampling: 1, 0, -1
  std::vector<int> matched;  // per anchor GT index of highest IoU, -1 if no GT
};

// Assigns anchors against GT (IoU >= fg -> 1, < bg -> 0, plus every GT's
// best anchors -> 1). No GT: every anchor negative.
RpnTargets assign_anchors(const std::vector<Box>& anchors, const std::vector<LabeledBox>& gts,
                          double fg_iou, double bg_iou);

// Subsamples assigned anchors to at most batch entries with at most
// positive_fraction positives; unsampled anchors become -1.
std::vector<int> sample_anchor_labels(const std::vector<int>& labels, int batch,
                                      double positive_fraction, std::mt19937_64& rng);

// Box regression encoding with centre/size log deltas and per-coordinate
// weights.
std::array<double, 4> encode_box(const Box& reference, const Box& target,
                                 const std::array<double, 4>& weights);
Box decode_box(const Box& reference, const std::array<double, 4>& deltas,
               const std::array<double, 4>& weights);

inline constexpr std::array<double, 4> kRpnBoxWeights{1, 1, 1, 1};
inline constexpr std::array<double, 4> kRoiBoxWeights{10, 10, 5, 5};

// Proposal/GT sampling for the RoI head. GT boxes always join the candidate
// set. Foreground: IoU >= fg_iou with some GT (class of the best GT);
// background otherwise. At most floor(k * fg_fraction) foreground RoIs.
// Output lists foreground RoIs first.
std::vector<SampledRoI> sample_proposals(const std::vector<Proposal>& proposals,
                                         const std::vector<LabeledBox>& gts, int k,
                                         int num_classes, std::mt19937_64& rng,
                                         double fg_iou = 0.5, double fg_fraction = 0.25);

// Foreground RoIs, input order preserved.
std::vector<SampledRoI> filter_background(const std::vector<SampledRoI>& rois, int num_classes);

template <typename T>
HeadLosses<T> head_losses(const EmbeddingMatrix<T>& class_logits,
                          const EmbeddingMatrix<T>& box_deltas,
                          const std::vector<SampledRoI>& assignments, int num_classes,
                          HeadLossMode mode, double focal_gamma = 2.0, double focal_alpha = 0.25);

// Per-image activations of a training forward pass, kept for backward.
template <typename T>
struct ImageState {
  int image_width = 0;
  int image_height = 0;
  std::vector<Tensor<T>> backbone;  // [0] = normalized input, [s+1] = stage s output
  FeatureMap<T> features;           // projected map fed to RPN and RoIAlign
  Tensor<T> rpn_hidden;
  Tensor<T> rpn_logits;             // A x H' x W'
  Tensor<T> rpn_deltas;             // 4A x H' x W'
  T rpn_cls_loss = 0;
  T rpn_reg_loss = 0;
  Tensor<T> grad_rpn_logits;
  Tensor<T> grad_rpn_deltas;
  std::vector<Proposal> proposals;

  ImagePlan plan;
  Tensor<T> pooled;                 // R x C x P x P
  DetectorOutput<T> out;
  EmbeddingMatrix<T> fc1;           // post-ReLU
  HeadLosses<T> head;

  // Comparison branch: extra boxes pushed through RoIAlign + E1 only.
  std::vector<LabeledBox> comparison_boxes;
  Tensor<T> comparison_pooled;
  EmbeddingMatrix<T> comparison_embeddings;

  std::vector<int> foreground_rows() const;
  std::int64_t num_foreground() const;
};

template <typename T>
class Detector {
 public:
  Detector(DetectorConfig config, std::uint64_t seed);

  const DetectorConfig& config() const noexcept { return config_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::size_t num_parameters() const;
  void zero_grad();

  // Normalized C x H x W network input.
  Tensor<T> to_input(const Image& image) const;

  // Backbone output: last stage channels at stride 8. Throws ConfigError
  // if the image size is not divisible by the stride.
  FeatureMap<T> backbone_forward(const Image& image) const;

  // Projected RPN/RoI feature map.
  FeatureMap<T> features(const Image& image) const;

  std::vector<Box> anchors(int feature_height, int feature_width) const;

  // Inference-mode proposals (test-time pre/post NMS limits).
  std::vector<Proposal> rpn_proposals(const FeatureMap<T>& features, const ImageSize& image,
                                      bool training) const;

  // RoIAlign over the projected map: R x roi_channels x P x P.
  Tensor<T> roi_features(const FeatureMap<T>& features, const std::vector<Box>& boxes) const;

  // E1 on pooled features (R x C x P x P) -> R x (C*P*P), post-ReLU.
  EmbeddingMatrix<T> projection_e1(const Tensor<T>& pooled) const;

  // Two FC layers with ReLU: R x (C*P*P) -> R x hidden_dim.
  EmbeddingMatrix<T> shared_head(const EmbeddingMatrix<T>& roi_embeddings) const;

  DetectorOutput<T> forward_rois(const FeatureMap<T>& features,
                                 const std::vector<Box>& boxes) const;

  // Full training forward for one image. comparison_boxes are pushed through
  // the shared RoIAlign + E1 path. A non-null plan is replayed instead of
  // sampling anchors and RoIs afresh.
  ImageState<T> forward_train(const Image& image, const std::vector<LabeledBox>& gts, int k,
                              std::mt19937_64& sampler_rng,
                              const std::vector<LabeledBox>& comparison_boxes,
                              const ImagePlan* plan = nullptr) const;

  // Accumulates parameter gradients for
  //   base_scale * (rpn + head losses) + <grad_class_emb, class embeddings>
  //   + <grad_roi_emb, roi embeddings> + <grad_comparison, comparison embeddings>.
  // Embedding gradients are full R-row matrices (or empty to skip).
  void backward(const ImageState<T>& state, T base_scale,
                const EmbeddingMatrix<T>& grad_class_embeddings,
                const EmbeddingMatrix<T>& grad_roi_embeddings,
                const EmbeddingMatrix<T>& grad_comparison_embeddings);

  std::vector<Detection> inference(const Image& image, double score_threshold,
                                   double nms_iou) const;
  std::vector<Detection> inference(const Image& image) const {
    return inference(image, config_.score_threshold, config_.nms_iou);
  }

  // Copies parameter values from another detector with identical layout.
  template <typename U>
  void copy_parameters_from(const Detector<U>& other);

 private:
  struct ConvLayer {
    int in_channels, out_channels, kernel, stride, pad;
    std::size_t weight, bias;
    kernels::ConvGeometry geometry(int h, int w) const {
      return {in_channels, h, w, out_channels, kernel, stride, pad};
    }
  };
  struct LinearLayer {
    int in_features, out_features;
    std::size_t weight, bias;
  };

  ConvLayer add_conv(const std::string& name, int in, int out, int kernel, int stride, int pad,
                     double std, std::mt19937_64& rng);
  LinearLayer add_linear(const std::string& name, int in, int out, double std,
                         std::mt19937_64& rng);
  Tensor<T> conv_forward(const ConvLayer& layer, const Tensor<T>& input, bool relu) const;
  // grad_output is w.r.t. the layer output (pre- or post-ReLU handled by caller).
  Tensor<T> conv_backward(const ConvLayer& layer, const Tensor<T>& input,
                          const Tensor<T>& grad_output, bool need_input_grad);
  EmbeddingMatrix<T> linear_forward(const LinearLayer& layer, const EmbeddingMatrix<T>& x,
                                    bool relu) const;
  EmbeddingMatrix<T> linear_backward(const LinearLayer& layer, const EmbeddingMatrix<T>& x,
                                     const EmbeddingMatrix<T>& grad_output);
  kernels::RoiAlignGeometry roi_geometry(const FeatureMap<T>& f) const;
  int num_anchors_per_cell() const { return static_cast<int>(config_.anchor_sizes.size()); }
  void backward_e1(const Tensor<T>& pooled, const EmbeddingMatrix<T>& e1_out,
                   const EmbeddingMatrix<T>& grad_e1_out, const std::vector<Box>& boxes,
                   const FeatureMap<T>& features, Tensor<T>& grad_features);

  template <typename U>
  friend class Detector;

  DetectorConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<ConvLayer> stages_;
  ConvLayer projection_{};
  ConvLayer rpn_conv_{}, rpn_cls_{}, rpn_reg_{};
  ConvLayer e1_{};
  LinearLayer fc1_{}, fc2_{}, cls_{}, reg_{};
};

template <typename T>
template <typename U>
void Detector<T>::copy_parameters_from(const Detector<U>& other) {
  if (other.params_.size() != params_.size())
    throw ShapeError("copy_parameters_from: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i].value;
    const auto& src = other.params_[i].value;
    if (dst.shape() != src.shape()) throw ShapeError("copy_parameters_from: shape mismatch");
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
}

}  // namespace hhic
