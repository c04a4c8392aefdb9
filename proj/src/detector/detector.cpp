#include "hhic/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hhic/error.hpp"

namespace hhic {

template <typename T>
std::vector<int> ImageState<T>::foreground_rows() const {
  std::vector<int> rows;
  const int bg = static_cast<int>(out.class_logits.cols()) - 1;
  for (std::size_t r = 0; r < plan.rois.size(); ++r)
    if (plan.rois[r].assigned_class != bg) rows.push_back(static_cast<int>(r));
  return rows;
}

template <typename T>
std::int64_t ImageState<T>::num_foreground() const {
  return static_cast<std::int64_t>(foreground_rows().size());
}

namespace {

template <typename T>
void relu_mask(EmbeddingMatrix<T>& grad, const EmbeddingMatrix<T>& activation) {
  grad = (activation.array() > T(0)).select(grad, T(0));
}

template <typename T>
void relu_mask(Tensor<T>& grad, const Tensor<T>& activation) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > T(0))) grad[i] = T(0);
}

template <typename T>
std::span<const T> cspan(const Tensor<T>& t) {
  return t.span();
}

}  // namespace

template <typename T>
Detector<T>::Detector(DetectorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto kaiming = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  int in = 3;
  for (std::size_t s = 0; s < config_.backbone_channels.size(); ++s) {
    const int out = config_.backbone_channels[s];
    stages_.push_back(add_conv("backbone.stage" + std::to_string(s), in, out, 3, s == 0 ? 1 : 2, 1,
                               kaiming(in * 9), rng));
    in = out;
  }
  const int rc = config_.roi_channels;
  projection_ = add_conv("backbone.projection", in, rc, 1, 1, 0, kaiming(in), rng);
  const int a = num_anchors_per_cell();
  rpn_conv_ = add_conv("rpn.conv", rc, config_.rpn_channels, 3, 1, 1, kaiming(rc * 9), rng);
  rpn_cls_ = add_conv("rpn.objectness", config_.rpn_channels, a, 1, 1, 0, 0.01, rng);
  rpn_reg_ = add_conv("rpn.deltas", config_.rpn_channels, 4 * a, 1, 1, 0, 0.01, rng);
  e1_ = add_conv("roi.e1", rc, rc, 1, 1, 0, kaiming(rc), rng);
  const int flat = config_.roi_embedding_dim();
  fc1_ = add_linear("roi.shared_fc1", flat, config_.hidden_dim, kaiming(flat), rng);
  fc2_ = add_linear("roi.shared_fc2", config_.hidden_dim, config_.hidden_dim,
                    kaiming(config_.hidden_dim), rng);
  cls_ = add_linear("roi.cls", config_.hidden_dim, config_.num_classes + 1, 0.01, rng);
  reg_ = add_linear("roi.reg", config_.hidden_dim, 4, 0.001, rng);
}

template <typename T>
typename Detector<T>::ConvLayer Detector<T>::add_conv(const std::string& name, int in, int out,
                                                      int kernel, int stride, int pad, double stdev,
                                                      std::mt19937_64& rng) {
  ConvLayer l{in, out, kernel, stride, pad, params_.size(), params_.size() + 1};
  Parameter<T> w{name + ".weight", Tensor<T>({std::size_t(out), std::size_t(in),
                                              std::size_t(kernel), std::size_t(kernel)}),
                 {}};
  std::normal_distribution<double> dist(0.0, stdev);
  for (std::size_t i = 0; i < w.value.size(); ++i) w.value[i] = static_cast<T>(dist(rng));
  w.grad = Tensor<T>(w.value.shape());
  Parameter<T> b{name + ".bias", Tensor<T>({std::size_t(out)}), Tensor<T>({std::size_t(out)})};
  params_.push_back(std::move(w));
  params_.push_back(std::move(b));
  return l;
}

template <typename T>
typename Detector<T>::LinearLayer Detector<T>::add_linear(const std::string& name, int in, int out,
                                                          double stdev, std::mt19937_64& rng) {
  LinearLayer l{in, out, params_.size(), params_.size() + 1};
  Parameter<T> w{name + ".weight", Tensor<T>({std::size_t(out), std::size_t(in)}), {}};
  std::normal_distribution<double> dist(0.0, stdev);
  for (std::size_t i = 0; i < w.value.size(); ++i) w.value[i] = static_cast<T>(dist(rng));
  w.grad = Tensor<T>(w.value.shape());
  Parameter<T> b{name + ".bias", Tensor<T>({std::size_t(out)}), Tensor<T>({std::size_t(out)})};
  params_.push_back(std::move(w));
  params_.push_back(std::move(b));
  return l;
}

template <typename T>
std::size_t Detector<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Detector<T>::zero_grad() {
  for (auto& p : params_) p.grad.zero();
}

template <typename T>
Tensor<T> Detector<T>::to_input(const Image& image) const {
  const int s = config_.stride();
  if (image.width <= 0 || image.height <= 0 || image.width % s != 0 || image.height % s != 0)
    throw ConfigError("detector: image size " + std::to_string(image.width) + "x" +
                      std::to_string(image.height) + " not divisible by stride " +
                      std::to_string(s));
  Tensor<T> t({3, std::size_t(image.height), std::size_t(image.width)});
  const std::size_t plane = std::size_t(image.height) * image.width;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        t[c * plane + std::size_t(y) * image.width + x] = T(image.at(y, x, c)) - T(0.5);
  return t;
}

template <typename T>
Tensor<T> Detector<T>::conv_forward(const ConvLayer& layer, const Tensor<T>& input,
                                    bool relu) const {
  const auto g = layer.geometry(static_cast<int>(input.dim(1)), static_cast<int>(input.dim(2)));
  Tensor<T> out({std::size_t(g.out_channels), std::size_t(g.out_height()),
                 std::size_t(g.out_width())});
  kernels::conv2d_forward<T>(g, input.span(), cspan(params_[layer.weight].value),
                             cspan(params_[layer.bias].value), out.span());
  if (relu) kernels::relu_forward<T>(out.span(), out.span());
  return out;
}

template <typename T>
Tensor<T> Detector<T>::conv_backward(const ConvLayer& layer, const Tensor<T>& input,
                                     const Tensor<T>& grad_output, bool need_input_grad) {
  const auto g = layer.geometry(static_cast<int>(input.dim(1)), static_cast<int>(input.dim(2)));
  Tensor<T> grad_input;
  if (need_input_grad) grad_input = Tensor<T>(input.shape());
  kernels::conv2d_backward<T>(g, input.span(), cspan(params_[layer.weight].value),
                              grad_output.span(), grad_input.span(),
                              params_[layer.weight].grad.span(), params_[layer.bias].grad.span());
  return grad_input;
}

template <typename T>
EmbeddingMatrix<T> Detector<T>::linear_forward(const LinearLayer& layer,
                                               const EmbeddingMatrix<T>& x, bool relu) const {
  EmbeddingMatrix<T> y(x.rows(), layer.out_features);
  kernels::linear_forward<T>(static_cast<int>(x.rows()), layer.in_features, layer.out_features,
                             std::span<const T>(x.data(), std::size_t(x.size())),
                             cspan(params_[layer.weight].value), cspan(params_[layer.bias].value),
                             std::span<T>(y.data(), std::size_t(y.size())));
  if (relu) y = y.cwiseMax(T(0));
  return y;
}

template <typename T>
EmbeddingMatrix<T> Detector<T>::linear_backward(const LinearLayer& layer,
                                                const EmbeddingMatrix<T>& x,
                                                const EmbeddingMatrix<T>& grad_output) {
  EmbeddingMatrix<T> dx(x.rows(), layer.in_features);
  kernels::linear_backward<T>(static_cast<int>(x.rows()), layer.in_features, layer.out_features,
                              std::span<const T>(x.data(), std::size_t(x.size())),
                              cspan(params_[layer.weight].value),
                              std::span<const T>(grad_output.data(), std::size_t(grad_output.size())),
                              std::span<T>(dx.data(), std::size_t(dx.size())),
                              params_[layer.weight].grad.span(), params_[layer.bias].grad.span());
  return dx;
}

template <typename T>
FeatureMap<T> Detector<T>::backbone_forward(const Image& image) const {
  Tensor<T> x = to_input(image);
  for (const auto& s : stages_) x = conv_forward(s, x, true);
  return {std::move(x), config_.stride()};
}

template <typename T>
FeatureMap<T> Detector<T>::features(const Image& image) const {
  FeatureMap<T> f = backbone_forward(image);
  f.values = conv_forward(projection_, f.values, true);
  return f;
}

template <typename T>
std::vector<Box> Detector<T>::anchors(int feature_height, int feature_width) const {
  std::vector<Box> out;
  const double s = config_.stride();
  out.reserve(std::size_t(feature_height) * feature_width * num_anchors_per_cell());
  for (int y = 0; y < feature_height; ++y)
    for (int x = 0; x < feature_width; ++x) {
      const double cx = (x + 0.5) * s, cy = (y + 0.5) * s;
      for (double size : config_.anchor_sizes)
        out.push_back(Box{cx - 0.5 * size, cy - 0.5 * size, cx + 0.5 * size, cy + 0.5 * size});
    }
  return out;
}

namespace {

template <typename T>
std::vector<Proposal> decode_proposals(const std::vector<Box>& anchors, const Tensor<T>& logits,
                                       const Tensor<T>& deltas, int num_anchors,
                                       const ImageSize& image, const DetectorConfig& cfg,
                                       bool training) {
  const std::size_t hw = logits.dim(1) * logits.dim(2);
  std::vector<Proposal> all;
  all.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const std::size_t p = i / num_anchors, a = i % num_anchors;
    const double logit = static_cast<double>(logits[a * hw + p]);
    std::array<double, 4> d;
    for (int k = 0; k < 4; ++k) d[k] = static_cast<double>(deltas[(a * 4 + k) * hw + p]);
    Box b = decode_box(anchors[i], d, kRpnBoxWeights);
    b.x0 = std::clamp(b.x0, 0.0, double(image.width));
    b.x1 = std::clamp(b.x1, 0.0, double(image.width));
    b.y0 = std::clamp(b.y0, 0.0, double(image.height));
    b.y1 = std::clamp(b.y1, 0.0, double(image.height));
    if (!b.valid() || b.width() < cfg.min_proposal_size || b.height() < cfg.min_proposal_size)
      continue;
    all.push_back({b, 1.0 / (1.0 + std::exp(-logit))});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Proposal& a, const Proposal& b) { return a.objectness > b.objectness; });
  const std::size_t pre = static_cast<std::size_t>(training ? cfg.rpn_pre_nms_train : cfg.rpn_pre_nms_test);
  if (all.size() > pre) all.resize(pre);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& p : all) {
    boxes.push_back(p.box);
    scores.push_back(p.objectness);
  }
  const auto keep = nms(boxes, scores, cfg.rpn_nms_iou);
  const std::size_t post = static_cast<std::size_t>(training ? cfg.rpn_post_nms_train : cfg.rpn_post_nms_test);
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < keep.size() && out.size() < post; ++i) out.push_back(all[keep[i]]);
  return out;
}

}  // namespace

template <typename T>
std::vector<Proposal> Detector<T>::rpn_proposals(const FeatureMap<T>& features,
                                                 const ImageSize& image, bool training) const {
  const Tensor<T> hidden = conv_forward(rpn_conv_, features.values, true);
  const Tensor<T> logits = conv_forward(rpn_cls_, hidden, false);
  const Tensor<T> deltas = conv_forward(rpn_reg_, hidden, false);
  return decode_proposals(anchors(features.height(), features.width()), logits, deltas,
                          num_anchors_per_cell(), image, config_, training);
}

template <typename T>
kernels::RoiAlignGeometry Detector<T>::roi_geometry(const FeatureMap<T>& f) const {
  return {f.channels(), f.height(), f.width(), config_.pooled, config_.sampling_ratio,
          1.0 / f.stride};
}

template <typename T>
Tensor<T> Detector<T>::roi_features(const FeatureMap<T>& features,
                                    const std::vector<Box>& boxes) const {
  for (const auto& b : boxes)
    if (!b.valid()) throw InvalidBoxError("roi_features: degenerate box");
  const auto g = roi_geometry(features);
  Tensor<T> out({boxes.size(), std::size_t(g.channels), std::size_t(g.pooled),
                 std::size_t(g.pooled)});
  kernels::roi_align_forward<T>(g, features.values.span(), boxes, out.span());
  return out;
}

template <typename T>
EmbeddingMatrix<T> Detector<T>::projection_e1(const Tensor<T>& pooled) const {
  const int p = config_.pooled, c = config_.roi_channels;
  if (pooled.rank() != 4 || pooled.dim(1) != std::size_t(c) || pooled.dim(2) != std::size_t(p) ||
      pooled.dim(3) != std::size_t(p))
    throw ShapeError("projection_e1: expected R x " + std::to_string(c) + " x " +
                     std::to_string(p) + " x " + std::to_string(p) + " input");
  const Eigen::Index rows = static_cast<Eigen::Index>(pooled.dim(0));
  const std::size_t per = std::size_t(c) * p * p;
  EmbeddingMatrix<T> out(rows, static_cast<Eigen::Index>(per));
  const auto g = e1_.geometry(p, p);
  for (Eigen::Index r = 0; r < rows; ++r) {
    kernels::conv2d_forward<T>(g, std::span<const T>(pooled.data() + r * per, per),
                               cspan(params_[e1_.weight].value), cspan(params_[e1_.bias].value),
                               std::span<T>(out.data() + r * per, per));
  }
  return out.cwiseMax(T(0));
}

template <typename T>
EmbeddingMatrix<T> Detector<T>::shared_head(const EmbeddingMatrix<T>& roi_embeddings) const {
  if (roi_embeddings.cols() != config_.roi_embedding_dim())
    throw ShapeError("shared_head: expected " + std::to_string(config_.roi_embedding_dim()) +
                     " input features");
  return linear_forward(fc2_, linear_forward(fc1_, roi_embeddings, true), true);
}

namespace {

template <typename T>
EmbeddingMatrix<T> softmax_rows(const EmbeddingMatrix<T>& logits) {
  EmbeddingMatrix<T> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace

template <typename T>
DetectorOutput<T> Detector<T>::forward_rois(const FeatureMap<T>& features,
                                            const std::vector<Box>& boxes) const {
  DetectorOutput<T> out;
  out.roi_embeddings = projection_e1(roi_features(features, boxes));
  out.class_embeddings = shared_head(out.roi_embeddings);
  out.class_logits = linear_forward(cls_, out.class_embeddings, false);
  out.class_scores = softmax_rows(out.class_logits);
  out.box_deltas = linear_forward(reg_, out.class_embeddings, false);
  return out;
}

template <typename T>
ImageState<T> Detector<T>::forward_train(const Image& image, const std::vector<LabeledBox>& gts,
                                         int k, std::mt19937_64& sampler_rng,
                                         const std::vector<LabeledBox>& comparison_boxes,
                                         const ImagePlan* plan) const {
  ImageState<T> st;
  st.image_width = image.width;
  st.image_height = image.height;
  st.backbone.push_back(to_input(image));
  for (const auto& s : stages_) st.backbone.push_back(conv_forward(s, st.backbone.back(), true));
  st.features.values = conv_forward(projection_, st.backbone.back(), true);
  st.features.stride = config_.stride();

  st.rpn_hidden = conv_forward(rpn_conv_, st.features.values, true);
  st.rpn_logits = conv_forward(rpn_cls_, st.rpn_hidden, false);
  st.rpn_deltas = conv_forward(rpn_reg_, st.rpn_hidden, false);

  const int fh = st.features.height(), fw = st.features.width();
  const auto anchor_boxes = anchors(fh, fw);
  if (plan) {
    st.plan.anchor_labels = plan->anchor_labels;
    st.plan.anchor_gt = plan->anchor_gt;
  } else {
    const RpnTargets targets = assign_anchors(anchor_boxes, gts, config_.rpn_fg_iou, config_.rpn_bg_iou);
    st.plan.anchor_labels = sample_anchor_labels(targets.labels, config_.rpn_batch,
                                                 config_.rpn_positive_fraction, sampler_rng);
    st.plan.anchor_gt = targets.matched;
  }

  // RPN losses: BCE over sampled anchors, smooth-L1 (beta 1/9) on positives,
  // both normalized by the sampled count.
  const int a_per = num_anchors_per_cell();
  const std::size_t hw = std::size_t(fh) * fw;
  st.grad_rpn_logits = Tensor<T>(st.rpn_logits.shape());
  st.grad_rpn_deltas = Tensor<T>(st.rpn_deltas.shape());
  std::size_t sampled = 0;
  for (int l : st.plan.anchor_labels) sampled += l >= 0 ? 1 : 0;
  if (sampled > 0) {
    const T inv = T(1) / T(sampled);
    const T beta = T(1.0 / 9.0);
    for (std::size_t i = 0; i < anchor_boxes.size(); ++i) {
      const int label = st.plan.anchor_labels[i];
      if (label < 0) continue;
      const std::size_t p = i / a_per, a = i % a_per;
      const T x = st.rpn_logits[a * hw + p];
      const T y = T(label);
      st.rpn_cls_loss += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
      st.grad_rpn_logits[a * hw + p] = (T(1) / (T(1) + std::exp(-x)) - y) * inv;
      if (label == 1) {
        const auto target =
            encode_box(anchor_boxes[i], gts[st.plan.anchor_gt[i]].box, kRpnBoxWeights);
        for (int c = 0; c < 4; ++c) {
          const std::size_t idx = (a * 4 + c) * hw + p;
          const T d = st.rpn_deltas[idx] - T(target[c]);
          const T ad = std::abs(d);
          st.rpn_reg_loss += ad < beta ? T(0.5) * d * d / beta : ad - T(0.5) * beta;
          st.grad_rpn_deltas[idx] = (ad < beta ? d / beta : (d > 0 ? T(1) : T(-1))) * inv;
        }
      }
    }
    st.rpn_cls_loss *= inv;
    st.rpn_reg_loss *= inv;
  }

  st.proposals = decode_proposals(anchor_boxes, st.rpn_logits, st.rpn_deltas, a_per,
                                  ImageSize{image.width, image.height}, config_, true);
  if (plan) {
    st.plan.rois = plan->rois;
  } else {
    st.plan.rois = sample_proposals(st.proposals, gts, k, config_.num_classes, sampler_rng,
                                    config_.roi_fg_iou, config_.roi_fg_fraction);
  }

  std::vector<Box> boxes;
  boxes.reserve(st.plan.rois.size());
  for (const auto& r : st.plan.rois) boxes.push_back(r.box);
  st.pooled = roi_features(st.features, boxes);
  st.out.roi_embeddings = projection_e1(st.pooled);
  st.fc1 = linear_forward(fc1_, st.out.roi_embeddings, true);
  st.out.class_embeddings = linear_forward(fc2_, st.fc1, true);
  st.out.class_logits = linear_forward(cls_, st.out.class_embeddings, false);
  st.out.class_scores = softmax_rows(st.out.class_logits);
  st.out.box_deltas = linear_forward(reg_, st.out.class_embeddings, false);
  st.head = head_losses<T>(st.out.class_logits, st.out.box_deltas, st.plan.rois,
                           config_.num_classes, config_.head_loss_mode, config_.focal_gamma,
                           config_.focal_alpha);

  st.comparison_boxes = comparison_boxes;
  if (!comparison_boxes.empty()) {
    std::vector<Box> cb;
    for (const auto& b : comparison_boxes) cb.push_back(b.box);
    st.comparison_pooled = roi_features(st.features, cb);
    st.comparison_embeddings = projection_e1(st.comparison_pooled);
  }
  return st;
}

template <typename T>
void Detector<T>::backward_e1(const Tensor<T>& pooled, const EmbeddingMatrix<T>& e1_out,
                              const EmbeddingMatrix<T>& grad_e1_out,
                              const std::vector<Box>& boxes, const FeatureMap<T>& features,
                              Tensor<T>& grad_features) {
  if (boxes.empty()) return;
  EmbeddingMatrix<T> g = grad_e1_out;
  relu_mask(g, e1_out);
  const int p = config_.pooled, c = config_.roi_channels;
  const std::size_t per = std::size_t(c) * p * p;
  const auto geom = e1_.geometry(p, p);
  Tensor<T> grad_pooled(pooled.shape());
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    kernels::conv2d_backward<T>(geom, std::span<const T>(pooled.data() + r * per, per),
                                cspan(params_[e1_.weight].value),
                                std::span<const T>(g.data() + r * per, per),
                                std::span<T>(grad_pooled.data() + r * per, per),
                                params_[e1_.weight].grad.span(), params_[e1_.bias].grad.span());
  }
  kernels::roi_align_backward<T>(roi_geometry(features), boxes, grad_pooled.span(),
                                 grad_features.span());
}

template <typename T>
void Detector<T>::backward(const ImageState<T>& st, T base_scale,
                           const EmbeddingMatrix<T>& grad_class_embeddings,
                           const EmbeddingMatrix<T>& grad_roi_embeddings,
                           const EmbeddingMatrix<T>& grad_comparison_embeddings) {
  const Eigen::Index rows = static_cast<Eigen::Index>(st.plan.rois.size());
  Tensor<T> grad_features(st.features.values.shape());

  if (rows > 0) {
    const EmbeddingMatrix<T> g_logits = st.head.grad_logits * base_scale;
    const EmbeddingMatrix<T> g_deltas = st.head.grad_deltas * base_scale;
    EmbeddingMatrix<T> d_fc2 = linear_backward(cls_, st.out.class_embeddings, g_logits);
    d_fc2 += linear_backward(reg_, st.out.class_embeddings, g_deltas);
    if (grad_class_embeddings.size() > 0) d_fc2 += grad_class_embeddings;
    relu_mask(d_fc2, st.out.class_embeddings);
    EmbeddingMatrix<T> d_fc1 = linear_backward(fc2_, st.fc1, d_fc2);
    relu_mask(d_fc1, st.fc1);
    EmbeddingMatrix<T> d_e1 = linear_backward(fc1_, st.out.roi_embeddings, d_fc1);
    if (grad_roi_embeddings.size() > 0) d_e1 += grad_roi_embeddings;
    std::vector<Box> boxes;
    for (const auto& r : st.plan.rois) boxes.push_back(r.box);
    backward_e1(st.pooled, st.out.roi_embeddings, d_e1, boxes, st.features, grad_features);
  }

  if (!st.comparison_boxes.empty() && grad_comparison_embeddings.size() > 0) {
    std::vector<Box> cb;
    for (const auto& b : st.comparison_boxes) cb.push_back(b.box);
    backward_e1(st.comparison_pooled, st.comparison_embeddings, grad_comparison_embeddings, cb,
                st.features, grad_features);
  }

  Tensor<T> g_logits = st.grad_rpn_logits;
  Tensor<T> g_deltas = st.grad_rpn_deltas;
  for (std::size_t i = 0; i < g_logits.size(); ++i) g_logits[i] *= base_scale;
  for (std::size_t i = 0; i < g_deltas.size(); ++i) g_deltas[i] *= base_scale;
  Tensor<T> d_hidden = conv_backward(rpn_cls_, st.rpn_hidden, g_logits, true);
  const Tensor<T> d_hidden_reg = conv_backward(rpn_reg_, st.rpn_hidden, g_deltas, true);
  for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] += d_hidden_reg[i];
  relu_mask(d_hidden, st.rpn_hidden);
  const Tensor<T> d_feat_rpn = conv_backward(rpn_conv_, st.features.values, d_hidden, true);
  for (std::size_t i = 0; i < grad_features.size(); ++i) grad_features[i] += d_feat_rpn[i];

  relu_mask(grad_features, st.features.values);
  Tensor<T> d = conv_backward(projection_, st.backbone.back(), grad_features, true);
  for (std::size_t s = stages_.size(); s-- > 0;) {
    relu_mask(d, st.backbone[s + 1]);
    d = conv_backward(stages_[s], st.backbone[s], d, s > 0);
  }
}

template <typename T>
std::vector<Detection> Detector<T>::inference(const Image& image, double score_threshold,
                                              double nms_iou) const {
  const FeatureMap<T> fm = features(image);
  const auto proposals = rpn_proposals(fm, ImageSize{image.width, image.height}, false);
  if (proposals.empty()) return {};
  std::vector<Box> boxes;
  for (const auto& p : proposals) boxes.push_back(p.box);
  const DetectorOutput<T> out = forward_rois(fm, boxes);

  std::vector<Detection> all;
  for (int c = 0; c < config_.num_classes; ++c) {
    std::vector<Box> cand;
    std::vector<double> scores;
    for (std::size_t r = 0; r < boxes.size(); ++r) {
      const double s = static_cast<double>(out.class_scores(r, c));
      if (s < score_threshold) continue;
      std::array<double, 4> d;
      for (int q = 0; q < 4; ++q) d[q] = static_cast<double>(out.box_deltas(r, q));
      Box b = decode_box(boxes[r], d, kRoiBoxWeights);
      b.x0 = std::clamp(b.x0, 0.0, double(image.width));
      b.x1 = std::clamp(b.x1, 0.0, double(image.width));
      b.y0 = std::clamp(b.y0, 0.0, double(image.height));
      b.y1 = std::clamp(b.y1, 0.0, double(image.height));
      if (!b.valid()) continue;
      cand.push_back(b);
      scores.push_back(s);
    }
    for (std::size_t i : nms(cand, scores, nms_iou)) all.push_back({{cand[i], c}, scores[i]});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (all.size() > static_cast<std::size_t>(config_.max_detections))
    all.resize(config_.max_detections);
  return all;
}

template struct ImageState<float>;
template struct ImageState<double>;
template class Detector<float>;
template class Detector<double>;

}  // namespace hhic
