#include "hhic/embedding_compare.hpp"

#include <cmath>

#include "hhic/error.hpp"

namespace hhic {

template <typename T>
void LabeledEmbeddingBatch<T>::validate(int num_classes) const {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
    throw ShapeError("embedding batch: " + std::to_string(embeddings.rows()) +
                     " rows but " + std::to_string(labels.size()) + " labels");
  if (num_classes > 0) {
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw IndexError("embedding batch: label " + std::to_string(l) + " out of range");
  }
  if (!embeddings.allFinite()) throw ShapeError("embedding batch: non-finite entries");
}

template <typename T>
void LabeledEmbeddingBatch<T>::append(const LabeledEmbeddingBatch& b) {
  if (b.empty()) return;
  if (empty()) {
    *this = b;
    return;
  }
  if (b.dim() != dim()) throw ShapeError("embedding batch: dimension mismatch on append");
  EmbeddingMatrix<T> stacked(embeddings.rows() + b.embeddings.rows(), dim());
  stacked << embeddings, b.embeddings;
  embeddings = std::move(stacked);
  labels.insert(labels.end(), b.labels.begin(), b.labels.end());
}

template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
  T dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == T(0) || nb == T(0)) throw UndefinedSimilarityError("cosine_sim: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 1> row_norms(const EmbeddingMatrix<T>& m, const char* who) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> n = m.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i)
    if (!(n[i] > T(0)))
      throw UndefinedSimilarityError(std::string(who) + ": zero-norm embedding at row " +
                                     std::to_string(i));
  return n;
}

// d(cos)/d(raw) from d/d(unit): (g - (g.u)u) / |x|, row-wise.
template <typename T>
EmbeddingMatrix<T> unnormalize_grad(const EmbeddingMatrix<T>& grad_unit,
                                    const EmbeddingMatrix<T>& unit,
                                    const Eigen::Matrix<T, Eigen::Dynamic, 1>& norms) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> proj = (grad_unit.array() * unit.array()).rowwise().sum();
  EmbeddingMatrix<T> g = grad_unit - unit.cwiseProduct(proj.replicate(1, unit.cols()));
  return g.array().colwise() / norms.array();
}

template <typename T>
ContrastResult<T> skipped_result(const LabeledEmbeddingBatch<T>& q,
                                 const LabeledEmbeddingBatch<T>& k) {
  ContrastResult<T> r;
  r.skipped = true;
  r.grad_queries = EmbeddingMatrix<T>::Zero(q.embeddings.rows(), q.embeddings.cols());
  r.grad_keys = EmbeddingMatrix<T>::Zero(k.embeddings.rows(), k.embeddings.cols());
  return r;
}

}  // namespace

template <typename T>
ContrastResult<T> supervised_contrast_loss(const LabeledEmbeddingBatch<T>& queries,
                                           const LabeledEmbeddingBatch<T>& keys,
                                           const ContrastOptions& options) {
  if (!(options.tau > 0)) throw ConfigError("contrast loss: tau must be positive");
  if (keys.empty()) throw EmptyComparisonError("contrast loss: empty key set");
  if (queries.empty()) throw EmptyComparisonError("contrast loss: empty query set");
  queries.validate();
  keys.validate();
  if (queries.dim() != keys.dim()) throw ShapeError("contrast loss: query/key dimension mismatch");

  const Eigen::Index n = queries.embeddings.rows();
  const Eigen::Index m = keys.embeddings.rows();
  const T inv_tau = T(1) / T(options.tau);

  const auto qnorm = row_norms(queries.embeddings, "contrast loss (query)");
  const auto knorm = row_norms(keys.embeddings, "contrast loss (key)");
  const EmbeddingMatrix<T> qu = queries.embeddings.array().colwise() / qnorm.array();
  const EmbeddingMatrix<T> ku = keys.embeddings.array().colwise() / knorm.array();

  const EmbeddingMatrix<T> logits = (qu * ku.transpose()) * inv_tau;  // n x m
  EmbeddingMatrix<T> dlogits = EmbeddingMatrix<T>::Zero(n, m);

  ContrastResult<T> result;
  T total = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int yj = queries.labels[j];
    int positives = 0;
    T positive_logit_sum = 0;
    for (Eigen::Index i = 0; i < m; ++i)
      if (keys.labels[i] == yj) {
        ++positives;
        positive_logit_sum += logits(j, i);
      }
    if (positives == 0) continue;
    ++result.queries_with_positives;

    const T mx = logits.row(j).maxCoeff();
    const auto shifted = (logits.row(j).array() - mx).exp();
    const T denom = shifted.sum();
    const T lse = mx + std::log(denom);
    const T weight = options.normalize_positives ? T(1) / T(positives) : T(1);
    total += weight * (T(positives) * lse - positive_logit_sum);

    const T scale = weight / T(n);
    for (Eigen::Index i = 0; i < m; ++i) {
      const T indicator = keys.labels[i] == yj ? T(1) : T(0);
      dlogits(j, i) = scale * (T(positives) * shifted[i] / denom - indicator);
    }
  }
  result.loss = total / T(n);

  const EmbeddingMatrix<T> dcos = dlogits * inv_tau;
  result.grad_queries = unnormalize_grad<T>(dcos * ku, qu, qnorm);
  result.grad_keys = unnormalize_grad<T>(dcos.transpose() * qu, ku, knorm);
  return result;
}

template <typename T>
ContrastResult<T> roi_contrast_loss(const LabeledEmbeddingBatch<T>& gt_and_aug,
                                    const LabeledEmbeddingBatch<T>& rois,
                                    const ContrastOptions& options) {
  if (gt_and_aug.empty() || rois.empty()) return skipped_result(gt_and_aug, rois);
  return supervised_contrast_loss(gt_and_aug, rois, options);
}

template <typename T>
ContrastResult<T> cls_contrast_loss(const LabeledEmbeddingBatch<T>& current,
                                    const LabeledEmbeddingBatch<T>& memory_view,
                                    const ContrastOptions& options) {
  if (current.empty() || memory_view.empty()) return skipped_result(current, memory_view);
  return supervised_contrast_loss(current, memory_view, options);
}

template struct LabeledEmbeddingBatch<float>;
template struct LabeledEmbeddingBatch<double>;
template float cosine_sim<float>(std::span<const float>, std::span<const float>);
template double cosine_sim<double>(std::span<const double>, std::span<const double>);
template ContrastResult<float> supervised_contrast_loss(const LabeledEmbeddingBatch<float>&,
                                                        const LabeledEmbeddingBatch<float>&,
                                                        const ContrastOptions&);
template ContrastResult<double> supervised_contrast_loss(const LabeledEmbeddingBatch<double>&,
                                                         const LabeledEmbeddingBatch<double>&,
                                                         const ContrastOptions&);
template ContrastResult<float> roi_contrast_loss(const LabeledEmbeddingBatch<float>&,
                                                 const LabeledEmbeddingBatch<float>&,
                                                 const ContrastOptions&);
template ContrastResult<double> roi_contrast_loss(const LabeledEmbeddingBatch<double>&,
                                                  const LabeledEmbeddingBatch<double>&,
                                                  const ContrastOptions&);
template ContrastResult<float> cls_contrast_loss(const LabeledEmbeddingBatch<float>&,
                                                 const LabeledEmbeddingBatch<float>&,
                                                 const ContrastOptions&);
template ContrastResult<double> cls_contrast_loss(const LabeledEmbeddingBatch<double>&,
                                                  const LabeledEmbeddingBatch<double>&,
                                                  const ContrastOptions&);

}  // namespace hhic
