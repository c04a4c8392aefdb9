#pragma once

// Supervised instance-comparison losses over labeled embedding sets.
//
// For queries z_j with label y_j and keys z_i with labels y_i, the loss is
//
//   L = -(1/|Q|) * sum_j sum_{i+ : y_i+ = y_j} log( exp(cos(z_j, z_i+)/tau)
//                                               / sum_i exp(cos(z_j, z_i)/tau) )
//
// The inner sum over positives is not normalized by their count unless
// ContrastOptions::normalize_positives is set. Queries without any positive
// key contribute zero but still count in |Q|.

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace hhic {

template <typename T>
using EmbeddingMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct LabeledEmbeddingBatch {
  EmbeddingMatrix<T> embeddings;  // N x D
  std::vector<int> labels;        // N

  LabeledEmbeddingBatch() = default;
  LabeledEmbeddingBatch(EmbeddingMatrix<T> e, std::vector<int> l)
      : embeddings(std::move(e)), labels(std::move(l)) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  int dim() const noexcept { return static_cast<int>(embeddings.cols()); }

  // Throws ShapeError on row/label count mismatch, IndexError on a label
  // outside [0, num_classes) when num_classes > 0.
  void validate(int num_classes = 0) const;

  // Stacks b below this batch. Dimensions must agree unless one side is empty.
  void append(const LabeledEmbeddingBatch& b);

  template <typename U>
  LabeledEmbeddingBatch<U> cast() const {
    return {embeddings.template cast<U>(), labels};
  }
};

// Throws UndefinedSimilarityError for a zero vector, ShapeError on a length
// mismatch.
template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b);

struct ContrastOptions {
  double tau = 6.0;
  bool normalize_positives = false;
};

template <typename T>
struct ContrastResult {
  T loss = 0;
  EmbeddingMatrix<T> grad_queries;  // dL/dqueries, same shape as queries
  EmbeddingMatrix<T> grad_keys;     // dL/dkeys, same shape as keys
  int queries_with_positives = 0;
  bool skipped = false;             // true when the comparison set was empty
};

// Throws EmptyComparisonError when keys or queries are empty, ConfigError for
// tau <= 0 and UndefinedSimilarityError if any row has zero norm.
template <typename T>
ContrastResult<T> supervised_contrast_loss(const LabeledEmbeddingBatch<T>& queries,
                                           const LabeledEmbeddingBatch<T>& keys,
                                           const ContrastOptions& options);

// RoI-level comparison: ground-truth (and jittered ground-truth) embeddings
// query the foreground RoI embeddings. An empty side yields a skipped,
// zero-loss result instead of an error.
template <typename T>
ContrastResult<T> roi_contrast_loss(const LabeledEmbeddingBatch<T>& gt_and_aug,
                                    const LabeledEmbeddingBatch<T>& rois,
                                    const ContrastOptions& options);

// Class-level comparison: current class embeddings query a memory view. Keys
// come from the memory and are treated as constants by callers; grad_keys is
// still filled for testing.
template <typename T>
ContrastResult<T> cls_contrast_loss(const LabeledEmbeddingBatch<T>& current,
                                    const LabeledEmbeddingBatch<T>& memory_view,
                                    const ContrastOptions& options);

}  // namespace hhic
