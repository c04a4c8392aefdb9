#include <cmath>

#include "hhic/detector.hpp"

namespace hhic {

template <typename T>
HeadLosses<T> head_losses(const EmbeddingMatrix<T>& class_logits,
                          const EmbeddingMatrix<T>& box_deltas,
                          const std::vector<SampledRoI>& assignments, int num_classes,
                          HeadLossMode mode, double focal_gamma, double focal_alpha) {
  const Eigen::Index rows = class_logits.rows();
  HeadLosses<T> out;
  out.grad_logits = EmbeddingMatrix<T>::Zero(rows, class_logits.cols());
  out.grad_deltas = EmbeddingMatrix<T>::Zero(box_deltas.rows(), box_deltas.cols());
  if (rows == 0) return out;
  const T inv_n = T(1) / T(rows);
  const T gamma = T(focal_gamma), alpha = T(focal_alpha);

  for (Eigen::Index r = 0; r < rows; ++r) {
    const int target = assignments[r].assigned_class;
    const auto z = class_logits.row(r);
    const T mx = z.maxCoeff();
    const auto e = (z.array() - mx).exp();
    const T denom = e.sum();
    const T log_pt = z(target) - mx - std::log(denom);
    const T pt = std::exp(log_pt);
    // d(loss_r)/dz_k = coeff * (p_k - [k == target])
    T coeff;
    if (mode == HeadLossMode::CrossEntropy) {
      out.cls += -log_pt;
      coeff = T(1);
    } else {
      const T one_minus = T(1) - pt;
      const T modulating = gamma == T(0) ? T(1) : std::pow(one_minus, gamma);
      out.cls += -alpha * modulating * log_pt;
      const T dgamma =
          gamma == T(0) ? T(0) : gamma * std::pow(one_minus, gamma - T(1)) * pt * log_pt;
      coeff = alpha * (modulating - dgamma);
    }
    for (Eigen::Index kk = 0; kk < class_logits.cols(); ++kk) {
      const T p = e[kk] / denom;
      out.grad_logits(r, kk) = coeff * (p - (kk == target ? T(1) : T(0))) * inv_n;
    }

    if (target != num_classes) {
      for (int c = 0; c < 4; ++c) {
        const T d = box_deltas(r, c) - T(assignments[r].regression_target[c]);
        const T ad = std::abs(d);
        out.reg += ad < T(1) ? T(0.5) * d * d : ad - T(0.5);
        out.grad_deltas(r, c) = (ad < T(1) ? d : (d > 0 ? T(1) : T(-1))) * inv_n;
      }
    }
  }
  out.cls *= inv_n;
  out.reg *= inv_n;
  return out;
}

template HeadLosses<float> head_losses(const EmbeddingMatrix<float>&, const EmbeddingMatrix<float>&,
                                       const std::vector<SampledRoI>&, int, HeadLossMode, double,
                                       double);
template HeadLosses<double> head_losses(const EmbeddingMatrix<double>&,
                                        const EmbeddingMatrix<double>&,
                                        const std::vector<SampledRoI>&, int, HeadLossMode, double,
                                        double);

}  // namespace hhic
