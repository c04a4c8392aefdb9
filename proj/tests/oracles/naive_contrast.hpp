#pragma once

// Double-loop reference for the supervised comparison loss. Written straight
// from the formula: no normalization trick, no log-sum-exp stabilization.

#include <cmath>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double naive_cosine(const Vec& a, const Vec& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double naive_contrast_loss(const std::vector<Vec>& queries, const std::vector<int>& qlabels,
                                  const std::vector<Vec>& keys, const std::vector<int>& klabels,
                                  double tau, bool normalize_positives = false) {
  double total = 0;
  for (std::size_t j = 0; j < queries.size(); ++j) {
    double denom = 0;
    for (std::size_t i = 0; i < keys.size(); ++i)
      denom += std::exp(naive_cosine(queries[j], keys[i]) / tau);
    double term = 0;
    int positives = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (klabels[i] != qlabels[j]) continue;
      term += -std::log(std::exp(naive_cosine(queries[j], keys[i]) / tau) / denom);
      ++positives;
    }
    if (normalize_positives && positives > 0) term /= positives;
    total += term / static_cast<double>(queries.size());
  }
  return total;
}

}  // namespace oracle
