#pragma once

#include "spore/common.hpp"

namespace spore {

/// a.b / (|a| |b|); NaN when either vector is zero.
inline double cosine_similarity(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "cosine similarity needs equal lengths");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return kNaN;
  return a.dot(b) / (na * nb);
}

inline double mean_squared_error(const Vector& estimate, const Vector& truth) {
  require(estimate.size() == truth.size() && truth.size() > 0, "MSE needs equal nonzero lengths");
  return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

struct SupportScore {
  double precision = kNaN;  // NaN when nothing is detected
  double recall = kNaN;     // NaN when the true support is empty
};

/// Entries of `estimate` above `threshold` count as detected.
inline SupportScore support_precision_recall(const Vector& estimate, const Vector& truth, double threshold) {
  require(estimate.size() == truth.size(), "support score needs equal lengths");
  int detected = 0, actual = 0, hits = 0;
  for (Eigen::Index n = 0; n < truth.size(); ++n) {
    const bool d = estimate[n] > threshold;
    const bool t = truth[n] > 0.0;
    detected += d;
    actual += t;
    hits += d && t;
  }
  SupportScore s;
  if (detected > 0) s.precision = static_cast<double>(hits) / detected;
  if (actual > 0) s.recall = static_cast<double>(hits) / actual;
  return s;
}

}  // namespace spore
