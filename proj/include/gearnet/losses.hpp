#pragma once

#include <span>
#include <vector>

#include "gearnet/tensor.hpp"

namespace gearnet {

/// Probability floor applied before every log ratio.
inline constexpr double kProbabilityFloor = 1e-8;

/// batch x K class probabilities; rows are validated on construction.
class ProbBatch {
 public:
  explicit ProbBatch(Tensor p);
  static ProbBatch from_logits(const Tensor& logits);

  const Tensor& tensor() const { return p_; }
  std::size_t rows() const { return p_.rows(); }
  std::size_t classes() const { return p_.cols(); }
  double at(std::size_t r, std::size_t c) const { return p_.at(r, c); }
  /// Same values, cut from the tape (the frozen dual's view).
  ProbBatch detach() const { return ProbBatch(p_.detach()); }

 private:
  Tensor p_;
};

/// Mean over the batch of -log softmax(logits)[i, labels[i]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Per-sample cross-entropy values, off the tape. Used for small-loss
/// selection.
std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over rows of sum_c p_c ln(p_c / q_c), both clamped below by
/// kProbabilityFloor.
Tensor kl_divergence(const ProbBatch& p, const ProbBatch& q);

/// kl(p1 || p2) + kl(p2 || p1).
Tensor symmetric_kl(const ProbBatch& p1, const ProbBatch& p2);

struct LossBundle {
  Tensor super;
  Tensor guide;
  Tensor total;
  double beta = 0.0;
};

/// total = super + beta * guide, differentiable through both terms.
LossBundle total_loss(const Tensor& super, const Tensor& guide, double beta);

}  // namespace gearnet
