#include "gearnet/losses.hpp"

#include <cmath>
#include <string>

namespace gearnet {

ProbBatch::ProbBatch(Tensor p) : p_(std::move(p)) {
  if (p_.rank() != 2) throw DimensionError("probability batch must be a matrix, got " + to_string(p_.shape()));
  const std::size_t k = p_.cols();
  auto v = p_.data();
  for (std::size_t i = 0; i < p_.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double x = v[i * k + j];
      if (!(x >= 0.0)) {
        throw ContractError("probability row " + std::to_string(i) + " has entry " + std::to_string(x));
      }
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("probability row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
}

ProbBatch ProbBatch::from_logits(const Tensor& logits) { return ProbBatch(softmax(logits)); }

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                          std::to_string(logits.cols()) + ")");
    }
  }
  return scale(mean(gather(log_softmax(logits), labels)), -1.0);
}

std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  NoGradGuard no_grad;
  const Tensor picked = gather(log_softmax(logits.detach()), labels);
  std::vector<double> out(picked.data().begin(), picked.data().end());
  for (double& v : out) v = -v;
  return out;
}

Tensor kl_divergence(const ProbBatch& p, const ProbBatch& q) {
  if (p.tensor().shape() != q.tensor().shape()) {
    throw DimensionError("kl_divergence: shape mismatch " + to_string(p.tensor().shape()) + " vs " +
                         to_string(q.tensor().shape()));
  }
  const Tensor pc = clamp_min(p.tensor(), kProbabilityFloor);
  const Tensor qc = clamp_min(q.tensor(), kProbabilityFloor);
  return mean(row_sum(mul(pc, sub(log(pc), log(qc)))));
}

Tensor symmetric_kl(const ProbBatch& p1, const ProbBatch& p2) {
  return add(kl_divergence(p1, p2), kl_divergence(p2, p1));
}

LossBundle total_loss(const Tensor& super, const Tensor& guide, double beta) {
  if (!(beta >= 0.0)) throw ParameterError("beta must be >= 0, got " + std::to_string(beta));
  return LossBundle{super, guide, add(super, scale(guide, beta)), beta};
}

}  // namespace gearnet
