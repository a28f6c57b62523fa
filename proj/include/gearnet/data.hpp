#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gearnet/tensor.hpp"

namespace gearnet {

/// While alive, the current thread is on the training path: reading the
/// labels of an evaluation-only set throws.
class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Features plus class labels. A source set carries the injected noisy labels
/// used for training; a target set's true labels are evaluation-only.
class LabeledSet {
 public:
  LabeledSet(Tensor x, std::vector<int> y_true, int num_classes, bool evaluation_only);

  std::size_t size() const { return x_.rows(); }
  std::size_t dim() const { return x_.cols(); }
  int num_classes() const { return num_classes_; }
  const Tensor& features() const { return x_; }
  Tensor rows(std::span<const std::size_t> idx) const;

  bool evaluation_only() const { return evaluation_only_; }
  /// Ground truth. Throws ContractError for an evaluation-only set while a
  /// TrainingScope is active.
  const std::vector<int>& y_true() const;
  std::size_t y_true_reads() const { return y_true_reads_; }

  bool has_noisy_labels() const { return y_noisy_.has_value(); }
  const std::vector<int>& y_noisy() const;
  void set_noisy_labels(std::vector<int> labels);
  /// Labels a training loop may fit: the noisy labels when injected,
  /// otherwise the clean labels. Never available for evaluation-only sets.
  const std::vector<int>& training_labels() const;

 private:
  Tensor x_;
  std::vector<int> y_true_;
  std::optional<std::vector<int>> y_noisy_;
  int num_classes_;
  bool evaluation_only_;
  mutable std::size_t y_true_reads_ = 0;
};

struct DomainPair {
  LabeledSet source;
  LabeledSet target;
};

enum class NoiseKind { uniform, flip };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& text);

/// Row-stochastic label-corruption matrix, q(i, j) = Pr(noisy = j | clean = i).
class TransitionMatrix {
 public:
  TransitionMatrix(NoiseKind kind, int num_classes, double rho, std::vector<double> q);

  NoiseKind kind() const { return kind_; }
  int num_classes() const { return k_; }
  double rho() const { return rho_; }
  double operator()(int from, int to) const { return q_[static_cast<std::size_t>(from * k_ + to)]; }
  std::span<const double> row(int from) const;

 private:
  NoiseKind kind_;
  int k_;
  double rho_;
  std::vector<double> q_;
};

/// Uniform: diagonal 1 - rho(K-1)/K, off-diagonal rho/K.
/// Flip: diagonal 1 - rho, class c flips to (c - 1) mod K with probability rho.
TransitionMatrix build_transition_matrix(NoiseKind kind, int num_classes, double rho);

/// Class a flip-noise label moves to.
int flip_partner(int label, int num_classes);

/// Resamples every label from its row of `q`; a pure function of the seed.
std::vector<int> inject_noise(std::span<const int> y_true, const TransitionMatrix& q, std::uint64_t seed);

enum class DomainFamily { gaussians, moons };

std::string to_string(DomainFamily family);
DomainFamily parse_domain_family(const std::string& text);

struct DomainPairSpec {
  DomainFamily family = DomainFamily::gaussians;
  int num_classes = 4;
  std::size_t dim = 2;
  std::size_t n_source = 500;
  std::size_t n_target = 500;
  /// Target shift: rotation in the (f0, f1) plane about the origin, then a
  /// translation of this magnitude along f0.
  double rotation_deg = 0.0;
  double translation = 0.0;
  /// Gaussians: radius of the circle holding the class means and the
  /// per-axis standard deviation. Moons: moon radius and noise level.
  double radius = 3.0;
  double spread = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class mean of the untransformed (source) distribution. Gaussians only.
std::vector<double> class_mean(const DomainPairSpec& spec, int label);
/// Applies the spec's target transform to one point.
std::vector<double> shift_point(const DomainPairSpec& spec, std::span<const double> point);

DomainPair make_domain_pair(const DomainPairSpec& spec);

/// Index batches for one epoch: a permutation of 0..n-1 that depends only on
/// (seed, epoch), cut into chunks of `batch_size` (the last one may be short).
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch);

/// CSV layout: f0..f{d-1},y_true[,y_noisy]. Evaluation-only labels are
/// written too; this path is for inspection, not training.
void write_csv(std::ostream& out, const LabeledSet& set);
void write_csv(const std::string& path, const LabeledSet& set);

}  // namespace gearnet
