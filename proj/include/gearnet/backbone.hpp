#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gearnet/losses.hpp"
#include "gearnet/tensor.hpp"

namespace gearnet {

/// Layer widths d -> h ... -> K with relu between layers.
struct MlpSpec {
  std::vector<std::size_t> widths{2, 64, 4};
  /// Weights start as init_scale * N(0, 1); biases start at zero.
  double init_scale = 0.1;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  void validate() const;
};

/// Fully connected relu network. Copies are deep.
class Mlp {
 public:
  struct Output {
    Tensor features;  ///< activations feeding the last layer
    Tensor logits;
  };

  Mlp(const MlpSpec& spec, std::uint64_t seed);
  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  Output forward(const Tensor& x) const;
  Tensor logits(const Tensor& x) const { return forward(x).logits; }

  const MlpSpec& spec() const { return spec_; }
  /// weight0, bias0, weight1, bias1, ...
  std::vector<Tensor> parameters() const;

 private:
  struct Layer {
    Tensor weight;  // in x out
    Tensor bias;    // out
  };
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

enum class BackboneKind { standard, coteaching, dann };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& text);

struct BackboneHyper {
  /// Co-teaching: keep_rate(t) = 1 - noise_rate * min(t / keep_ramp_epochs, 1).
  double noise_rate = 0.2;
  double keep_ramp_epochs = 10.0;
  /// Replaces the schedule when set.
  std::optional<double> fixed_keep_rate;
  /// DANN: gradient-reversal strength and discriminator hidden width.
  double dann_lambda = 1.0;
  std::size_t discriminator_hidden = 32;

  void validate() const;
};

struct StepContext {
  std::size_t epoch = 0;  ///< epoch index within the current step
};

/// Indices of the floor(keep_rate * n) smallest losses, at least one,
/// returned in ascending index order. Ties favour the lower index.
std::vector<std::size_t> small_loss_selection(std::span<const double> losses, double keep_rate);

/// A trainable model plus its method-specific supervised loss.
class Backbone {
 public:
  static Backbone init(BackboneKind kind, const MlpSpec& mlp, const BackboneHyper& hyper, std::uint64_t seed);

  BackboneKind kind() const { return kind_; }
  const BackboneHyper& hyper() const { return hyper_; }
  const MlpSpec& mlp_spec() const { return classifiers_.front().spec(); }
  std::span<const Mlp> classifiers() const { return classifiers_; }
  std::span<Mlp> classifiers() { return classifiers_; }
  const std::optional<Mlp>& discriminator() const { return discriminator_; }

  /// Logits of one classifier head, recorded on the tape.
  Tensor logits(const Tensor& x, std::size_t head = 0) const;
  /// Class probabilities of one head, off the tape.
  ProbBatch predict_probs(const Tensor& x, std::size_t head = 0) const;
  std::vector<int> predict_labels(const Tensor& x) const;

  /// standard: cross-entropy on the labeled batch.
  /// coteaching: each peer picks its small-loss subset; the other peer
  ///   trains on it. Returns the sum of both peer losses.
  /// dann: cross-entropy plus a domain loss on labeled+unlabeled features
  ///   seen through grad_reverse.
  Tensor bone_loss(const Tensor& labeled_x, std::span<const int> labels, const Tensor& unlabeled_x,
                   const StepContext& ctx) const;

  /// Heads that must each agree with the dual model.
  std::vector<std::size_t> guide_targets() const;

  double keep_rate(std::size_t epoch) const;

  /// Fraction of samples the DANN discriminator assigns to the right domain.
  double discriminator_accuracy(const Tensor& labeled_x, const Tensor& unlabeled_x) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::uint64_t parameter_hash() const;

 private:
  Backbone(BackboneKind kind, BackboneHyper hyper) : kind_(kind), hyper_(std::move(hyper)) {}

  void check_width(const Tensor& x) const;

  BackboneKind kind_;
  BackboneHyper hyper_;
  std::vector<Mlp> classifiers_;
  std::optional<Mlp> discriminator_;
};

/// Text snapshot: a "gearnet-snapshot 1 <kind> <count>" line, then per tensor
/// a "<name> <rows> <cols>" line followed by its rows of values.
void write_snapshot(std::ostream& out, const Backbone& model);
/// Loads values into a backbone with matching layout.
void read_snapshot(std::istream& in, Backbone& model);

}  // namespace gearnet
