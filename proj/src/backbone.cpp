#include "gearnet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "gearnet/rng.hpp"

namespace gearnet {

namespace {

constexpr std::uint64_t kClassifierSalt = 0;
constexpr std::uint64_t kDiscriminatorSalt = 2;

std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Mlp

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ParameterError("an MLP needs at least input and output widths");
  if (std::find(widths.begin(), widths.end(), 0U) != widths.end()) {
    throw ParameterError("MLP widths must be positive");
  }
  if (widths.back() < 2) throw ParameterError("MLP output width must be >= 2 classes");
  if (!(init_scale > 0.0) || !std::isfinite(init_scale)) throw ParameterError("init_scale must be positive");
}

Mlp::Mlp(const MlpSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const std::size_t in = spec_.widths[l], out = spec_.widths[l + 1];
    std::vector<double> w(in * out);
    for (double& v : w) v = spec_.init_scale * normal(rng);
    layers_.push_back({Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)});
  }
}

Mlp::Mlp(const Mlp& other) : spec_(other.spec_) {
  layers_.reserve(other.layers_.size());
  for (const auto& layer : other.layers_) layers_.push_back({layer.weight.clone(), layer.bias.clone()});
}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) *this = Mlp(other);
  return *this;
}

Mlp::Output Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    h = relu(add_bias(matmul(h, layers_[l].weight), layers_[l].bias));
  }
  Tensor z = add_bias(matmul(h, layers_.back().weight), layers_.back().bias);
  return {h, z};
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::standard: return "standard";
    case BackboneKind::coteaching: return "coteaching";
    case BackboneKind::dann: return "dann";
  }
  return "?";
}

BackboneKind parse_backbone_kind(const std::string& text) {
  if (text == "standard") return BackboneKind::standard;
  if (text == "coteaching") return BackboneKind::coteaching;
  if (text == "dann") return BackboneKind::dann;
  throw ParameterError("unknown backbone '" + text + "' (expected standard|coteaching|dann)");
}

void BackboneHyper::validate() const {
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw ParameterError("co-teaching noise_rate must lie in [0,1)");
  if (!(keep_ramp_epochs > 0.0)) throw ParameterError("keep_ramp_epochs must be positive");
  if (fixed_keep_rate && !(*fixed_keep_rate > 0.0 && *fixed_keep_rate <= 1.0)) {
    throw ParameterError("keep_rate must lie in (0,1]");
  }
  if (!(dann_lambda >= 0.0)) throw ParameterError("dann_lambda must be >= 0");
  if (discriminator_hidden == 0) throw ParameterError("discriminator_hidden must be positive");
}

std::vector<std::size_t> small_loss_selection(std::span<const double> losses, double keep_rate) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw ContractError("keep rate " + std::to_string(keep_rate) + " would select nothing");
  }
  if (losses.empty()) throw ContractError("small-loss selection on an empty batch");
  const auto n = losses.size();
  const auto wanted = static_cast<std::size_t>(std::floor(keep_rate * static_cast<double>(n) + 1e-9));
  const std::size_t keep = std::clamp<std::size_t>(wanted, 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------
// Backbone

Backbone Backbone::init(BackboneKind kind, const MlpSpec& mlp, const BackboneHyper& hyper, std::uint64_t seed) {
  mlp.validate();
  hyper.validate();
  Backbone b(kind, hyper);
  b.classifiers_.emplace_back(mlp, derive_seed(seed, {kClassifierSalt}));
  if (kind == BackboneKind::coteaching) {
    b.classifiers_.emplace_back(mlp, derive_seed(seed, {kClassifierSalt + 1}));
  }
  if (kind == BackboneKind::dann) {
    if (mlp.widths.size() < 3) throw ParameterError("DANN needs at least one hidden layer to align");
    const std::size_t feature_width = mlp.widths[mlp.widths.size() - 2];
    MlpSpec disc{{feature_width, hyper.discriminator_hidden, 2}, mlp.init_scale};
    b.discriminator_.emplace(disc, derive_seed(seed, {kDiscriminatorSalt}));
  }
  return b;
}

void Backbone::check_width(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != mlp_spec().input_width()) {
    throw DimensionError("backbone expects inputs of width " + std::to_string(mlp_spec().input_width()) +
                         ", got " + to_string(x.shape()));
  }
}

Tensor Backbone::logits(const Tensor& x, std::size_t head) const {
  check_width(x);
  return classifiers_.at(head).logits(x);
}

ProbBatch Backbone::predict_probs(const Tensor& x, std::size_t head) const {
  NoGradGuard no_grad;
  return ProbBatch::from_logits(logits(x, head));
}

std::vector<int> Backbone::predict_labels(const Tensor& x) const {
  const ProbBatch p = predict_probs(x);
  std::vector<int> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (std::size_t c = 1; c < p.classes(); ++c) {
      if (p.at(i, c) > p.at(i, static_cast<std::size_t>(best))) best = static_cast<int>(c);
    }
    out[i] = best;
  }
  return out;
}

double Backbone::keep_rate(std::size_t epoch) const {
  if (hyper_.fixed_keep_rate) return *hyper_.fixed_keep_rate;
  const double ramp = std::min(static_cast<double>(epoch) / hyper_.keep_ramp_epochs, 1.0);
  return 1.0 - hyper_.noise_rate * ramp;
}

Tensor Backbone::bone_loss(const Tensor& labeled_x, std::span<const int> labels, const Tensor& unlabeled_x,
                           const StepContext& ctx) const {
  check_width(labeled_x);
  switch (kind_) {
    case BackboneKind::standard:
      return cross_entropy(classifiers_[0].logits(labeled_x), labels);

    case BackboneKind::coteaching: {
      const Tensor z1 = classifiers_[0].logits(labeled_x);
      const Tensor z2 = classifiers_[1].logits(labeled_x);
      const double keep = keep_rate(ctx.epoch);
      const auto pick1 = small_loss_selection(per_sample_cross_entropy(z1, labels), keep);
      const auto pick2 = small_loss_selection(per_sample_cross_entropy(z2, labels), keep);
      auto labels_of = [&](const std::vector<std::size_t>& idx) {
        std::vector<int> y(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) y[i] = labels[idx[i]];
        return y;
      };
      // Cross update: each peer learns from the samples its partner trusts.
      const Tensor loss1 = cross_entropy(select_rows(z1, pick2), labels_of(pick2));
      const Tensor loss2 = cross_entropy(select_rows(z2, pick1), labels_of(pick1));
      return add(loss1, loss2);
    }

    case BackboneKind::dann: {
      check_width(unlabeled_x);
      const Mlp::Output labeled = classifiers_[0].forward(labeled_x);
      const Tensor unlabeled_features = classifiers_[0].forward(unlabeled_x).features;
      const Tensor features = concat_rows(labeled.features, unlabeled_features);
      std::vector<int> domain(features.rows(), 1);
      std::fill_n(domain.begin(), labeled_x.rows(), 0);
      const Tensor domain_logits = discriminator_->logits(grad_reverse(features, hyper_.dann_lambda));
      return add(cross_entropy(labeled.logits, labels), cross_entropy(domain_logits, domain));
    }
  }
  throw ContractError("unknown backbone kind");
}

std::vector<std::size_t> Backbone::guide_targets() const {
  std::vector<std::size_t> heads(classifiers_.size());
  std::iota(heads.begin(), heads.end(), std::size_t{0});
  return heads;
}

double Backbone::discriminator_accuracy(const Tensor& labeled_x, const Tensor& unlabeled_x) const {
  if (!discriminator_) throw ContractError("only DANN backbones carry a domain discriminator");
  NoGradGuard no_grad;
  const Tensor features = concat_rows(classifiers_[0].forward(labeled_x).features,
                                      classifiers_[0].forward(unlabeled_x).features);
  const Tensor z = discriminator_->logits(features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const int predicted = z.at(i, 1) > z.at(i, 0) ? 1 : 0;
    const int actual = i < labeled_x.rows() ? 0 : 1;
    correct += predicted == actual;
  }
  return static_cast<double>(correct) / static_cast<double>(z.rows());
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out;
  for (const auto& c : classifiers_) {
    auto p = c.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (discriminator_) {
    auto p = discriminator_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<std::string> Backbone::parameter_names() const {
  std::vector<std::string> names;
  auto add_net = [&](const std::string& prefix, const Mlp& net) {
    for (std::size_t l = 0; l + 1 < net.spec().widths.size(); ++l) {
      names.push_back(prefix + ".layer" + std::to_string(l) + ".weight");
      names.push_back(prefix + ".layer" + std::to_string(l) + ".bias");
    }
  };
  for (std::size_t i = 0; i < classifiers_.size(); ++i) add_net("classifier" + std::to_string(i), classifiers_[i]);
  if (discriminator_) add_net("discriminator", *discriminator_);
  return names;
}

std::uint64_t Backbone::parameter_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : parameters()) {
    for (std::size_t dim : p.shape()) h = fnv1a(h, &dim, sizeof dim);
    h = fnv1a(h, p.data().data(), p.size() * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Snapshots

void write_snapshot(std::ostream& out, const Backbone& model) {
  const auto params = model.parameters();
  const auto names = model.parameter_names();
  out << "gearnet-snapshot 1 " << to_string(model.kind()) << ' ' << params.size() << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i];
    const std::size_t rows = p.rank() == 2 ? p.rows() : 1;
    const std::size_t cols = p.size() / rows;
    out << names[i] << ' ' << rows << ' ' << cols << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out << (c ? " " : "") << p.data()[r * cols + c];
      out << '\n';
    }
  }
}

void read_snapshot(std::istream& in, Backbone& model) {
  std::string magic, kind;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> kind >> count) || magic != "gearnet-snapshot" || version != 1) {
    throw ContractError("not a gearnet snapshot");
  }
  if (kind != to_string(model.kind())) {
    throw ContractError("snapshot holds a " + kind + " backbone, expected " + to_string(model.kind()));
  }
  auto params = model.parameters();
  const auto names = model.parameter_names();
  if (count != params.size()) {
    throw DimensionError("snapshot holds " + std::to_string(count) + " tensors, model has " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) throw ContractError("truncated snapshot header at tensor " + std::to_string(i));
    if (name != names[i] || rows * cols != params[i].size()) {
      throw DimensionError("snapshot tensor '" + name + "' (" + std::to_string(rows) + "x" + std::to_string(cols) +
                           ") does not match '" + names[i] + "' " + to_string(params[i].shape()));
    }
    for (double& v : params[i].mutable_data()) {
      if (!(in >> v)) throw ContractError("truncated snapshot values in '" + name + "'");
    }
  }
}

}  // namespace gearnet
