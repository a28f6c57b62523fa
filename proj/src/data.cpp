#include "gearnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>

#include "gearnet/rng.hpp"

namespace gearnet {

namespace {

thread_local bool g_training_path = false;

constexpr std::uint64_t kSourceStream = 1;
constexpr std::uint64_t kTargetStream = 2;

void check_labels(std::span<const int> labels, int num_classes, const char* what) {
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ContractError(std::string(what) + ": label " + std::to_string(y) + " outside [0," +
                          std::to_string(num_classes) + ")");
    }
  }
}

// One point of the base (unshifted) distribution for the given class.
void sample_point(const DomainPairSpec& spec, int label, Rng& rng, std::span<double> out) {
  std::normal_distribution<double> noise(0.0, spec.spread);
  if (spec.family == DomainFamily::gaussians) {
    const auto mu = class_mean(spec, label);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = mu[j] + noise(rng);
    return;
  }
  // Two interleaved half circles, centred on the origin.
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  const double t = angle(rng);
  const double r = spec.radius;
  double px = 0.0, py = 0.0;
  if (label == 0) {
    px = r * std::cos(t);
    py = r * std::sin(t);
  } else {
    px = r * (1.0 - std::cos(t));
    py = r * (0.5 - std::sin(t));
  }
  out[0] = px - 0.5 * r + noise(rng);
  out[1] = py - 0.25 * r + noise(rng);
  for (std::size_t j = 2; j < out.size(); ++j) out[j] = noise(rng);
}

LabeledSet sample_set(const DomainPairSpec& spec, std::size_t n, std::uint64_t stream, bool is_target) {
  Rng rng(derive_seed(spec.seed, {stream}));
  std::vector<double> x(n * spec.dim);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
    std::span<double> row(x.data() + i * spec.dim, spec.dim);
    sample_point(spec, y[i], rng, row);
    if (is_target) {
      const auto moved = shift_point(spec, row);
      std::copy(moved.begin(), moved.end(), row.begin());
    }
  }
  return LabeledSet(Tensor::from({n, spec.dim}, std::move(x)), std::move(y), spec.num_classes, is_target);
}

}  // namespace

// ---------------------------------------------------------------------------

TrainingScope::TrainingScope() : previous_(g_training_path) { g_training_path = true; }
TrainingScope::~TrainingScope() { g_training_path = previous_; }
bool TrainingScope::active() { return g_training_path; }

LabeledSet::LabeledSet(Tensor x, std::vector<int> y_true, int num_classes, bool evaluation_only)
    : x_(std::move(x)), y_true_(std::move(y_true)), num_classes_(num_classes), evaluation_only_(evaluation_only) {
  if (num_classes_ < 2) throw ParameterError("a labeled set needs at least 2 classes");
  if (x_.rank() != 2) throw DimensionError("features must be an n x d matrix, got " + to_string(x_.shape()));
  if (y_true_.size() != x_.rows()) {
    throw DimensionError("label count " + std::to_string(y_true_.size()) + " does not match " +
                         std::to_string(x_.rows()) + " feature rows");
  }
  check_labels(y_true_, num_classes_, "y_true");
}

Tensor LabeledSet::rows(std::span<const std::size_t> idx) const {
  NoGradGuard no_grad;
  return select_rows(x_, idx);
}

const std::vector<int>& LabeledSet::y_true() const {
  if (evaluation_only_ && TrainingScope::active()) {
    throw ContractError("training path read the evaluation-only target labels");
  }
  ++y_true_reads_;
  return y_true_;
}

const std::vector<int>& LabeledSet::y_noisy() const {
  if (!y_noisy_) throw ContractError("this set has no injected noisy labels");
  return *y_noisy_;
}

void LabeledSet::set_noisy_labels(std::vector<int> labels) {
  if (evaluation_only_) throw ContractError("noisy labels belong to the source domain only");
  if (labels.size() != size()) {
    throw DimensionError("noisy label count " + std::to_string(labels.size()) + " does not match set size " +
                         std::to_string(size()));
  }
  check_labels(labels, num_classes_, "y_noisy");
  y_noisy_ = std::move(labels);
}

const std::vector<int>& LabeledSet::training_labels() const {
  if (evaluation_only_) {
    throw ContractError("evaluation-only labels requested for training");
  }
  return y_noisy_ ? *y_noisy_ : y_true_;
}

// ---------------------------------------------------------------------------

std::string to_string(NoiseKind kind) { return kind == NoiseKind::uniform ? "uniform" : "flip"; }

NoiseKind parse_noise_kind(const std::string& text) {
  if (text == "uniform" || text == "unif") return NoiseKind::uniform;
  if (text == "flip") return NoiseKind::flip;
  throw ParameterError("unknown noise kind '" + text + "' (expected uniform|flip)");
}

TransitionMatrix::TransitionMatrix(NoiseKind kind, int num_classes, double rho, std::vector<double> q)
    : kind_(kind), k_(num_classes), rho_(rho), q_(std::move(q)) {
  if (q_.size() != static_cast<std::size_t>(k_ * k_)) {
    throw DimensionError("transition matrix needs K*K entries");
  }
}

std::span<const double> TransitionMatrix::row(int from) const {
  return std::span<const double>(q_).subspan(static_cast<std::size_t>(from * k_), static_cast<std::size_t>(k_));
}

int flip_partner(int label, int num_classes) { return (label + num_classes - 1) % num_classes; }

TransitionMatrix build_transition_matrix(NoiseKind kind, int num_classes, double rho) {
  if (num_classes < 2) {
    throw ParameterError("transition matrix needs K >= 2, got " + std::to_string(num_classes));
  }
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw ParameterError("noise rate must lie in [0, 1), got " + std::to_string(rho));
  }
  const int k = num_classes;
  const double kd = static_cast<double>(k);
  std::vector<double> q(static_cast<std::size_t>(k * k), 0.0);
  for (int i = 0; i < k; ++i) {
    double* row = q.data() + i * k;
    if (kind == NoiseKind::uniform) {
      std::fill(row, row + k, rho / kd);
      row[i] = 1.0 - rho * (kd - 1.0) / kd;
    } else {
      row[i] = 1.0 - rho;
      row[flip_partner(i, k)] += rho;
    }
  }
  return TransitionMatrix(kind, k, rho, std::move(q));
}

std::vector<int> inject_noise(std::span<const int> y_true, const TransitionMatrix& q, std::uint64_t seed) {
  const int k = q.num_classes();
  check_labels(y_true, k, "inject_noise");
  std::vector<std::discrete_distribution<int>> rows;
  rows.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    auto r = q.row(c);
    rows.emplace_back(r.begin(), r.end());
  }
  Rng rng(seed);
  std::vector<int> noisy(y_true.size());
  for (std::size_t i = 0; i < y_true.size(); ++i) noisy[i] = rows[static_cast<std::size_t>(y_true[i])](rng);
  return noisy;
}

// ---------------------------------------------------------------------------

std::string to_string(DomainFamily family) { return family == DomainFamily::gaussians ? "gaussians" : "moons"; }

DomainFamily parse_domain_family(const std::string& text) {
  if (text == "gaussians") return DomainFamily::gaussians;
  if (text == "moons") return DomainFamily::moons;
  throw ParameterError("unknown domain family '" + text + "' (expected gaussians|moons)");
}

void DomainPairSpec::validate() const {
  if (num_classes < 2) throw ParameterError("domain pair needs K >= 2");
  if (family == DomainFamily::moons && num_classes != 2) throw ParameterError("two-moons is a 2-class family");
  if (dim < 2) throw ParameterError("domain pair needs d >= 2");
  if (n_source == 0 || n_target == 0) throw ParameterError("domain sizes must be positive");
  if (!std::isfinite(rotation_deg) || !std::isfinite(translation)) {
    throw ParameterError("shift parameters must be finite");
  }
  if (!(radius > 0.0) || !(spread > 0.0) || !std::isfinite(radius) || !std::isfinite(spread)) {
    throw ParameterError("radius and spread must be positive and finite");
  }
}

std::vector<double> class_mean(const DomainPairSpec& spec, int label) {
  std::vector<double> mu(spec.dim, 0.0);
  const double theta = 2.0 * std::numbers::pi * label / spec.num_classes;
  mu[0] = spec.radius * std::cos(theta);
  mu[1] = spec.radius * std::sin(theta);
  return mu;
}

std::vector<double> shift_point(const DomainPairSpec& spec, std::span<const double> point) {
  std::vector<double> out(point.begin(), point.end());
  const double a = spec.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  out[0] = c * point[0] - s * point[1] + spec.translation;
  out[1] = s * point[0] + c * point[1];
  return out;
}

DomainPair make_domain_pair(const DomainPairSpec& spec) {
  spec.validate();
  return DomainPair{sample_set(spec, spec.n_source, kSourceStream, false),
                    sample_set(spec, spec.n_target, kTargetStream, true)};
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch) {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

void write_csv(std::ostream& out, const LabeledSet& set) {
  const std::size_t d = set.dim();
  for (std::size_t j = 0; j < d; ++j) out << 'f' << j << ',';
  out << "y_true";
  if (set.has_noisy_labels()) out << ",y_noisy";
  out << '\n';
  out.precision(17);
  const auto& y = set.y_true();
  auto x = set.features().data();
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << x[i * d + j] << ',';
    out << y[i];
    if (set.has_noisy_labels()) out << ',' << set.y_noisy()[i];
    out << '\n';
  }
}

void write_csv(const std::string& path, const LabeledSet& set) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_csv(out, set);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace gearnet
