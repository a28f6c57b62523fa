#include "gearnet/engine.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "gearnet/rng.hpp"

namespace gearnet {

namespace {

constexpr std::uint64_t kInitSalt = 0x1417;
constexpr std::uint64_t kShuffleSalt = 0x5f1e;

// One domain as seen by a training loop.
struct DomainView {
  const LabeledSet* set;
  const std::vector<int>* labels;  // null for the unlabeled side
  std::size_t batch;
  std::uint64_t seed;
};

// Trains `model` for cfg.epochs epochs. The labeled side feeds the bone
// loss; the other side feeds the unlabeled half of the bone loss and, when a
// dual is given, the guide loss.
void train_model(Backbone& model, const Backbone* dual, const DomainView& labeled, const DomainView& other,
                 const GearNetConfig& cfg, StepRecord& record) {
  TrainingScope training_path;
  auto params = model.parameters();
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (const Tensor& p : params) velocity.push_back(Tensor::zeros(p.shape()));

  const double beta = dual ? cfg.beta : 0.0;
  const std::vector<std::size_t> heads = model.guide_targets();
  double super_total = 0.0, guide_total = 0.0;
  std::size_t batch_count = 0;

  for (std::size_t epoch = 0; epoch < static_cast<std::size_t>(cfg.epochs); ++epoch) {
    const auto lb = batches(labeled.set->size(), labeled.batch, labeled.seed, epoch);
    const auto ob = batches(other.set->size(), other.batch, other.seed, epoch);
    const std::size_t iterations = std::max(lb.size(), ob.size());
    double epoch_super = 0.0, epoch_guide = 0.0;

    for (std::size_t it = 0; it < iterations; ++it) {
      const auto& li = lb[it % lb.size()];
      const auto& oi = ob[it % ob.size()];
      const Tensor xl = labeled.set->rows(li);
      const Tensor xo = other.set->rows(oi);
      std::vector<int> yl(li.size());
      for (std::size_t i = 0; i < li.size(); ++i) yl[i] = (*labeled.labels)[li[i]];

      const Tensor super = model.bone_loss(xl, yl, xo, StepContext{epoch});
      Tensor guide = Tensor::scalar(0.0);
      if (dual) {
        const ProbBatch dual_probs = dual->predict_probs(xo);
        for (std::size_t head : heads) {
          guide = add(guide, symmetric_kl(ProbBatch::from_logits(model.logits(xo, head)), dual_probs));
        }
      }
      const LossBundle loss = total_loss(super, guide, beta);
      if (!std::isfinite(loss.total.item())) {
        throw NumericError("non-finite loss at step " + std::to_string(record.step) + " (" +
                           to_string(record.direction) + "), epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(it));
      }

      for (Tensor& p : params) p.zero_grad();
      loss.total.backward();
      sgd_step(params, cfg.eta, cfg.momentum, velocity);

      record.super_trace.push_back(super.item());
      epoch_super += super.item();
      epoch_guide += guide.item();
    }
    record.epoch_super_loss.push_back(epoch_super / static_cast<double>(iterations));
    record.epoch_guide_loss.push_back(epoch_guide / static_cast<double>(iterations));
    super_total += epoch_super;
    guide_total += epoch_guide;
    batch_count += iterations;
  }
  record.super_loss = super_total / static_cast<double>(batch_count);
  record.guide_loss = guide_total / static_cast<double>(batch_count);

  for (const Tensor& p : model.parameters()) {
    for (double v : p.data()) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite parameter after step " + std::to_string(record.step));
      }
    }
  }
}

Backbone fresh_model(const GearNetConfig& cfg, const DomainPair& data, int step) {
  return Backbone::init(cfg.backbone, cfg.mlp_spec(data.source.dim(), data.source.num_classes()), cfg.hyper,
                        model_seed(cfg, step));
}

// Runs one step's training with the step-level bookkeeping around it.
template <typename Train>
StepRecord timed_step(int step, Direction direction, std::uint64_t seed, Train&& train) {
  StepRecord record;
  record.step = step;
  record.direction = direction;
  record.init_seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    train(record);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step) + " (" + to_string(direction) + "): " + e.what());
  }
  record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

void check_data(const DomainPair& data) {
  if (data.source.dim() != data.target.dim() || data.source.num_classes() != data.target.num_classes()) {
    throw DimensionError("source and target disagree on feature width or class count");
  }
}

}  // namespace

std::string to_string(Direction d) {
  switch (d) {
    case Direction::pretrain: return "pretrain";
    case Direction::backward: return "backward";
    case Direction::forward: return "forward";
  }
  return "?";
}

Direction parse_direction(const std::string& text) {
  if (text == "pretrain") return Direction::pretrain;
  if (text == "backward") return Direction::backward;
  if (text == "forward") return Direction::forward;
  throw ParameterError("unknown direction '" + text + "'");
}

Direction direction_of_step(int step) {
  if (step == 0) return Direction::pretrain;
  return step % 2 == 1 ? Direction::backward : Direction::forward;
}

std::string to_string(SeedSchedule s) { return s == SeedSchedule::per_step ? "per_step" : "aligned"; }

SeedSchedule parse_seed_schedule(const std::string& text) {
  if (text == "per_step") return SeedSchedule::per_step;
  if (text == "aligned") return SeedSchedule::aligned;
  throw ParameterError("unknown seed schedule '" + text + "' (expected per_step|aligned)");
}

void GearNetConfig::validate() const {
  if (max_steps < 1) throw ParameterError("max_steps (M) must be >= 1");
  if (epochs < 1) throw ParameterError("epochs (N) must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ParameterError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0,1)");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ParameterError("beta must be >= 0");
  if (source_batch == 0 || target_batch == 0) throw ParameterError("batch sizes must be >= 1");
  hyper.validate();
}

MlpSpec GearNetConfig::mlp_spec(std::size_t input_dim, int num_classes) const {
  MlpSpec spec;
  spec.widths.clear();
  spec.widths.push_back(input_dim);
  spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
  spec.widths.push_back(static_cast<std::size_t>(num_classes));
  spec.init_scale = init_scale;
  return spec;
}

std::uint64_t model_seed(const GearNetConfig& cfg, int step) {
  if (cfg.seed_schedule == SeedSchedule::aligned) {
    const std::uint64_t role = direction_of_step(step) == Direction::backward ? 1 : 0;
    return derive_seed(cfg.seed, {kInitSalt, role});
  }
  return derive_seed(cfg.seed, {kInitSalt, static_cast<std::uint64_t>(step)});
}

std::uint64_t shuffle_seed(const GearNetConfig& cfg, int step, int domain) {
  const auto d = static_cast<std::uint64_t>(domain);
  if (cfg.seed_schedule == SeedSchedule::aligned) return derive_seed(cfg.seed, {kShuffleSalt, d});
  return derive_seed(cfg.seed, {kShuffleSalt, d, static_cast<std::uint64_t>(step)});
}

TrainingState pretrain(const GearNetConfig& cfg, const DomainPair& data, const StepObserver& observer) {
  cfg.validate();
  check_data(data);
  TrainingState state{fresh_model(cfg, data, 0), std::nullopt, {}, 0, 0, {}};
  StepRecord record = timed_step(0, Direction::pretrain, model_seed(cfg, 0), [&](StepRecord& r) {
    r.init_hash = state.f.parameter_hash();
    const DomainView source{&data.source, &data.source.training_labels(), cfg.source_batch, shuffle_seed(cfg, 0, 0)};
    const DomainView target{&data.target, nullptr, cfg.target_batch, shuffle_seed(cfg, 0, 1)};
    train_model(state.f, nullptr, source, target, cfg, r);
    r.final_hash = state.f.parameter_hash();
  });
  update_pseudo_labels(state, data);
  record.pseudo_label_version = state.pseudo_label_version;
  if (observer) observer(state.f, record);
  state.history.push_back(std::move(record));
  return state;
}

void update_pseudo_labels(TrainingState& state, const DomainPair& data) {
  state.pseudo_labels = state.f.predict_labels(data.target.features());
  ++state.pseudo_label_version;
}

void backward_step(TrainingState& state, const GearNetConfig& cfg, const DomainPair& data,
                   const StepObserver& observer) {
  cfg.validate();
  check_data(data);
  if (state.step_index % 2 != 0) throw ContractError("backward step must follow pretraining or a forward step");
  if (state.pseudo_labels.size() != data.target.size()) {
    throw ContractError("backward step needs a pseudo label for every target sample");
  }
  const int step = state.step_index + 1;
  state.f_dual = fresh_model(cfg, data, step);
  StepRecord record = timed_step(step, Direction::backward, model_seed(cfg, step), [&](StepRecord& r) {
    r.init_hash = state.f_dual->parameter_hash();
    r.dual_hash_before = state.f.parameter_hash();
    const DomainView target{&data.target, &state.pseudo_labels, cfg.target_batch, shuffle_seed(cfg, step, 1)};
    const DomainView source{&data.source, nullptr, cfg.source_batch, shuffle_seed(cfg, step, 0)};
    train_model(*state.f_dual, &state.f, target, source, cfg, r);
    r.final_hash = state.f_dual->parameter_hash();
    r.dual_hash_after = state.f.parameter_hash();
  });
  state.step_index = step;
  record.pseudo_label_version = state.pseudo_label_version;
  if (observer) observer(*state.f_dual, record);
  state.history.push_back(std::move(record));
}

void forward_step(TrainingState& state, const GearNetConfig& cfg, const DomainPair& data,
                  const StepObserver& observer) {
  cfg.validate();
  check_data(data);
  if (state.step_index % 2 != 1 || !state.f_dual) {
    throw ContractError("forward step needs the dual trained by a preceding backward step");
  }
  const int step = state.step_index + 1;
  state.f = fresh_model(cfg, data, step);
  StepRecord record = timed_step(step, Direction::forward, model_seed(cfg, step), [&](StepRecord& r) {
    r.init_hash = state.f.parameter_hash();
    r.dual_hash_before = state.f_dual->parameter_hash();
    const DomainView source{&data.source, &data.source.training_labels(), cfg.source_batch,
                            shuffle_seed(cfg, step, 0)};
    const DomainView target{&data.target, nullptr, cfg.target_batch, shuffle_seed(cfg, step, 1)};
    train_model(state.f, &*state.f_dual, source, target, cfg, r);
    r.final_hash = state.f.parameter_hash();
    r.dual_hash_after = state.f_dual->parameter_hash();
  });
  update_pseudo_labels(state, data);
  state.step_index = step;
  record.pseudo_label_version = state.pseudo_label_version;
  if (observer) observer(state.f, record);
  state.history.push_back(std::move(record));
}

TrainingState run(const GearNetConfig& cfg, const DomainPair& data, const StepObserver& observer) {
  TrainingState state = pretrain(cfg, data, observer);
  for (int t = 0; t < cfg.max_steps; ++t) {
    backward_step(state, cfg, data, observer);
    forward_step(state, cfg, data, observer);
  }
  return state;
}

}  // namespace gearnet
