#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gearnet/backbone.hpp"
#include "gearnet/data.hpp"

namespace gearnet {

/// Step 0 is pretraining; odd steps train the dual on the target domain,
/// even steps after 0 train the primary model on the source domain.
enum class Direction { pretrain, backward, forward };

std::string to_string(Direction d);
Direction parse_direction(const std::string& text);
Direction direction_of_step(int step);

/// How re-initialization and shuffling seeds are derived per step.
enum class SeedSchedule {
  per_step,  ///< every step gets fresh seeds derived from (seed, step)
  aligned,   ///< each model reuses one seed for all its incarnations
};

std::string to_string(SeedSchedule s);
SeedSchedule parse_seed_schedule(const std::string& text);

struct GearNetConfig {
  int max_steps = 10;  ///< macro-steps M, each one backward + one forward step
  int epochs = 200;    ///< epochs per step N
  double eta = 0.003;
  double momentum = 0.9;
  double beta = 0.1;
  std::size_t source_batch = 32;
  std::size_t target_batch = 32;
  BackboneKind backbone = BackboneKind::standard;
  std::vector<std::size_t> hidden{64};
  double init_scale = 0.1;
  BackboneHyper hyper;
  std::uint64_t seed = 0;
  SeedSchedule seed_schedule = SeedSchedule::per_step;

  void validate() const;
  MlpSpec mlp_spec(std::size_t input_dim, int num_classes) const;
};

/// Seed used to (re)initialize the model trained at `step`.
std::uint64_t model_seed(const GearNetConfig& cfg, int step);
/// Seed of the per-epoch shuffles of the source (domain 0) or target
/// (domain 1) set during `step`.
std::uint64_t shuffle_seed(const GearNetConfig& cfg, int step, int domain);

struct StepRecord {
  int step = 0;
  Direction direction = Direction::pretrain;
  double super_loss = 0.0;  ///< mean bone loss over all batches of the step
  double guide_loss = 0.0;  ///< mean guide loss over all batches of the step
  std::vector<double> epoch_super_loss;
  std::vector<double> epoch_guide_loss;
  std::vector<double> super_trace;  ///< bone loss of every batch, in order
  std::uint64_t init_seed = 0;
  std::uint64_t init_hash = 0;   ///< training model right after re-initialization
  std::uint64_t final_hash = 0;  ///< training model after the step
  std::optional<std::uint64_t> dual_hash_before;
  std::optional<std::uint64_t> dual_hash_after;
  std::size_t pseudo_label_version = 0;
  double seconds = 0.0;
  std::optional<double> source_accuracy;
  std::optional<double> target_accuracy;
};

struct TrainingState {
  Backbone f;                      ///< forward model, source -> target
  std::optional<Backbone> f_dual;  ///< backward model, target -> source
  std::vector<int> pseudo_labels;
  std::size_t pseudo_label_version = 0;  ///< bumped on every relabeling pass
  int step_index = 0;
  std::vector<StepRecord> history;

  const Backbone& trained_at(Direction d) const { return d == Direction::backward ? *f_dual : f; }
};

/// Called after every step with the model that step trained; may fill in
/// the record's accuracy fields.
using StepObserver = std::function<void(const Backbone& trained, StepRecord& record)>;

/// Trains f on the noisy source for N epochs, then pseudo-labels the target.
TrainingState pretrain(const GearNetConfig& cfg, const DomainPair& data, const StepObserver& observer = {});

/// argmax of f over every target sample; ties go to the smallest class.
void update_pseudo_labels(TrainingState& state, const DomainPair& data);

/// Re-initializes f_dual and trains it on pseudo-labeled target data, guided
/// towards the frozen f on source batches.
void backward_step(TrainingState& state, const GearNetConfig& cfg, const DomainPair& data,
                   const StepObserver& observer = {});

/// Re-initializes f and trains it on noisy source data, guided towards the
/// frozen f_dual on target batches, then refreshes the pseudo labels.
void forward_step(TrainingState& state, const GearNetConfig& cfg, const DomainPair& data,
                  const StepObserver& observer = {});

/// Pretraining followed by M (backward, forward) pairs.
TrainingState run(const GearNetConfig& cfg, const DomainPair& data, const StepObserver& observer = {});

}  // namespace gearnet
