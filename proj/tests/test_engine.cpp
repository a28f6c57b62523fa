#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gearnet/engine.hpp"
#include "gearnet/errors.hpp"
#include "oracles.hpp"

using namespace gearnet;

namespace {

DomainPair shifted_pair(std::uint64_t seed, double rotation = 40.0, double rho = 0.2) {
  DomainPairSpec spec;
  spec.n_source = 200;
  spec.n_target = 200;
  spec.rotation_deg = rotation;
  spec.seed = seed;
  DomainPair pair = make_domain_pair(spec);
  if (rho > 0.0) {
    const auto q = build_transition_matrix(NoiseKind::uniform, spec.num_classes, rho);
    pair.source.set_noisy_labels(inject_noise(pair.source.y_true(), q, derive_seed(seed, {7})));
  }
  return pair;
}

DomainPair separable_pair(std::uint64_t seed, double rotation = 0.0) {
  DomainPairSpec spec;
  spec.n_source = 200;
  spec.n_target = 200;
  spec.radius = 4.0;
  spec.spread = 0.5;
  spec.rotation_deg = rotation;
  spec.seed = seed;
  return make_domain_pair(spec);
}

GearNetConfig small_config(std::uint64_t seed) {
  GearNetConfig cfg;
  cfg.max_steps = 2;
  cfg.epochs = 5;
  cfg.hidden = {32};
  cfg.seed = seed;
  return cfg;
}

double accuracy(const Backbone& model, const LabeledSet& set) {
  const auto predicted = model.predict_labels(set.features());
  const auto& truth = set.y_true();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(Direction, ParityOfStepIndex) {
  EXPECT_EQ(direction_of_step(0), Direction::pretrain);
  EXPECT_EQ(direction_of_step(1), Direction::backward);
  EXPECT_EQ(direction_of_step(2), Direction::forward);
  EXPECT_EQ(direction_of_step(7), Direction::backward);
  EXPECT_EQ(parse_direction(to_string(Direction::forward)), Direction::forward);
}

TEST(GearNetConfig, RejectsInvalidValues) {
  GearNetConfig cfg;
  cfg.max_steps = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = GearNetConfig{};
  cfg.eta = 0.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = GearNetConfig{};
  cfg.beta = -1.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = GearNetConfig{};
  cfg.source_batch = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(Run, DirectionsAndHistoryLength) {
  const auto pair = shifted_pair(1);
  auto cfg = small_config(1);
  cfg.max_steps = 3;
  const auto state = run(cfg, pair);
  ASSERT_EQ(state.history.size(), 7U);
  const std::vector<Direction> want{Direction::pretrain, Direction::backward, Direction::forward,
                                    Direction::backward, Direction::forward,  Direction::backward,
                                    Direction::forward};
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(state.history[i].direction, want[i]) << i;
  EXPECT_EQ(state.step_index, 6);
  EXPECT_TRUE(state.f_dual.has_value());
}

TEST(Run, StructureMatchesHandSteppedOracle) {
  for (auto kind : {BackboneKind::standard, BackboneKind::coteaching, BackboneKind::dann}) {
    const auto pair = shifted_pair(2);
    auto cfg = small_config(2);
    cfg.epochs = 3;
    cfg.backbone = kind;
    const auto violations = gearnet::testing::structure_violations(cfg, pair);
    EXPECT_TRUE(violations.empty()) << to_string(kind) << ": " << (violations.empty() ? "" : violations.front());
  }
}

TEST(Run, RecordedDualHashesAreConstantWithinSteps) {
  const auto pair = shifted_pair(3);
  const auto state = run(small_config(3), pair);
  EXPECT_FALSE(state.history[0].dual_hash_before.has_value());
  for (std::size_t i = 1; i < state.history.size(); ++i) {
    ASSERT_TRUE(state.history[i].dual_hash_before.has_value());
    EXPECT_EQ(*state.history[i].dual_hash_before, *state.history[i].dual_hash_after);
    EXPECT_NE(state.history[i].init_hash, state.history[i].final_hash);
  }
}

TEST(Run, PseudoLabelVersionsBumpAfterForwardSteps) {
  const auto pair = shifted_pair(4);
  const auto state = run(small_config(4), pair);
  const std::vector<std::size_t> want{1, 1, 2, 2, 3};
  ASSERT_EQ(state.history.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(state.history[i].pseudo_label_version, want[i]) << i;
}

TEST(Run, BetaZeroForwardStepsReproducePretraining) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto pair = shifted_pair(seed);
    EXPECT_EQ(gearnet::testing::beta0_trace_mismatches(small_config(seed), pair), 0U) << "seed " << seed;
  }
}

TEST(Run, PerStepSeedsGiveDistinctTraces) {
  const auto pair = shifted_pair(5);
  auto cfg = small_config(5);
  cfg.beta = 0.0;
  const auto state = run(cfg, pair);
  EXPECT_NE(state.history[2].super_trace, state.history[0].super_trace);
}

TEST(Run, Deterministic) {
  const auto pair = shifted_pair(6);
  const auto a = run(small_config(6), pair);
  const auto b = run(small_config(6), pair);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].super_trace, b.history[i].super_trace);
    EXPECT_EQ(a.history[i].epoch_guide_loss, b.history[i].epoch_guide_loss);
    EXPECT_EQ(a.history[i].final_hash, b.history[i].final_hash);
  }
  EXPECT_EQ(a.pseudo_labels, b.pseudo_labels);
}

TEST(Run, TrainingNeverReadsTargetLabels) {
  for (auto kind : {BackboneKind::standard, BackboneKind::coteaching, BackboneKind::dann}) {
    const auto pair = shifted_pair(7);
    auto cfg = small_config(7);
    cfg.epochs = 2;
    cfg.backbone = kind;
    EXPECT_NO_THROW(run(cfg, pair));
    EXPECT_EQ(pair.target.y_true_reads(), 0U);
  }
}

TEST(Run, NonFiniteLossCarriesStepContext) {
  const auto pair = shifted_pair(8);
  auto cfg = small_config(8);
  cfg.eta = 1e8;
  cfg.epochs = 50;
  try {
    run(cfg, pair);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0 (pretrain)"), std::string::npos) << e.what();
  }
}

TEST(Steps, OrderIsEnforced) {
  const auto pair = shifted_pair(9);
  auto cfg = small_config(9);
  cfg.epochs = 1;
  auto state = pretrain(cfg, pair);
  EXPECT_THROW(forward_step(state, cfg, pair), ContractError);
  backward_step(state, cfg, pair);
  EXPECT_THROW(backward_step(state, cfg, pair), ContractError);
  forward_step(state, cfg, pair);
  EXPECT_EQ(state.step_index, 2);
}

TEST(PseudoLabels, ArgmaxWithSmallestIndexTieBreak) {
  DomainPairSpec spec;
  spec.num_classes = 3;
  spec.n_source = 10;
  spec.n_target = 10;
  const auto pair = make_domain_pair(spec);
  TrainingState state{Backbone::init(BackboneKind::standard, MlpSpec{{2, 4, 3}, 0.1}, BackboneHyper{}, 1),
                      std::nullopt, {}, 0, 0, {}};
  auto params = state.f.parameters();
  for (auto& p : params) {
    for (double& v : p.mutable_data()) v = 0.0;
  }
  update_pseudo_labels(state, pair);
  EXPECT_EQ(state.pseudo_labels, std::vector<int>(10, 0));
  EXPECT_EQ(state.pseudo_label_version, 1U);

  auto bias = params.back().mutable_data();
  bias[0] = std::log(0.2);
  bias[1] = std::log(0.5);
  bias[2] = std::log(0.3);
  update_pseudo_labels(state, pair);
  EXPECT_EQ(state.pseudo_labels, std::vector<int>(10, 1));

  bias[0] = bias[1] = std::log(0.5);
  bias[2] = std::log(1e-3);
  update_pseudo_labels(state, pair);
  EXPECT_EQ(state.pseudo_labels, std::vector<int>(10, 0));
}

TEST(Pretrain, FitsASeparableCleanSource) {
  std::vector<double> acc;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = separable_pair(seed);
    auto cfg = small_config(seed);
    cfg.epochs = 20;
    acc.push_back(accuracy(pretrain(cfg, pair).f, pair.source));
  }
  EXPECT_GE(median(acc), 0.95);
}

TEST(Pretrain, PseudoLabelsTrackSourceAccuracyWithoutShift) {
  std::vector<double> gap;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = shifted_pair(seed, 0.0, 0.0);
    auto cfg = small_config(seed);
    cfg.epochs = 20;
    const auto state = pretrain(cfg, pair);
    const auto& truth = pair.target.y_true();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += state.pseudo_labels[i] == truth[i];
    const double pseudo_acc = static_cast<double>(correct) / static_cast<double>(truth.size());
    gap.push_back(pseudo_acc - accuracy(state.f, pair.source));
  }
  EXPECT_GE(median(gap), -0.05);
}

TEST(BackwardStep, GuideLossFallsOverTheStep) {
  std::vector<double> change;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = shifted_pair(seed);
    auto cfg = small_config(seed);
    cfg.epochs = 15;
    auto state = pretrain(cfg, pair);
    backward_step(state, cfg, pair);
    const auto& g = state.history.back().epoch_guide_loss;
    change.push_back(g.back() - g.front());
  }
  EXPECT_LT(median(change), 0.0);
}

TEST(ForwardStep, PseudoLabelsMoveOnAShiftedTask) {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = shifted_pair(seed);
    auto cfg = small_config(seed);
    cfg.epochs = 10;
    auto state = pretrain(cfg, pair);
    const auto before = state.pseudo_labels;
    backward_step(state, cfg, pair);
    forward_step(state, cfg, pair);
    passes += state.pseudo_labels != before;
  }
  EXPECT_GE(passes, 8);
}
