#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gearnet/data.hpp"
#include "gearnet/engine.hpp"

namespace gearnet {

enum class Preset { none, quick, paper_scale };

Preset parse_preset(const std::string& text);

struct ExperimentConfig {
  DomainPairSpec data;
  NoiseKind noise = NoiseKind::uniform;
  double rho = 0.2;
  GearNetConfig train;
  bool run_baseline = true;  ///< backbone alone, i.e. pretraining only
  bool run_ablation = false; ///< GearNet with beta = 0
  int repeats = 5;
  std::uint64_t base_seed = 0;
  std::string output = "metrics.csv";
  int workers = 1;

  void validate() const;
};

/// Raised for malformed or invalid configuration; the message names the
/// offending line or section.key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Overwrites the preset's keys: quick = 500 samples per domain, N=30, M=3;
/// paper-scale = N=200, M=10.
void apply_preset(ExperimentConfig& cfg, Preset preset);

/// Flat INI text with [data], [noise], [train] and [experiment] sections.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

struct MetricsRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  int step = 0;
  Direction direction = Direction::pretrain;
  double source_acc = 0.0;
  double target_acc = 0.0;
  double super_loss = 0.0;
  double guide_loss = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "run_id,seed,step,direction,source_acc,target_acc,super_loss,guide_loss,seconds";

/// Correct argmax predictions over all target samples divided by their count.
double evaluate_target_accuracy(const Backbone& model, const LabeledSet& target);
/// Accuracy against the clean labels of any set.
double evaluate_accuracy(const Backbone& model, const LabeledSet& set);

struct SeedFailure {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;  ///< sorted by (run_id, seed, step)
  std::vector<SeedFailure> failures;
};

/// Data, noise and models for one repeat; exposed so tests can replay a seed.
DomainPair make_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed);
GearNetConfig make_run_config(const ExperimentConfig& cfg, std::uint64_t seed);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

void sort_records(std::vector<MetricsRecord>& records);
void emit_csv(const std::vector<MetricsRecord>& records, std::ostream& out);
void emit_csv(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> parse_csv(std::istream& in);
std::vector<MetricsRecord> parse_csv_file(const std::string& path);

struct RunSummary {
  std::string run_id;
  std::size_t seeds = 0;
  double final_mean = 0.0;
  double final_std = 0.0;
  double best_mean = 0.0;
  double best_std = 0.0;
};

/// Per run_id: target accuracy at the last step and the best step, as mean
/// and sample standard deviation over seeds.
std::vector<RunSummary> summarize(const std::vector<MetricsRecord>& records);
void print_summary(const std::vector<RunSummary>& summary, std::ostream& out);
void emit_summary_csv(const std::vector<RunSummary>& summary, const std::string& path);

}  // namespace gearnet
