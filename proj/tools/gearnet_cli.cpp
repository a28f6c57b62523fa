// gearnet: run GearNet experiments on synthetic domain pairs.
//
//   gearnet run <config>                 GearNet (+ baseline / ablation if the config asks)
//   gearnet ablation <config>            baseline, GearNet and the beta = 0 ablation
//   gearnet gen-data <spec> <out.csv>    dump a generated domain pair
//
// Common flags: --seed, --preset quick|paper-scale, --out <path>.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "gearnet/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string out;
};

gearnet::ExperimentConfig load(const std::string& path, const Overrides& o) {
  gearnet::ExperimentConfig cfg = gearnet::load_config(path);
  gearnet::apply_preset(cfg, gearnet::parse_preset(o.preset));
  if (o.seed) {
    cfg.base_seed = *o.seed;
    cfg.data.seed = *o.seed;
  }
  if (!o.out.empty()) cfg.output = o.out;
  return cfg;
}

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

int run_experiment_command(gearnet::ExperimentConfig cfg, bool force_ablation) {
  if (force_ablation) {
    cfg.run_baseline = true;
    cfg.run_ablation = true;
  }
  const auto result = gearnet::run_experiment(cfg);
  for (const auto& f : result.failures) {
    std::cerr << "error: run '" << f.run_id << "' seed " << f.seed << ": " << f.message << '\n';
  }
  if (result.records.empty()) {
    std::cerr << "error: no run produced any metrics\n";
    return 1;
  }
  gearnet::emit_csv(result.records, cfg.output);
  const auto summary = gearnet::summarize(result.records);
  const std::string summary_path = sibling(cfg.output, "_summary");
  gearnet::emit_summary_csv(summary, summary_path);
  gearnet::print_summary(summary, std::cout);
  std::cout << "metrics: " << cfg.output << "\nsummary: " << summary_path << '\n';
  return result.failures.empty() ? 0 : 1;
}

int gen_data_command(const std::string& spec_path, const std::string& out_path, const Overrides& o) {
  const gearnet::ExperimentConfig cfg = load(spec_path, o);
  cfg.data.validate();
  gearnet::DomainPair pair = gearnet::make_domain_pair(cfg.data);
  const auto q = gearnet::build_transition_matrix(cfg.noise, cfg.data.num_classes, cfg.rho);
  pair.source.set_noisy_labels(gearnet::inject_noise(pair.source.y_true(), q, cfg.data.seed));
  const std::string target_path = sibling(out_path, "_target");
  gearnet::write_csv(out_path, pair.source);
  gearnet::write_csv(target_path, pair.target);
  std::cout << "source: " << out_path << " (" << pair.source.size() << " rows)\n"
            << "target: " << target_path << " (" << pair.target.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GearNet bilateral training on synthetic domain pairs"};
  app.require_subcommand(1);

  Overrides overrides;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Base seed (overrides the config's experiment and data seeds)");
    cmd->add_option("--preset", overrides.preset, "Preset applied over the config")
        ->check(CLI::IsMember({"quick", "paper-scale"}));
    cmd->add_option("--out", overrides.out, "Output CSV path (overrides experiment.output)");
  };

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Run GearNet for every configured seed");
  run_cmd->add_option("config", config_path, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
  add_common(run_cmd);

  auto* ablation_cmd = app.add_subcommand("ablation", "Baseline vs GearNet vs GearNet without guide loss");
  ablation_cmd->add_option("config", config_path, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
  add_common(ablation_cmd);

  std::string data_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a generated source/target pair as CSV");
  gen_cmd->add_option("spec", config_path, "Config whose [data] and [noise] sections describe the pair")
      ->required()
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("out_csv", data_out, "Source CSV path; the target goes to <stem>_target.csv")->required();
  add_common(gen_cmd);

  CLI11_PARSE(app, argc, argv);

  for (auto* cmd : {run_cmd, ablation_cmd, gen_cmd}) {
    if (cmd->parsed() && cmd->count("--seed")) overrides.seed = seed;
  }

  try {
    if (gen_cmd->parsed()) return gen_data_command(config_path, data_out, overrides);
    return run_experiment_command(load(config_path, overrides), ablation_cmd->parsed());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
