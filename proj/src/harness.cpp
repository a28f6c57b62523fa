#include "gearnet/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gearnet/rng.hpp"

namespace gearnet {

namespace pt = boost::property_tree;

namespace {

constexpr std::uint64_t kNoiseSalt = 0xa015e;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"data",
       {"family", "classes", "dim", "n_source", "n_target", "rotation_deg", "translation", "radius", "spread",
        "seed"}},
      {"noise", {"kind", "rho"}},
      {"train",
       {"steps", "epochs", "eta", "momentum", "beta", "source_batch", "target_batch", "backbone", "hidden",
        "init_scale", "keep_ramp_epochs", "keep_rate", "dann_lambda", "discriminator_hidden", "seed_schedule"}},
      {"experiment", {"seed", "repeats", "baseline", "ablation", "output", "workers"}},
  };
  return keys;
}

template <typename T>
T read_value(const pt::ptree& section, const std::string& name, const std::string& key, T fallback) {
  const auto raw = section.get_optional<std::string>(key);
  if (!raw) return fallback;
  std::istringstream is(*raw);
  T value{};
  if constexpr (std::is_same_v<T, bool>) {
    std::string word;
    is >> word;
    if (word == "true" || word == "1" || word == "yes") return true;
    if (word == "false" || word == "0" || word == "no") return false;
    throw ConfigError(name + "." + key + ": expected true/false, got '" + *raw + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return *raw;
  } else {
    if constexpr (std::is_unsigned_v<T>) {
      if (raw->find('-') != std::string::npos) {
        throw ConfigError(name + "." + key + ": expected a non-negative integer, got '" + *raw + "'");
      }
    }
    is >> value;
    std::string rest;
    if (is.fail() || (is >> rest)) {
      throw ConfigError(name + "." + key + ": cannot parse '" + *raw + "'");
    }
    return value;
  }
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    std::size_t pos = 0;
    const unsigned long v = std::stoul(item.substr(first), &pos);
    out.push_back(v);
  }
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

std::vector<MetricsRecord> to_metrics(const std::string& run_id, std::uint64_t seed,
                                      const std::vector<StepRecord>& history) {
  std::vector<MetricsRecord> out;
  for (const auto& h : history) {
    out.push_back({run_id, seed, h.step, h.direction, h.source_accuracy.value_or(0.0),
                   h.target_accuracy.value_or(0.0), h.super_loss, h.guide_loss, h.seconds});
  }
  return out;
}

// All runs for one seed.
std::vector<MetricsRecord> run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                    std::vector<SeedFailure>& failures) {
  std::vector<MetricsRecord> out;
  const DomainPair data = make_experiment_data(cfg, seed);
  const GearNetConfig train = make_run_config(cfg, seed);
  const StepObserver evaluate = [&](const Backbone& trained, StepRecord& record) {
    record.source_accuracy = evaluate_accuracy(trained, data.source);
    record.target_accuracy = evaluate_target_accuracy(trained, data.target);
  };
  auto attempt = [&](const std::string& run_id, auto&& body) {
    try {
      auto records = to_metrics(run_id, seed, body());
      out.insert(out.end(), records.begin(), records.end());
    } catch (const std::exception& e) {
      failures.push_back({run_id, seed, e.what()});
    }
  };
  if (cfg.run_baseline) {
    attempt("baseline", [&] { return pretrain(train, data, evaluate).history; });
  }
  attempt("gearnet", [&] { return run(train, data, evaluate).history; });
  if (cfg.run_ablation) {
    GearNetConfig ablated = train;
    ablated.beta = 0.0;
    attempt("gearnet_beta0", [&] { return run(ablated, data, evaluate).history; });
  }
  return out;
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

Preset parse_preset(const std::string& text) {
  if (text.empty() || text == "none") return Preset::none;
  if (text == "quick") return Preset::quick;
  if (text == "paper-scale" || text == "paper_scale") return Preset::paper_scale;
  throw ConfigError("unknown preset '" + text + "' (expected quick|paper-scale)");
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  build_transition_matrix(noise, data.num_classes, rho);
  if (repeats < 1) throw ParameterError("experiment.repeats must be >= 1");
  if (workers < 1) throw ParameterError("experiment.workers must be >= 1");
  if (output.empty()) throw ParameterError("experiment.output must name a file");
}

void apply_preset(ExperimentConfig& cfg, Preset preset) {
  switch (preset) {
    case Preset::none: break;
    case Preset::quick:
      cfg.data.n_source = 500;
      cfg.data.n_target = 500;
      cfg.train.epochs = 30;
      cfg.train.max_steps = 3;
      break;
    case Preset::paper_scale:
      cfg.train.epochs = 200;
      cfg.train.max_steps = 10;
      break;
  }
}

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto& keys = known_keys();
  for (const auto& [section, body] : tree) {
    auto found = keys.find(section);
    if (found == keys.end()) {
      throw ConfigError("unknown section [" + section + "]" + (body.empty() ? " (keys must sit inside a section)" : ""));
    }
    for (const auto& [key, value] : body) {
      if (!found->second.count(key)) throw ConfigError("unknown key " + section + "." + key);
    }
  }

  ExperimentConfig cfg;
  static const pt::ptree empty;
  auto section = [&](const char* name) -> const pt::ptree& {
    auto child = tree.get_child_optional(name);
    return child ? *child : empty;
  };

  try {
    const auto& d = section("data");
    cfg.data.family = parse_domain_family(read_value<std::string>(d, "data", "family", to_string(cfg.data.family)));
    cfg.data.num_classes = read_value(d, "data", "classes", cfg.data.num_classes);
    cfg.data.dim = read_value(d, "data", "dim", cfg.data.dim);
    cfg.data.n_source = read_value(d, "data", "n_source", cfg.data.n_source);
    cfg.data.n_target = read_value(d, "data", "n_target", cfg.data.n_target);
    cfg.data.rotation_deg = read_value(d, "data", "rotation_deg", cfg.data.rotation_deg);
    cfg.data.translation = read_value(d, "data", "translation", cfg.data.translation);
    cfg.data.radius = read_value(d, "data", "radius", cfg.data.radius);
    cfg.data.spread = read_value(d, "data", "spread", cfg.data.spread);
    cfg.data.seed = read_value(d, "data", "seed", cfg.data.seed);

    const auto& n = section("noise");
    cfg.noise = parse_noise_kind(read_value<std::string>(n, "noise", "kind", to_string(cfg.noise)));
    cfg.rho = read_value(n, "noise", "rho", cfg.rho);

    const auto& t = section("train");
    auto& tr = cfg.train;
    tr.max_steps = read_value(t, "train", "steps", tr.max_steps);
    tr.epochs = read_value(t, "train", "epochs", tr.epochs);
    tr.eta = read_value(t, "train", "eta", tr.eta);
    tr.momentum = read_value(t, "train", "momentum", tr.momentum);
    tr.beta = read_value(t, "train", "beta", tr.beta);
    tr.source_batch = read_value(t, "train", "source_batch", tr.source_batch);
    tr.target_batch = read_value(t, "train", "target_batch", tr.target_batch);
    tr.backbone = parse_backbone_kind(read_value<std::string>(t, "train", "backbone", to_string(tr.backbone)));
    if (auto hidden = t.get_optional<std::string>("hidden")) {
      try {
        tr.hidden = parse_widths(*hidden);
      } catch (const std::exception&) {
        throw ConfigError("train.hidden: expected comma-separated widths, got '" + *hidden + "'");
      }
    }
    tr.init_scale = read_value(t, "train", "init_scale", tr.init_scale);
    tr.hyper.keep_ramp_epochs = read_value(t, "train", "keep_ramp_epochs", tr.hyper.keep_ramp_epochs);
    if (t.get_optional<std::string>("keep_rate")) {
      tr.hyper.fixed_keep_rate = read_value(t, "train", "keep_rate", 1.0);
    }
    tr.hyper.dann_lambda = read_value(t, "train", "dann_lambda", tr.hyper.dann_lambda);
    tr.hyper.discriminator_hidden = read_value(t, "train", "discriminator_hidden", tr.hyper.discriminator_hidden);
    tr.seed_schedule =
        parse_seed_schedule(read_value<std::string>(t, "train", "seed_schedule", to_string(tr.seed_schedule)));

    const auto& e = section("experiment");
    cfg.base_seed = read_value(e, "experiment", "seed", cfg.base_seed);
    cfg.repeats = read_value(e, "experiment", "repeats", cfg.repeats);
    cfg.run_baseline = read_value(e, "experiment", "baseline", cfg.run_baseline);
    cfg.run_ablation = read_value(e, "experiment", "ablation", cfg.run_ablation);
    cfg.output = read_value<std::string>(e, "experiment", "output", cfg.output);
    cfg.workers = read_value(e, "experiment", "workers", cfg.workers);
    cfg.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

double evaluate_accuracy(const Backbone& model, const LabeledSet& set) {
  return accuracy(model.predict_labels(set.features()), set.y_true());
}

double evaluate_target_accuracy(const Backbone& model, const LabeledSet& target) {
  return evaluate_accuracy(model, target);
}

DomainPair make_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  DomainPairSpec spec = cfg.data;
  spec.seed = derive_seed(cfg.data.seed, {seed});
  DomainPair pair = make_domain_pair(spec);
  const TransitionMatrix q = build_transition_matrix(cfg.noise, spec.num_classes, cfg.rho);
  pair.source.set_noisy_labels(inject_noise(pair.source.y_true(), q, derive_seed(seed, {kNoiseSalt})));
  return pair;
}

GearNetConfig make_run_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  GearNetConfig train = cfg.train;
  train.seed = seed;
  train.hyper.noise_rate = cfg.rho;
  return train;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto repeats = static_cast<std::size_t>(cfg.repeats);
  std::vector<std::vector<MetricsRecord>> per_seed(repeats);
  std::vector<std::vector<SeedFailure>> per_seed_failures(repeats);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < repeats; r = next++) {
      const std::uint64_t seed = cfg.base_seed + r;
      try {
        per_seed[r] = run_seed(cfg, seed, per_seed_failures[r]);
      } catch (const std::exception& e) {
        per_seed_failures[r].push_back({"data", seed, e.what()});
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), repeats);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }

  ExperimentResult result;
  for (std::size_t r = 0; r < repeats; ++r) {
    result.records.insert(result.records.end(), per_seed[r].begin(), per_seed[r].end());
    result.failures.insert(result.failures.end(), per_seed_failures[r].begin(), per_seed_failures[r].end());
  }
  sort_records(result.records);
  return result;
}

// ---------------------------------------------------------------------------

void sort_records(std::vector<MetricsRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
    return std::tie(a.run_id, a.seed, a.step) < std::tie(b.run_id, b.seed, b.step);
  });
}

void emit_csv(const std::vector<MetricsRecord>& records, std::ostream& out) {
  if (records.empty()) throw ContractError("refusing to write a metrics CSV with no records");
  std::vector<MetricsRecord> sorted = records;
  sort_records(sorted);
  out << kMetricsHeader << '\n';
  for (const auto& r : sorted) {
    out << r.run_id << ',' << r.seed << ',' << r.step << ',' << to_string(r.direction) << ','
        << format_number(r.source_acc) << ',' << format_number(r.target_acc) << ',' << format_number(r.super_loss)
        << ',' << format_number(r.guide_loss) << ',' << format_number(r.seconds) << '\n';
  }
}

void emit_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
  if (records.empty()) throw ContractError("refusing to write a metrics CSV with no records");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  emit_csv(records, out);
  out.flush();
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<MetricsRecord> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw ContractError("metrics CSV header mismatch");
  }
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) {
      throw ContractError("metrics CSV line " + std::to_string(line_no) + ": expected 9 fields");
    }
    try {
      MetricsRecord r;
      r.run_id = cells[0];
      r.seed = std::stoull(cells[1]);
      r.step = std::stoi(cells[2]);
      r.direction = parse_direction(cells[3]);
      r.source_acc = std::stod(cells[4]);
      r.target_acc = std::stod(cells[5]);
      r.super_loss = std::stod(cells[6]);
      r.guide_loss = std::stod(cells[7]);
      r.seconds = std::stod(cells[8]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ContractError("metrics CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<MetricsRecord> parse_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_csv(in);
}

std::vector<RunSummary> summarize(const std::vector<MetricsRecord>& records) {
  std::vector<MetricsRecord> sorted = records;
  sort_records(sorted);
  // run_id -> per-seed (final, best); sorted order makes the last record of a
  // seed its final step.
  std::map<std::string, std::map<std::uint64_t, std::pair<double, double>>> finals;
  for (const auto& r : sorted) {
    auto [it, fresh] = finals[r.run_id].try_emplace(r.seed, r.target_acc, r.target_acc);
    if (!fresh) {
      it->second.first = r.target_acc;
      it->second.second = std::max(it->second.second, r.target_acc);
    }
  }
  std::vector<RunSummary> out;
  for (const auto& [run_id, seeds] : finals) {
    std::vector<double> fin, best;
    for (const auto& [seed, fb] : seeds) {
      fin.push_back(fb.first);
      best.push_back(fb.second);
    }
    RunSummary s;
    s.run_id = run_id;
    s.seeds = seeds.size();
    s.final_mean = std::accumulate(fin.begin(), fin.end(), 0.0) / static_cast<double>(fin.size());
    s.best_mean = std::accumulate(best.begin(), best.end(), 0.0) / static_cast<double>(best.size());
    s.final_std = sample_std(fin, s.final_mean);
    s.best_std = sample_std(best, s.best_mean);
    out.push_back(s);
  }
  return out;
}

void print_summary(const std::vector<RunSummary>& summary, std::ostream& out) {
  out << std::left << std::setw(16) << "run" << std::setw(7) << "seeds" << std::setw(22) << "final target acc"
      << "best target acc\n";
  auto pct = [](double mean, double sd) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * mean << " +- " << 100.0 * sd;
    return os.str();
  };
  for (const auto& s : summary) {
    out << std::left << std::setw(16) << s.run_id << std::setw(7) << s.seeds << std::setw(22)
        << pct(s.final_mean, s.final_std) << pct(s.best_mean, s.best_std) << '\n';
  }
}

void emit_summary_csv(const std::vector<RunSummary>& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "run_id,seeds,final_mean,final_std,best_mean,best_std\n";
  for (const auto& s : summary) {
    out << s.run_id << ',' << s.seeds << ',' << format_number(s.final_mean) << ',' << format_number(s.final_std)
        << ',' << format_number(s.best_mean) << ',' << format_number(s.best_std) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace gearnet
