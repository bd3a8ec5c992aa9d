// Command-line front end: generate-states, train, diagnose, sweep.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedhpd/config.hpp"
#include "fedhpd/error.hpp"
#include "fedhpd/experiment.hpp"

namespace {

constexpr int kExitConfig = static_cast<int>(fedhpd::ErrorCategory::Config);

/// Flags that mirror config keys. Each one set on the command line becomes a `key = value`
/// override applied after --config and before any --set.
struct Overrides {
  std::optional<std::string> env, preset, output, states_file, d, seeds;
  std::optional<int> rounds, k, workers, max_steps, final_window, episodes, states_size, warmup;
  std::optional<long long> states_seed;
  std::optional<double> gamma, log_std;
  bool reward_to_go = false, dump_consensus = false, snapshots = false;
  std::vector<std::string> sets;
  std::string config_path;
  bool print_config = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Config file (dotted keys)");
    app->add_option("--set", sets, "Extra key=value override, repeatable");
    app->add_option("--env", env, "env.kind: cartpole-discrete | cartpole-continuous");
    app->add_option("--max-steps", max_steps, "env.max_steps");
    app->add_option("--rounds", rounds, "fed.rounds");
    app->add_option("--d", d, "fed.d, comma separated; 'nofed' for the baseline");
    app->add_option("--k", k, "fed.k, number of agents taken from the preset (0 = all)");
    app->add_option("--seeds", seeds, "run.seeds, comma separated");
    app->add_option("--gamma", gamma, "run.gamma");
    app->add_option("--output", output, "run.output directory");
    app->add_option("--workers", workers, "run.workers");
    app->add_option("--final-window", final_window, "run.final_window");
    app->add_flag("--dump-consensus", dump_consensus, "run.dump_consensus");
    app->add_flag("--snapshots", snapshots, "run.snapshots");
    app->add_option("--preset", preset, "agents.preset");
    app->add_option("--episodes-per-round", episodes, "agents.episodes_per_round");
    app->add_flag("--reward-to-go", reward_to_go, "agents.reward_to_go");
    app->add_option("--initial-log-std", log_std, "agents.initial_log_std");
    app->add_option("--states-file", states_file, "states.file (sets states.source = file)");
    app->add_option("--states-size", states_size, "states.size");
    app->add_option("--states-seed", states_seed, "states.seed");
    app->add_option("--warmup-rounds", warmup, "states.warmup_rounds");
    app->add_flag("--print-config", print_config, "Print the resolved config and exit");
  }

  fedhpd::ConfigFile resolve() const {
    fedhpd::ConfigFile file = config_path.empty() ? fedhpd::ConfigFile{} : fedhpd::ConfigFile::load(config_path);
    auto list = [](const std::string& csv) { return "[" + csv + "]"; };
    auto str = [](const std::string& s) { return "\"" + s + "\""; };
    if (env) file.set("env.kind", str(*env));
    if (max_steps) file.set("env.max_steps", std::to_string(*max_steps));
    if (rounds) file.set("fed.rounds", std::to_string(*rounds));
    if (d) file.set("fed.d", list(*d));
    if (k) file.set("fed.k", std::to_string(*k));
    if (seeds) file.set("run.seeds", list(*seeds));
    if (gamma) file.set("run.gamma", fedhpd::format_real(*gamma));
    if (output) file.set("run.output", str(*output));
    if (workers) file.set("run.workers", std::to_string(*workers));
    if (final_window) file.set("run.final_window", std::to_string(*final_window));
    if (dump_consensus) file.set("run.dump_consensus", "true");
    if (snapshots) file.set("run.snapshots", "true");
    if (preset) file.set("agents.preset", str(*preset));
    if (episodes) file.set("agents.episodes_per_round", std::to_string(*episodes));
    if (reward_to_go) file.set("agents.reward_to_go", "true");
    if (log_std) file.set("agents.initial_log_std", fedhpd::format_real(*log_std));
    if (states_file) {
      file.set("states.source", "\"file\"");
      file.set("states.file", str(*states_file));
    }
    if (states_size) file.set("states.size", std::to_string(*states_size));
    if (states_seed) file.set("states.seed", std::to_string(*states_seed));
    if (warmup) file.set("states.warmup_rounds", std::to_string(*warmup));
    for (const auto& s : sets) file.set(s);
    return file;
  }
};

int report_cells(const fedhpd::TrainSummary& summary) {
  int code = 0;
  for (const auto& c : summary.cells) {
    if (!c.failed) continue;
    std::cerr << "fedhpd: run " << c.cell.run_id() << " failed: " << c.error << "\n";
    if (code == 0) code = c.error_code;
  }
  for (const auto& m : summary.modes) {
    std::cout << m.mode << " d=" << (m.interval ? std::to_string(*m.interval) : "inf") << " seeds=" << m.n_seeds
              << " final_mean=" << fedhpd::format_real(m.final_mean) << " sd=" << fedhpd::format_real(m.final_sd)
              << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated REINFORCE with periodic policy distillation"};
  app.require_subcommand(1);

  Overrides gen_flags, train_flags, diag_flags, sweep_flags;
  std::string states_out;
  auto* gen = app.add_subcommand("generate-states", "Generate the public state set");
  gen_flags.attach(gen);
  gen->add_option("--out", states_out, "Output file (default <run.output>/states.txt)");

  auto* train = app.add_subcommand("train", "Run every (mode, d, seed) cell and write metrics CSVs");
  train_flags.attach(train);

  std::string snapshot, consensus;
  std::optional<int> samples, pairs, probes;
  std::optional<double> radius, epsilon, delta;
  auto* diag = app.add_subcommand("diagnose", "Gradient-variance and smoothness diagnostics of a snapshot");
  diag_flags.attach(diag);
  diag->add_option("--snapshot", snapshot, "diag.snapshot, parameter snapshot file");
  diag->add_option("--consensus", consensus, "diag.consensus, distribution batch file (default: self)");
  diag->add_option("--samples", samples, "diag.samples");
  diag->add_option("--pairs", pairs, "diag.pairs");
  diag->add_option("--probes", probes, "diag.probes");
  diag->add_option("--radius", radius, "diag.radius");
  diag->add_option("--epsilon", epsilon, "diag.epsilon");
  diag->add_option("--delta", delta, "diag.delta");

  std::vector<std::string> grid_args;
  auto* sweep = app.add_subcommand("sweep", "Train over a grid of config overrides");
  sweep_flags.attach(sweep);
  sweep->add_option("--grid", grid_args, "key=v1,v2,... repeatable")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) {
      const auto config = fedhpd::ExperimentConfig::from(gen_flags.resolve());
      if (gen_flags.print_config) {
        std::cout << config.to_text();
        return 0;
      }
      const std::filesystem::path out =
          states_out.empty() ? config.output / "states.txt" : std::filesystem::path(states_out);
      fedhpd::cmd_generate_states(config, out);
      std::cout << "wrote " << out.string() << "\n";
      return 0;
    }
    if (train->parsed()) {
      const auto config = fedhpd::ExperimentConfig::from(train_flags.resolve());
      if (train_flags.print_config) {
        std::cout << config.to_text();
        return 0;
      }
      return report_cells(fedhpd::cmd_train(config));
    }
    if (diag->parsed()) {
      fedhpd::ConfigFile file = diag_flags.resolve();
      if (!snapshot.empty()) file.set("diag.snapshot", "\"" + snapshot + "\"");
      if (!consensus.empty()) file.set("diag.consensus", "\"" + consensus + "\"");
      if (samples) file.set("diag.samples", std::to_string(*samples));
      if (pairs) file.set("diag.pairs", std::to_string(*pairs));
      if (probes) file.set("diag.probes", std::to_string(*probes));
      if (radius) file.set("diag.radius", fedhpd::format_real(*radius));
      if (epsilon) file.set("diag.epsilon", fedhpd::format_real(*epsilon));
      if (delta) file.set("diag.delta", fedhpd::format_real(*delta));
      const auto config = fedhpd::ExperimentConfig::from(file);
      if (diag_flags.print_config) {
        std::cout << config.to_text();
        return 0;
      }
      const auto rows = fedhpd::cmd_diagnose(config);
      std::cout << "wrote " << (config.output / "diagnostics.csv").string() << " (" << rows.size() << " rows)\n";
      return 0;
    }
    if (sweep->parsed()) {
      std::vector<std::pair<std::string, std::vector<std::string>>> grid;
      for (const auto& g : grid_args) {
        const auto eq = g.find('=');
        if (eq == std::string::npos) throw fedhpd::ConfigError("--grid '" + g + "': expected key=v1,v2");
        std::vector<std::string> values;
        std::string rest = g.substr(eq + 1);
        std::size_t start = 0;
        while (start <= rest.size()) {
          const auto comma = rest.find(',', start);
          values.push_back(rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        grid.emplace_back(g.substr(0, eq), values);
      }
      int code = 0;
      for (const auto& summary : fedhpd::cmd_sweep(sweep_flags.resolve(), grid)) {
        const int c = report_cells(summary);
        if (code == 0) code = c;
      }
      return code;
    }
  } catch (const fedhpd::Error& e) {
    std::cerr << "fedhpd: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "fedhpd: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
