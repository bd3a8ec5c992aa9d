#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedhpd/config.hpp"
#include "fedhpd/diagnostics.hpp"
#include "fedhpd/env.hpp"
#include "fedhpd/federation.hpp"
#include "fedhpd/public_states.hpp"
#include "fedhpd/reinforce.hpp"

namespace fedhpd {

/// Named agent line-ups. "cartpole-4" and "cartpole-10" use softmax heads, "pendulum-4" and
/// "pendulum-10" Gaussian heads. See README for the architectures.
std::vector<AgentConfig> preset_agents(std::string_view name);
std::vector<std::string> preset_names();

struct DiagnoseSettings {
  std::filesystem::path snapshot;
  std::filesystem::path consensus;  // empty: the snapshot's own batch
  int samples = 256;
  int pairs = 200;
  double radius = 1e-3;
  double epsilon = 0.1;
  double delta = 0.1;
  int probes = 1;
  std::uint64_t seed = 1;
};

/// Fully resolved experiment settings. Built from a ConfigFile and validated before any work.
struct ExperimentConfig {
  EnvSpec env;
  int rounds = 600;
  std::vector<std::optional<int>> intervals{5};  // nullopt is NoFed
  std::vector<std::uint64_t> seeds{20, 25, 30, 35, 40};
  double gamma = 0.99;
  std::string preset = "cartpole-4";  // "inline" when agents come from agents.<id>.* keys
  int k = 0;                          // use the first k agents; 0 keeps all
  int episodes_per_round = 1;
  bool reward_to_go = false;
  double initial_log_std = 0.0;
  std::vector<AgentConfig> agents;

  bool generate_states = true;
  std::filesystem::path states_file;
  PublicStateOptions states;

  std::filesystem::path output = "runs";
  int workers = 1;
  int final_window = 100;  // capped at `rounds` unless set explicitly
  bool dump_consensus = false;
  bool snapshots = false;

  DiagnoseSettings diag;

  static ExperimentConfig from(const ConfigFile& file);
  /// The resolved settings in config-file syntax; parsing it back yields the same config.
  std::string to_text() const;
  void validate() const;
};

/// Documented config keys with their defaults, in file syntax.
std::string default_config_text();

/// One (mode, d, seed) training run.
struct Cell {
  std::optional<int> interval;
  std::uint64_t seed = 0;

  std::string mode() const { return interval ? "fedhpd" : "nofed"; }
  std::string d_label() const { return interval ? std::to_string(*interval) : "inf"; }
  std::string run_id() const;
};

std::vector<Cell> expand_cells(const ExperimentConfig& config);

struct CellResult {
  Cell cell;
  std::string metrics_csv;
  std::vector<double> system_returns;  // one per round
  double final_mean = 0.0;             // over the last `final_window` rounds
  double all_mean = 0.0;               // over every round
  bool failed = false;
  int error_code = 0;
  std::string error;
};

struct ModeSummary {
  std::string mode;
  std::optional<int> interval;
  int n_seeds = 0;
  double final_mean = 0.0;
  double final_sd = 0.0;  // sample SD across seeds of per-seed final-window means
  double all_mean = 0.0;
  double all_sd = 0.0;
};

struct TrainSummary {
  std::vector<CellResult> cells;
  std::vector<ModeSummary> modes;
  bool any_failed() const;
  const ModeSummary* find(std::optional<int> interval) const;
};

double sample_sd(const std::vector<double>& values);
/// sqrt((s_a^2 + s_b^2) / 2).
double pooled_sd(double sd_a, double sd_b);

std::string metrics_header();
std::string format_real(double value);

/// Runs one cell and renders its metrics CSV. Never throws for run failures; they are recorded.
CellResult run_cell(const ExperimentConfig& config, const PublicStateSet& states, const Cell& cell, int workers,
                    const std::filesystem::path& artifact_dir = {});

/// Loads or generates the public state set the config asks for.
PublicStateSet resolve_states(const ExperimentConfig& config);

/// Writes the state set and its provenance sidecar (`<path>.meta`).
void cmd_generate_states(const ExperimentConfig& config, const std::filesystem::path& path);

/// Runs every cell, writes metrics files, summaries and the resolved config under `config.output`.
TrainSummary cmd_train(const ExperimentConfig& config);

/// Runs `cmd_train` for every combination of the grid overrides, each in its own subdirectory.
std::vector<TrainSummary> cmd_sweep(const ConfigFile& base,
                                    const std::vector<std::pair<std::string, std::vector<std::string>>>& grid);

struct DiagnosticsRow {
  int probe = 0;
  VarianceReport variance;
  SmoothnessProbe smoothness;
  std::uint64_t chebyshev_j = 0;
  std::uint64_t chebyshev_jprime = 0;
};

std::string diagnostics_header();
std::string diagnostics_csv(const std::vector<DiagnosticsRow>& rows);

/// Variance and smoothness diagnostics of a policy snapshot; writes `diagnostics.csv` under
/// `config.output` and returns the rows.
std::vector<DiagnosticsRow> cmd_diagnose(const ExperimentConfig& config);

}  // namespace fedhpd
