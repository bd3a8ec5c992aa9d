#include "fedhpd/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "fedhpd/error.hpp"
#include "fedhpd/parallel.hpp"
#include "fedhpd/snapshot.hpp"

namespace fedhpd {

namespace {

AgentConfig agent(int id, std::vector<Index> hidden, std::vector<Activation> acts, double lr, HeadKind head) {
  AgentConfig a;
  a.id = id;
  a.hidden = std::move(hidden);
  a.activations = std::move(acts);
  a.learning_rate = lr;
  a.head = head;
  return a;
}

constexpr Activation R = Activation::Relu;
constexpr Activation T = Activation::Tanh;

std::vector<AgentConfig> cartpole_10() {
  const HeadKind h = HeadKind::Categorical;
  return {agent(1, {128}, {R}, 1e-3, h),           agent(2, {32, 32}, {R, R}, 2e-3, h),
          agent(3, {16, 16, 32}, {T, T, T}, 4e-3, h), agent(4, {8, 8, 8}, {R, R, R}, 5e-4, h),
          agent(5, {32, 32, 32}, {T, T, T}, 3e-3, h), agent(6, {8, 8}, {R, R}, 7e-4, h),
          agent(7, {64, 64}, {T, T}, 1e-3, h),        agent(8, {16, 16}, {R, R}, 5e-4, h),
          agent(9, {16, 32, 16}, {T, T, T}, 5e-4, h), agent(10, {32}, {R}, 8e-4, h)};
}

std::vector<AgentConfig> pendulum_10() {
  const HeadKind h = HeadKind::Gaussian;
  return {agent(1, {16, 32}, {T, T}, 1e-4, h),   agent(2, {32, 32}, {R, R}, 1e-4, h),
          agent(3, {64, 128}, {T, R}, 6e-5, h),  agent(4, {128, 256}, {R, R}, 1e-5, h),
          agent(5, {32, 64}, {R, T}, 1e-4, h),   agent(6, {64, 64}, {T, T}, 8e-5, h),
          agent(7, {128, 128}, {R, R}, 4e-5, h), agent(8, {64, 32}, {T, R}, 7e-5, h),
          agent(9, {256, 128}, {T, T}, 2e-5, h), agent(10, {32, 128}, {R, R}, 5e-5, h)};
}

std::vector<AgentConfig> pick(const std::vector<AgentConfig>& all, std::initializer_list<int> ids) {
  std::vector<AgentConfig> out;
  for (int id : ids) out.push_back(all[static_cast<std::size_t>(id - 1)]);
  return out;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

std::string join(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out + "]";
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "env.kind",           "env.max_steps",         "fed.rounds",         "fed.d",
      "fed.k",              "run.seeds",             "run.gamma",          "run.output",
      "run.workers",        "run.final_window",      "run.dump_consensus", "run.snapshots",
      "states.source",      "states.file",           "states.size",        "states.seed",
      "states.warmup_rounds", "states.rollouts",     "agents.preset",      "agents.episodes_per_round",
      "agents.reward_to_go", "agents.initial_log_std", "diag.snapshot",    "diag.consensus",
      "diag.samples",       "diag.pairs",            "diag.radius",        "diag.epsilon",
      "diag.delta",         "diag.probes",           "diag.seed"};
  return keys;
}

/// Splits "agents.<id>.<field>"; returns false for other keys.
bool agent_key(const std::string& key, int& id, std::string& field) {
  const std::string prefix = "agents.";
  if (key.rfind(prefix, 0) != 0) return false;
  const auto dot = key.find('.', prefix.size());
  if (dot == std::string::npos) return false;
  const std::string id_text = key.substr(prefix.size(), dot - prefix.size());
  if (id_text.empty() || !std::all_of(id_text.begin(), id_text.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return false;
  id = static_cast<int>(parse_int(id_text, key));
  field = key.substr(dot + 1);
  return true;
}

int to_int(std::int64_t v, const std::string& key) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError("config key '" + key + "': value out of range");
  return static_cast<int>(v);
}

std::uint64_t to_seed(std::int64_t v, const std::string& key) {
  if (v < 0) throw ConfigError("config key '" + key + "': seeds must be non-negative");
  return static_cast<std::uint64_t>(v);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double mean_of(const std::vector<double>& v, std::size_t from = 0) {
  if (from >= v.size()) return 0.0;
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.end(), 0.0) /
         static_cast<double>(v.size() - from);
}

}  // namespace

std::vector<std::string> preset_names() { return {"cartpole-4", "cartpole-10", "pendulum-4", "pendulum-10"}; }

std::vector<AgentConfig> preset_agents(std::string_view name) {
  if (name == "cartpole-10") return cartpole_10();
  if (name == "cartpole-4") {
    // Agents 1, 2, 6 and 10 of the ten-agent line-up with every width halved.
    auto out = pick(cartpole_10(), {1, 2, 6, 10});
    for (auto& a : out)
      for (auto& w : a.hidden) w /= 2;
    return out;
  }
  if (name == "pendulum-10") return pendulum_10();
  if (name == "pendulum-4") return pick(pendulum_10(), {1, 2, 6, 10});
  throw ConfigError("unknown agent preset '" + std::string(name) + "'");
}

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

// Shortest text that parses back to the same double; used where people read the value.
std::string short_real(double value) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const ConfigFile& file) {
  ExperimentConfig c;
  std::map<int, std::map<std::string, std::string>> inline_agents;
  for (const auto& [key, value] : file.entries()) {
    int id = 0;
    std::string field;
    if (agent_key(key, id, field)) {
      if (field != "hidden" && field != "activations" && field != "lr")
        throw ConfigError("unknown config key '" + key + "' (agent fields are hidden, activations, lr)");
      inline_agents[id][field] = key;
    } else if (!known_keys().count(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  if (file.has("env.kind")) c.env.kind = parse_env_kind(file.get_string("env.kind"));
  if (file.has("env.max_steps")) c.env.max_steps = to_int(file.get_int("env.max_steps"), "env.max_steps");
  if (file.has("fed.rounds")) c.rounds = to_int(file.get_int("fed.rounds"), "fed.rounds");
  if (file.has("fed.d")) {
    c.intervals.clear();
    for (const auto& item : file.get_list("fed.d")) {
      const std::string v = unquote(item, "fed.d");
      if (v == "nofed" || v == "inf") c.intervals.push_back(std::nullopt);
      else c.intervals.push_back(to_int(parse_int(v, "fed.d"), "fed.d"));
    }
  }
  if (file.has("fed.k")) c.k = to_int(file.get_int("fed.k"), "fed.k");
  if (file.has("run.seeds")) {
    c.seeds.clear();
    for (auto s : file.get_int_list("run.seeds")) c.seeds.push_back(to_seed(s, "run.seeds"));
  }
  if (file.has("run.gamma")) c.gamma = file.get_double("run.gamma");
  if (file.has("run.output")) c.output = file.get_string("run.output");
  if (file.has("run.workers")) c.workers = to_int(file.get_int("run.workers"), "run.workers");
  if (file.has("run.final_window")) c.final_window = to_int(file.get_int("run.final_window"), "run.final_window");
  else c.final_window = std::min(c.final_window, c.rounds);
  if (file.has("run.dump_consensus")) c.dump_consensus = file.get_bool("run.dump_consensus");
  if (file.has("run.snapshots")) c.snapshots = file.get_bool("run.snapshots");

  if (file.has("states.source")) {
    const std::string source = file.get_string("states.source");
    if (source == "generate") c.generate_states = true;
    else if (source == "file") c.generate_states = false;
    else throw ConfigError("config key 'states.source': expected generate or file, got '" + source + "'");
  }
  if (file.has("states.file")) c.states_file = file.get_string("states.file");
  if (file.has("states.size")) c.states.size = file.get_int("states.size");
  if (file.has("states.seed")) c.states.seed = to_seed(file.get_int("states.seed"), "states.seed");
  if (file.has("states.warmup_rounds"))
    c.states.warmup_rounds = to_int(file.get_int("states.warmup_rounds"), "states.warmup_rounds");
  if (file.has("states.rollouts")) c.states.rollouts = to_int(file.get_int("states.rollouts"), "states.rollouts");

  if (file.has("agents.episodes_per_round"))
    c.episodes_per_round = to_int(file.get_int("agents.episodes_per_round"), "agents.episodes_per_round");
  if (file.has("agents.reward_to_go")) c.reward_to_go = file.get_bool("agents.reward_to_go");
  if (file.has("agents.initial_log_std")) c.initial_log_std = file.get_double("agents.initial_log_std");

  const HeadKind head = CartPole(c.env).head_kind();
  if (!inline_agents.empty()) {
    if (file.has("agents.preset") && file.get_string("agents.preset") != "inline")
      throw ConfigError("config gives both agents.preset and inline agents.<id>.* keys");
    c.preset = "inline";
    for (const auto& [id, fields] : inline_agents) {
      const std::string base = "agents." + std::to_string(id) + ".";
      for (const char* required : {"hidden", "activations", "lr"})
        if (!fields.count(required)) throw ConfigError("missing config key '" + base + required + "'");
      AgentConfig a;
      a.id = id;
      a.head = head;
      for (auto w : file.get_int_list(base + "hidden")) {
        if (w < 1) throw ConfigError("config key '" + base + "hidden': widths must be positive");
        a.hidden.push_back(static_cast<Index>(w));
      }
      for (const auto& name : file.get_list(base + "activations"))
        a.activations.push_back(parse_activation(unquote(name, base + "activations")));
      if (a.activations.size() == 1 && a.hidden.size() > 1) a.activations.resize(a.hidden.size(), a.activations[0]);
      a.learning_rate = file.get_double(base + "lr");
      c.agents.push_back(std::move(a));
    }
  } else {
    if (file.has("agents.preset")) c.preset = file.get_string("agents.preset");
    if (c.preset == "inline") throw ConfigError("agents.preset is inline but no agents.<id>.* keys are given");
    c.agents = preset_agents(c.preset);
  }
  if (c.k < 0 || c.k > static_cast<int>(c.agents.size()))
    throw ConfigError("config key 'fed.k': must be between 0 and the number of agents (" +
                      std::to_string(c.agents.size()) + ")");
  if (c.k > 0) c.agents.resize(static_cast<std::size_t>(c.k));
  for (auto& a : c.agents) {
    a.gamma = c.gamma;
    a.episodes_per_round = c.episodes_per_round;
    a.reward_to_go = c.reward_to_go;
    a.initial_log_std = c.initial_log_std;
  }

  if (file.has("diag.snapshot")) c.diag.snapshot = file.get_string("diag.snapshot");
  if (file.has("diag.consensus")) c.diag.consensus = file.get_string("diag.consensus");
  if (file.has("diag.samples")) c.diag.samples = to_int(file.get_int("diag.samples"), "diag.samples");
  if (file.has("diag.pairs")) c.diag.pairs = to_int(file.get_int("diag.pairs"), "diag.pairs");
  if (file.has("diag.radius")) c.diag.radius = file.get_double("diag.radius");
  if (file.has("diag.epsilon")) c.diag.epsilon = file.get_double("diag.epsilon");
  if (file.has("diag.delta")) c.diag.delta = file.get_double("diag.delta");
  if (file.has("diag.probes")) c.diag.probes = to_int(file.get_int("diag.probes"), "diag.probes");
  if (file.has("diag.seed")) c.diag.seed = to_seed(file.get_int("diag.seed"), "diag.seed");

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (env.max_steps < 1) throw ConfigError("env.max_steps must be >= 1");
  if (rounds < 1) throw ConfigError("fed.rounds must be >= 1");
  if (intervals.empty()) throw ConfigError("fed.d must list at least one interval or nofed");
  for (const auto& d : intervals) {
    if (d && (*d < 1 || *d > rounds))
      throw ConfigError("fed.d: interval " + std::to_string(*d) + " must be between 1 and fed.rounds (" +
                        std::to_string(rounds) + ")");
  }
  if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("run.seeds contains duplicates");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("run.gamma must be in (0, 1]");
  if (workers < 1) throw ConfigError("run.workers must be >= 1");
  if (final_window < 1 || final_window > rounds)
    throw ConfigError("run.final_window must be between 1 and fed.rounds");
  if (output.empty()) throw ConfigError("run.output must not be empty");
  if (episodes_per_round < 1) throw ConfigError("agents.episodes_per_round must be >= 1");
  if (!std::isfinite(initial_log_std)) throw ConfigError("agents.initial_log_std must be finite");
  if (agents.empty()) throw ConfigError("no agents configured");
  const HeadKind head = CartPole(env).head_kind();
  for (const auto& a : agents) {
    try {
      a.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("agent " + std::to_string(a.id) + ": " + e.what());
    }
    if (a.head != head)
      throw ConfigError("agent " + std::to_string(a.id) + " has a " + std::string(to_string(a.head)) +
                        " head but " + std::string(to_string(env.kind)) + " needs " +
                        std::string(to_string(head)) + " (check agents.preset)");
  }
  if (!generate_states && states_file.empty()) throw ConfigError("states.source is file but states.file is empty");
  if (states.size < 1) throw ConfigError("states.size must be >= 1");
  if (states.warmup_rounds < 0) throw ConfigError("states.warmup_rounds must be >= 0");
  if (states.rollouts < 1) throw ConfigError("states.rollouts must be >= 1");
  if (diag.samples < 2) throw ConfigError("diag.samples must be >= 2");
  if (diag.pairs < 1) throw ConfigError("diag.pairs must be >= 1");
  if (!(diag.radius > 0.0)) throw ConfigError("diag.radius must be positive");
  if (!(diag.epsilon > 0.0)) throw ConfigError("diag.epsilon must be positive");
  if (!(diag.delta > 0.0)) throw ConfigError("diag.delta must be positive");
  if (diag.probes < 1) throw ConfigError("diag.probes must be >= 1");
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  o << "env.kind = " << quote(std::string(to_string(env.kind))) << "\n";
  o << "env.max_steps = " << env.max_steps << "\n";
  o << "fed.rounds = " << rounds << "\n";
  std::vector<std::string> ds;
  for (const auto& d : intervals) ds.push_back(d ? std::to_string(*d) : "nofed");
  o << "fed.d = " << join(ds) << "\n";
  o << "fed.k = " << k << "\n";
  std::vector<std::string> ss;
  for (auto s : seeds) ss.push_back(std::to_string(s));
  o << "run.seeds = " << join(ss) << "\n";
  o << "run.gamma = " << short_real(gamma) << "\n";
  o << "run.output = " << quote(output.string()) << "\n";
  o << "run.workers = " << workers << "\n";
  o << "run.final_window = " << final_window << "\n";
  o << "run.dump_consensus = " << (dump_consensus ? "true" : "false") << "\n";
  o << "run.snapshots = " << (snapshots ? "true" : "false") << "\n";
  o << "states.source = " << (generate_states ? "\"generate\"" : "\"file\"") << "\n";
  o << "states.file = " << quote(states_file.string()) << "\n";
  o << "states.size = " << states.size << "\n";
  o << "states.seed = " << states.seed << "\n";
  o << "states.warmup_rounds = " << states.warmup_rounds << "\n";
  o << "states.rollouts = " << states.rollouts << "\n";
  o << "agents.episodes_per_round = " << episodes_per_round << "\n";
  o << "agents.reward_to_go = " << (reward_to_go ? "true" : "false") << "\n";
  o << "agents.initial_log_std = " << short_real(initial_log_std) << "\n";
  if (preset == "inline") {
    for (const auto& a : agents) {
      std::vector<std::string> hs, as;
      for (auto h : a.hidden) hs.push_back(std::to_string(h));
      for (auto act : a.activations) as.push_back(quote(std::string(to_string(act))));
      const std::string base = "agents." + std::to_string(a.id) + ".";
      o << base << "hidden = " << join(hs) << "\n";
      o << base << "activations = " << join(as) << "\n";
      o << base << "lr = " << short_real(a.learning_rate) << "\n";
    }
  } else {
    o << "agents.preset = " << quote(preset) << "\n";
    for (const auto& a : agents)
      o << "# agent " << a.id << ": " << a.describe() << " lr " << short_real(a.learning_rate) << "\n";
  }
  o << "diag.snapshot = " << quote(diag.snapshot.string()) << "\n";
  o << "diag.consensus = " << quote(diag.consensus.string()) << "\n";
  o << "diag.samples = " << diag.samples << "\n";
  o << "diag.pairs = " << diag.pairs << "\n";
  o << "diag.radius = " << short_real(diag.radius) << "\n";
  o << "diag.epsilon = " << short_real(diag.epsilon) << "\n";
  o << "diag.delta = " << short_real(diag.delta) << "\n";
  o << "diag.probes = " << diag.probes << "\n";
  o << "diag.seed = " << diag.seed << "\n";
  return o.str();
}

std::string default_config_text() { return ExperimentConfig::from(ConfigFile{}).to_text(); }

std::string Cell::run_id() const { return mode() + "_d" + d_label() + "_s" + std::to_string(seed); }

std::vector<Cell> expand_cells(const ExperimentConfig& config) {
  std::vector<Cell> cells;
  for (const auto& d : config.intervals)
    for (auto s : config.seeds) cells.push_back({d, s});
  return cells;
}

bool TrainSummary::any_failed() const {
  return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.failed; });
}

const ModeSummary* TrainSummary::find(std::optional<int> interval) const {
  for (const auto& m : modes)
    if (m.interval == interval) return &m;
  return nullptr;
}

double sample_sd(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double pooled_sd(double sd_a, double sd_b) { return std::sqrt((sd_a * sd_a + sd_b * sd_b) / 2.0); }

std::string metrics_header() {
  return "run_id,seed,mode,d,round,agent,episode_return,discounted_return,kl_loss,grad_norm,kl_grad_norm,bytes\n";
}

CellResult run_cell(const ExperimentConfig& config, const PublicStateSet& states, const Cell& cell, int workers,
                    const std::filesystem::path& artifact_dir) {
  CellResult result;
  result.cell = cell;
  const std::string prefix = cell.run_id() + "," + std::to_string(cell.seed) + "," + cell.mode() + "," +
                             cell.d_label() + ",";
  std::string& csv = result.metrics_csv;
  csv = metrics_header();

  FedRunConfig fed;
  fed.agents = config.agents;
  fed.env = config.env;
  fed.rounds = config.rounds;
  fed.interval = cell.interval;
  fed.seed = cell.seed;
  fed.workers = workers;

  auto row = [&](int round, const std::string& agent, double ret, double disc, const std::string& kl,
                 double grad, const std::string& kl_grad, std::size_t bytes) {
    csv += prefix + std::to_string(round) + "," + agent + "," + format_real(ret) + "," + format_real(disc) + "," +
           kl + "," + format_real(grad) + "," + kl_grad + "," + std::to_string(bytes) + "\n";
  };

  try {
    if (config.dump_consensus && cell.interval) ensure_dir(artifact_dir / "consensus");
    std::vector<Agent> agents = run(fed, states, [&](const RoundRecord& r) {
      const double k = static_cast<double>(r.stats.size());
      double sys_ret = 0.0, sys_disc = 0.0, sys_grad = 0.0, sys_kl = 0.0, sys_kl_grad = 0.0;
      std::size_t agent_bytes = 0, sys_bytes = 0;
      if (r.consensus) {
        agent_bytes = r.consensus->upload_bytes / r.stats.size() + r.consensus->broadcast_bytes;
        sys_bytes = r.consensus->upload_bytes + r.stats.size() * r.consensus->broadcast_bytes;
      }
      for (std::size_t i = 0; i < r.stats.size(); ++i) {
        const RoundStats& s = r.stats[i];
        std::string kl, kl_grad;
        if (r.consensus) {
          kl = format_real(r.consensus->kl_losses[i]);
          kl_grad = format_real(r.consensus->kl_grad_norms[i]);
          sys_kl += r.consensus->kl_losses[i] / k;
          sys_kl_grad += r.consensus->kl_grad_norms[i] / k;
        }
        row(r.round, std::to_string(s.agent_id), s.mean_return, s.discounted_return, kl, s.grad_norm, kl_grad,
            agent_bytes);
        sys_ret += s.mean_return / k;
        sys_disc += s.discounted_return / k;
        sys_grad += s.grad_norm / k;
      }
      row(r.round, "system", sys_ret, sys_disc, r.consensus ? format_real(sys_kl) : "", sys_grad,
          r.consensus ? format_real(sys_kl_grad) : "", sys_bytes);
      result.system_returns.push_back(sys_ret);
      if (r.consensus && config.dump_consensus) {
        const auto path = artifact_dir / "consensus" / ("round_" + std::to_string(r.round) + ".bin");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        write_batch(out, r.consensus->consensus);
      }
    });
    if (config.snapshots) {
      ensure_dir(artifact_dir / "snapshots");
      for (const auto& a : agents)
        save_policy(artifact_dir / "snapshots" / ("agent_" + std::to_string(a.config().id) + ".fhpd"), a.policy());
    }
  } catch (const Error& e) {
    result.failed = true;
    result.error_code = static_cast<int>(e.category());
    result.error = e.what();
  } catch (const std::exception& e) {
    result.failed = true;
    result.error_code = 1;
    result.error = e.what();
  }
  if (!result.failed) {
    const auto n = result.system_returns.size();
    result.final_mean = mean_of(result.system_returns, n - static_cast<std::size_t>(config.final_window));
    result.all_mean = mean_of(result.system_returns);
  }
  return result;
}

PublicStateSet resolve_states(const ExperimentConfig& config) {
  PublicStateSet set;
  if (config.generate_states) {
    set = generate_public_states(config.env, config.states);
  } else {
    set = load_states(config.states_file);
    if (set.states.cols() != CartPole(config.env).state_dim())
      throw ConfigError("state set " + config.states_file.string() + " has dimension " +
                        std::to_string(set.states.cols()) + ", the environment needs 4");
  }
  return set;
}

namespace {

void write_state_set(const ExperimentConfig& config, const PublicStateSet& set, const std::filesystem::path& path) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  save_states(path, set);
  std::ostringstream meta;
  meta << "env = " << to_string(config.env.kind) << "\n";
  meta << "n = " << set.size() << "\n";
  if (set.generated) {
    meta << "source = generate\n";
    meta << "seed = " << config.states.seed << "\n";
    meta << "warmup_rounds = " << config.states.warmup_rounds << "\n";
    meta << "rollouts = " << config.states.rollouts << "\n";
  } else {
    meta << "source = " << config.states_file.string() << "\n";
  }
  meta << "generated_at = " << utc_timestamp() << "\n";
  write_text(path.string() + ".meta", meta.str());
}

}  // namespace

void cmd_generate_states(const ExperimentConfig& config, const std::filesystem::path& path) {
  config.validate();
  write_state_set(config, resolve_states(config), path);
}

TrainSummary cmd_train(const ExperimentConfig& config) {
  config.validate();
  ensure_dir(config.output);
  write_text(config.output / "resolved_config.txt", config.to_text());
  const PublicStateSet states = resolve_states(config);
  write_state_set(config, states, config.output / "states.txt");

  const std::vector<Cell> cells = expand_cells(config);
  const int cell_workers = std::min<int>(config.workers, static_cast<int>(cells.size()));
  const int inner_workers = std::max(1, config.workers / cell_workers);
  TrainSummary summary;
  summary.cells.resize(cells.size());
  parallel_for(cells.size(), cell_workers, [&](std::size_t i) {
    summary.cells[i] = run_cell(config, states, cells[i], inner_workers, config.output / cells[i].run_id());
  });

  // Single collector: every CSV is written here, in cell order.
  std::ostringstream cell_csv;
  cell_csv << "run_id,mode,d,seed,status,final_window_mean,all_rounds_mean\n";
  for (const auto& r : summary.cells) {
    if (!r.failed) write_text(config.output / ("metrics_" + r.cell.run_id() + ".csv"), r.metrics_csv);
    cell_csv << r.cell.run_id() << "," << r.cell.mode() << "," << r.cell.d_label() << "," << r.cell.seed << ","
             << (r.failed ? "failed" : "ok") << "," << (r.failed ? "" : format_real(r.final_mean)) << ","
             << (r.failed ? "" : format_real(r.all_mean)) << "\n";
  }
  write_text(config.output / "summary.csv", cell_csv.str());

  for (const auto& d : config.intervals) {
    ModeSummary m;
    m.interval = d;
    m.mode = d ? "fedhpd" : "nofed";
    std::vector<double> finals, alls;
    for (const auto& r : summary.cells) {
      if (r.cell.interval != d || r.failed) continue;
      finals.push_back(r.final_mean);
      alls.push_back(r.all_mean);
    }
    m.n_seeds = static_cast<int>(finals.size());
    m.final_mean = mean_of(finals);
    m.final_sd = sample_sd(finals);
    m.all_mean = mean_of(alls);
    m.all_sd = sample_sd(alls);
    summary.modes.push_back(m);
  }

  const ModeSummary* nofed = summary.find(std::nullopt);
  std::ostringstream mode_csv;
  mode_csv << "mode,d,n_seeds,final_window_mean,final_window_sd,all_rounds_mean,all_rounds_sd,"
              "nofed_final_window_mean,pooled_sd,margin_over_nofed,beats_nofed_by_pooled_sd\n";
  for (const auto& m : summary.modes) {
    mode_csv << m.mode << "," << (m.interval ? std::to_string(*m.interval) : "inf") << "," << m.n_seeds << ","
             << format_real(m.final_mean) << "," << format_real(m.final_sd) << "," << format_real(m.all_mean) << ","
             << format_real(m.all_sd) << ",";
    if (nofed && m.interval && nofed->n_seeds > 0 && m.n_seeds > 0) {
      const double pooled = pooled_sd(m.final_sd, nofed->final_sd);
      const double margin = m.final_mean - nofed->final_mean;
      mode_csv << format_real(nofed->final_mean) << "," << format_real(pooled) << "," << format_real(margin) << ","
               << (margin > pooled ? "true" : "false") << "\n";
    } else {
      mode_csv << ",,,\n";
    }
  }
  write_text(config.output / "summary_modes.csv", mode_csv.str());
  return summary;
}

std::vector<TrainSummary> cmd_sweep(const ConfigFile& base,
                                    const std::vector<std::pair<std::string, std::vector<std::string>>>& grid) {
  if (grid.empty()) throw ConfigError("sweep needs at least one --grid key=v1,v2");
  for (const auto& [key, values] : grid)
    if (values.empty()) throw ConfigError("sweep: grid key '" + key + "' has no values");

  // Validate every grid point before running any of them.
  std::vector<ExperimentConfig> configs;
  std::vector<std::size_t> index(grid.size(), 0);
  const std::filesystem::path root = ExperimentConfig::from(base).output;
  while (true) {
    ConfigFile point = base;
    std::string name;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      point.set(grid[g].first, grid[g].second[index[g]]);
      name += (g ? "_" : "") + grid[g].first + "=" + unquote(grid[g].second[index[g]], grid[g].first);
    }
    std::replace_if(name.begin(), name.end(), [](char c) { return c == '/' || c == ' ' || c == '"'; }, '-');
    point.set("run.output", quote((root / name).string()));
    configs.push_back(ExperimentConfig::from(point));
    std::size_t g = 0;
    while (g < grid.size() && ++index[g] == grid[g].second.size()) index[g++] = 0;
    if (g == grid.size()) break;
  }

  std::vector<TrainSummary> out;
  for (const auto& c : configs) out.push_back(cmd_train(c));
  return out;
}

std::string diagnostics_header() {
  return "probe,n_samples,n_params,var_j_trace,var_j_mean,var_kl_trace,cov_trace,var_jprime_direct,"
         "var_jprime_reconstructed,identity_residual,m2_j,m2_kl,m2_cross,m2_jprime_direct,m2_jprime_reconstructed,"
         "mean_j_norm,kl_norm,cos_angle,norm_ratio,condition_holds,condition_vacuous,chebyshev_j,chebyshev_jprime,"
         "probe_pairs,probe_radius,lipschitz_estimate,g_estimate,m_estimate,l_kl_bound,l_j_bound,"
         "lipschitz_within_bound\n";
}

std::string diagnostics_csv(const std::vector<DiagnosticsRow>& rows) {
  std::string csv = diagnostics_header();
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  for (const auto& r : rows) {
    const VarianceReport& v = r.variance;
    const SmoothnessProbe& s = r.smoothness;
    const std::vector<std::string> fields = {
        std::to_string(r.probe), std::to_string(v.n_samples), std::to_string(v.n_params),
        format_real(v.var_j_trace), format_real(v.var_j_mean), format_real(v.var_kl_trace),
        format_real(v.cov_trace), format_real(v.var_jprime_direct), format_real(v.var_jprime_reconstructed),
        format_real(v.identity_residual), format_real(v.m2_j), format_real(v.m2_kl), format_real(v.m2_cross),
        format_real(v.m2_jprime_direct), format_real(v.m2_jprime_reconstructed), format_real(v.mean_j_norm),
        format_real(v.kl_norm), format_real(v.cos_angle), format_real(v.norm_ratio), b(v.condition_holds),
        b(v.condition_vacuous), std::to_string(r.chebyshev_j), std::to_string(r.chebyshev_jprime),
        std::to_string(s.n_pairs), format_real(s.radius), format_real(s.lipschitz_estimate),
        format_real(s.g_estimate), format_real(s.m_estimate), format_real(s.l_kl_bound), format_real(s.l_j_bound),
        // The softmax-derived bound is only checked for categorical heads.
        s.categorical ? b(s.lipschitz_estimate <= s.l_kl_bound) : std::string()};
    for (std::size_t i = 0; i < fields.size(); ++i) csv += (i ? "," : "") + fields[i];
    csv += "\n";
  }
  return csv;
}

std::vector<DiagnosticsRow> cmd_diagnose(const ExperimentConfig& config) {
  config.validate();
  if (config.diag.snapshot.empty()) throw ConfigError("diagnose needs diag.snapshot");
  const CartPole env(config.env);
  const Policy policy = load_policy(config.diag.snapshot);
  if (policy.state_dim() != env.state_dim())
    throw ConfigError("snapshot expects " + std::to_string(policy.state_dim()) + "-dimensional states, " +
                      std::string(to_string(config.env.kind)) + " has 4");
  if (policy.kind() != env.head_kind() || policy.action_width() != env.action_width())
    throw ConfigError("snapshot has a " + std::string(to_string(policy.kind())) + " head of width " +
                      std::to_string(policy.action_width()) + ", " + std::string(to_string(config.env.kind)) +
                      " needs " + std::string(to_string(env.head_kind())) + " of width " +
                      std::to_string(env.action_width()));
  const PublicStateSet states = resolve_states(config);

  DistributionBatch consensus;
  if (config.diag.consensus.empty()) {
    consensus = extract_batch(policy, states.states);
  } else {
    std::ifstream in(config.diag.consensus, std::ios::binary);
    if (!in) throw IoError("cannot open " + config.diag.consensus.string());
    consensus = read_batch(in);
    if (consensus.kind != policy.kind() || consensus.n_states() != states.size() ||
        consensus.width() != policy.action_width())
      throw ConfigError("consensus batch " + config.diag.consensus.string() +
                        " does not match the snapshot head or the state set size");
  }

  std::vector<DiagnosticsRow> rows;
  for (int p = 0; p < config.diag.probes; ++p) {
    Rng rng(agent_seed(config.diag.seed, p));
    DiagnosticsRow row;
    row.probe = p;
    row.variance = gradient_variance(policy, env, states.states, consensus, config.diag.samples, config.gamma, rng);
    row.variance.round = p;
    row.chebyshev_j = chebyshev_samples(row.variance.var_j_trace, config.diag.epsilon, config.diag.delta);
    row.chebyshev_jprime =
        chebyshev_samples(std::max(0.0, row.variance.var_jprime_direct), config.diag.epsilon, config.diag.delta);
    ProbeOptions opts;
    opts.n_pairs = config.diag.pairs;
    opts.radius = config.diag.radius;
    opts.gamma = config.gamma;
    row.smoothness = lipschitz_probe([&](Rng&) { return policy; }, states.states, consensus, opts, rng);
    rows.push_back(row);
  }
  ensure_dir(config.output);
  write_text(config.output / "diagnostics.csv", diagnostics_csv(rows));
  return rows;
}

}  // namespace fedhpd
