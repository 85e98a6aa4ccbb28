#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "implant/env.hpp"
#include "implant/error.hpp"
#include "implant/harness.hpp"
#include "implant/imitation.hpp"
#include "implant/net.hpp"
#include "implant/perturb.hpp"
#include "implant/planner.hpp"
#include "implant/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace implant;

namespace {

// Artifact lookup failures map to exit code 3; empty plot inputs to 4.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyPlot : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::string env_name = "point_mass_2d";
  int demo_traj = 4;
  int demo_subsample = 20;
  int demo_episode_len = 1000;
  harness::Algorithm algorithm = harness::Algorithm::GAIL;
  imitation::IrlConfig irl;
  int budget = 20;
  int horizon = 50;
  planner::RolloutPolicy rollout_policy = planner::RolloutPolicy::policy_mean;
  planner::CandidateSource candidate_source = planner::CandidateSource::policy_sample;
  perturb::PerturbationSpec perturbation;
  std::vector<long long> seeds = {1, 2, 3, 4, 5};
  int episodes = 20;
  std::string out;
};

double default_v_th(const std::string& env_name) {
  return env_name == "pendulum" ? 1.0 : 0.3;
}

std::string rollout_name(planner::RolloutPolicy p) {
  switch (p) {
    case planner::RolloutPolicy::policy_mean: return "policy_mean";
    case planner::RolloutPolicy::policy_sample: return "policy_sample";
    case planner::RolloutPolicy::uniform_random: return "uniform_random";
  }
  return "policy_mean";
}

planner::RolloutPolicy parse_rollout(const std::string& s) {
  if (s == "policy_mean") return planner::RolloutPolicy::policy_mean;
  if (s == "policy_sample") return planner::RolloutPolicy::policy_sample;
  if (s == "uniform_random") return planner::RolloutPolicy::uniform_random;
  throw ConfigError("unknown rollout_policy: " + s);
}

std::string candidate_name(planner::CandidateSource c) {
  return c == planner::CandidateSource::policy_sample ? "policy_sample" : "uniform_random";
}

planner::CandidateSource parse_candidate(const std::string& s) {
  if (s == "policy_sample") return planner::CandidateSource::policy_sample;
  if (s == "uniform_random") return planner::CandidateSource::uniform_random;
  throw ConfigError("unknown candidate_source: " + s);
}

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known |= item.key() == k;
    if (!known)
      throw ConfigError("unknown config key '" + (section.empty() ? "" : section + ".") +
                        item.key() + "'");
  }
}

RunConfig config_from_json(const json& root) {
  RunConfig c;
  check_keys(root, "",
             {"env", "demos", "algorithm", "irl", "planner", "perturbation", "eval", "io"});

  if (root.contains("env")) {
    const json& j = root.at("env");
    check_keys(j, "env", {"name"});
    c.env_name = j.value("name", c.env_name);
  }
  if (root.contains("demos")) {
    const json& j = root.at("demos");
    check_keys(j, "demos", {"n_traj", "subsample", "episode_len"});
    c.demo_traj = j.value("n_traj", c.demo_traj);
    c.demo_subsample = j.value("subsample", c.demo_subsample);
    c.demo_episode_len = j.value("episode_len", c.demo_episode_len);
  }
  if (root.contains("algorithm"))
    c.algorithm = harness::parse_algorithm(root.at("algorithm").get<std::string>());
  if (root.contains("irl")) {
    const json& j = root.at("irl");
    check_keys(j, "irl",
               {"gamma", "lambda", "batch_steps", "gen_steps", "disc_steps", "value_steps",
                "disc_entropy", "clip_ratio", "iterations", "expert_noise_sigma", "policy_lr",
                "value_lr", "disc_lr"});
    c.irl.gamma = j.value("gamma", c.irl.gamma);
    c.irl.lam = j.value("lambda", c.irl.lam);
    c.irl.batch_steps = j.value("batch_steps", c.irl.batch_steps);
    c.irl.gen_steps = j.value("gen_steps", c.irl.gen_steps);
    c.irl.disc_steps = j.value("disc_steps", c.irl.disc_steps);
    c.irl.value_steps = j.value("value_steps", c.irl.value_steps);
    c.irl.disc_entropy = j.value("disc_entropy", c.irl.disc_entropy);
    c.irl.clip_ratio = j.value("clip_ratio", c.irl.clip_ratio);
    c.irl.iterations = j.value("iterations", c.irl.iterations);
    c.irl.expert_noise_sigma = j.value("expert_noise_sigma", c.irl.expert_noise_sigma);
    c.irl.policy_lr = j.value("policy_lr", c.irl.policy_lr);
    c.irl.value_lr = j.value("value_lr", c.irl.value_lr);
    c.irl.disc_lr = j.value("disc_lr", c.irl.disc_lr);
  }
  if (root.contains("planner")) {
    const json& j = root.at("planner");
    check_keys(j, "planner", {"budget", "horizon", "rollout_policy", "candidate_source"});
    c.budget = j.value("budget", c.budget);
    c.horizon = j.value("horizon", c.horizon);
    if (j.contains("rollout_policy"))
      c.rollout_policy = parse_rollout(j.at("rollout_policy").get<std::string>());
    if (j.contains("candidate_source"))
      c.candidate_source = parse_candidate(j.at("candidate_source").get<std::string>());
  }
  double v_th = -1.0;
  if (root.contains("perturbation")) {
    const json& j = root.at("perturbation");
    check_keys(j, "perturbation", {"kind", "sigma", "v_th", "mode"});
    if (j.contains("kind"))
      c.perturbation.kind = perturb::parse_kind(j.at("kind").get<std::string>());
    c.perturbation.sigma = j.value("sigma", 0.0);
    v_th = j.value("v_th", -1.0);
    if (j.contains("mode"))
      c.perturbation.mode = perturb::parse_mode(j.at("mode").get<std::string>());
  }
  c.perturbation.v_th = v_th >= 0 ? v_th : default_v_th(c.env_name);
  if (root.contains("eval")) {
    const json& j = root.at("eval");
    check_keys(j, "eval", {"seeds", "episodes"});
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<long long>>();
    c.episodes = j.value("episodes", c.episodes);
  }
  if (root.contains("io")) {
    const json& j = root.at("io");
    check_keys(j, "io", {"out"});
    c.out = j.value("out", c.out);
  }
  if (c.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  if (c.perturbation.sigma < 0) throw ConfigError("perturbation.sigma must be >= 0");
  c.irl.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json root;
  root["env"] = {{"name", c.env_name}};
  root["demos"] = {{"n_traj", c.demo_traj},
                   {"subsample", c.demo_subsample},
                   {"episode_len", c.demo_episode_len}};
  root["algorithm"] = harness::algorithm_name(c.algorithm);
  root["irl"] = {{"gamma", c.irl.gamma},
                 {"lambda", c.irl.lam},
                 {"batch_steps", c.irl.batch_steps},
                 {"gen_steps", c.irl.gen_steps},
                 {"disc_steps", c.irl.disc_steps},
                 {"value_steps", c.irl.value_steps},
                 {"disc_entropy", c.irl.disc_entropy},
                 {"clip_ratio", c.irl.clip_ratio},
                 {"iterations", c.irl.iterations},
                 {"expert_noise_sigma", c.irl.expert_noise_sigma},
                 {"policy_lr", c.irl.policy_lr},
                 {"value_lr", c.irl.value_lr},
                 {"disc_lr", c.irl.disc_lr}};
  root["planner"] = {{"budget", c.budget},
                     {"horizon", c.horizon},
                     {"rollout_policy", rollout_name(c.rollout_policy)},
                     {"candidate_source", candidate_name(c.candidate_source)}};
  root["perturbation"] = {{"kind", perturb::kind_name(c.perturbation.kind)},
                          {"sigma", c.perturbation.sigma},
                          {"v_th", c.perturbation.v_th},
                          {"mode", perturb::mode_name(c.perturbation.mode)}};
  root["eval"] = {{"seeds", c.seeds}, {"episodes", c.episodes}};
  root["io"] = {{"out", c.out}};
  return root;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return config_from_json(json::object());
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  try {
    return config_from_json(root);
  } catch (const json::exception& e) {
    throw ConfigError("config type error in " + path + ": " + e.what());
  }
}

harness::ExperimentSpec to_spec(const RunConfig& c, int jobs) {
  harness::ExperimentSpec spec;
  spec.env = c.env_name;
  spec.algorithm = c.algorithm;
  spec.perturbation = c.perturbation;
  spec.planner.budget = c.budget;
  spec.planner.horizon = c.horizon;
  spec.planner.rollout_policy = c.rollout_policy;
  spec.planner.candidate_source = c.candidate_source;
  spec.planner.jobs = std::max(1, jobs);
  spec.seeds = c.seeds;
  spec.episodes = c.episodes;
  spec.demo_traj = c.demo_traj;
  spec.demo_subsample = c.demo_subsample;
  spec.demo_episode_len = c.demo_episode_len;
  return spec;
}

harness::MatrixConfig to_matrix(const RunConfig& c, int jobs) {
  harness::MatrixConfig m;
  m.irl = c.irl;
  m.jobs = std::max(1, jobs);
  return m;
}

// ---------------------------------------------------------------------------
// Run directories and artifact lookup

fs::path resolve_out_root(const std::string& flag_out, const RunConfig& cfg) {
  if (!flag_out.empty()) return flag_out;
  if (!cfg.out.empty()) return cfg.out;
  if (const char* env = std::getenv("IMPLANT_OUT"); env && *env) return env;
  return "runs";
}

bool is_run_dir_name(const std::string& name) {
  return name.size() == 4 && std::all_of(name.begin(), name.end(),
                                         [](char ch) { return ch >= '0' && ch <= '9'; });
}

std::vector<fs::path> run_dirs_newest_first(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root)) return dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && is_run_dir_name(entry.path().filename().string()))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end(), std::greater<>());
  return dirs;
}

fs::path fresh_run_dir(const fs::path& root) {
  fs::create_directories(root);
  int next = 1;
  for (const fs::path& d : run_dirs_newest_first(root)) {
    next = std::stoi(d.filename().string()) + 1;
    break;
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", next);
  fs::path dir = root / buf;
  fs::create_directories(dir);
  return dir;
}

void freeze_config(const RunConfig& cfg, const fs::path& dir) {
  const json frozen = config_to_json(cfg);
  std::ofstream out(dir / "config.json");
  out << frozen.dump(2) << "\n";
  out.close();
  // Round-trip invariant: the frozen copy must resolve to the same config.
  std::ifstream back(dir / "config.json");
  RunConfig reparsed = config_from_json(json::parse(back));
  if (config_to_json(reparsed) != frozen)
    throw StateError("frozen config does not round-trip");
}

std::string train_variant(harness::Algorithm a) {
  switch (a) {
    case harness::Algorithm::BC: return "bc";
    case harness::Algorithm::BCDropout: return "bc-dropout";
    case harness::Algorithm::GAILExpertNoise: return "irl-noise";
    default: return "irl";
  }
}

// What a stored training run must agree on to be reusable for `cfg`. Noise
// perturbations train on the clean env, so their sigma is excluded.
json demo_signature(const RunConfig& c) {
  const bool nuisance = c.perturbation.kind == perturb::Kind::action_nuisance ||
                        c.perturbation.kind == perturb::Kind::state_nuisance;
  return {{"env", c.env_name},
          {"kind", nuisance ? perturb::kind_name(c.perturbation.kind) : "none"},
          {"v_th", nuisance ? c.perturbation.v_th : 0.0},
          {"n_traj", c.demo_traj},
          {"subsample", c.demo_subsample},
          {"episode_len", c.demo_episode_len}};
}

json train_signature(const RunConfig& c) {
  json sig = demo_signature(c);
  sig["variant"] = train_variant(c.algorithm);
  return sig;
}

std::optional<RunConfig> dir_config(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) return std::nullopt;
  try {
    return config_from_json(json::parse(in));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Newest run dir whose frozen config matches `signature_of` and which holds
// every file in `files`.
fs::path find_artifact_dir(const fs::path& root, const fs::path& prefer,
                           const std::vector<std::string>& files, const json& want,
                           json (*signature_of)(const RunConfig&)) {
  std::vector<fs::path> dirs = run_dirs_newest_first(root);
  if (!prefer.empty()) dirs.insert(dirs.begin(), prefer);
  for (const fs::path& dir : dirs) {
    std::optional<RunConfig> cfg = dir_config(dir);
    if (!cfg || signature_of(*cfg) != want) continue;
    bool complete = true;
    for (const std::string& f : files) complete &= fs::exists(dir / f);
    if (complete) return dir;
  }
  throw MissingArtifact("missing artifact: " + files.front() +
                        " (no run directory under " + root.string() +
                        " matches the requested configuration)");
}

std::string seed_file(const std::string& stem, long long seed, const std::string& ext) {
  return stem + "_seed" + std::to_string(seed) + ext;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence for trained cells

void save_cell(const harness::TrainedCell& cell, const fs::path& dir, long long seed) {
  net::save_checkpoint((dir / seed_file("policy", seed, ".ckpt")).string(), cell.policy.mean_net,
                       &cell.policy.log_std);
  if (cell.has_irl) {
    net::save_checkpoint((dir / seed_file("disc", seed, ".ckpt")).string(), cell.disc.net);
    net::save_checkpoint((dir / seed_file("value", seed, ".ckpt")).string(), cell.value.net);
    imitation::write_train_log((dir / seed_file("train_log", seed, ".csv")).string(), cell.log);
  }
}

std::vector<std::string> cell_files(harness::Algorithm a, long long seed) {
  std::vector<std::string> files{seed_file("policy", seed, ".ckpt")};
  if (harness::algorithm_needs_irl(a)) {
    files.push_back(seed_file("disc", seed, ".ckpt"));
    files.push_back(seed_file("value", seed, ".ckpt"));
  }
  return files;
}

harness::TrainedCell load_cell(const fs::path& dir, long long seed,
                               const harness::ExperimentSpec& spec) {
  harness::TrainedCell cell;
  net::Checkpoint pol =
      net::load_checkpoint((dir / seed_file("policy", seed, ".ckpt")).string());
  if (!pol.log_std)
    throw CheckpointError(seed_file("policy", seed, ".ckpt") + ": not a policy checkpoint");
  cell.policy.mean_net = std::move(pol.net);
  cell.policy.log_std = std::move(*pol.log_std);
  std::unique_ptr<envs::Env> base = envs::make_env(spec.env);
  cell.policy.act_low = base->action_low();
  cell.policy.act_high = base->action_high();
  if (harness::algorithm_needs_irl(spec.algorithm)) {
    cell.disc.net = net::load_checkpoint((dir / seed_file("disc", seed, ".ckpt")).string()).net;
    cell.disc.norm_baked = true;
    cell.value.net = net::load_checkpoint((dir / seed_file("value", seed, ".ckpt")).string()).net;
    cell.has_irl = true;
  }
  return cell;
}

// ---------------------------------------------------------------------------
// SVG emission (pure text, deterministic)

std::string g6(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

struct Scale {
  double lo = 0.0, hi = 1.0, px0 = 0.0, px1 = 1.0;
  double operator()(double v) const { return px0 + (v - lo) / (hi - lo) * (px1 - px0); }
};

void svg_axes(std::ostream& out, const Scale& x, const Scale& y, const std::string& title) {
  out << "<rect x='0' y='0' width='640' height='420' fill='white'/>\n";
  out << "<text x='320' y='24' text-anchor='middle' font-family='monospace' font-size='15'>"
      << title << "</text>\n";
  out << "<line x1='" << g6(x.px0) << "' y1='" << g6(y.px1) << "' x2='" << g6(x.px0) << "' y2='"
      << g6(y.px0) << "' stroke='black'/>\n";
  out << "<line x1='" << g6(x.px0) << "' y1='" << g6(y.px0) << "' x2='" << g6(x.px1) << "' y2='"
      << g6(y.px0) << "' stroke='black'/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = y.lo + (y.hi - y.lo) * k / 4;
    const double py = y(v);
    out << "<line x1='" << g6(x.px0 - 4) << "' y1='" << g6(py) << "' x2='" << g6(x.px0)
        << "' y2='" << g6(py) << "' stroke='black'/>\n";
    out << "<text x='" << g6(x.px0 - 8) << "' y='" << g6(py + 4)
        << "' text-anchor='end' font-family='monospace' font-size='11'>" << g6(v) << "</text>\n";
  }
}

void write_curve_svg(const fs::path& path, const std::string& title,
                     const std::vector<harness::CurveRow>& rows) {
  double ylo = 1e300, yhi = -1e300;
  for (const auto& r : rows) {
    ylo = std::min(ylo, r.mean_normalized - r.stderr_normalized);
    yhi = std::max(yhi, r.mean_normalized + r.stderr_normalized);
  }
  if (!(yhi > ylo)) yhi = ylo + 1.0;
  const double pad = 0.08 * (yhi - ylo);
  Scale x{static_cast<double>(rows.front().horizon), static_cast<double>(rows.back().horizon),
          70, 610};
  if (x.hi <= x.lo) x.hi = x.lo + 1;
  Scale y{ylo - pad, yhi + pad, 380, 40};

  std::ostringstream out;
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='420'>\n";
  svg_axes(out, x, y, title);
  for (const auto& r : rows) {
    out << "<line x1='" << g6(x(r.horizon)) << "' y1='" << g6(y.px0) << "' x2='"
        << g6(x(r.horizon)) << "' y2='" << g6(y.px0 + 4) << "' stroke='black'/>\n";
    out << "<text x='" << g6(x(r.horizon)) << "' y='" << g6(y.px0 + 18)
        << "' text-anchor='middle' font-family='monospace' font-size='11'>" << r.horizon
        << "</text>\n";
  }
  out << "<text x='340' y='412' text-anchor='middle' font-family='monospace' "
         "font-size='12'>planning horizon</text>\n";
  out << "<polygon points='";
  for (const auto& r : rows)
    out << g6(x(r.horizon)) << "," << g6(y(r.mean_normalized + r.stderr_normalized)) << " ";
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    out << g6(x(it->horizon)) << "," << g6(y(it->mean_normalized - it->stderr_normalized)) << " ";
  out << "' fill='#9ecae1' fill-opacity='0.5' stroke='none'/>\n";
  out << "<polyline points='";
  for (const auto& r : rows) out << g6(x(r.horizon)) << "," << g6(y(r.mean_normalized)) << " ";
  out << "' fill='none' stroke='#3182bd' stroke-width='2'/>\n";
  for (const auto& r : rows)
    out << "<circle cx='" << g6(x(r.horizon)) << "' cy='" << g6(y(r.mean_normalized))
        << "' r='3.5' fill='#3182bd'/>\n";
  out << "</svg>\n";
  std::ofstream f(path);
  f << out.str();
}

void write_hist_svg(const fs::path& path, const std::string& title,
                    const std::vector<harness::HistogramRow>& rows) {
  double dmax = 0.0;
  for (const auto& r : rows) dmax = std::max({dmax, r.density_policy, r.density_expert});
  if (dmax <= 0) dmax = 1.0;
  Scale x{rows.front().bin_left, rows.back().bin_right, 70, 610};
  Scale y{0.0, dmax * 1.1, 380, 40};

  std::ostringstream out;
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='420'>\n";
  svg_axes(out, x, y, title);
  for (int k = 0; k <= 4; ++k) {
    const double v = x.lo + (x.hi - x.lo) * k / 4;
    out << "<text x='" << g6(x(v)) << "' y='" << g6(y.px0 + 18)
        << "' text-anchor='middle' font-family='monospace' font-size='11'>" << g6(v)
        << "</text>\n";
  }
  out << "<text x='340' y='412' text-anchor='middle' font-family='monospace' "
         "font-size='12'>inferred reward</text>\n";
  auto series = [&](double harness::HistogramRow::*density, const char* fill) {
    for (const auto& r : rows) {
      const double d = r.*density;
      if (d <= 0) continue;
      out << "<rect x='" << g6(x(r.bin_left)) << "' y='" << g6(y(d)) << "' width='"
          << g6(x(r.bin_right) - x(r.bin_left)) << "' height='" << g6(y(0.0) - y(d))
          << "' fill='" << fill << "' fill-opacity='0.45'/>\n";
    }
  };
  series(&harness::HistogramRow::density_policy, "#e6550d");
  series(&harness::HistogramRow::density_expert, "#31a354");
  out << "<rect x='480' y='50' width='12' height='12' fill='#e6550d' fill-opacity='0.45'/>"
      << "<text x='498' y='61' font-family='monospace' font-size='12'>policy</text>\n";
  out << "<rect x='480' y='70' width='12' height='12' fill='#31a354' fill-opacity='0.45'/>"
      << "<text x='498' y='81' font-family='monospace' font-size='12'>expert</text>\n";
  out << "</svg>\n";
  std::ofstream f(path);
  f << out.str();
}

// ---------------------------------------------------------------------------
// CSV readback for plotting (plots are a pure function of the CSV files)

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

void do_demos(const RunConfig& cfg, const fs::path& dir, int jobs) {
  harness::ExperimentSpec spec = to_spec(cfg, jobs);
  for (long long seed : cfg.seeds) {
    envs::DemoSet demos = harness::cell_demos(spec, seed);
    const std::string name = seed_file("demos", seed, ".csv");
    envs::save_demos((dir / name).string(), demos);
    std::printf("seed %lld: %zu pairs, expert mean return %.4g -> %s\n", seed, demos.size(),
                demos.expert_mean_return, name.c_str());
  }
}

void do_train(const RunConfig& cfg, const fs::path& root, const fs::path& dir, int jobs) {
  harness::ExperimentSpec spec = to_spec(cfg, jobs);
  harness::MatrixConfig mcfg = to_matrix(cfg, jobs);
  for (long long seed : cfg.seeds) {
    const std::string demo_name = seed_file("demos", seed, ".csv");
    fs::path demo_dir =
        find_artifact_dir(root, dir, {demo_name}, demo_signature(cfg), demo_signature);
    envs::DemoSet demos = envs::load_demos((demo_dir / demo_name).string());
    harness::TrainedCell cell = harness::train_cell(spec, seed, mcfg, demos);
    save_cell(cell, dir, seed);
    if (cell.has_irl)
      std::printf("seed %lld: wrote %s, %s, %s (final disc loss %.4g)\n", seed,
                  seed_file("policy", seed, ".ckpt").c_str(),
                  seed_file("disc", seed, ".ckpt").c_str(),
                  seed_file("value", seed, ".ckpt").c_str(),
                  cell.log.empty() ? 0.0 : cell.log.back().disc_loss);
    else
      std::printf("seed %lld: wrote %s\n", seed, seed_file("policy", seed, ".ckpt").c_str());
  }
}

struct EvalFlags {
  std::string sweep;       // "", "motor_noise" or "transition_noise"
  bool horizon_sweep = false;
};

std::vector<double> sweep_grid(const std::string& kind) {
  if (kind == "motor_noise") return {0.0, 0.1, 0.2, 0.5, 1.0};
  if (kind == "transition_noise") return {0.0, 0.001, 0.002, 0.005, 0.01};
  throw ConfigError("unknown sweep kind: " + kind);
}

void do_eval(const RunConfig& cfg, const fs::path& root, const fs::path& dir, int jobs,
             const EvalFlags& flags) {
  std::vector<RunConfig> variants;
  if (!flags.sweep.empty()) {
    for (double sigma : sweep_grid(flags.sweep)) {
      RunConfig v = cfg;
      v.perturbation.kind = perturb::parse_kind(flags.sweep);
      v.perturbation.sigma = sigma;
      variants.push_back(v);
    }
  } else {
    variants.push_back(cfg);
  }

  // Trained artifacts are shared across the sigma grid: noise is test-only.
  std::map<long long, harness::TrainedCell> cells;
  for (long long seed : cfg.seeds) {
    const RunConfig& first = variants.front();
    fs::path cell_dir = find_artifact_dir(root, dir, cell_files(first.algorithm, seed),
                                          train_signature(first), train_signature);
    cells.emplace(seed, load_cell(cell_dir, seed, to_spec(first, jobs)));
  }
  harness::EnvRefs refs = harness::env_refs(cfg.env_name, 40);

  const std::uint64_t guard = net::optimizer_update_count();
  std::vector<harness::ResultRow> rows;
  for (const RunConfig& v : variants) {
    harness::ExperimentSpec spec = to_spec(v, jobs);
    std::vector<double> seed_means, seed_norms;
    for (long long seed : cfg.seeds) {
      harness::SeedEval ev = harness::eval_cell(spec, seed, cells.at(seed), refs);
      harness::ResultRow r;
      r.env = spec.env;
      r.algorithm = harness::algorithm_name(spec.algorithm);
      r.perturbation = perturb::kind_name(spec.perturbation.kind);
      r.sigma = spec.perturbation.sigma;
      r.seed = seed;
      r.mean_return = ev.mean_return;
      r.std_return = ev.std_return;
      r.normalized = ev.normalized;
      r.n_episodes = spec.episodes;
      r.status = ev.status;
      rows.push_back(r);
      if (ev.status == "ok") {
        seed_means.push_back(ev.mean_return);
        seed_norms.push_back(ev.normalized);
      }
    }
    harness::ResultRow agg = rows.back();
    agg.seed = -1;
    agg.status = seed_means.empty() ? "failed" : "aggregate";
    agg.mean_return = harness::mean_of(seed_means);
    agg.std_return = harness::std_of(seed_means);
    agg.normalized = harness::mean_of(seed_norms);
    rows.push_back(agg);
  }
  harness::assert_no_updates_since(guard);
  harness::write_result_csv((dir / "results.csv").string(), rows);

  if (flags.horizon_sweep) {
    if (!cells.begin()->second.has_irl)
      throw ConfigError("--horizon-sweep needs an IRL-trained algorithm");
    std::map<long long, harness::TrainedCell>::iterator it = cells.begin();
    // Sweep uses the documented B=10 default unless the config overrides it.
    const int budget = cfg.budget == 20 ? 10 : cfg.budget;
    std::vector<harness::CurveRow> curve;
    {
      // Average the per-seed curves cell by cell.
      std::map<int, std::vector<double>> by_h;
      for (; it != cells.end(); ++it) {
        std::vector<harness::CurveRow> one =
            harness::horizon_sweep(cfg.env_name, it->second, budget, {0, 10, 50, 100},
                                   {it->first}, cfg.episodes, refs, std::max(1, jobs));
        for (const auto& row : one) by_h[row.horizon].push_back(row.mean_normalized);
      }
      for (const auto& [h, vals] : by_h) {
        harness::CurveRow row;
        row.horizon = h;
        row.mean_normalized = harness::mean_of(vals);
        row.stderr_normalized =
            vals.size() > 1
                ? harness::std_of(vals) / std::sqrt(static_cast<double>(vals.size()))
                : 0.0;
        curve.push_back(row);
      }
    }
    harness::write_curve_csv((dir / ("curve_" + cfg.env_name + ".csv")).string(), curve);
  }

  if (cells.begin()->second.has_irl) {
    const long long seed0 = cfg.seeds.front();
    const std::string demo_name = seed_file("demos", seed0, ".csv");
    fs::path demo_dir =
        find_artifact_dir(root, dir, {demo_name}, demo_signature(cfg), demo_signature);
    envs::DemoSet demos = envs::load_demos((demo_dir / demo_name).string());
    Rng wrap_rng(Rng::mix(static_cast<std::uint64_t>(seed0), envs::seed_tag::kEval, 0x9B));
    std::unique_ptr<envs::Env> hist_env = harness::make_train_env(to_spec(cfg, jobs), wrap_rng);
    std::vector<harness::HistogramRow> hist =
        harness::reward_histograms(cells.at(seed0).disc, cells.at(seed0).policy, demos,
                                   *hist_env, 30, cfg.episodes, seed0);
    harness::write_histogram_csv((dir / ("hist_" + cfg.env_name + ".csv")).string(), hist);
  }
  harness::assert_no_updates_since(guard);

  std::printf("%-16s %-18s %-17s %8s %10s %12s\n", "env", "algorithm", "perturbation", "sigma",
              "normalized", "mean_return");
  for (const auto& r : rows)
    if (r.seed == -1)
      std::printf("%-16s %-18s %-17s %8g %10.3f %12.2f\n", r.env.c_str(), r.algorithm.c_str(),
                  r.perturbation.c_str(), r.sigma, r.normalized, r.mean_return);
}

void do_plot(const fs::path& root, const fs::path& prefer, const fs::path& dir) {
  std::vector<fs::path> dirs = run_dirs_newest_first(root);
  if (!prefer.empty()) dirs.insert(dirs.begin(), prefer);
  fs::path src;
  for (const fs::path& d : dirs) {
    bool has = false;
    for (const auto& entry : fs::directory_iterator(d)) {
      const std::string name = entry.path().filename().string();
      has |= name.rfind("curve_", 0) == 0 || name.rfind("hist_", 0) == 0;
    }
    if (has) {
      src = d;
      break;
    }
  }
  if (src.empty()) throw EmptyPlot("no curve or histogram CSVs found under " + root.string());

  int figures = 0;
  std::vector<fs::path> sources;
  for (const auto& entry : fs::directory_iterator(src)) sources.push_back(entry.path());
  std::sort(sources.begin(), sources.end());
  for (const fs::path& p : sources) {
    const std::string name = p.filename().string();
    if (name.rfind("curve_", 0) == 0 && p.extension() == ".csv") {
      auto table = read_csv(p);
      std::vector<harness::CurveRow> rows;
      for (std::size_t i = 1; i < table.size(); ++i)
        rows.push_back({std::stoi(table[i][0]), std::stod(table[i][1]), std::stod(table[i][2])});
      if (rows.empty()) continue;
      const std::string stem = p.stem().string();
      write_curve_svg(dir / (stem + ".svg"), stem, rows);
      std::printf("wrote %s\n", (dir / (stem + ".svg")).string().c_str());
      ++figures;
    } else if (name.rfind("hist_", 0) == 0 && p.extension() == ".csv") {
      auto table = read_csv(p);
      std::vector<harness::HistogramRow> rows;
      for (std::size_t i = 1; i < table.size(); ++i)
        rows.push_back({std::stod(table[i][0]), std::stod(table[i][1]), std::stod(table[i][2]),
                        std::stod(table[i][3])});
      if (rows.empty()) continue;
      const std::string stem = p.stem().string();
      write_hist_svg(dir / (stem + ".svg"), stem, rows);
      std::printf("wrote %s\n", (dir / (stem + ".svg")).string().c_str());
      ++figures;
    }
  }
  if (figures == 0) throw EmptyPlot("result CSVs under " + src.string() + " contain no rows");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imitation-learning lab: demos, training, zero-shot evaluation, plots"};
  app.require_subcommand(1);

  std::string config_path, out_flag, algorithm_flag, sweep_flag;
  long long seed_flag = 0;
  int jobs = 1;
  double sigma_flag = 0.0;
  int horizon_flag = 0, budget_flag = 0;
  bool horizon_sweep = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (JSON)");
    sub->add_option("--seed", seed_flag, "use a single seed instead of the config list");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_flag, "output root (default: io.out, $IMPLANT_OUT, ./runs)");
    sub->add_option("--algorithm", algorithm_flag, "override the configured algorithm");
    return sub;
  };
  auto add_eval_opts = [&](CLI::App* sub) {
    sub->add_option("--sigma", sigma_flag, "override perturbation.sigma");
    sub->add_option("--horizon", horizon_flag, "override planner.horizon");
    sub->add_option("--budget", budget_flag, "override planner.budget");
    sub->add_option("--sweep", sweep_flag, "sigma sweep: motor_noise or transition_noise");
    sub->add_flag("--horizon-sweep", horizon_sweep, "emit the H in {0,10,50,100} curve");
    return sub;
  };

  CLI::App* c_demos = add_common(app.add_subcommand("demos", "collect expert demonstrations"));
  CLI::App* c_train = add_common(app.add_subcommand("train", "train the configured algorithm"));
  CLI::App* c_eval =
      add_eval_opts(add_common(app.add_subcommand("eval", "zero-shot evaluation")));
  CLI::App* c_plot = add_common(app.add_subcommand("plot", "render figures from result CSVs"));
  CLI::App* c_all =
      add_eval_opts(add_common(app.add_subcommand("all", "demos, train, eval and plot")));

  CLI11_PARSE(app, argc, argv);

  CLI::App* sub = app.get_subcommands().front();
  auto passed = [&](const char* name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };

  try {
    RunConfig cfg = load_config(config_path);
    if (!algorithm_flag.empty()) cfg.algorithm = harness::parse_algorithm(algorithm_flag);
    if (passed("--seed")) cfg.seeds = {seed_flag};
    if (passed("--sigma")) cfg.perturbation.sigma = sigma_flag;
    if (passed("--horizon")) cfg.horizon = horizon_flag;
    if (passed("--budget")) cfg.budget = budget_flag;

    const fs::path root = resolve_out_root(out_flag, cfg);
    const fs::path dir = fresh_run_dir(root);
    freeze_config(cfg, dir);
    std::printf("run directory: %s\n", dir.string().c_str());

    EvalFlags eflags{sweep_flag, horizon_sweep};
    if (c_demos->parsed()) {
      do_demos(cfg, dir, jobs);
    } else if (c_train->parsed()) {
      do_train(cfg, root, dir, jobs);
    } else if (c_eval->parsed()) {
      do_eval(cfg, root, dir, jobs, eflags);
    } else if (c_plot->parsed()) {
      do_plot(root, "", dir);
    } else if (c_all->parsed()) {
      do_demos(cfg, dir, jobs);
      do_train(cfg, root, dir, jobs);
      do_eval(cfg, root, dir, jobs, eflags);
      do_plot(root, dir, dir);
    }
    return 0;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  } catch (const EmptyPlot& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
