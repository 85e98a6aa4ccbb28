#include "implant/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#include "implant/error.hpp"
#include "implant/net.hpp"

namespace implant::harness {

using envs::DemoSet;
using envs::Env;
using envs::EnvState;
using envs::Trajectory;

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::BC: return "BC";
    case Algorithm::BCDropout: return "BC-Dropout";
    case Algorithm::GAIL: return "GAIL";
    case Algorithm::GAILExpertNoise: return "GAIL-Expert-Noise";
    case Algorithm::GAILRewardOnly: return "GAIL-Reward-Only";
    case Algorithm::IMPLANT: return "IMPLANT";
  }
  throw InputError("bad algorithm");
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "BC") return Algorithm::BC;
  if (s == "BC-Dropout") return Algorithm::BCDropout;
  if (s == "GAIL") return Algorithm::GAIL;
  if (s == "GAIL-Expert-Noise") return Algorithm::GAILExpertNoise;
  if (s == "GAIL-Reward-Only") return Algorithm::GAILRewardOnly;
  if (s == "IMPLANT") return Algorithm::IMPLANT;
  throw ConfigError("unknown algorithm: " + s);
}

bool algorithm_plans(Algorithm a) {
  return a == Algorithm::GAILRewardOnly || a == Algorithm::IMPLANT;
}

bool algorithm_needs_irl(Algorithm a) {
  return a == Algorithm::GAIL || a == Algorithm::GAILExpertNoise ||
         a == Algorithm::GAILRewardOnly || a == Algorithm::IMPLANT;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

void assert_no_updates_since(std::uint64_t update_count_snapshot) {
  if (net::optimizer_update_count() != update_count_snapshot)
    throw StateError("gradient update detected during the evaluation phase");
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t kRefTag = 0x5EF5;
constexpr std::uint64_t kWrapTag = 0x7EA9;
constexpr std::uint64_t kBcTag = 0xB0;
constexpr std::uint64_t kProbeTag = 0x9B;

bool is_nuisance(perturb::Kind k) {
  return k == perturb::Kind::action_nuisance || k == perturb::Kind::state_nuisance;
}

std::unique_ptr<Env> build_env(const ExperimentSpec& spec, perturb::Mode mode, bool with_noise,
                               int episode_len, Rng& rng) {
  std::unique_ptr<Env> base = envs::make_env(spec.env, episode_len);
  perturb::PerturbationSpec p = spec.perturbation;
  p.mode = mode;
  if (is_nuisance(p.kind)) return perturb::apply(*base, p, rng);
  if (!with_noise || p.kind == perturb::Kind::none) return base;
  return perturb::apply(*base, p, rng);
}

double episode_return_expert(const Env& env, std::uint64_t ep_seed) {
  Rng rng = envs::episode_reset_rng(ep_seed);
  EnvState s = env.reset(rng);
  std::vector<double> obs = env.observe(s);
  double total = 0;
  bool done = false;
  while (!done) {
    envs::StepResult r = env.step(s, env.expert_action(obs));
    total += r.reward;
    s = std::move(r.state);
    obs = std::move(r.obs);
    done = r.done;
  }
  return total;
}

double episode_return_random(const Env& env, std::uint64_t ep_seed) {
  Rng rng = envs::episode_reset_rng(ep_seed);
  EnvState s = env.reset(rng);
  double total = 0;
  bool done = false;
  int t = 0;
  while (!done) {
    Rng ar = envs::candidate_rng(ep_seed, t++, 0);
    std::vector<double> a(env.action_dim());
    for (int i = 0; i < env.action_dim(); ++i)
      a[i] = ar.uniform(env.action_low()[i], env.action_high()[i]);
    envs::StepResult r = env.step(s, a);
    total += r.reward;
    s = std::move(r.state);
    done = r.done;
  }
  return total;
}

}  // namespace

std::unique_ptr<Env> make_train_env(const ExperimentSpec& spec, Rng& rng) {
  return build_env(spec, perturb::Mode::train, false, 0, rng);
}

std::unique_ptr<Env> make_test_env(const ExperimentSpec& spec, Rng& rng) {
  return build_env(spec, perturb::Mode::test, true, 0, rng);
}

EnvRefs env_refs(const std::string& env_name, int episodes) {
  std::unique_ptr<Env> env = envs::make_env(env_name);
  const std::uint64_t root = Rng::mix(fnv1a(env_name), kRefTag);
  std::vector<double> exp_r, rnd_r;
  for (int e = 0; e < episodes; ++e) {
    exp_r.push_back(episode_return_expert(*env, Rng::mix(root, 1, e)));
    rnd_r.push_back(episode_return_random(*env, Rng::mix(root, 2, e)));
  }
  EnvRefs refs{mean_of(exp_r), mean_of(rnd_r)};
  if (!(refs.expert_return > refs.random_return))
    throw StateError(env_name + ": expert reference does not beat random reference");
  return refs;
}

DemoSet cell_demos(const ExperimentSpec& spec, long long seed) {
  const std::uint64_t s = static_cast<std::uint64_t>(seed);
  Rng wrap_rng(Rng::mix(s, envs::seed_tag::kDemos, kWrapTag));
  std::unique_ptr<Env> env =
      build_env(spec, perturb::Mode::train, false, spec.demo_episode_len, wrap_rng);
  Rng demo_rng(Rng::mix(s, envs::seed_tag::kDemos));
  return envs::collect_demos(*env, spec.demo_traj, spec.demo_subsample, demo_rng);
}

TrainedCell train_cell(const ExperimentSpec& spec, long long seed, const MatrixConfig& cfg,
                       const DemoSet& demos) {
  const std::uint64_t s = static_cast<std::uint64_t>(seed);
  Rng wrap_rng(Rng::mix(s, envs::seed_tag::kTrain, kWrapTag));
  std::unique_ptr<Env> train_env = build_env(spec, perturb::Mode::train, false, 0, wrap_rng);
  TrainedCell cell;
  if (!algorithm_needs_irl(spec.algorithm)) {
    double dropout = spec.algorithm == Algorithm::BCDropout ? cfg.bc_dropout : 0.0;
    Rng rng(Rng::mix(s, envs::seed_tag::kTrain, kBcTag));
    cell.policy = imitation::bc_train(demos, train_env->action_low(), train_env->action_high(),
                                      dropout, cfg.bc_epochs, cfg.bc_lr, rng);
    return cell;
  }
  imitation::IrlConfig irl = cfg.irl;
  if (spec.algorithm == Algorithm::GAILExpertNoise) irl.expert_noise_sigma = cfg.expert_noise_sigma;
  envs::RewardGate gated(*train_env);
  Rng rng(Rng::mix(s, envs::seed_tag::kTrain));
  imitation::IrlResult res = imitation::irl_train(gated, demos, irl, rng);
  cell.policy = std::move(res.policy);
  cell.disc = std::move(res.disc);
  cell.value = std::move(res.value);
  cell.has_irl = true;
  cell.log = std::move(res.log);
  return cell;
}

SeedEval eval_cell(const ExperimentSpec& spec, long long seed, const TrainedCell& cell,
                   const EnvRefs& refs) {
  const std::uint64_t s = static_cast<std::uint64_t>(seed);
  Rng wrap_rng(Rng::mix(s, envs::seed_tag::kEval, kWrapTag));
  std::unique_ptr<Env> test_env = build_env(spec, perturb::Mode::test, true, 0, wrap_rng);

  SeedEval out;
  out.seed = seed;
  std::vector<double> returns;
  returns.reserve(spec.episodes);

  if (!algorithm_plans(spec.algorithm)) {
    for (int e = 0; e < spec.episodes; ++e) {
      Trajectory traj =
          planner::run_episode_policy(*test_env, cell.policy, Rng::mix(s, envs::seed_tag::kEval, e),
                                      /*deterministic=*/true);
      returns.push_back(traj.total_reward());
    }
  } else {
    if (!cell.has_irl) throw StateError("planning evaluation requires a trained IRL triple");
    Rng model_rng(Rng::mix(s, envs::seed_tag::kEval, kWrapTag + 1));
    std::unique_ptr<Env> model = build_env(spec, perturb::Mode::train, false, 0, model_rng);
    planner::PlannerConfig pcfg = spec.planner;
    pcfg.jobs = std::max(pcfg.jobs, 1);
    if (spec.algorithm == Algorithm::GAILRewardOnly) {
      pcfg.candidate_source = planner::CandidateSource::uniform_random;
      pcfg.rollout_policy = planner::RolloutPolicy::uniform_random;
    }
    try {
      for (int e = 0; e < spec.episodes; ++e) {
        Trajectory traj = planner::run_episode_with_planning(
            *test_env, *model, cell.policy, cell.disc, cell.value, pcfg,
            Rng::mix(s, envs::seed_tag::kEval, e));
        returns.push_back(traj.total_reward());
      }
    } catch (const PlanningAborted&) {
      out.status = "aborted";
    }
  }

  if (out.status == "ok") {
    out.mean_return = mean_of(returns);
    out.std_return = std_of(returns);
    out.normalized =
        (out.mean_return - refs.random_return) / (refs.expert_return - refs.random_return);
  } else {
    out.mean_return = out.std_return = out.normalized = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

namespace {

std::string demo_key(const ExperimentSpec& spec, long long seed) {
  std::string kind = is_nuisance(spec.perturbation.kind)
                         ? perturb::kind_name(spec.perturbation.kind)
                         : std::string("none");
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s|%s|%g|%d|%d|%d|%lld", spec.env.c_str(), kind.c_str(),
                is_nuisance(spec.perturbation.kind) ? spec.perturbation.v_th : 0.0, spec.demo_traj,
                spec.demo_subsample, spec.demo_episode_len, seed);
  return buf;
}

std::string train_key(const ExperimentSpec& spec, long long seed) {
  std::string variant;
  switch (spec.algorithm) {
    case Algorithm::BC: variant = "bc"; break;
    case Algorithm::BCDropout: variant = "bc-dropout"; break;
    case Algorithm::GAILExpertNoise: variant = "irl-noise"; break;
    default: variant = "irl"; break;  // GAIL, GAIL-Reward-Only and IMPLANT share one run
  }
  return demo_key(spec, seed) + "|" + variant;
}

}  // namespace

std::vector<ResultRow> run_matrix(const std::vector<ExperimentSpec>& specs,
                                  const MatrixConfig& cfg) {
  struct Cell {
    const ExperimentSpec* spec = nullptr;
    long long seed = 0;
    std::shared_ptr<TrainedCell> trained;
    SeedEval eval;
    std::string status = "ok";
  };
  std::vector<Cell> cells;
  for (const ExperimentSpec& spec : specs) {
    spec.planner.validate();
    for (long long seed : spec.seeds) cells.push_back({&spec, seed, nullptr, {}, "ok"});
  }

  std::map<std::string, EnvRefs> refs;
  for (const ExperimentSpec& spec : specs)
    if (!refs.count(spec.env)) refs.emplace(spec.env, env_refs(spec.env, cfg.ref_episodes));

  // Phase 1: demos and training, cached so algorithm variants share fairly.
  std::map<std::string, DemoSet> demo_cache;
  std::map<std::string, std::shared_ptr<TrainedCell>> train_cache;
  for (Cell& cell : cells) {
    const ExperimentSpec& spec = *cell.spec;
    try {
      std::string dk = demo_key(spec, cell.seed);
      if (!demo_cache.count(dk)) demo_cache.emplace(dk, cell_demos(spec, cell.seed));
      std::string tk = train_key(spec, cell.seed);
      auto it = train_cache.find(tk);
      if (it == train_cache.end()) {
        auto trained = std::make_shared<TrainedCell>(
            train_cell(spec, cell.seed, cfg, demo_cache.at(dk)));
        it = train_cache.emplace(tk, std::move(trained)).first;
      }
      cell.trained = it->second;
    } catch (const TrainingDiverged&) {
      cell.status = "diverged";
    } catch (const DegenerateExpert&) {
      cell.status = "degenerate-expert";
    }
  }

  // Phase 2: zero-shot evaluation; no optimizer update may happen in here.
  const std::uint64_t updates_before = net::optimizer_update_count();
  auto eval_one = [&](Cell& cell) {
    if (cell.status != "ok") {
      cell.eval.seed = cell.seed;
      cell.eval.status = cell.status;
      cell.eval.mean_return = cell.eval.std_return = cell.eval.normalized =
          std::numeric_limits<double>::quiet_NaN();
      return;
    }
    cell.eval = eval_cell(*cell.spec, cell.seed, *cell.trained, refs.at(cell.spec->env));
  };
  if (cfg.jobs <= 1) {
    for (Cell& cell : cells) eval_one(cell);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) return;
        eval_one(cells[i]);
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < cfg.jobs; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  assert_no_updates_since(updates_before);

  // Rows in canonical (spec, seed) order plus one aggregate row per spec.
  std::vector<ResultRow> rows;
  std::size_t idx = 0;
  for (const ExperimentSpec& spec : specs) {
    std::vector<double> seed_means, seed_norms;
    for (std::size_t k = 0; k < spec.seeds.size(); ++k, ++idx) {
      const Cell& cell = cells[idx];
      ResultRow r;
      r.env = spec.env;
      r.algorithm = algorithm_name(spec.algorithm);
      r.perturbation = perturb::kind_name(spec.perturbation.kind);
      r.sigma = spec.perturbation.sigma;
      r.seed = cell.seed;
      r.mean_return = cell.eval.mean_return;
      r.std_return = cell.eval.std_return;
      r.normalized = cell.eval.normalized;
      r.n_episodes = spec.episodes;
      r.status = cell.eval.status;
      if (r.status == "ok") {
        seed_means.push_back(r.mean_return);
        seed_norms.push_back(r.normalized);
      }
      rows.push_back(std::move(r));
    }
    ResultRow agg;
    agg.env = spec.env;
    agg.algorithm = algorithm_name(spec.algorithm);
    agg.perturbation = perturb::kind_name(spec.perturbation.kind);
    agg.sigma = spec.perturbation.sigma;
    agg.seed = -1;
    agg.mean_return = mean_of(seed_means);
    agg.std_return = std_of(seed_means);
    agg.normalized = mean_of(seed_norms);
    agg.n_episodes = spec.episodes * static_cast<int>(seed_means.size());
    agg.status = "aggregate";
    rows.push_back(std::move(agg));
  }
  return rows;
}

std::vector<CurveRow> horizon_sweep(const std::string& env_name, const TrainedCell& cell,
                                    int budget, const std::vector<int>& horizons,
                                    const std::vector<long long>& seeds, int episodes,
                                    const EnvRefs& refs, int jobs) {
  if (!cell.has_irl) throw StateError("horizon_sweep requires a trained IRL triple");
  std::unique_ptr<Env> env = envs::make_env(env_name);
  std::vector<CurveRow> curve;
  for (int h : horizons) {
    planner::PlannerConfig pcfg;
    pcfg.budget = budget;
    pcfg.horizon = h;
    pcfg.gamma = env->discount();
    pcfg.jobs = jobs;
    std::vector<double> norms;
    for (long long seed : seeds) {
      const std::uint64_t s = static_cast<std::uint64_t>(seed);
      std::vector<double> returns;
      for (int e = 0; e < episodes; ++e) {
        Trajectory traj = planner::run_episode_with_planning(
            *env, *env, cell.policy, cell.disc, cell.value, pcfg, Rng::mix(s, envs::seed_tag::kEval, e));
        returns.push_back(traj.total_reward());
      }
      norms.push_back((mean_of(returns) - refs.random_return) /
                      (refs.expert_return - refs.random_return));
    }
    CurveRow row;
    row.horizon = h;
    row.mean_normalized = mean_of(norms);
    row.stderr_normalized =
        norms.size() > 1 ? std_of(norms) / std::sqrt(static_cast<double>(norms.size())) : 0.0;
    curve.push_back(row);
  }
  return curve;
}

std::vector<HistogramRow> reward_histograms(const imitation::Discriminator& disc,
                                            const imitation::GaussianPolicy& policy,
                                            const DemoSet& demos, const Env& env, int bins,
                                            int episodes, long long seed) {
  if (bins < 1) throw InputError("reward_histograms: bins must be >= 1");
  std::vector<double> pol_r, exp_r;
  const std::uint64_t s = static_cast<std::uint64_t>(seed);
  for (int e = 0; e < episodes; ++e) {
    Trajectory traj =
        planner::run_episode_policy(env, policy, Rng::mix(s, envs::seed_tag::kEval, e), true);
    for (std::size_t t = 0; t < traj.length(); ++t)
      pol_r.push_back(imitation::reward(disc, traj.states[t], traj.actions[t]));
  }
  for (std::size_t i = 0; i < demos.size(); ++i)
    exp_r.push_back(imitation::reward(disc, demos.states[i], demos.actions[i]));

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double r : pol_r) lo = std::min(lo, r), hi = std::max(hi, r);
  for (double r : exp_r) lo = std::min(lo, r), hi = std::max(hi, r);
  if (!(hi > lo)) hi = lo + 1e-9;
  const double width = (hi - lo) / bins;

  std::vector<std::size_t> cp(bins, 0), ce(bins, 0);
  auto bin_of = [&](double r) {
    int b = static_cast<int>((r - lo) / width);
    return std::clamp(b, 0, bins - 1);
  };
  for (double r : pol_r) ++cp[bin_of(r)];
  for (double r : exp_r) ++ce[bin_of(r)];

  std::vector<HistogramRow> rows(bins);
  for (int b = 0; b < bins; ++b) {
    rows[b].bin_left = lo + b * width;
    rows[b].bin_right = lo + (b + 1) * width;
    rows[b].density_policy =
        pol_r.empty() ? 0.0 : static_cast<double>(cp[b]) / (pol_r.size() * width);
    rows[b].density_expert =
        exp_r.empty() ? 0.0 : static_cast<double>(ce[b]) / (exp_r.size() * width);
  }
  return rows;
}

double causal_confusion_probe(const imitation::GaussianPolicy& policy,
                              const std::vector<std::vector<double>>& probe_states) {
  const int act = policy.action_dim();
  double acc = 0.0;
  int n = 0;
  for (const auto& obs : probe_states) {
    if (static_cast<int>(obs.size()) != policy.obs_dim())
      throw InputError("probe state dimension mismatch");
    std::vector<double> a = policy.mean(obs);
    double dot = 0, na = 0, nn = 0;
    for (int j = 0; j < act; ++j) {
      double nu = obs[obs.size() - act + j];
      dot += a[j] * nu;
      na += a[j] * a[j];
      nn += nu * nu;
    }
    if (na < 1e-18 || nn < 1e-18) continue;
    acc += dot / std::sqrt(na * nn);
    ++n;
  }
  return n ? acc / n : 0.0;
}

std::vector<std::vector<double>> collect_probe_states(const Env& env,
                                                      const imitation::GaussianPolicy& policy,
                                                      int episodes, long long seed) {
  std::vector<std::vector<double>> states;
  const std::uint64_t s = static_cast<std::uint64_t>(seed);
  for (int e = 0; e < episodes; ++e) {
    Trajectory traj =
        planner::run_episode_policy(env, policy, Rng::mix(s, kProbeTag, e), true);
    for (auto& st : traj.states) states.push_back(st);
  }
  return states;
}

// ---------------------------------------------------------------------------
// Writers

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

void write_result_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open for write: " + path);
  f << "env,algorithm,perturbation,sigma,seed,mean_return,std_return,normalized,n_episodes,status\n";
  for (const ResultRow& r : rows)
    f << r.env << ',' << r.algorithm << ',' << r.perturbation << ',' << fmt(r.sigma) << ','
      << r.seed << ',' << fmt(r.mean_return) << ',' << fmt(r.std_return) << ','
      << fmt(r.normalized) << ',' << r.n_episodes << ',' << r.status << '\n';
}

void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open for write: " + path);
  f << "H,mean_normalized,stderr\n";
  for (const CurveRow& r : rows)
    f << r.horizon << ',' << fmt(r.mean_normalized) << ',' << fmt(r.stderr_normalized) << '\n';
}

void write_histogram_csv(const std::string& path, const std::vector<HistogramRow>& rows) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open for write: " + path);
  f << "bin_left,bin_right,density_policy,density_expert\n";
  for (const HistogramRow& r : rows)
    f << fmt(r.bin_left) << ',' << fmt(r.bin_right) << ',' << fmt(r.density_policy) << ','
      << fmt(r.density_expert) << '\n';
}

}  // namespace implant::harness
