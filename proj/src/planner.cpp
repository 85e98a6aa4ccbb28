#include "implant/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "implant/error.hpp"

namespace implant::planner {

using envs::Env;
using envs::EnvState;
using envs::Trajectory;

void PlannerConfig::validate() const {
  if (budget < 1) throw ConfigError("planner: budget must be >= 1");
  if (horizon < 0) throw ConfigError("planner: horizon must be >= 0");
  if (gamma < 0 || gamma >= 1) throw ConfigError("planner: gamma must be in [0,1)");
  if (jobs < 1) throw ConfigError("planner: jobs must be >= 1");
}

double estimate_return(std::span<const double> rewards, double terminal_value, double gamma,
                       bool terminated) {
  double acc = 0.0, g = 1.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw PlanningAborted("non-finite reward in return estimate");
    acc += g * r;
    g *= gamma;
  }
  if (!terminated) {
    if (!std::isfinite(terminal_value)) throw PlanningAborted("non-finite terminal value");
    acc += g * terminal_value;
  }
  return acc;
}

double estimate_return(std::span<const double> rewards, const imitation::ValueFn& v,
                       std::span<const double> terminal_obs, double gamma, bool terminated) {
  return estimate_return(rewards, terminated ? 0.0 : v.value(terminal_obs), gamma, terminated);
}

namespace {

std::vector<double> uniform_action(const Env& env, Rng& rng) {
  std::vector<double> a(env.action_dim());
  for (int i = 0; i < env.action_dim(); ++i)
    a[i] = rng.uniform(env.action_low()[i], env.action_high()[i]);
  return a;
}

struct CandidateResult {
  std::vector<double> first_action;
  double score = -std::numeric_limits<double>::infinity();
};

CandidateResult run_candidate(const Env& model, const EnvState& model_state,
                              std::span<const double> true_obs,
                              const imitation::GaussianPolicy& pi,
                              const imitation::Discriminator& disc,
                              const imitation::ValueFn& value, const PlannerConfig& cfg,
                              std::uint64_t episode_seed, int t, int cand) {
  Rng rng = envs::candidate_rng(episode_seed, t, cand);
  CandidateResult out;
  out.first_action = cfg.candidate_source == CandidateSource::policy_sample
                         ? pi.sample(true_obs, rng)
                         : uniform_action(model, rng);
  EnvState s = model_state;
  std::vector<double> obs = model.observe(s);
  std::vector<double> rewards;
  rewards.reserve(cfg.horizon);
  bool terminated = false;
  try {
    for (int k = 0; k < cfg.horizon; ++k) {
      std::vector<double> a;
      if (k == 0) {
        a = out.first_action;
      } else {
        switch (cfg.rollout_policy) {
          case RolloutPolicy::policy_mean: a = pi.mean(obs); break;
          case RolloutPolicy::policy_sample: a = pi.sample(obs, rng); break;
          case RolloutPolicy::uniform_random: a = uniform_action(model, rng); break;
        }
      }
      rewards.push_back(imitation::reward(disc, obs, a));
      envs::StepResult r = model.step(s, a);
      s = std::move(r.state);
      obs = std::move(r.obs);
      if (r.done) {
        terminated = true;
        break;
      }
    }
    out.score = estimate_return(rewards, value, obs, cfg.gamma, terminated);
  } catch (const SimulationDiverged&) {
    // Flagged: candidate keeps its -inf score.
  }
  return out;
}

}  // namespace

std::vector<double> plan_action(const Env& model, const EnvState& model_state,
                                std::span<const double> true_obs,
                                const imitation::GaussianPolicy& pi,
                                const imitation::Discriminator& disc,
                                const imitation::ValueFn& value, const PlannerConfig& cfg,
                                std::uint64_t episode_seed, int t, PlanDiagnostics* diag) {
  cfg.validate();
  const int b = cfg.budget;
  std::vector<CandidateResult> results(b);

  auto work = [&](const Env& env, int begin, int end) {
    for (int i = begin; i < end; ++i)
      results[i] = run_candidate(env, model_state, true_obs, pi, disc, value, cfg, episode_seed,
                                 t, i);
  };

  int workers = std::min(cfg.jobs, b);
  if (workers <= 1) {
    work(model, 0, b);
  } else {
    std::vector<std::unique_ptr<Env>> clones;
    clones.reserve(workers);
    for (int w = 0; w < workers; ++w) clones.push_back(model.clone());
    std::vector<std::thread> threads;
    threads.reserve(workers);
    int chunk = (b + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      int begin = w * chunk, end = std::min(begin + chunk, b);
      if (begin >= end) break;
      threads.emplace_back([&, w, begin, end] { work(*clones[w], begin, end); });
    }
    for (auto& th : threads) th.join();
  }

  int best = 0;
  for (int i = 1; i < b; ++i)
    if (results[i].score > results[best].score) best = i;
  if (!std::isfinite(results[best].score))
    throw PlanningAborted("all candidates diverged at step " + std::to_string(t));
  if (diag) {
    diag->scores.resize(b);
    for (int i = 0; i < b; ++i) diag->scores[i] = results[i].score;
    diag->chosen = best;
  }
  return results[best].first_action;
}

Trajectory run_episode_with_planning(const Env& test_env, const Env& model,
                                     const imitation::GaussianPolicy& pi,
                                     const imitation::Discriminator& disc,
                                     const imitation::ValueFn& value, const PlannerConfig& cfg,
                                     std::uint64_t episode_seed) {
  if (model.state_dim() > test_env.state_dim())
    throw InputError("planner: model state is not a prefix of the test-env state");
  Rng reset_rng = envs::episode_reset_rng(episode_seed);
  EnvState s = test_env.reset(reset_rng);
  std::vector<double> obs = test_env.observe(s);

  Rng model_rng = reset_rng.fork(envs::seed_tag::kPlan);
  EnvState model_state = model.reset(model_rng);

  Trajectory traj;
  traj.gamma = test_env.discount();
  traj.states.push_back(obs);
  bool done = false;
  for (int t = 0; !done; ++t) {
    std::copy(s.v.begin(), s.v.begin() + model.state_dim(), model_state.v.begin());
    std::vector<double> a =
        plan_action(model, model_state, obs, pi, disc, value, cfg, episode_seed, t);
    envs::StepResult r = test_env.step(s, a);
    traj.actions.push_back(std::move(a));
    traj.env_rewards.push_back(r.reward);
    s = std::move(r.state);
    obs = std::move(r.obs);
    traj.states.push_back(obs);
    done = r.done;
  }
  traj.done = true;
  return traj;
}

Trajectory run_episode_policy(const Env& env, const imitation::GaussianPolicy& pi,
                              std::uint64_t episode_seed, bool deterministic) {
  Rng reset_rng = envs::episode_reset_rng(episode_seed);
  EnvState s = env.reset(reset_rng);
  std::vector<double> obs = env.observe(s);
  Trajectory traj;
  traj.gamma = env.discount();
  traj.states.push_back(obs);
  bool done = false;
  for (int t = 0; !done; ++t) {
    std::vector<double> a;
    if (deterministic) {
      a = pi.mean(obs);
    } else {
      Rng rng = envs::candidate_rng(episode_seed, t, 0);
      a = pi.sample(obs, rng);
    }
    envs::StepResult r = env.step(s, a);
    traj.actions.push_back(std::move(a));
    traj.env_rewards.push_back(r.reward);
    s = std::move(r.state);
    obs = std::move(r.obs);
    traj.states.push_back(obs);
    done = r.done;
  }
  traj.done = true;
  return traj;
}

}  // namespace implant::planner
