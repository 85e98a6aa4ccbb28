#pragma once

#include <span>
#include <vector>

#include "implant/env.hpp"
#include "implant/imitation.hpp"

namespace implant::planner {

enum class RolloutPolicy { policy_mean, policy_sample, uniform_random };
enum class CandidateSource { policy_sample, uniform_random };

struct PlannerConfig {
  int budget = 20;
  int horizon = 50;
  double gamma = 0.99;
  RolloutPolicy rollout_policy = RolloutPolicy::policy_mean;
  CandidateSource candidate_source = CandidateSource::policy_sample;
  int jobs = 1;

  void validate() const;
};

/// R-hat = sum_{k<L} gamma^k r_k + gamma^L * terminal_value * (0 if terminated).
/// L = len(rewards); with L == 0 and no termination this is exactly the value.
double estimate_return(std::span<const double> rewards, double terminal_value, double gamma,
                       bool terminated);
double estimate_return(std::span<const double> rewards, const imitation::ValueFn& v,
                       std::span<const double> terminal_obs, double gamma, bool terminated);

struct PlanDiagnostics {
  std::vector<double> scores;
  int chosen = 0;
};

/// One random-shooting MPC decision. Candidate first actions are drawn from
/// the true observation; rollouts and scoring run inside the model env from
/// the synced model state. Candidate i draws from the stream derived from
/// (episode_seed, t, i), so any worker partition gives identical results.
/// A model-diverged candidate scores -inf; all -inf aborts planning.
std::vector<double> plan_action(const envs::Env& model, const envs::EnvState& model_state,
                                std::span<const double> true_obs,
                                const imitation::GaussianPolicy& pi,
                                const imitation::Discriminator& disc,
                                const imitation::ValueFn& value, const PlannerConfig& cfg,
                                std::uint64_t episode_seed, int t,
                                PlanDiagnostics* diag = nullptr);

/// Closed-loop MPC episode in the true env; the model state is re-synced from
/// the true state prefix before every decision. True rewards are recorded for
/// evaluation only.
envs::Trajectory run_episode_with_planning(const envs::Env& test_env, const envs::Env& model,
                                           const imitation::GaussianPolicy& pi,
                                           const imitation::Discriminator& disc,
                                           const imitation::ValueFn& value,
                                           const PlannerConfig& cfg, std::uint64_t episode_seed);

/// Plain policy execution sharing the planner's candidate-0 streams, so a
/// B=1, H=0 planner reproduces it bit-for-bit.
envs::Trajectory run_episode_policy(const envs::Env& env, const imitation::GaussianPolicy& pi,
                                    std::uint64_t episode_seed, bool deterministic);

}  // namespace implant::planner
