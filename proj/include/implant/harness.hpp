#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "implant/env.hpp"
#include "implant/imitation.hpp"
#include "implant/perturb.hpp"
#include "implant/planner.hpp"

namespace implant::harness {

enum class Algorithm { BC, BCDropout, GAIL, GAILExpertNoise, GAILRewardOnly, IMPLANT };

std::string algorithm_name(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
bool algorithm_plans(Algorithm a);
bool algorithm_needs_irl(Algorithm a);

struct ExperimentSpec {
  std::string env = "point_mass_2d";
  Algorithm algorithm = Algorithm::GAIL;
  perturb::PerturbationSpec perturbation;  // mode is chosen per phase by the harness
  planner::PlannerConfig planner;
  std::vector<long long> seeds = {1, 2, 3, 4, 5};
  int episodes = 20;
  int demo_traj = 4;
  int demo_subsample = 20;
  int demo_episode_len = 1000;
};

/// Benchmark IRL recipe. The library default of 3 generator epochs per
/// discriminator step assumes MuJoCo-scale batches; at 1024-step batches the
/// generator outruns the discriminator and the adversarial game destabilizes,
/// so the benchmark inverts the split.
inline imitation::IrlConfig desk_irl_defaults() {
  imitation::IrlConfig c;
  c.gen_steps = 1;
  c.disc_steps = 5;
  return c;
}

/// Knobs shared by every cell of a matrix run.
struct MatrixConfig {
  imitation::IrlConfig irl = desk_irl_defaults();
  int bc_epochs = 400;
  double bc_lr = 1e-4;
  double bc_dropout = 0.2;
  double expert_noise_sigma = 0.25;
  int ref_episodes = 40;
  int jobs = 1;
};

struct ResultRow {
  std::string env;
  std::string algorithm;
  std::string perturbation;
  double sigma = 0.0;
  long long seed = 0;  // -1 marks the cross-seed aggregate row
  double mean_return = 0.0;
  double std_return = 0.0;
  double normalized = 0.0;
  int n_episodes = 0;
  std::string status = "ok";
};

struct SeedEval {
  long long seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double normalized = 0.0;
  std::string status = "ok";
};

struct EvalReport {
  std::vector<SeedEval> per_seed;
  double mean_return = 0.0;  // across ok seeds
  double std_return = 0.0;
  double normalized = 0.0;
  double expert_return = 0.0;
  double random_return = 0.0;
};

/// Mean undiscounted expert / uniform-random returns on the clean base env.
/// Deterministic per env name; expert > random enforced.
struct EnvRefs {
  double expert_return = 0.0;
  double random_return = 0.0;
};
EnvRefs env_refs(const std::string& env_name, int episodes);

/// Trains (phase 1, cached per cell signature) then evaluates every
/// (spec, seed) cell zero-shot (phase 2); no optimizer update may happen once
/// phase 2 begins. Emits per-seed rows in canonical spec-then-seed order plus
/// one aggregate row per spec. Diverged training yields a failed row.
std::vector<ResultRow> run_matrix(const std::vector<ExperimentSpec>& specs,
                                  const MatrixConfig& cfg);

/// One spec evaluated against pre-trained artifacts (no training here).
struct TrainedCell {
  imitation::GaussianPolicy policy;
  imitation::Discriminator disc;
  imitation::ValueFn value;
  bool has_irl = false;
  std::vector<imitation::TrainLogRow> log;
};

struct CurveRow {
  int horizon = 0;
  double mean_normalized = 0.0;
  double stderr_normalized = 0.0;
};

/// Normalized planning performance per horizon on the clean env.
std::vector<CurveRow> horizon_sweep(const std::string& env_name, const TrainedCell& cell, int budget,
                                    const std::vector<int>& horizons,
                                    const std::vector<long long>& seeds, int episodes,
                                    const EnvRefs& refs, int jobs = 1);

struct HistogramRow {
  double bin_left = 0.0;
  double bin_right = 0.0;
  double density_policy = 0.0;
  double density_expert = 0.0;
};

/// Inferred-reward histograms over policy evaluation rollouts and expert demo
/// pairs, shared bin edges, each series normalized to unit integral.
std::vector<HistogramRow> reward_histograms(const imitation::Discriminator& disc,
                                            const imitation::GaussianPolicy& policy,
                                            const envs::DemoSet& demos, const envs::Env& env,
                                            int bins, int episodes, long long seed);

/// Mean cosine similarity between the policy mean action and the nuisance
/// dims (the trailing act_dim entries of each probe observation).
double causal_confusion_probe(const imitation::GaussianPolicy& policy,
                              const std::vector<std::vector<double>>& probe_states);

/// Observations visited by the policy (mean actions) in the given env.
std::vector<std::vector<double>> collect_probe_states(const envs::Env& env,
                                                      const imitation::GaussianPolicy& policy,
                                                      int episodes, long long seed);

void write_result_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows);
void write_histogram_csv(const std::string& path, const std::vector<HistogramRow>& rows);

double mean_of(const std::vector<double>& v);
double std_of(const std::vector<double>& v);

/// Evaluation-phase guard: throws StateError if any optimizer update happened
/// since the snapshot was taken.
void assert_no_updates_since(std::uint64_t update_count_snapshot);

/// Train-mode env for a spec (nuisance wrappers on, noise off) and the
/// zero-shot test env (nuisance off / noise on).
std::unique_ptr<envs::Env> make_train_env(const ExperimentSpec& spec, Rng& rng);
std::unique_ptr<envs::Env> make_test_env(const ExperimentSpec& spec, Rng& rng);

/// Demos for a cell, collected in the train-mode env.
envs::DemoSet cell_demos(const ExperimentSpec& spec, long long seed);

/// Artifacts for a cell: BC policy or IRL triple. Shared GAIL training is
/// keyed so GAIL / GAIL-Reward-Only / IMPLANT reuse one run per (env, seed).
TrainedCell train_cell(const ExperimentSpec& spec, long long seed, const MatrixConfig& cfg,
                       const envs::DemoSet& demos);

/// Zero-shot evaluation of a trained cell on the test env.
SeedEval eval_cell(const ExperimentSpec& spec, long long seed, const TrainedCell& cell,
                   const EnvRefs& refs);

}  // namespace implant::harness
