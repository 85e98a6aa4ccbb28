#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "implant/env.hpp"
#include "implant/net.hpp"
#include "implant/rng.hpp"

namespace implant::imitation {

/// Diagonal Gaussian over actions: mean from an MLP, state-independent
/// learnable log-std. Samples are clipped to the action bounds.
struct GaussianPolicy {
  net::Mlp mean_net;
  std::vector<double> log_std;
  std::vector<double> act_low, act_high;

  int obs_dim() const { return mean_net.dims.front(); }
  int action_dim() const { return mean_net.dims.back(); }

  std::vector<double> mean(std::span<const double> obs) const;
  std::vector<double> sample(std::span<const double> obs, Rng& rng) const;
  /// Diagonal Gaussian log-density of `act` under mean(obs).
  double log_prob(std::span<const double> obs, std::span<const double> act) const;
  double log_prob_mean(std::span<const double> mean_out, std::span<const double> act) const;

  static GaussianPolicy make(int obs_dim, int act_dim, const std::vector<double>& low,
                             const std::vector<double>& high, double dropout, Rng& rng);
};

/// Binary expert/agent classifier over concatenated (s, a). Input
/// normalization is baked into the first layer on the first update.
struct Discriminator {
  net::Mlp net;
  bool norm_baked = false;

  /// sigmoid(logit), clamped to [1e-7, 1-1e-7].
  double prob(std::span<const double> obs, std::span<const double> act) const;

  static Discriminator make(int obs_dim, int act_dim, Rng& rng);
};

/// r(s,a) = -log(1 - D(s,a)); in [~1e-7, -log(1e-7)], increasing in D.
double reward(const Discriminator& d, std::span<const double> obs, std::span<const double> act);

struct ValueFn {
  net::Mlp net;

  double value(std::span<const double> obs) const;

  static ValueFn make(int obs_dim, Rng& rng);
};

struct PairBatch {
  std::vector<std::vector<double>> obs;
  std::vector<std::vector<double>> act;

  std::size_t size() const { return obs.size(); }
};

struct IrlConfig {
  double gamma = 0.99;
  double lam = 0.98;
  int batch_steps = 1024;
  int gen_steps = 3;
  int disc_steps = 1;
  int value_steps = 3;
  double disc_entropy = 0.01;
  double clip_ratio = 0.2;
  int iterations = 300;
  double expert_noise_sigma = 0.0;
  double policy_lr = 3e-4;
  double value_lr = 3e-4;
  double disc_lr = 3e-4;

  void validate() const;
};

/// Eq. 1 regression on the demo pairs; log_std fixed at log(0.1).
GaussianPolicy bc_train(const envs::DemoSet& demos, const std::vector<double>& act_low,
                        const std::vector<double>& act_high, double dropout_rate, int epochs,
                        double lr, Rng& rng);

/// Cross-entropy steps on expert-vs-agent batches with a Bernoulli entropy
/// bonus (coefficient `entropy_coeff`). Returns the final cross-entropy loss
/// (bonus excluded from the reported number).
double discriminator_update(Discriminator& d, net::OptimizerState& opt,
                            const PairBatch& expert_batch, const PairBatch& agent_batch,
                            double entropy_coeff, int steps);

/// Raw GAE: delta_t = r_t + gamma*V_{t+1} - V_t with V_T = bootstrap
/// (0 on true termination), A_t = sum_l (gamma*lam)^l delta_{t+l}.
/// Returns (advantages, value targets V_t + A_t), unnormalized.
std::pair<std::vector<double>, std::vector<double>> gae_advantages(
    std::span<const double> rewards, std::span<const double> values, double bootstrap,
    double gamma, double lam);

/// In-place shift/scale to zero mean, unit std (no-op on size < 2 or zero std).
void normalize_advantages(std::span<double> adv);

struct PolicySample {
  std::vector<double> obs;
  std::vector<double> act;
  double advantage = 0.0;
  double old_log_prob = 0.0;
  double value_target = 0.0;
};

struct PolicyUpdateStats {
  double kl = 0.0;
  double value_loss = 0.0;
  int epochs_run = 0;
};

/// Clipped-ratio surrogate ascent on the policy (KL early stop at 0.02) plus
/// squared-error value regression on the targets.
PolicyUpdateStats policy_update(GaussianPolicy& pi, ValueFn& v, net::OptimizerState& pi_opt,
                                net::AdamVec& log_std_opt, net::OptimizerState& v_opt,
                                std::span<const PolicySample> batch, const IrlConfig& cfg);

struct TrainLogRow {
  int iteration = 0;
  double mean_return = 0.0;
  double disc_loss = 0.0;
  double mean_inferred_reward = 0.0;
  double policy_kl = 0.0;
  double value_loss = 0.0;
};

struct IrlResult {
  GaussianPolicy policy;
  Discriminator disc;
  ValueFn value;
  std::vector<TrainLogRow> log;
};

/// Adversarial IRL loop. `env` must be reward-gated (its reward channel reads
/// NaN); true returns are logged through the gate's evaluation channel.
IrlResult irl_train(const envs::Env& env, const envs::DemoSet& demos, const IrlConfig& cfg,
                    Rng& rng);

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log);

}  // namespace implant::imitation
