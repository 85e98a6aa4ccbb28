#include "implant/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>

#include "implant/error.hpp"

namespace implant::imitation {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kLogStdFloor = -2.9957322735539909;  // log(0.05)
constexpr double kLogStdCeil = 0.0;                    // log(1.0)
constexpr double kKlStop = 0.02;
constexpr int kHidden = 100;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void zero_final_layer(net::Mlp& m) {
  auto& w = m.weights.back();
  auto& b = m.biases.back();
  std::fill(w.begin(), w.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
}

std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> x;
  x.reserve(a.size() + b.size());
  x.insert(x.end(), a.begin(), a.end());
  x.insert(x.end(), b.begin(), b.end());
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// GaussianPolicy

std::vector<double> GaussianPolicy::mean(std::span<const double> obs) const {
  return net::forward(mean_net, obs);
}

std::vector<double> GaussianPolicy::sample(std::span<const double> obs, Rng& rng) const {
  std::vector<double> a = mean(obs);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] += std::exp(log_std[i]) * rng.normal();
    a[i] = std::clamp(a[i], act_low[i], act_high[i]);
  }
  return a;
}

double GaussianPolicy::log_prob(std::span<const double> obs, std::span<const double> act) const {
  std::vector<double> mu = mean(obs);
  return log_prob_mean(mu, act);
}

double GaussianPolicy::log_prob_mean(std::span<const double> mean_out,
                                     std::span<const double> act) const {
  double lp = 0.0;
  for (std::size_t i = 0; i < mean_out.size(); ++i) {
    double sd = std::exp(log_std[i]);
    double z = (act[i] - mean_out[i]) / sd;
    lp += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

GaussianPolicy GaussianPolicy::make(int obs_dim, int act_dim, const std::vector<double>& low,
                                    const std::vector<double>& high, double dropout, Rng& rng) {
  GaussianPolicy p;
  p.mean_net = net::Mlp::init({obs_dim, kHidden, kHidden, act_dim}, rng, dropout);
  zero_final_layer(p.mean_net);
  p.log_std.assign(act_dim, std::log(0.5));
  p.act_low = low;
  p.act_high = high;
  return p;
}

// ---------------------------------------------------------------------------
// Discriminator / ValueFn

double Discriminator::prob(std::span<const double> obs, std::span<const double> act) const {
  std::vector<double> x = concat(obs, act);
  double z = net::forward(net, x)[0];
  return std::clamp(sigmoid(z), kProbClamp, 1.0 - kProbClamp);
}

Discriminator Discriminator::make(int obs_dim, int act_dim, Rng& rng) {
  Discriminator d;
  d.net = net::Mlp::init({obs_dim + act_dim, kHidden, kHidden, 1}, rng, 0.0);
  zero_final_layer(d.net);
  return d;
}

double reward(const Discriminator& d, std::span<const double> obs, std::span<const double> act) {
  return -std::log(1.0 - d.prob(obs, act));
}

double ValueFn::value(std::span<const double> obs) const { return net::forward(net, obs)[0]; }

ValueFn ValueFn::make(int obs_dim, Rng& rng) {
  ValueFn v;
  v.net = net::Mlp::init({obs_dim, kHidden, kHidden, 1}, rng, 0.0);
  zero_final_layer(v.net);
  return v;
}

// ---------------------------------------------------------------------------
// IrlConfig

void IrlConfig::validate() const {
  if (gamma < 0 || gamma >= 1) throw ConfigError("irl: gamma must be in [0,1)");
  if (lam < 0 || lam >= 1) throw ConfigError("irl: lambda must be in [0,1)");
  if (batch_steps < 1) throw ConfigError("irl: batch_steps must be >= 1");
  if (gen_steps < 1) throw ConfigError("irl: gen_steps must be >= 1");
  if (disc_steps < 1) throw ConfigError("irl: disc_steps must be >= 1");
  if (value_steps < 1) throw ConfigError("irl: value_steps must be >= 1");
  if (iterations < 1) throw ConfigError("irl: iterations must be >= 1");
  if (clip_ratio <= 0) throw ConfigError("irl: clip_ratio must be > 0");
  if (expert_noise_sigma < 0) throw ConfigError("irl: expert_noise_sigma must be >= 0");
  if (policy_lr <= 0 || value_lr <= 0 || disc_lr <= 0) throw ConfigError("irl: lr must be > 0");
}

// ---------------------------------------------------------------------------
// bc_train

GaussianPolicy bc_train(const envs::DemoSet& demos, const std::vector<double>& act_low,
                        const std::vector<double>& act_high, double dropout_rate, int epochs,
                        double lr, Rng& rng) {
  if (demos.size() == 0) throw ConfigError("bc_train: empty demo set");
  if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("bc_train: dropout_rate in [0,1)");
  const int n = static_cast<int>(demos.size());
  GaussianPolicy pi = GaussianPolicy::make(demos.obs_dim, demos.act_dim, act_low, act_high,
                                           dropout_rate, rng);
  pi.log_std.assign(demos.act_dim, std::log(0.1));
  net::OptimizerState opt = net::OptimizerState::make(pi.mean_net, lr);

  const int batch = std::min(64, n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int ep = 0; ep < epochs; ++ep) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<int>(rng.next_u64() % (i + 1))]);
    for (int start = 0; start < n; start += batch) {
      int end = std::min(start + batch, n);
      net::MlpGrads grads = net::MlpGrads::zeros_like(pi.mean_net);
      for (int bi = start; bi < end; ++bi) {
        int i = order[bi];
        net::ForwardTrace trace;
        std::vector<double> out =
            net::forward(pi.mean_net, demos.states[i], true, &rng, &trace);
        std::vector<double> up(out.size());
        for (std::size_t j = 0; j < out.size(); ++j)
          up[j] = 2.0 * (out[j] - demos.actions[i][j]) / (end - start);
        net::backward_accumulate(pi.mean_net, trace, up, grads);
      }
      net::optimizer_step(pi.mean_net, grads, opt);
    }
  }
  return pi;
}

// ---------------------------------------------------------------------------
// discriminator_update

namespace {

void bake_input_norm(Discriminator& d, const PairBatch& expert, const PairBatch& agent) {
  const int in = d.net.dims[0];
  std::vector<double> mean(in, 0.0), var(in, 0.0);
  double n = 0;
  auto accum = [&](const PairBatch& b) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      std::vector<double> x = concat(b.obs[i], b.act[i]);
      n += 1;
      for (int j = 0; j < in; ++j) {
        double dlt = x[j] - mean[j];
        mean[j] += dlt / n;
        var[j] += dlt * (x[j] - mean[j]);
      }
    }
  };
  accum(expert);
  accum(agent);
  std::vector<double> sd(in);
  for (int j = 0; j < in; ++j) sd[j] = std::max(std::sqrt(var[j] / std::max(n, 1.0)), 1e-3);

  auto& w1 = d.net.weights[0];
  auto& b1 = d.net.biases[0];
  const int rows = d.net.dims[1];
  for (int r = 0; r < rows; ++r) {
    double shift = 0.0;
    for (int j = 0; j < in; ++j) {
      w1[r * in + j] /= sd[j];
      shift += w1[r * in + j] * mean[j];
    }
    b1[r] -= shift;
  }
  d.norm_baked = true;
}

}  // namespace

double discriminator_update(Discriminator& d, net::OptimizerState& opt,
                            const PairBatch& expert_batch, const PairBatch& agent_batch,
                            double entropy_coeff, int steps) {
  if (expert_batch.size() == 0 || agent_batch.size() == 0)
    throw InputError("discriminator_update: empty batch");
  if (!d.norm_baked) bake_input_norm(d, expert_batch, agent_batch);

  const double n_e = static_cast<double>(expert_batch.size());
  const double n_a = static_cast<double>(agent_batch.size());
  const double n_all = n_e + n_a;
  double last_loss = 0.0;

  for (int s = 0; s < steps; ++s) {
    net::MlpGrads grads = net::MlpGrads::zeros_like(d.net);
    double loss = 0.0;
    auto pass = [&](const PairBatch& b, bool is_expert) {
      for (std::size_t i = 0; i < b.size(); ++i) {
        std::vector<double> x = concat(b.obs[i], b.act[i]);
        net::ForwardTrace trace;
        double z = net::forward(d.net, x, false, nullptr, &trace)[0];
        double p = sigmoid(z);
        double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
        double up;
        if (is_expert) {
          loss += -std::log(pc) / n_e;
          up = (p - 1.0) / n_e;
        } else {
          loss += -std::log(1.0 - pc) / n_a;
          up = p / n_a;
        }
        up += entropy_coeff * z * p * (1.0 - p) / n_all;
        net::backward_accumulate(d.net, trace, std::vector<double>{up}, grads);
      }
    };
    pass(expert_batch, true);
    pass(agent_batch, false);
    if (!std::isfinite(loss)) throw TrainingDiverged("discriminator loss non-finite");
    net::optimizer_step(d.net, grads, opt);
    last_loss = loss;
  }
  return last_loss;
}

// ---------------------------------------------------------------------------
// GAE

std::pair<std::vector<double>, std::vector<double>> gae_advantages(
    std::span<const double> rewards, std::span<const double> values, double bootstrap,
    double gamma, double lam) {
  if (values.size() != rewards.size())
    throw InputError("gae_advantages: values must align with rewards");
  const int t_max = static_cast<int>(rewards.size());
  std::vector<double> adv(t_max, 0.0), targets(t_max, 0.0);
  double acc = 0.0;
  for (int t = t_max - 1; t >= 0; --t) {
    double v_next = (t + 1 < t_max) ? values[t + 1] : bootstrap;
    double delta = rewards[t] + gamma * v_next - values[t];
    acc = delta + gamma * lam * acc;
    adv[t] = acc;
    targets[t] = values[t] + acc;
  }
  return {std::move(adv), std::move(targets)};
}

void normalize_advantages(std::span<double> adv) {
  if (adv.size() < 2) return;
  double m = 0.0;
  for (double a : adv) m += a;
  m /= static_cast<double>(adv.size());
  double ss = 0.0;
  for (double& a : adv) {
    a -= m;
    ss += a * a;
  }
  double sd = std::sqrt(ss / static_cast<double>(adv.size()));
  if (sd > 1e-12)
    for (double& a : adv) a /= sd;
}

// ---------------------------------------------------------------------------
// policy_update

PolicyUpdateStats policy_update(GaussianPolicy& pi, ValueFn& v, net::OptimizerState& pi_opt,
                                net::AdamVec& log_std_opt, net::OptimizerState& v_opt,
                                std::span<const PolicySample> batch, const IrlConfig& cfg) {
  if (batch.empty()) throw InputError("policy_update: empty batch");
  const double n = static_cast<double>(batch.size());
  PolicyUpdateStats stats;

  for (int epoch = 0; epoch < cfg.gen_steps; ++epoch) {
    net::MlpGrads grads = net::MlpGrads::zeros_like(pi.mean_net);
    std::vector<double> g_logstd(pi.log_std.size(), 0.0);
    for (const PolicySample& smp : batch) {
      net::ForwardTrace trace;
      std::vector<double> mu = net::forward(pi.mean_net, smp.obs, false, nullptr, &trace);
      double lp = pi.log_prob_mean(mu, smp.act);
      double ratio = std::exp(lp - smp.old_log_prob);
      if (!std::isfinite(ratio)) throw TrainingDiverged("policy ratio non-finite");
      bool active = smp.advantage >= 0 ? ratio <= 1.0 + cfg.clip_ratio
                                       : ratio >= 1.0 - cfg.clip_ratio;
      if (!active) continue;
      std::vector<double> up(mu.size(), 0.0);
      for (std::size_t j = 0; j < mu.size(); ++j) {
        double sd = std::exp(pi.log_std[j]);
        double z = (smp.act[j] - mu[j]) / sd;
        up[j] = -smp.advantage * ratio * z / sd / n;
        g_logstd[j] += -smp.advantage * ratio * (z * z - 1.0) / n;
      }
      net::backward_accumulate(pi.mean_net, trace, up, grads);
    }
    net::optimizer_step(pi.mean_net, grads, pi_opt);
    log_std_opt.update(pi.log_std, g_logstd, "policy log_std");
    for (double& ls : pi.log_std) ls = std::clamp(ls, kLogStdFloor, kLogStdCeil);

    double kl = 0.0;
    for (const PolicySample& smp : batch)
      kl += (smp.old_log_prob - pi.log_prob(smp.obs, smp.act)) / n;
    stats.kl = kl;
    stats.epochs_run = epoch + 1;
    if (kl > kKlStop) break;
  }

  for (int step = 0; step < cfg.value_steps; ++step) {
    net::MlpGrads grads = net::MlpGrads::zeros_like(v.net);
    double loss = 0.0;
    for (const PolicySample& smp : batch) {
      net::ForwardTrace trace;
      double out = net::forward(v.net, smp.obs, false, nullptr, &trace)[0];
      double err = out - smp.value_target;
      loss += err * err / n;
      net::backward_accumulate(v.net, trace, std::vector<double>{2.0 * err / n}, grads);
    }
    if (!std::isfinite(loss)) throw TrainingDiverged("value loss non-finite");
    net::optimizer_step(v.net, grads, v_opt);
    stats.value_loss = loss;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// irl_train

IrlResult irl_train(const envs::Env& env, const envs::DemoSet& demos, const IrlConfig& cfg,
                    Rng& rng) {
  cfg.validate();
  const auto* gate = dynamic_cast<const envs::RewardGate*>(&env);
  if (!gate) throw InputError("irl_train: env must be reward-gated");
  if (demos.size() == 0) throw InputError("irl_train: empty demo set");
  if (demos.obs_dim != env.obs_dim() || demos.act_dim != env.action_dim())
    throw InputError("irl_train: demo dims do not match env");

  Rng init_rng = rng.fork(envs::seed_tag::kInit);
  const std::uint64_t train_seed = rng.next_u64();
  Rng noise_rng(Rng::mix(train_seed, 0xE));

  IrlResult out;
  out.policy = GaussianPolicy::make(env.obs_dim(), env.action_dim(), env.action_low(),
                                    env.action_high(), 0.0, init_rng);
  out.disc = Discriminator::make(env.obs_dim(), env.action_dim(), init_rng);
  out.value = ValueFn::make(env.obs_dim(), init_rng);

  net::OptimizerState pi_opt = net::OptimizerState::make(out.policy.mean_net, cfg.policy_lr);
  net::AdamVec ls_opt = net::AdamVec::make(out.policy.log_std.size(), cfg.policy_lr);
  net::OptimizerState v_opt = net::OptimizerState::make(out.value.net, cfg.value_lr);
  net::OptimizerState d_opt = net::OptimizerState::make(out.disc.net, cfg.disc_lr);

  // Historical agent pairs for the discriminator. Without them it only sees
  // the current batch, forgets regions the policy left, and the policy can
  // farm near-chance rewards by drifting to never-classified states forever.
  PairBatch replay;
  constexpr std::size_t kReplayCap = 50000;
  Rng replay_rng(Rng::mix(train_seed, 0xD));

  // The adversarial game never converges pointwise; without a step-size
  // schedule the final iterate is whatever phase of the disc/policy cycle
  // training happened to stop in. Linear decay damps the cycle so the last
  // iterate is near the run's best.
  auto set_lr = [](net::OptimizerState& o, double lr) {
    o.lr = lr;
    for (net::AdamVec& a : o.w_state) a.lr = lr;
    for (net::AdamVec& a : o.b_state) a.lr = lr;
  };

  Rng synth_rng(Rng::mix(train_seed, 0xF));
  std::vector<double> demo_sd(env.obs_dim(), 0.0);
  {
    std::vector<double> mu(env.obs_dim(), 0.0);
    for (const auto& s : demos.states)
      for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += s[j] / demos.size();
    for (const auto& s : demos.states)
      for (std::size_t j = 0; j < mu.size(); ++j) {
        double dlt = s[j] - mu[j];
        demo_sd[j] += dlt * dlt / demos.size();
      }
    for (double& v : demo_sd) v = std::max(std::sqrt(v), 1e-3);
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr_scale = 1.0 - static_cast<double>(it) / cfg.iterations;
    set_lr(pi_opt, cfg.policy_lr * lr_scale);
    set_lr(d_opt, cfg.disc_lr * lr_scale);
    set_lr(v_opt, cfg.value_lr * lr_scale);
    try {
      // On-policy batch: whole episodes until the step budget is covered.
      std::vector<std::vector<std::vector<double>>> ep_obs;
      std::vector<std::vector<std::vector<double>>> ep_act;
      std::vector<std::vector<double>> ep_logp;
      std::vector<std::vector<double>> ep_final_obs;
      double return_sum = 0.0;
      int steps_total = 0, n_eps = 0;
      while (steps_total < cfg.batch_steps) {
        Rng er(Rng::mix(train_seed, static_cast<std::uint64_t>(it) + 1,
                        static_cast<std::uint64_t>(n_eps)));
        envs::EnvState s = env.reset(er);
        std::vector<double> obs = env.observe(s);
        std::vector<std::vector<double>> obs_list, act_list;
        std::vector<double> logp_list;
        bool done = false;
        while (!done) {
          std::vector<double> a = out.policy.sample(obs, er);
          double lp = out.policy.log_prob(obs, a);
          obs_list.push_back(obs);
          act_list.push_back(a);
          logp_list.push_back(lp);
          envs::StepResult r = env.step(s, a);
          s = std::move(r.state);
          obs = std::move(r.obs);
          done = r.done;
        }
        return_sum += gate->episode_return(s);
        steps_total += static_cast<int>(act_list.size());
        ++n_eps;
        ep_obs.push_back(std::move(obs_list));
        ep_act.push_back(std::move(act_list));
        ep_logp.push_back(std::move(logp_list));
        ep_final_obs.push_back(obs);
      }

      // Relabel with the inferred reward, then GAE per episode.
      std::vector<PolicySample> batch;
      batch.reserve(steps_total);
      std::vector<double> all_adv;
      all_adv.reserve(steps_total);
      double reward_sum = 0.0;
      for (int e = 0; e < n_eps; ++e) {
        const auto& obs_list = ep_obs[e];
        const auto& act_list = ep_act[e];
        const int t_max = static_cast<int>(act_list.size());
        std::vector<double> rews(t_max), vals(t_max);
        for (int t = 0; t < t_max; ++t) {
          rews[t] = reward(out.disc, obs_list[t], act_list[t]);
          vals[t] = out.value.value(obs_list[t]);
        }
        reward_sum += std::accumulate(rews.begin(), rews.end(), 0.0);
        double bootstrap = out.value.value(ep_final_obs[e]);
        auto [adv, targets] = gae_advantages(rews, vals, bootstrap, cfg.gamma, cfg.lam);
        for (int t = 0; t < t_max; ++t) {
          PolicySample smp;
          smp.obs = obs_list[t];
          smp.act = act_list[t];
          smp.advantage = adv[t];
          smp.old_log_prob = ep_logp[e][t];
          smp.value_target = targets[t];
          batch.push_back(std::move(smp));
          all_adv.push_back(adv[t]);
        }
      }
      normalize_advantages(all_adv);
      for (std::size_t i = 0; i < batch.size(); ++i) batch[i].advantage = all_adv[i];

      PolicyUpdateStats stats =
          policy_update(out.policy, out.value, pi_opt, ls_opt, v_opt, batch, cfg);

      // TEMPORARY probe knob; hardcode before ship.
      static const double kSigmaFinal = [] {
        const char* e = std::getenv("IMPLANT_SIGMA_F");
        return e ? std::atof(e) : 0.1;
      }();
      // Exploration must shrink as training proceeds: the expert is
      // deterministic, so a fixed-width policy leaves the discriminator a
      // permanent action-noise channel and the adversarial game cannot close.
      const double ls_hi = std::log(0.5) + (std::log(kSigmaFinal) - std::log(0.5)) *
                                               (it + 1.0) / cfg.iterations;
      for (double& ls : out.policy.log_std) ls = std::min(ls, ls_hi);

      PairBatch expert;
      expert.obs = demos.states;
      expert.act = demos.actions;
      if (cfg.expert_noise_sigma > 0) {
        for (auto& row : expert.obs)
          for (double& x : row) x += cfg.expert_noise_sigma * noise_rng.normal();
        for (auto& row : expert.act)
          for (double& x : row) x += cfg.expert_noise_sigma * noise_rng.normal();
      }
      PairBatch agent;
      agent.obs.reserve(2 * batch.size());
      agent.act.reserve(2 * batch.size());
      for (const auto& smp : batch) {
        agent.obs.push_back(smp.obs);
        agent.act.push_back(smp.act);
      }
      const std::size_t n_hist = std::min(replay.size(), batch.size());
      for (std::size_t i = 0; i < n_hist; ++i) {
        std::size_t j = replay_rng.uniform_index(replay.size());
        agent.obs.push_back(replay.obs[j]);
        agent.act.push_back(replay.act[j]);
      }
      for (const auto& smp : batch) {
        if (replay.size() < kReplayCap) {
          replay.obs.push_back(smp.obs);
          replay.act.push_back(smp.act);
        } else {
          std::size_t j = replay_rng.uniform_index(kReplayCap);
          replay.obs[j] = smp.obs;
          replay.act[j] = smp.act;
        }
      }

      // The discriminator only ever sees visited and demonstrated pairs;
      // beyond them its tanh layers saturate at an arbitrary constant, and
      // wherever that constant reads "expert" a decision-time planner will
      // chase it off-support. Scattered negatives anchor the unvisited
      // surround to "agent" so the frozen reward decays away from the data
      // instead of plateauing above it. The scatter scale comes from the
      // demos, not the batch: the batch tightens as the policy converges and
      // a shrinking anchor lets the far field saturate back up. Actions are
      // drawn half from the policy at the scattered state and half uniform,
      // matching the two distributions plan-time rollouts query.
      {
        const std::size_t n_syn = batch.size() / 2;
        for (std::size_t i = 0; i < n_syn; ++i) {
          const auto& base = (i % 2 == 0)
                                 ? batch[synth_rng.uniform_index(batch.size())].obs
                                 : demos.states[synth_rng.uniform_index(demos.size())];
          const double scatter = synth_rng.uniform(1.0, 6.0);
          std::vector<double> s(base.size());
          for (std::size_t j = 0; j < s.size(); ++j)
            s[j] = base[j] + scatter * demo_sd[j] * synth_rng.normal();
          std::vector<double> a;
          if (i % 4 < 2) {
            a = out.policy.sample(s, synth_rng);
          } else {
            a.resize(out.policy.act_low.size());
            for (std::size_t j = 0; j < a.size(); ++j)
              a[j] = synth_rng.uniform(out.policy.act_low[j], out.policy.act_high[j]);
          }
          agent.obs.push_back(std::move(s));
          agent.act.push_back(std::move(a));
        }
      }
      double disc_loss =
          discriminator_update(out.disc, d_opt, expert, agent, cfg.disc_entropy, cfg.disc_steps);

      TrainLogRow row;
      row.iteration = it;
      row.mean_return = return_sum / n_eps;
      row.disc_loss = disc_loss;
      row.mean_inferred_reward = reward_sum / steps_total;
      row.policy_kl = stats.kl;
      row.value_loss = stats.value_loss;
      out.log.push_back(row);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged("iteration " + std::to_string(it) + ": " + e.what());
    }
  }
  return out;
}

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open for write: " + path);
  f << "iteration,mean_return,disc_loss,mean_inferred_reward,policy_kl,value_loss\n";
  char buf[256];
  for (const TrainLogRow& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration,
                  r.mean_return, r.disc_loss, r.mean_inferred_reward, r.policy_kl, r.value_loss);
    f << buf;
  }
}

}  // namespace implant::imitation
