#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "implant/rng.hpp"

namespace implant::envs {

/// Opaque full simulator state, sufficient to resume. Distinct from the
/// observation; wrappers append their own bookkeeping (previous action, noise
/// stream state) after the inner state, so an inner state is always a prefix.
struct EnvState {
  std::vector<double> v;
};

struct StepResult {
  EnvState state;
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

/// Continuous-control MDP with explicit state. All methods are const: the
/// environment object is immutable configuration and every bit of mutable
/// simulation state lives in EnvState, which makes instances trivially
/// shareable across planner workers.
class Env {
 public:
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual int obs_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual const std::vector<double>& action_low() const = 0;
  virtual const std::vector<double>& action_high() const = 0;
  virtual double discount() const = 0;
  virtual int max_episode_len() const = 0;

  virtual EnvState reset(Rng& rng) const = 0;
  virtual std::vector<double> observe(const EnvState& s) const = 0;
  /// Actions outside the bounds are clipped before dynamics.
  virtual StepResult step(const EnvState& s, std::span<const double> action) const = 0;

  /// Analytic stand-in for a trained expert; consumes this env's observation.
  virtual std::vector<double> expert_action(std::span<const double> obs) const = 0;
  /// Mean return below which collect_demos treats the expert as degenerate.
  virtual double expert_return_threshold() const = 0;
  /// Norm of the velocity components (state-nuisance wrapper input).
  virtual double speed(const EnvState& s) const = 0;

  virtual std::unique_ptr<Env> clone() const = 0;

  std::vector<double> clip_action(std::span<const double> a) const;
};

/// Observation sequence plus executed actions and ground-truth rewards.
/// env_rewards are evaluation-only; a gated env records NaN here.
struct Trajectory {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  std::vector<double> env_rewards;
  bool done = false;
  double gamma = 1.0;

  std::size_t length() const { return actions.size(); }
  double total_reward() const;
  /// Discounted return using the gamma recorded from the MDP.
  double discounted_return() const;
};

/// 2-D point mass pushed by a bounded force toward a goal.
/// Semi-implicit Euler: v' = v + dt*(a - drag*v), p' = p + dt*v'.
/// Reward -|p-goal|^2 - 0.01|a|^2. Observation = (px, py, vx, vy).
/// p0: position uniform in start +- start_halfwidth per axis, velocity zero.
class PointMass2D : public Env {
 public:
  struct Params {
    double dt = 0.05;
    double drag = 0.1;
    double goal_x = 1.0, goal_y = 1.0;
    double start_x = -1.0, start_y = -1.0;
    double start_halfwidth = 0.4;
    double kp = 4.0, kd = 2.0;
    int episode_len = 200;
    double gamma = 0.99;
  };

  PointMass2D() : PointMass2D(Params()) {}
  explicit PointMass2D(Params p);

  std::string name() const override { return "point_mass_2d"; }
  int obs_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  int state_dim() const override { return 5; }  // px py vx vy t
  const std::vector<double>& action_low() const override { return lo_; }
  const std::vector<double>& action_high() const override { return hi_; }
  double discount() const override { return p_.gamma; }
  int max_episode_len() const override { return p_.episode_len; }

  EnvState reset(Rng& rng) const override;
  std::vector<double> observe(const EnvState& s) const override;
  StepResult step(const EnvState& s, std::span<const double> action) const override;
  std::vector<double> expert_action(std::span<const double> obs) const override;
  double expert_return_threshold() const override { return -300.0; }
  double speed(const EnvState& s) const override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<PointMass2D>(*this); }

  const Params& params() const { return p_; }

 private:
  Params p_;
  std::vector<double> lo_{-1.0, -1.0}, hi_{1.0, 1.0};
};

/// Torque-limited pendulum swing-up with the usual rod dynamics
/// (theta measured from upright): thdot' = thdot + (1.5*g/l*sin(th) +
/// 3*u/(m*l^2))*dt, th' = th + thdot'*dt, thdot clipped to +-8.
/// Reward -(th^2 + 0.1*thdot^2 + 0.001*u^2). Observation = (th, thdot).
/// p0: angle uniform in [-pi, pi], angular velocity 0.
/// Expert: energy shaping toward the upright energy, PD capture near the top.
class Pendulum : public Env {
 public:
  struct Params {
    double g = 10.0, m = 1.0, l = 1.0;
    double dt = 0.05;
    double max_torque = 2.0;
    double max_speed = 8.0;
    int episode_len = 200;
    double gamma = 0.99;
  };

  Pendulum() : Pendulum(Params()) {}
  explicit Pendulum(Params p);

  std::string name() const override { return "pendulum"; }
  int obs_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  int state_dim() const override { return 3; }  // th thdot t
  const std::vector<double>& action_low() const override { return lo_; }
  const std::vector<double>& action_high() const override { return hi_; }
  double discount() const override { return p_.gamma; }
  int max_episode_len() const override { return p_.episode_len; }

  EnvState reset(Rng& rng) const override;
  std::vector<double> observe(const EnvState& s) const override;
  StepResult step(const EnvState& s, std::span<const double> action) const override;
  std::vector<double> expert_action(std::span<const double> obs) const override;
  double expert_return_threshold() const override { return -400.0; }
  double speed(const EnvState& s) const override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<Pendulum>(*this); }

  const Params& params() const { return p_; }

 private:
  Params p_;
  std::vector<double> lo_{-2.0}, hi_{2.0};
};

/// Discrete-time linear system s' = A s + B a with fixed stable A (two damped
/// rotation blocks with a weak upper coupling) and quadratic cost
/// -(s'Qs + a'Ra), Q = I, R = 0.1 I. Expert is the LQR gain obtained by
/// iterating the discrete Riccati recursion to convergence.
/// p0: s uniform in [-1, 1]^4.
class LinearQuadratic : public Env {
 public:
  struct Params {
    int episode_len = 200;
    double gamma = 0.99;
  };

  LinearQuadratic() : LinearQuadratic(Params()) {}
  explicit LinearQuadratic(Params p);

  std::string name() const override { return "linear_quadratic"; }
  int obs_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  int state_dim() const override { return 5; }  // s(4) t
  const std::vector<double>& action_low() const override { return lo_; }
  const std::vector<double>& action_high() const override { return hi_; }
  double discount() const override { return p_.gamma; }
  int max_episode_len() const override { return p_.episode_len; }

  EnvState reset(Rng& rng) const override;
  std::vector<double> observe(const EnvState& s) const override;
  StepResult step(const EnvState& s, std::span<const double> action) const override;
  std::vector<double> expert_action(std::span<const double> obs) const override;
  double expert_return_threshold() const override { return -40.0; }
  double speed(const EnvState& s) const override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<LinearQuadratic>(*this); }

  /// LQR gain K (2x4 row-major): expert action = clip(-K s).
  const std::vector<double>& lqr_gain() const { return gain_; }
  const std::vector<double>& dyn_a() const { return a_; }
  const std::vector<double>& dyn_b() const { return b_; }

 private:
  Params p_;
  std::vector<double> lo_{-4.0, -4.0}, hi_{4.0, 4.0};
  std::vector<double> a_;     // 4x4 row-major
  std::vector<double> b_;     // 4x2 row-major
  std::vector<double> gain_;  // 2x4 row-major
};

/// Hands imitation learners an env whose reward channel reads NaN; the true
/// per-episode return accumulates inside the state and is only reachable
/// through episode_return(), the evaluation channel used for logging.
class RewardGate : public Env {
 public:
  explicit RewardGate(const Env& base) : base_(base.clone()) {}
  RewardGate(const RewardGate& o) : base_(o.base_->clone()) {}

  std::string name() const override { return "gated(" + base_->name() + ")"; }
  int obs_dim() const override { return base_->obs_dim(); }
  int action_dim() const override { return base_->action_dim(); }
  int state_dim() const override { return base_->state_dim() + 1; }
  const std::vector<double>& action_low() const override { return base_->action_low(); }
  const std::vector<double>& action_high() const override { return base_->action_high(); }
  double discount() const override { return base_->discount(); }
  int max_episode_len() const override { return base_->max_episode_len(); }

  EnvState reset(Rng& rng) const override;
  std::vector<double> observe(const EnvState& s) const override;
  StepResult step(const EnvState& s, std::span<const double> action) const override;
  std::vector<double> expert_action(std::span<const double> obs) const override {
    return base_->expert_action(obs);
  }
  double expert_return_threshold() const override { return base_->expert_return_threshold(); }
  double speed(const EnvState& s) const override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<RewardGate>(*this); }

  double episode_return(const EnvState& s) const { return s.v.back(); }

 private:
  std::unique_ptr<Env> base_;
};

std::unique_ptr<Env> make_env(const std::string& name, int episode_len = 0);

/// Sub-sampled expert state-action pairs.
struct DemoSet {
  std::string env_name;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  /// Mean return of the source episodes; transient, not serialized.
  double expert_mean_return = 0.0;

  std::size_t size() const { return states.size(); }
};

/// Rolls out n_traj expert episodes and keeps every `subsample`-th pair.
/// Throws DegenerateExpert if the expert's mean return falls below the env's
/// documented threshold.
DemoSet collect_demos(const Env& env, int n_traj, int subsample, Rng& rng);

void save_demos(const std::string& path, const DemoSet& demos);
DemoSet load_demos(const std::string& path);

/// Deterministic per-purpose stream tags hung off one root seed.
namespace seed_tag {
constexpr std::uint64_t kReset = 1;
constexpr std::uint64_t kPlan = 2;
constexpr std::uint64_t kDemos = 3;
constexpr std::uint64_t kTrain = 4;
constexpr std::uint64_t kEval = 5;
constexpr std::uint64_t kInit = 6;
}  // namespace seed_tag

/// Rng for resets within episode `episode_seed`.
inline Rng episode_reset_rng(std::uint64_t episode_seed) {
  return Rng(Rng::mix(episode_seed, seed_tag::kReset));
}

/// Stream for candidate `cand` of the planning step at time `t`. Plain
/// stochastic policy execution draws from candidate 0 of every step, which is
/// what makes the degenerate B=1, H=0 planner reproduce it exactly.
inline Rng candidate_rng(std::uint64_t episode_seed, int t, int cand) {
  return Rng(Rng::mix(Rng::mix(episode_seed, seed_tag::kPlan, static_cast<std::uint64_t>(t)),
                      static_cast<std::uint64_t>(cand)));
}

}  // namespace implant::envs
