#include "implant/perturb.hpp"

#include <bit>
#include <cstdint>

#include "implant/error.hpp"

namespace implant::perturb {

using envs::Env;
using envs::EnvState;
using envs::StepResult;

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::none: return "none";
    case Kind::action_nuisance: return "action_nuisance";
    case Kind::state_nuisance: return "state_nuisance";
    case Kind::motor_noise: return "motor_noise";
    case Kind::transition_noise: return "transition_noise";
  }
  throw InputError("bad perturbation kind");
}

Kind parse_kind(const std::string& s) {
  if (s == "none") return Kind::none;
  if (s == "action_nuisance") return Kind::action_nuisance;
  if (s == "state_nuisance") return Kind::state_nuisance;
  if (s == "motor_noise") return Kind::motor_noise;
  if (s == "transition_noise") return Kind::transition_noise;
  throw ConfigError("unknown perturbation kind: " + s);
}

std::string mode_name(Mode m) { return m == Mode::train ? "train" : "test"; }

Mode parse_mode(const std::string& s) {
  if (s == "train") return Mode::train;
  if (s == "test") return Mode::test;
  throw ConfigError("unknown perturbation mode: " + s);
}

namespace {

double pack(std::uint64_t u) { return std::bit_cast<double>(u); }
std::uint64_t unpack(double d) { return std::bit_cast<std::uint64_t>(d); }

void reject_double_wrap(const Env& env, const std::string& tag) {
  if (env.name().find(tag) != std::string::npos)
    throw ConfigError("env already wrapped with " + tag + ": " + env.name());
}

class Wrapper : public Env {
 public:
  explicit Wrapper(const Env& base) : inner_(base.clone()) {}
  Wrapper(const Wrapper& o) : inner_(o.inner_->clone()) {}

  int obs_dim() const override { return inner_->obs_dim(); }
  int action_dim() const override { return inner_->action_dim(); }
  int state_dim() const override { return inner_->state_dim(); }
  const std::vector<double>& action_low() const override { return inner_->action_low(); }
  const std::vector<double>& action_high() const override { return inner_->action_high(); }
  double discount() const override { return inner_->discount(); }
  int max_episode_len() const override { return inner_->max_episode_len(); }
  double expert_return_threshold() const override { return inner_->expert_return_threshold(); }

 protected:
  EnvState inner_state(const EnvState& s) const {
    return {{s.v.begin(), s.v.begin() + inner_->state_dim()}};
  }
  std::unique_ptr<Env> inner_;
};

class ActionNuisance : public Wrapper {
 public:
  ActionNuisance(const Env& base, Mode mode, Rng& rng)
      : Wrapper(base), mode_(mode), seed_(rng.next_u64()) {}

  std::string name() const override {
    return "action_nuisance[" + mode_name(mode_) + "]:" + inner_->name();
  }
  int obs_dim() const override { return inner_->obs_dim() + inner_->action_dim(); }
  int state_dim() const override { return inner_->state_dim() + inner_->action_dim() + 1; }

  EnvState reset(Rng& rng) const override {
    EnvState s = inner_->reset(rng);
    Rng stream(Rng::mix(seed_, rng.next_u64()));
    for (int i = 0; i < inner_->action_dim(); ++i)
      s.v.push_back(mode_ == Mode::test ? stream.normal() : 0.0);
    s.v.push_back(pack(stream.state()));
    return s;
  }

  std::vector<double> observe(const EnvState& s) const override {
    std::vector<double> obs = inner_->observe(inner_state(s));
    int n = inner_->state_dim();
    obs.insert(obs.end(), s.v.begin() + n, s.v.begin() + n + inner_->action_dim());
    return obs;
  }

  StepResult step(const EnvState& s, std::span<const double> action) const override {
    std::vector<double> exec = inner_->clip_action(action);
    StepResult r = inner_->step(inner_state(s), exec);
    Rng stream(unpack(s.v.back()));
    for (int i = 0; i < inner_->action_dim(); ++i)
      r.state.v.push_back(mode_ == Mode::test ? stream.normal() : exec[i]);
    r.state.v.push_back(pack(stream.state()));
    r.obs = observe(r.state);
    return r;
  }

  std::vector<double> expert_action(std::span<const double> obs) const override {
    return inner_->expert_action(obs.subspan(0, inner_->obs_dim()));
  }
  double speed(const EnvState& s) const override { return inner_->speed(inner_state(s)); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<ActionNuisance>(*this); }

 private:
  Mode mode_;
  std::uint64_t seed_;
};

class StateNuisance : public Wrapper {
 public:
  StateNuisance(const Env& base, double v_th, Mode mode)
      : Wrapper(base), v_th_(v_th), mode_(mode) {}

  std::string name() const override {
    return "state_nuisance[" + mode_name(mode_) + "]:" + inner_->name();
  }
  int obs_dim() const override { return inner_->obs_dim() + 1; }

  EnvState reset(Rng& rng) const override { return inner_->reset(rng); }

  std::vector<double> observe(const EnvState& s) const override {
    std::vector<double> obs = inner_->observe(s);
    bool on = mode_ == Mode::train && inner_->speed(s) >= v_th_;
    obs.push_back(on ? 1.0 : 0.0);
    return obs;
  }

  StepResult step(const EnvState& s, std::span<const double> action) const override {
    StepResult r = inner_->step(s, action);
    r.obs = observe(r.state);
    return r;
  }

  std::vector<double> expert_action(std::span<const double> obs) const override {
    return inner_->expert_action(obs.subspan(0, inner_->obs_dim()));
  }
  double speed(const EnvState& s) const override { return inner_->speed(s); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<StateNuisance>(*this); }

 private:
  double v_th_;
  Mode mode_;
};

class MotorNoise : public Wrapper {
 public:
  MotorNoise(const Env& base, double sigma, Rng& rng)
      : Wrapper(base), sigma_(sigma), seed_(rng.next_u64()) {}

  std::string name() const override { return "motor_noise:" + inner_->name(); }
  int state_dim() const override { return inner_->state_dim() + 1; }

  EnvState reset(Rng& rng) const override {
    EnvState s = inner_->reset(rng);
    s.v.push_back(pack(Rng::mix(seed_, rng.next_u64())));
    return s;
  }

  std::vector<double> observe(const EnvState& s) const override {
    return inner_->observe(inner_state(s));
  }

  StepResult step(const EnvState& s, std::span<const double> action) const override {
    Rng stream(unpack(s.v.back()));
    std::vector<double> a(action.begin(), action.end());
    if (sigma_ > 0)
      for (double& x : a) x += sigma_ * stream.normal();
    StepResult r = inner_->step(inner_state(s), a);
    r.state.v.push_back(pack(stream.state()));
    return r;
  }

  std::vector<double> expert_action(std::span<const double> obs) const override {
    return inner_->expert_action(obs);
  }
  double speed(const EnvState& s) const override { return inner_->speed(inner_state(s)); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<MotorNoise>(*this); }

 private:
  double sigma_;
  std::uint64_t seed_;
};

class TransitionNoise : public Wrapper {
 public:
  TransitionNoise(const Env& base, double sigma, Rng& rng)
      : Wrapper(base), sigma_(sigma), seed_(rng.next_u64()) {}

  std::string name() const override { return "transition_noise:" + inner_->name(); }
  int state_dim() const override { return inner_->state_dim() + 1; }

  EnvState reset(Rng& rng) const override {
    EnvState s = inner_->reset(rng);
    s.v.push_back(pack(Rng::mix(seed_, rng.next_u64())));
    return s;
  }

  std::vector<double> observe(const EnvState& s) const override {
    return inner_->observe(inner_state(s));
  }

  StepResult step(const EnvState& s, std::span<const double> action) const override {
    Rng stream(unpack(s.v.back()));
    StepResult r = inner_->step(inner_state(s), action);
    if (sigma_ > 0) {
      // Physical components only; the trailing slot is the step counter.
      for (int i = 0; i + 1 < inner_->state_dim(); ++i) r.state.v[i] += sigma_ * stream.normal();
      r.obs = inner_->observe(r.state);
    }
    r.state.v.push_back(pack(stream.state()));
    return r;
  }

  std::vector<double> expert_action(std::span<const double> obs) const override {
    return inner_->expert_action(obs);
  }
  double speed(const EnvState& s) const override { return inner_->speed(inner_state(s)); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<TransitionNoise>(*this); }

 private:
  double sigma_;
  std::uint64_t seed_;
};

}  // namespace

std::unique_ptr<Env> wrap_action_nuisance(const Env& env, Mode mode, Rng& rng) {
  reject_double_wrap(env, "action_nuisance");
  return std::make_unique<ActionNuisance>(env, mode, rng);
}

std::unique_ptr<Env> wrap_state_nuisance(const Env& env, double v_th, Mode mode) {
  reject_double_wrap(env, "state_nuisance");
  return std::make_unique<StateNuisance>(env, v_th, mode);
}

std::unique_ptr<Env> wrap_motor_noise(const Env& env, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigError("motor_noise: sigma must be >= 0");
  reject_double_wrap(env, "motor_noise");
  return std::make_unique<MotorNoise>(env, sigma, rng);
}

std::unique_ptr<Env> wrap_transition_noise(const Env& env, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigError("transition_noise: sigma must be >= 0");
  reject_double_wrap(env, "transition_noise");
  return std::make_unique<TransitionNoise>(env, sigma, rng);
}

std::unique_ptr<Env> apply(const Env& env, const PerturbationSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case Kind::none: return env.clone();
    case Kind::action_nuisance: return wrap_action_nuisance(env, spec.mode, rng);
    case Kind::state_nuisance: return wrap_state_nuisance(env, spec.v_th, spec.mode);
    case Kind::motor_noise: return wrap_motor_noise(env, spec.sigma, rng);
    case Kind::transition_noise: return wrap_transition_noise(env, spec.sigma, rng);
  }
  throw InputError("bad perturbation kind");
}

}  // namespace implant::perturb
