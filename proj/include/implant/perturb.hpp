#pragma once

#include <memory>
#include <string>

#include "implant/env.hpp"

namespace implant::perturb {

enum class Kind { none, action_nuisance, state_nuisance, motor_noise, transition_noise };
enum class Mode { train, test };

struct PerturbationSpec {
  Kind kind = Kind::none;
  double sigma = 0.0;
  double v_th = 0.3;
  Mode mode = Mode::train;
};

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);
std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

/// Appends the previous executed action to the observation (train) or fresh
/// standard-normal noise per dim (test). State layout: inner state, then the
/// appended dims, then the wrapper's noise-stream state.
std::unique_ptr<envs::Env> wrap_action_nuisance(const envs::Env& env, Mode mode, Rng& rng);

/// Appends a speed >= v_th indicator (train) or a constant 0 (test).
std::unique_ptr<envs::Env> wrap_state_nuisance(const envs::Env& env, double v_th, Mode mode);

/// Executes clip(a + eps), eps ~ N(0, sigma^2 I), fresh each step.
/// State layout: inner state, then the noise-stream state.
std::unique_ptr<envs::Env> wrap_motor_noise(const envs::Env& env, double sigma, Rng& rng);

/// Adds N(0, sigma^2 I) to the physical components of the next state (not the
/// step counter). State layout: inner state, then the noise-stream state.
std::unique_ptr<envs::Env> wrap_transition_noise(const envs::Env& env, double sigma, Rng& rng);

/// Applies `spec` to a base env. Kind::none returns a plain clone.
std::unique_ptr<envs::Env> apply(const envs::Env& env, const PerturbationSpec& spec, Rng& rng);

}  // namespace implant::perturb
