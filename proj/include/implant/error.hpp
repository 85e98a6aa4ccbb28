#pragma once

#include <stdexcept>
#include <string>

namespace implant {

/// Caller handed us data with the wrong shape or an invalid value.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An operation was called out of order (e.g. backward without forward).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Bad or contradictory configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Optimization produced a non-finite quantity. `where` names the layer or
/// iteration that blew up.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& where)
      : std::runtime_error("training diverged: " + where), where(where) {}
  std::string where;
};

/// Environment state left the finite domain.
struct SimulationDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Expert controller failed to meet the documented return threshold.
struct DegenerateExpert : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Every planner candidate became unusable.
struct PlanningAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint file missing or malformed.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace implant
