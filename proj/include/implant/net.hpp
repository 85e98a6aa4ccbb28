#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "implant/rng.hpp"

namespace implant::net {

/// Dense MLP with tanh hidden activations and an identity output layer.
/// weights[l] is (dims[l+1] x dims[l]) row-major; biases[l] has dims[l+1].
/// Dropout, when enabled, is inverted (masks scaled by 1/(1-rate)) and applied
/// to hidden activations in train-mode forwards only, so eval-mode forwards
/// never rescale.
struct Mlp {
  std::vector<int> dims;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  double dropout_rate = 0.0;

  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  int n_layers() const { return static_cast<int>(dims.size()) - 1; }

  /// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
  static Mlp init(const std::vector<int>& dims, Rng& rng, double dropout_rate = 0.0);
  static Mlp zeros(const std::vector<int>& dims);
};

/// Cached activations from one forward pass, consumed by backward().
struct ForwardTrace {
  std::vector<std::vector<double>> inputs;  // inputs[l] = input to layer l
  std::vector<std::vector<double>> tanh_out;  // pre-dropout tanh per hidden layer
  std::vector<std::vector<double>> masks;  // scaled dropout masks (empty if unused)
  bool valid = false;
};

/// Gradients with the same shapes as the network parameters.
struct MlpGrads {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static MlpGrads zeros_like(const Mlp& net);
  void scale(double c);
};

/// Eval-mode forward: deterministic, dropout-free.
std::vector<double> forward(const Mlp& net, std::span<const double> x);

/// Full forward. In train mode with dropout_rate > 0 a seeded rng is required.
/// Pass a trace to enable a subsequent backward().
std::vector<double> forward(const Mlp& net, std::span<const double> x, bool train_mode,
                            Rng* rng, ForwardTrace* trace);

/// Parameter gradients of (upstream . output) for the traced forward pass.
MlpGrads backward(const Mlp& net, const ForwardTrace& trace,
                  std::span<const double> upstream);

/// As above, accumulating into `acc` (for summing over a batch).
void backward_accumulate(const Mlp& net, const ForwardTrace& trace,
                         std::span<const double> upstream, MlpGrads& acc);

/// Adam accumulator for a flat parameter vector.
struct AdamVec {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  static AdamVec make(std::size_t n, double lr);
  /// One update; `what` labels the parameter block in divergence errors.
  void update(std::vector<double>& params, const std::vector<double>& grads,
              const std::string& what);
};

/// Adam state over all layers of an Mlp.
struct OptimizerState {
  double lr = 1e-3;
  std::vector<AdamVec> w_state;
  std::vector<AdamVec> b_state;
  std::int64_t step = 0;

  static OptimizerState make(const Mlp& net, double lr);
};

/// Adam step on every layer. Throws TrainingDiverged naming the offending
/// layer if any gradient component is non-finite.
void optimizer_step(Mlp& net, const MlpGrads& grads, OptimizerState& state);

/// Process-wide count of optimizer updates; used by the evaluation-phase
/// guard to assert that no training happens once evaluation has begun.
std::uint64_t optimizer_update_count();

/// Checkpoint file: "IMPLNT01", u32 layer count, u32 dims, then per layer the
/// row-major weights and biases as f64, then (policy checkpoints only) the
/// per-dimension log-std vector. A file tags itself as a policy head by the
/// presence of those trailing dims.back() doubles.
void save_checkpoint(const std::string& path, const Mlp& net,
                     const std::vector<double>* log_std = nullptr);

struct Checkpoint {
  Mlp net;
  std::optional<std::vector<double>> log_std;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace implant::net
