#include "implant/net.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "implant/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace implant::net {

namespace {

std::atomic<std::uint64_t> g_update_count{0};

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) throw InputError("Mlp needs at least input and output dims");
  for (int d : dims)
    if (d <= 0) throw InputError("Mlp layer dims must be positive");
}

}  // namespace

Mlp Mlp::init(const std::vector<int>& dims, Rng& rng, double dropout_rate) {
  check_dims(dims);
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw InputError("dropout_rate must be in [0,1)");
  Mlp net;
  net.dims = dims;
  net.dropout_rate = dropout_rate;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    int fan_in = dims[l], fan_out = dims[l + 1];
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
    for (double& x : w) x = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 0.0);
  }
  return net;
}

Mlp Mlp::zeros(const std::vector<int>& dims) {
  check_dims(dims);
  Mlp net;
  net.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    net.weights.emplace_back(static_cast<std::size_t>(dims[l]) * dims[l + 1], 0.0);
    net.biases.emplace_back(dims[l + 1], 0.0);
  }
  return net;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
  MlpGrads g;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.emplace_back(net.weights[l].size(), 0.0);
    g.biases.emplace_back(net.biases[l].size(), 0.0);
  }
  return g;
}

void MlpGrads::scale(double c) {
  for (auto& w : weights)
    for (double& x : w) x *= c;
  for (auto& b : biases)
    for (double& x : b) x *= c;
}

std::vector<double> forward(const Mlp& net, std::span<const double> x) {
  return forward(net, x, /*train_mode=*/false, nullptr, nullptr);
}

std::vector<double> forward(const Mlp& net, std::span<const double> x, bool train_mode,
                            Rng* rng, ForwardTrace* trace) {
  if (static_cast<int>(x.size()) != net.in_dim())
    throw InputError("forward: input length " + std::to_string(x.size()) +
                     " does not match layer_dims[0]=" + std::to_string(net.in_dim()));
  const bool drop = train_mode && net.dropout_rate > 0.0;
  if (drop && rng == nullptr)
    throw InputError("forward: train-mode dropout requires a seeded rng");

  if (trace) {
    trace->inputs.clear();
    trace->tanh_out.clear();
    trace->masks.clear();
    trace->valid = false;
  }

  const int n_layers = net.n_layers();
  std::vector<double> cur(x.begin(), x.end());
  for (int l = 0; l < n_layers; ++l) {
    if (trace) trace->inputs.push_back(cur);
    const int rows = net.dims[l + 1], cols = net.dims[l];
    const double* w = net.weights[l].data();
    std::vector<double> out(rows);
    for (int i = 0; i < rows; ++i) {
      double acc = net.biases[l][i];
      const double* wr = w + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += wr[j] * cur[j];
      out[i] = acc;
    }
    if (l < n_layers - 1) {
      for (double& v : out) v = std::tanh(v);
      if (trace) trace->tanh_out.push_back(out);
      if (drop) {
        const double keep = 1.0 - net.dropout_rate;
        std::vector<double> mask(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
          mask[i] = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
          out[i] *= mask[i];
        }
        if (trace) trace->masks.push_back(std::move(mask));
      }
    }
    cur = std::move(out);
  }
  if (trace) trace->valid = true;
  return cur;
}

void backward_accumulate(const Mlp& net, const ForwardTrace& trace,
                         std::span<const double> upstream, MlpGrads& acc) {
  if (!trace.valid) throw StateError("backward: no cached forward pass");
  if (static_cast<int>(upstream.size()) != net.out_dim())
    throw InputError("backward: upstream length does not match output dim");

  const int n_layers = net.n_layers();
  std::vector<double> delta(upstream.begin(), upstream.end());
  for (int l = n_layers - 1; l >= 0; --l) {
    const int rows = net.dims[l + 1], cols = net.dims[l];
    const std::vector<double>& in = trace.inputs[l];
    double* gw = acc.weights[l].data();
    for (int i = 0; i < rows; ++i) {
      const double d = delta[i];
      acc.biases[l][i] += d;
      double* gwr = gw + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) gwr[j] += d * in[j];
    }
    if (l == 0) break;
    // dL/d(input of layer l), then through dropout mask and tanh.
    std::vector<double> prev(cols, 0.0);
    const double* w = net.weights[l].data();
    for (int i = 0; i < rows; ++i) {
      const double d = delta[i];
      const double* wr = w + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) prev[j] += d * wr[j];
    }
    if (!trace.masks.empty())
      for (int j = 0; j < cols; ++j) prev[j] *= trace.masks[l - 1][j];
    const std::vector<double>& h = trace.tanh_out[l - 1];
    for (int j = 0; j < cols; ++j) prev[j] *= 1.0 - h[j] * h[j];
    delta = std::move(prev);
  }
}

MlpGrads backward(const Mlp& net, const ForwardTrace& trace,
                  std::span<const double> upstream) {
  MlpGrads g = MlpGrads::zeros_like(net);
  backward_accumulate(net, trace, upstream, g);
  return g;
}

AdamVec AdamVec::make(std::size_t n, double lr) {
  AdamVec a;
  a.lr = lr;
  a.m.assign(n, 0.0);
  a.v.assign(n, 0.0);
  return a;
}

void AdamVec::update(std::vector<double>& params, const std::vector<double>& grads,
                     const std::string& what) {
  if (params.size() != grads.size() || params.size() != m.size())
    throw InputError("AdamVec: shape mismatch for " + what);
  for (double g : grads)
    if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient in " + what);
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
  g_update_count.fetch_add(1, std::memory_order_relaxed);
}

OptimizerState OptimizerState::make(const Mlp& net, double lr) {
  OptimizerState s;
  s.lr = lr;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    s.w_state.push_back(AdamVec::make(net.weights[l].size(), lr));
    s.b_state.push_back(AdamVec::make(net.biases[l].size(), lr));
  }
  return s;
}

void optimizer_step(Mlp& net, const MlpGrads& grads, OptimizerState& state) {
  if (grads.weights.size() != net.weights.size())
    throw InputError("optimizer_step: gradient layer count mismatch");
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const std::string tag = "layer " + std::to_string(l);
    state.w_state[l].update(net.weights[l], grads.weights[l], tag + " weights");
    state.b_state[l].update(net.biases[l], grads.biases[l], tag + " biases");
  }
  ++state.step;
}

std::uint64_t optimizer_update_count() {
  return g_update_count.load(std::memory_order_relaxed);
}

namespace {

constexpr char kMagic[8] = {'I', 'M', 'P', 'L', 'N', 'T', '0', '1'};

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64s(std::ofstream& f, const std::vector<double>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const Mlp& net,
                     const std::vector<double>* log_std) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_u32(f, static_cast<std::uint32_t>(net.dims.size()));
  for (int d : net.dims) write_u32(f, static_cast<std::uint32_t>(d));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    write_f64s(f, net.weights[l]);
    write_f64s(f, net.biases[l]);
  }
  if (log_std) {
    if (static_cast<int>(log_std->size()) != net.out_dim())
      throw InputError("save_checkpoint: log_std length must equal the output dim");
    write_f64s(f, *log_std);
  }
  if (!f) throw CheckpointError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("missing checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad magic in checkpoint: " + path);
  std::uint32_t n_dims = 0;
  f.read(reinterpret_cast<char*>(&n_dims), sizeof(n_dims));
  if (!f || n_dims < 2 || n_dims > 64)
    throw CheckpointError("bad layer count in checkpoint: " + path);
  std::vector<int> dims(n_dims);
  for (auto& d : dims) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f || v == 0) throw CheckpointError("bad layer dim in checkpoint: " + path);
    d = static_cast<int>(v);
  }
  Checkpoint ck;
  ck.net = Mlp::zeros(dims);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    auto read_block = [&](std::vector<double>& v) {
      f.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    read_block(ck.net.weights[l]);
    read_block(ck.net.biases[l]);
    if (!f) throw CheckpointError("truncated checkpoint: " + path);
  }
  // Trailing doubles, if any, are the policy log-std head.
  std::vector<double> tail(dims.back());
  f.read(reinterpret_cast<char*>(tail.data()),
         static_cast<std::streamsize>(tail.size() * sizeof(double)));
  const auto got = f.gcount();
  if (got == 0) {
    return ck;
  }
  if (got != static_cast<std::streamsize>(tail.size() * sizeof(double)))
    throw CheckpointError("trailing bytes are not a log-std vector: " + path);
  f.peek();
  if (!f.eof()) throw CheckpointError("unexpected data after log-std vector: " + path);
  ck.log_std = std::move(tail);
  return ck;
}

}  // namespace implant::net
