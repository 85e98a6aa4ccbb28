#include "implant/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "implant/error.hpp"

namespace implant::envs {

namespace {

void check_finite(const double* v, int n, const std::string& who) {
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(v[i]) || std::abs(v[i]) > 1e9)
      throw SimulationDiverged(who + ": non-finite or exploding state");
}

double wrap_angle(double th) {
  th = std::fmod(th + std::numbers::pi, 2.0 * std::numbers::pi);
  if (th < 0) th += 2.0 * std::numbers::pi;
  return th - std::numbers::pi;
}

}  // namespace

std::vector<double> Env::clip_action(std::span<const double> a) const {
  const auto& lo = action_low();
  const auto& hi = action_high();
  if (static_cast<int>(a.size()) != action_dim())
    throw InputError(name() + ": action has wrong dimension");
  std::vector<double> out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo[i], hi[i]);
  return out;
}

double Trajectory::total_reward() const {
  double s = 0.0;
  for (double r : env_rewards) s += r;
  return s;
}

double Trajectory::discounted_return() const {
  double s = 0.0, g = 1.0;
  for (double r : env_rewards) {
    s += g * r;
    g *= gamma;
  }
  return s;
}

// ---------------------------------------------------------------------------
// PointMass2D

PointMass2D::PointMass2D(Params p) : p_(p) {}

EnvState PointMass2D::reset(Rng& rng) const {
  double px = p_.start_x + rng.uniform(-p_.start_halfwidth, p_.start_halfwidth);
  double py = p_.start_y + rng.uniform(-p_.start_halfwidth, p_.start_halfwidth);
  return {{px, py, 0.0, 0.0, 0.0}};
}

std::vector<double> PointMass2D::observe(const EnvState& s) const {
  return {s.v[0], s.v[1], s.v[2], s.v[3]};
}

StepResult PointMass2D::step(const EnvState& s, std::span<const double> action) const {
  check_finite(s.v.data(), 4, name());
  auto a = clip_action(action);
  double vx = s.v[2] + p_.dt * (a[0] - p_.drag * s.v[2]);
  double vy = s.v[3] + p_.dt * (a[1] - p_.drag * s.v[3]);
  double px = s.v[0] + p_.dt * vx;
  double py = s.v[1] + p_.dt * vy;
  double t = s.v[4] + 1.0;
  double dx = px - p_.goal_x, dy = py - p_.goal_y;
  double reward = -(dx * dx + dy * dy) - 0.01 * (a[0] * a[0] + a[1] * a[1]);
  StepResult r;
  r.state = {{px, py, vx, vy, t}};
  r.obs = observe(r.state);
  r.reward = reward;
  r.done = t >= p_.episode_len;
  return r;
}

std::vector<double> PointMass2D::expert_action(std::span<const double> obs) const {
  double ax = p_.kp * (p_.goal_x - obs[0]) - p_.kd * obs[2];
  double ay = p_.kp * (p_.goal_y - obs[1]) - p_.kd * obs[3];
  return clip_action(std::vector<double>{ax, ay});
}

double PointMass2D::speed(const EnvState& s) const { return std::hypot(s.v[2], s.v[3]); }

// ---------------------------------------------------------------------------
// Pendulum

Pendulum::Pendulum(Params p) : p_(p) { lo_ = {-p_.max_torque}; hi_ = {p_.max_torque}; }

EnvState Pendulum::reset(Rng& rng) const {
  double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
  return {{th, 0.0, 0.0}};
}

std::vector<double> Pendulum::observe(const EnvState& s) const { return {s.v[0], s.v[1]}; }

StepResult Pendulum::step(const EnvState& s, std::span<const double> action) const {
  check_finite(s.v.data(), 2, name());
  auto a = clip_action(action);
  double th = s.v[0], thdot = s.v[1], u = a[0];
  double reward = -(th * th + 0.1 * thdot * thdot + 0.001 * u * u);
  double acc = 1.5 * p_.g / p_.l * std::sin(th) + 3.0 / (p_.m * p_.l * p_.l) * u;
  double nthdot = std::clamp(thdot + acc * p_.dt, -p_.max_speed, p_.max_speed);
  double nth = wrap_angle(th + nthdot * p_.dt);
  double t = s.v[2] + 1.0;
  StepResult r;
  r.state = {{nth, nthdot, t}};
  r.obs = observe(r.state);
  r.reward = reward;
  r.done = t >= p_.episode_len;
  return r;
}

std::vector<double> Pendulum::expert_action(std::span<const double> obs) const {
  double th = obs[0], thdot = obs[1];
  double inertia = p_.m * p_.l * p_.l / 3.0;
  double e_top = p_.m * p_.g * p_.l / 2.0;
  double energy = 0.5 * inertia * thdot * thdot + e_top * std::cos(th);
  double u;
  if (std::cos(th) > 0.9 && std::abs(thdot) < 4.0) {
    u = -12.0 * th - 3.0 * thdot;
  } else if (std::abs(thdot) < 1e-3) {
    u = p_.max_torque;
  } else {
    u = 1.2 * (e_top - energy) * thdot;
  }
  return clip_action(std::vector<double>{u});
}

double Pendulum::speed(const EnvState& s) const { return std::abs(s.v[1]); }

// ---------------------------------------------------------------------------
// LinearQuadratic

LinearQuadratic::LinearQuadratic(Params p) : p_(p) {
  const double c1 = 0.97 * std::cos(0.3), s1 = 0.97 * std::sin(0.3);
  const double c2 = 0.95 * std::cos(0.2), s2 = 0.95 * std::sin(0.2);
  a_ = {c1, -s1, 0.05, 0.0,  //
        s1, c1,  0.0,  0.0,  //
        0.0, 0.0, c2, -s2,   //
        0.0, 0.0, s2, c2};
  b_ = {0.2, 0.0,  //
        0.1, 0.0,  //
        0.0, 0.2,  //
        0.0, 0.1};

  // Discrete Riccati iteration for Q = I, R = 0.1 I.
  std::vector<double> P(16, 0.0);
  for (int i = 0; i < 4; ++i) P[i * 4 + i] = 1.0;
  auto mat = [](const std::vector<double>& m, int r, int c, int cols) { return m[r * cols + c]; };
  for (int iter = 0; iter < 10000; ++iter) {
    // M = R + B'PB (2x2), N = B'PA (2x4)
    double pb[4][2];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) {
        pb[i][j] = 0;
        for (int k = 0; k < 4; ++k) pb[i][j] += mat(P, i, k, 4) * mat(b_, k, j, 2);
      }
    double m00 = 0.1, m01 = 0, m10 = 0, m11 = 0.1;
    for (int k = 0; k < 4; ++k) {
      m00 += mat(b_, k, 0, 2) * pb[k][0];
      m01 += mat(b_, k, 0, 2) * pb[k][1];
      m10 += mat(b_, k, 1, 2) * pb[k][0];
      m11 += mat(b_, k, 1, 2) * pb[k][1];
    }
    double n[2][4];
    for (int j = 0; j < 4; ++j) {
      double pa0 = 0, pa1 = 0, pa2 = 0, pa3 = 0;
      for (int k = 0; k < 4; ++k) {
        pa0 += mat(P, 0, k, 4) * mat(a_, k, j, 4);
        pa1 += mat(P, 1, k, 4) * mat(a_, k, j, 4);
        pa2 += mat(P, 2, k, 4) * mat(a_, k, j, 4);
        pa3 += mat(P, 3, k, 4) * mat(a_, k, j, 4);
      }
      n[0][j] = mat(b_, 0, 0, 2) * pa0 + mat(b_, 1, 0, 2) * pa1 + mat(b_, 2, 0, 2) * pa2 +
                mat(b_, 3, 0, 2) * pa3;
      n[1][j] = mat(b_, 0, 1, 2) * pa0 + mat(b_, 1, 1, 2) * pa1 + mat(b_, 2, 1, 2) * pa2 +
                mat(b_, 3, 1, 2) * pa3;
    }
    double det = m00 * m11 - m01 * m10;
    double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
    double k_new[2][4];
    for (int j = 0; j < 4; ++j) {
      k_new[0][j] = i00 * n[0][j] + i01 * n[1][j];
      k_new[1][j] = i10 * n[0][j] + i11 * n[1][j];
    }
    // P' = Q + A'PA - N'K
    std::vector<double> Pn(16, 0.0);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double apa = 0;
        for (int k = 0; k < 4; ++k) {
          double pa = 0;
          for (int l = 0; l < 4; ++l) pa += mat(P, k, l, 4) * mat(a_, l, j, 4);
          apa += mat(a_, k, i, 4) * pa;
        }
        double nk = n[0][i] * k_new[0][j] + n[1][i] * k_new[1][j];
        Pn[i * 4 + j] = (i == j ? 1.0 : 0.0) + apa - nk;
      }
    double diff = 0;
    for (int i = 0; i < 16; ++i) diff = std::max(diff, std::abs(Pn[i] - P[i]));
    P = Pn;
    if (diff < 1e-13) {
      gain_.assign(8, 0.0);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) gain_[i * 4 + j] = k_new[i][j];
      break;
    }
  }
  if (gain_.empty()) throw StateError("lqr riccati iteration failed to converge");
}

EnvState LinearQuadratic::reset(Rng& rng) const {
  EnvState s;
  s.v.resize(5);
  for (int i = 0; i < 4; ++i) s.v[i] = rng.uniform(-1.0, 1.0);
  s.v[4] = 0.0;
  return s;
}

std::vector<double> LinearQuadratic::observe(const EnvState& s) const {
  return {s.v[0], s.v[1], s.v[2], s.v[3]};
}

StepResult LinearQuadratic::step(const EnvState& s, std::span<const double> action) const {
  check_finite(s.v.data(), 4, name());
  auto a = clip_action(action);
  double cost = 0.0;
  for (int i = 0; i < 4; ++i) cost += s.v[i] * s.v[i];
  for (int i = 0; i < 2; ++i) cost += 0.1 * a[i] * a[i];
  std::vector<double> nx(5, 0.0);
  for (int i = 0; i < 4; ++i) {
    double acc = 0;
    for (int j = 0; j < 4; ++j) acc += a_[i * 4 + j] * s.v[j];
    acc += b_[i * 2 + 0] * a[0] + b_[i * 2 + 1] * a[1];
    nx[i] = acc;
  }
  nx[4] = s.v[4] + 1.0;
  StepResult r;
  r.state = {std::move(nx)};
  r.obs = observe(r.state);
  r.reward = -cost;
  r.done = r.state.v[4] >= p_.episode_len;
  return r;
}

std::vector<double> LinearQuadratic::expert_action(std::span<const double> obs) const {
  std::vector<double> a(2, 0.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) a[i] -= gain_[i * 4 + j] * obs[j];
  return clip_action(a);
}

double LinearQuadratic::speed(const EnvState& s) const {
  // No velocity coordinates; use the state norm of the second block.
  return std::hypot(s.v[2], s.v[3]);
}

// ---------------------------------------------------------------------------
// RewardGate

EnvState RewardGate::reset(Rng& rng) const {
  EnvState s = base_->reset(rng);
  s.v.push_back(0.0);
  return s;
}

std::vector<double> RewardGate::observe(const EnvState& s) const {
  EnvState inner{{s.v.begin(), s.v.end() - 1}};
  return base_->observe(inner);
}

StepResult RewardGate::step(const EnvState& s, std::span<const double> action) const {
  EnvState inner{{s.v.begin(), s.v.end() - 1}};
  StepResult r = base_->step(inner, action);
  r.state.v.push_back(s.v.back() + r.reward);
  r.reward = std::numeric_limits<double>::quiet_NaN();
  return r;
}

double RewardGate::speed(const EnvState& s) const {
  EnvState inner{{s.v.begin(), s.v.end() - 1}};
  return base_->speed(inner);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Env> make_env(const std::string& name, int episode_len) {
  if (name == "point_mass_2d") {
    PointMass2D::Params p;
    if (episode_len > 0) p.episode_len = episode_len;
    return std::make_unique<PointMass2D>(p);
  }
  if (name == "pendulum") {
    Pendulum::Params p;
    if (episode_len > 0) p.episode_len = episode_len;
    return std::make_unique<Pendulum>(p);
  }
  if (name == "linear_quadratic") {
    LinearQuadratic::Params p;
    if (episode_len > 0) p.episode_len = episode_len;
    return std::make_unique<LinearQuadratic>(p);
  }
  throw InputError("unknown env: " + name);
}

// ---------------------------------------------------------------------------
// Demos

DemoSet collect_demos(const Env& env, int n_traj, int subsample, Rng& rng) {
  if (n_traj < 1 || subsample < 1) throw InputError("collect_demos: n_traj and subsample must be >= 1");
  DemoSet d;
  d.env_name = env.name();
  d.obs_dim = env.obs_dim();
  d.act_dim = env.action_dim();
  double total = 0.0;
  for (int k = 0; k < n_traj; ++k) {
    EnvState s = env.reset(rng);
    std::vector<double> obs = env.observe(s);
    double ep = 0.0;
    bool done = false;
    for (int t = 0; !done; ++t) {
      std::vector<double> a = env.expert_action(obs);
      if (t % subsample == 0) {
        d.states.push_back(obs);
        d.actions.push_back(a);
      }
      StepResult r = env.step(s, a);
      ep += r.reward;
      s = std::move(r.state);
      obs = std::move(r.obs);
      done = r.done;
    }
    total += ep;
  }
  double mean = total / n_traj;
  if (!(mean >= env.expert_return_threshold()))
    throw DegenerateExpert(env.name() + ": expert mean return " + std::to_string(mean) +
                           " below threshold " + std::to_string(env.expert_return_threshold()));
  d.expert_mean_return = mean;
  return d;
}

void save_demos(const std::string& path, const DemoSet& demos) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open for write: " + path);
  f << "implant-demos v1, env=" << demos.env_name << ", obs_dim=" << demos.obs_dim
    << ", act_dim=" << demos.act_dim << ", pairs=" << demos.size() << "\n";
  char buf[32];
  for (std::size_t i = 0; i < demos.size(); ++i) {
    std::string line;
    for (int j = 0; j < demos.obs_dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", demos.states[i][j]);
      if (j) line += ',';
      line += buf;
    }
    for (int j = 0; j < demos.act_dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", demos.actions[i][j]);
      line += ',';
      line += buf;
    }
    f << line << "\n";
  }
}

DemoSet load_demos(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open: " + path);
  std::string header;
  std::getline(f, header);
  DemoSet d;
  std::size_t pairs = 0;
  {
    std::istringstream hs(header);
    std::string tok;
    std::getline(hs, tok, ',');
    if (tok != "implant-demos v1") throw InputError(path + ": not a demos file");
    auto want = [&](const std::string& key) {
      if (!std::getline(hs, tok, ',')) throw InputError(path + ": truncated header");
      auto pos = tok.find(key + "=");
      if (pos == std::string::npos) throw InputError(path + ": missing " + key);
      return tok.substr(pos + key.size() + 1);
    };
    d.env_name = want("env");
    d.obs_dim = std::stoi(want("obs_dim"));
    d.act_dim = std::stoi(want("act_dim"));
    pairs = std::stoul(want("pairs"));
  }
  if (d.obs_dim < 1 || d.act_dim < 1) throw InputError(path + ": bad dims");
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != d.obs_dim + d.act_dim)
      throw InputError(path + ": row has wrong arity");
    d.states.emplace_back(row.begin(), row.begin() + d.obs_dim);
    d.actions.emplace_back(row.begin() + d.obs_dim, row.end());
  }
  if (d.size() != pairs) throw InputError(path + ": pair count mismatch with header");
  return d;
}

}  // namespace implant::envs
