#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "implant/env.hpp"
#include "implant/error.hpp"
#include "implant/rng.hpp"

using namespace implant;
using namespace implant::envs;

namespace {

using Mat4 = std::array<std::array<double, 4>, 4>;

Mat4 to_mat4(const std::vector<double>& flat) {
  Mat4 m{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m[i][j] = flat[i * 4 + j];
  return m;
}

// Policy-iteration LQR oracle (Hewer's method): evaluate the quadratic cost
// of a fixed gain by iterating the closed-loop Lyapunov recursion, then
// improve the gain, until the gain stops moving. A distinct algorithm from a
// direct Riccati fixed-point sweep.
std::array<std::array<double, 4>, 2> lqr_gain_oracle(const Mat4& a,
                                                     const std::array<std::array<double, 2>, 4>& b,
                                                     double r_coeff) {
  std::array<std::array<double, 4>, 2> k{};
  for (int outer = 0; outer < 200; ++outer) {
    Mat4 acl{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        acl[i][j] = a[i][j];
        for (int u = 0; u < 2; ++u) acl[i][j] -= b[i][u] * k[u][j];
      }
    // Cost-to-go of the current gain: P = Q + K'RK + Acl' P Acl.
    Mat4 p{};
    for (int i = 0; i < 4; ++i) p[i][i] = 1.0;
    for (int sweep = 0; sweep < 20000; ++sweep) {
      Mat4 next{};
      for (int i = 0; i < 4; ++i) next[i][i] = 1.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          for (int u = 0; u < 2; ++u) next[i][j] += r_coeff * k[u][i] * k[u][j];
      Mat4 pa{};
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          for (int t = 0; t < 4; ++t) pa[i][j] += p[i][t] * acl[t][j];
      double delta = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          for (int t = 0; t < 4; ++t) next[i][j] += acl[t][i] * pa[t][j];
          delta = std::max(delta, std::fabs(next[i][j] - p[i][j]));
        }
      p = next;
      if (delta < 1e-14) break;
    }
    // Improved gain: K = (R + B'PB)^{-1} B'PA, 2x2 inverse by Cramer.
    std::array<std::array<double, 2>, 2> g{};
    for (int u = 0; u < 2; ++u)
      for (int w = 0; w < 2; ++w) {
        g[u][w] = (u == w) ? r_coeff : 0.0;
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) g[u][w] += b[i][u] * p[i][j] * b[j][w];
      }
    std::array<std::array<double, 4>, 2> bpa{};
    for (int u = 0; u < 2; ++u)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i)
          for (int t = 0; t < 4; ++t) bpa[u][j] += b[i][u] * p[i][t] * a[t][j];
    const double det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    std::array<std::array<double, 4>, 2> k_new{};
    for (int j = 0; j < 4; ++j) {
      k_new[0][j] = (g[1][1] * bpa[0][j] - g[0][1] * bpa[1][j]) / det;
      k_new[1][j] = (-g[1][0] * bpa[0][j] + g[0][0] * bpa[1][j]) / det;
    }
    double moved = 0.0;
    for (int u = 0; u < 2; ++u)
      for (int j = 0; j < 4; ++j) moved = std::max(moved, std::fabs(k_new[u][j] - k[u][j]));
    k = k_new;
    if (moved < 1e-13) break;
  }
  return k;
}

Trajectory rollout_expert(const Env& env, std::uint64_t seed) {
  Rng rng(seed);
  EnvState s = env.reset(rng);
  Trajectory traj;
  traj.gamma = env.discount();
  traj.states.push_back(env.observe(s));
  bool done = false;
  while (!done) {
    std::vector<double> a = env.expert_action(traj.states.back());
    StepResult r = env.step(s, a);
    traj.actions.push_back(a);
    traj.env_rewards.push_back(r.reward);
    traj.states.push_back(r.obs);
    s = std::move(r.state);
    done = r.done;
  }
  traj.done = true;
  return traj;
}

double gain_rollout_cost(const LinearQuadratic& env, const std::vector<double>& gain,
                         std::uint64_t seed) {
  Rng rng(seed);
  EnvState s = env.reset(rng);
  double total = 0.0;
  for (bool done = false; !done;) {
    std::vector<double> obs = env.observe(s);
    std::vector<double> a(2, 0.0);
    for (int u = 0; u < 2; ++u)
      for (int j = 0; j < 4; ++j) a[u] -= gain[u * 4 + j] * obs[j];
    StepResult r = env.step(s, a);
    total += r.reward;
    s = std::move(r.state);
    done = r.done;
  }
  return total;
}

struct BadExpertPointMass : PointMass2D {
  std::vector<double> expert_action(std::span<const double>) const override {
    return {-1.0, -1.0};
  }
};

}  // namespace

TEST_CASE("point mass zero-width start distribution is deterministic") {
  PointMass2D::Params p;
  p.start_halfwidth = 0.0;
  PointMass2D env(p);
  Rng rng(4);
  for (int k = 0; k < 3; ++k) {
    EnvState s = env.reset(rng);
    CHECK(s.v[0] == -1.0);
    CHECK(s.v[1] == -1.0);
    CHECK(s.v[2] == 0.0);
    CHECK(s.v[3] == 0.0);
  }
}

TEST_CASE("pendulum reset angle is centered and velocity starts at zero") {
  Pendulum env;
  Rng rng(91);
  double sum = 0.0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    EnvState s = env.reset(rng);
    sum += s.v[0];
    CHECK(s.v[1] == 0.0);
    CHECK(std::fabs(s.v[0]) <= std::numbers::pi);
  }
  CHECK(std::fabs(sum / n) < 0.1);
}

TEST_CASE("same reset seed gives identical states") {
  for (const char* name : {"point_mass_2d", "pendulum", "linear_quadratic"}) {
    auto env = make_env(name);
    Rng a(123), b(123);
    CHECK(env->reset(a).v == env->reset(b).v);
  }
}

TEST_CASE("point mass at rest with zero action keeps its position") {
  PointMass2D env;
  EnvState s{{0.25, -0.5, 0.0, 0.0, 0.0}};
  StepResult r = env.step(s, std::vector<double>{0.0, 0.0});
  CHECK(r.state.v[0] == 0.25);
  CHECK(r.state.v[1] == -0.5);
  CHECK(r.state.v[2] == 0.0);
  CHECK(r.state.v[3] == 0.0);
}

TEST_CASE("point mass one-step Euler update without drag") {
  PointMass2D::Params p;
  p.drag = 0.0;
  PointMass2D env(p);
  EnvState s{{0.0, 0.0, 0.0, 0.0, 0.0}};
  StepResult r = env.step(s, std::vector<double>{1.0, 0.0});
  CHECK(r.state.v[2] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(r.state.v[3] == 0.0);
  CHECK(r.state.v[0] == doctest::Approx(0.0025).epsilon(1e-15));
  CHECK(r.state.v[1] == 0.0);
}

TEST_CASE("pendulum one-step dynamics from rest at the bottom of a push") {
  Pendulum env;
  EnvState s{{0.0, 0.0, 0.0}};
  StepResult r = env.step(s, std::vector<double>{2.0});
  CHECK(r.state.v[1] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(r.state.v[0] == doctest::Approx(0.015).epsilon(1e-15));
  CHECK(r.reward == doctest::Approx(-0.004).epsilon(1e-12));
}

TEST_CASE("pendulum expert swings up within the episode") {
  Pendulum env;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull, 6ull, 7ull, 8ull}) {
    Trajectory t = rollout_expert(env, seed);
    CHECK(t.length() == 200);
    CHECK(std::fabs(t.states.back()[0]) < 0.2);
  }
}

TEST_CASE("point mass expert is a PD fixed point at the goal") {
  PointMass2D env;
  std::vector<double> a = env.expert_action(std::vector<double>{1.0, 1.0, 0.0, 0.0});
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.0);
}

TEST_CASE("point mass expert saturates on a unit position error") {
  PointMass2D env;
  std::vector<double> a = env.expert_action(std::vector<double>{0.0, 1.0, 0.0, 0.0});
  CHECK(a[0] == 1.0);
  CHECK(a[1] == 0.0);
}

TEST_CASE("lqr expert gain matches a policy-iteration oracle") {
  LinearQuadratic env;
  Mat4 a = to_mat4(env.dyn_a());
  std::array<std::array<double, 2>, 4> b{};
  for (int i = 0; i < 4; ++i)
    for (int u = 0; u < 2; ++u) b[i][u] = env.dyn_b()[i * 2 + u];
  auto k = lqr_gain_oracle(a, b, 0.1);
  const std::vector<double>& gain = env.lqr_gain();
  for (int u = 0; u < 2; ++u)
    for (int j = 0; j < 4; ++j)
      CHECK(gain[u * 4 + j] == doctest::Approx(k[u][j]).epsilon(1e-8));
}

TEST_CASE("perturbing the lqr gain never improves the rollout cost") {
  LinearQuadratic env;
  Rng rng(314);
  for (int trial = 0; trial < 8; ++trial) {
    const std::uint64_t seed = 1000 + trial;
    double best = gain_rollout_cost(env, env.lqr_gain(), seed);
    std::vector<double> perturbed = env.lqr_gain();
    for (double& g : perturbed) g += rng.uniform(-0.05, 0.05);
    CHECK(best >= gain_rollout_cost(env, perturbed, seed) - 1e-9);
  }
}

TEST_CASE("lqr expert equals the negated gain times the state") {
  LinearQuadratic env;
  std::vector<double> obs{0.3, -0.2, 0.5, 0.1};
  std::vector<double> a = env.expert_action(obs);
  for (int u = 0; u < 2; ++u) {
    double want = 0.0;
    for (int j = 0; j < 4; ++j) want -= env.lqr_gain()[u * 4 + j] * obs[j];
    CHECK(a[u] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("linear dynamics step matches the documented matrices") {
  LinearQuadratic env;
  EnvState s{{0.4, -0.3, 0.2, 0.7, 0.0}};
  std::vector<double> a{0.5, -1.0};
  StepResult r = env.step(s, a);
  for (int i = 0; i < 4; ++i) {
    double want = 0.0;
    for (int j = 0; j < 4; ++j) want += env.dyn_a()[i * 4 + j] * s.v[j];
    for (int u = 0; u < 2; ++u) want += env.dyn_b()[i * 2 + u] * a[u];
    CHECK(r.state.v[i] == doctest::Approx(want).epsilon(1e-14));
  }
  double cost = 0.0;
  for (int i = 0; i < 4; ++i) cost += s.v[i] * s.v[i];
  cost += 0.1 * (a[0] * a[0] + a[1] * a[1]);
  CHECK(r.reward == doctest::Approx(-cost).epsilon(1e-14));
}

TEST_CASE("collect_demos reproduces the canonical dataset shape") {
  auto env = make_env("point_mass_2d", 1000);
  Rng rng(7);
  DemoSet d = collect_demos(*env, 4, 20, rng);
  CHECK(d.size() == 200);
  CHECK(d.obs_dim == 4);
  CHECK(d.act_dim == 2);
  CHECK(d.env_name == "point_mass_2d");
}

TEST_CASE("subsample one keeps every pair") {
  auto env = make_env("linear_quadratic");
  Rng rng(7);
  DemoSet d = collect_demos(*env, 3, 1, rng);
  CHECK(d.size() == 3 * 200);
}

TEST_CASE("demo collection is deterministic down to the file bytes") {
  auto env = make_env("pendulum");
  auto path_a = std::filesystem::temp_directory_path() / "implant_demos_a.csv";
  auto path_b = std::filesystem::temp_directory_path() / "implant_demos_b.csv";
  {
    Rng rng(42);
    save_demos(path_a.string(), collect_demos(*env, 2, 10, rng));
  }
  {
    Rng rng(42);
    save_demos(path_b.string(), collect_demos(*env, 2, 10, rng));
  }
  std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());
  std::filesystem::remove(path_a);
  std::filesystem::remove(path_b);
}

TEST_CASE("a failing expert raises a degenerate-expert error") {
  BadExpertPointMass env;
  Rng rng(5);
  CHECK_THROWS_AS(collect_demos(env, 2, 20, rng), DegenerateExpert);
}

TEST_CASE("demo files round-trip through save and load") {
  auto env = make_env("linear_quadratic");
  Rng rng(11);
  DemoSet d = collect_demos(*env, 2, 25, rng);
  auto path = std::filesystem::temp_directory_path() / "implant_demos_rt.csv";
  save_demos(path.string(), d);
  DemoSet back = load_demos(path.string());
  CHECK(back.env_name == d.env_name);
  CHECK(back.obs_dim == d.obs_dim);
  CHECK(back.act_dim == d.act_dim);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.states[i] == d.states[i]);
    CHECK(back.actions[i] == d.actions[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("state round-trip replay reproduces trajectories bit-for-bit") {
  for (const char* name : {"point_mass_2d", "pendulum", "linear_quadratic"}) {
    auto env = make_env(name);
    Rng rng(21);
    EnvState s = env->reset(rng);
    Rng act_rng(453);
    std::vector<std::vector<double>> actions;
    std::vector<EnvState> states{s};
    for (int t = 0; t < 60; ++t) {
      std::vector<double> a(env->action_dim());
      for (double& x : a) x = act_rng.uniform(-1.0, 1.0);
      actions.push_back(a);
      StepResult r = env->step(states.back(), a);
      states.push_back(r.state);
    }
    const int k = 17;
    EnvState resumed = states[k];
    for (int t = k; t < 60; ++t) {
      StepResult r = env->step(resumed, actions[t]);
      resumed = r.state;
      CHECK(resumed.v == states[t + 1].v);
    }
  }
}

TEST_CASE("stepping with an out-of-bounds action equals stepping with its clip") {
  for (const char* name : {"point_mass_2d", "pendulum", "linear_quadratic"}) {
    auto env = make_env(name);
    Rng rng(77);
    EnvState s = env->reset(rng);
    std::vector<double> wild(env->action_dim());
    for (double& x : wild) x = rng.uniform(-30.0, 30.0);
    StepResult a = env->step(s, wild);
    StepResult b = env->step(s, env->clip_action(wild));
    CHECK(a.state.v == b.state.v);
    CHECK(a.reward == b.reward);
  }
}

TEST_CASE("episodes truncate exactly at the max length") {
  PointMass2D::Params p;
  p.episode_len = 5;
  PointMass2D env(p);
  Rng rng(3);
  EnvState s = env.reset(rng);
  for (int t = 0; t < 5; ++t) {
    StepResult r = env.step(s, std::vector<double>{0.1, 0.1});
    CHECK(r.done == (t == 4));
    s = std::move(r.state);
  }
}

TEST_CASE("a non-finite state aborts the simulation") {
  PointMass2D env;
  EnvState s{{std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(env.step(s, std::vector<double>{0.0, 0.0}), SimulationDiverged);
}

TEST_CASE("reward gate hides rewards but accumulates the true return") {
  PointMass2D base;
  RewardGate env(base);
  Rng g(31), b(31);
  EnvState gs = env.reset(g);
  EnvState bs = base.reset(b);
  CHECK(env.observe(gs) == base.observe(bs));
  double true_return = 0.0;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> a{0.4, -0.2};
    StepResult gr = env.step(gs, a);
    StepResult br = base.step(bs, a);
    CHECK(std::isnan(gr.reward));
    CHECK(gr.obs == br.obs);
    true_return += br.reward;
    gs = std::move(gr.state);
    bs = std::move(br.state);
  }
  CHECK(env.episode_return(gs) == doctest::Approx(true_return).epsilon(1e-13));
}

TEST_CASE("trajectory returns follow the recorded gamma") {
  Trajectory t;
  t.gamma = 0.5;
  t.env_rewards = {1.0, 2.0, 4.0};
  t.states.resize(4);
  t.actions.resize(3);
  CHECK(t.total_reward() == 7.0);
  CHECK(t.discounted_return() == doctest::Approx(1.0 + 0.5 * 2.0 + 0.25 * 4.0));
}

TEST_CASE("unknown environment names are rejected") {
  CHECK_THROWS_AS(make_env("walker9000"), InputError);
}

TEST_CASE("experts clear their documented return thresholds") {
  for (const char* name : {"point_mass_2d", "pendulum", "linear_quadratic"}) {
    auto env = make_env(name);
    double total = 0.0;
    const int n = 10;
    for (int e = 0; e < n; ++e) total += rollout_expert(*env, 500 + e).total_reward();
    CHECK(total / n > env->expert_return_threshold());
  }
}
