#include <cmath>
#include <cstdint>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include "diffsim/algo.hpp"
#include "diffsim/tasks.hpp"

using namespace diffsim;
using algo::RolloutBuffer;

namespace {

// Explicit lambda-weighted n-step returns, with episode cuts handled by
// truncating the geometric series. Deliberately not the recursion used by
// the implementation.
std::vector<std::vector<double>> td_lambda_bruteforce(
    const std::vector<std::vector<double>>& reward,
    const std::vector<std::vector<double>>& ent,
    const std::vector<std::vector<std::uint8_t>>& done,
    const std::vector<std::vector<double>>& vmin, double alpha, double gamma,
    double lambda) {
  const int horizon = static_cast<int>(reward.size());
  const int n_env = static_cast<int>(reward[0].size());
  std::vector<std::vector<double>> out(horizon, std::vector<double>(n_env));
  for (int i = 0; i < n_env; ++i) {
    for (int t = 0; t < horizon; ++t) {
      int e = t;  // last step of the episode segment starting at t
      while (e < horizon - 1 && !done[e][i]) ++e;
      const bool cut = done[e][i] != 0;
      auto nstep = [&](int n, bool bootstrap) {
        double g = 0.0, disc = 1.0;
        for (int k = 0; k < n; ++k) {
          g += disc * (reward[t + k][i] + alpha * ent[t + k][i]);
          disc *= gamma;
        }
        if (bootstrap) g += disc * vmin[t + n][i];
        return g;
      };
      const int seg = e - t + 1;  // steps available before the cut / horizon
      double v = 0.0, w = 1.0;
      for (int n = 1; n < seg; ++n) {
        v += (1.0 - lambda) * w * nstep(n, true);
        w *= lambda;
      }
      v += w * nstep(seg, !cut);
      out[t][i] = v;
    }
  }
  return out;
}

// Hand-built tape-connected buffer with leaf rewards; returns the leaves so
// gradients can be compared across objective variants.
struct SyntheticBuffer {
  RolloutBuffer buf;
  std::vector<Value> leaves;
};

SyntheticBuffer make_synthetic(Tape& tape, int horizon, int n_env,
                               int n_critics, RngStream& rng,
                               bool zero_terminal = false) {
  SyntheticBuffer s;
  auto& b = s.buf;
  b.n_envs = n_env;
  b.horizon = horizon;
  b.n_critics = n_critics;
  b.reward.assign(horizon, std::vector<Value>(n_env));
  b.ent.assign(horizon, std::vector<Value>(n_env));
  b.terminal_value.assign(n_critics, std::vector<Value>(n_env));
  b.reward_d.assign(horizon, std::vector<double>(n_env));
  b.ent_d.assign(horizon, std::vector<double>(n_env));
  b.raw_entropy.assign(horizon, std::vector<double>(n_env));
  b.done.assign(horizon, std::vector<std::uint8_t>(n_env, 0));
  for (int t = 0; t < horizon; ++t)
    for (int i = 0; i < n_env; ++i) {
      b.reward[t][i] = tape.var(rng.normal());
      b.ent[t][i] = tape.var(rng.uniform(0.0, 1.0));
      s.leaves.push_back(b.reward[t][i]);
      b.reward_d[t][i] = b.reward[t][i].v;
      b.ent_d[t][i] = b.ent[t][i].v;
      b.raw_entropy[t][i] = rng.normal();
    }
  for (int c = 0; c < n_critics; ++c)
    for (int i = 0; i < n_env; ++i) {
      const double v = zero_terminal ? 0.0 : rng.normal();
      b.terminal_value[c][i] = tape.var(v);
      s.leaves.push_back(b.terminal_value[c][i]);
    }
  return s;
}

struct SapoProbe {
  tasks::PointMassReach task;
  nets::PolicySpec pspec = nets::PolicySpec::make(4, {8}, 2);
  nets::MlpSpec cspec;
  std::vector<std::vector<double>> cparams;
  algo::ReturnsConfig cfg{0.95, 0.9, 5};

  SapoProbe() {
    cspec.dims = {4, 8, 1};
    cspec.act = nets::Activation::kELU;
    RngStream rng(99, 0);
    cparams.assign(2, std::vector<double>(nets::mlp_param_count(cspec)));
    for (auto& p : cparams) nets::mlp_init(cspec, rng, p, 1.0);
  }

  std::vector<double> init_params() const {
    std::vector<double> p(nets::policy_param_count(pspec));
    RngStream rng(7, 1);
    nets::policy_init(pspec, rng, p);
    return p;
  }

  // Fresh batch each call so identical parameters replay identically.
  double loss(const std::vector<double>& pp, bool checkpoint,
              double* grad_out = nullptr, std::size_t n_grad = 0) const {
    env::EnvBatch<tasks::PointMassReach> batch(task, 2, 11);
    Tape tape;
    auto leaves = nets::make_leaves(tape, pp);
    auto buf = algo::collect_rollout(tape, batch, pspec, leaves, cspec,
                                     cparams, cfg.horizon, -1.0, checkpoint);
    Value l = algo::actor_objective_sapo(buf, cfg, 0.3);
    if (grad_out) {
      tape.backward(l);
      for (std::size_t j = 0; j < n_grad; ++j) grad_out[j] = tape.grad(leaves[j]);
    }
    return l.v;
  }
};

}  // namespace

TEST_CASE("normalized entropy and temperature machinery") {
  CHECK(algo::normalize_entropy(0.0, -1.0) == Catch::Approx(0.5));
  CHECK(algo::normalize_entropy(-1.0, -1.0) == Catch::Approx(0.0));
  CHECK(algo::normalize_entropy(1.0, -1.0) == Catch::Approx(1.0));
  CHECK(algo::normalize_entropy(3.0, -2.0) == Catch::Approx(1.25));
  CHECK_THROWS_AS(algo::normalize_entropy(0.5, 0.0), std::invalid_argument);

  RolloutBuffer b;
  b.horizon = 2;
  b.n_envs = 2;
  b.raw_entropy = {{-0.5, -1.5}, {-2.0, -1.0}};  // mean -1.25
  algo::TemperatureState ts;
  ts.log_alpha = std::log(0.8);
  ts.target = -2.0;
  ts.opt.lr = 0.1;
  // L(alpha) = alpha * (mean h - target) = 0.8 * 0.75
  CHECK(algo::temperature_loss(ts, b) == Catch::Approx(0.8 * 0.75).epsilon(1e-12));

  // entropy above target -> alpha must shrink
  algo::temperature_update(ts, b);
  CHECK(ts.alpha() < 0.8);

  // entropy below target -> alpha grows
  algo::TemperatureState ts2;
  ts2.target = -0.5;
  ts2.opt.lr = 0.1;
  algo::temperature_update(ts2, b);
  CHECK(ts2.alpha() > 1.0);
}

TEST_CASE("soft TD(lambda) matches explicit weighted sums") {
  RngStream rng(3, 0);
  const int horizon = 5, n_env = 3;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<double>> reward(horizon,
                                            std::vector<double>(n_env));
    std::vector<std::vector<double>> ent(horizon, std::vector<double>(n_env));
    std::vector<std::vector<std::uint8_t>> done(
        horizon, std::vector<std::uint8_t>(n_env, 0));
    std::vector<std::vector<double>> vmin(horizon + 1,
                                          std::vector<double>(n_env));
    for (int t = 0; t < horizon; ++t)
      for (int i = 0; i < n_env; ++i) {
        reward[t][i] = rng.normal();
        ent[t][i] = rng.uniform(0.0, 1.0);
        done[t][i] = rng.uniform(0.0, 1.0) < 0.25 ? 1 : 0;
      }
    for (int t = 0; t <= horizon; ++t)
      for (int i = 0; i < n_env; ++i) vmin[t][i] = rng.normal();
    const double gamma = rng.uniform(0.8, 1.0);
    const double lambda = rng.uniform(0.0, 1.0);
    const double alpha = rng.uniform(0.0, 0.5);

    auto got = algo::soft_td_lambda_from_values(reward, ent, done, vmin, alpha,
                                                gamma, lambda);
    auto want = td_lambda_bruteforce(reward, ent, done, vmin, alpha, gamma,
                                     lambda);
    for (int t = 0; t < horizon; ++t)
      for (int i = 0; i < n_env; ++i)
        REQUIRE(got[t][i] == Catch::Approx(want[t][i]).margin(1e-12));
  }
}

TEST_CASE("objective reductions collapse onto each other") {
  algo::ReturnsConfig cfg{0.97, 0.9, 6};
  RngStream rng(17, 0);

  SECTION("sapo with zero alpha and a single critic equals shac") {
    Tape tape;
    auto s = make_synthetic(tape, 6, 4, 1, rng);
    Value l_sapo = algo::actor_objective_sapo(s.buf, cfg, 0.0);
    Value l_shac = algo::actor_objective_shac(s.buf, cfg);
    REQUIRE(std::abs(l_sapo.v - l_shac.v) < 1e-12);
  }

  SECTION("gradients agree leaf by leaf") {
    RngStream r1(21, 0), r2(21, 0);
    Tape ta, tb;
    auto sa = make_synthetic(ta, 6, 4, 1, r1);
    auto sb = make_synthetic(tb, 6, 4, 1, r2);
    ta.backward(algo::actor_objective_sapo(sa.buf, cfg, 0.0));
    tb.backward(algo::actor_objective_shac(sb.buf, cfg));
    for (std::size_t j = 0; j < sa.leaves.size(); ++j)
      REQUIRE(ta.grad(sa.leaves[j]) ==
              Catch::Approx(tb.grad(sb.leaves[j])).margin(1e-13));
  }

  SECTION("apg equals shac with an identically-zero critic") {
    RngStream r1(23, 0), r2(23, 0);
    Tape ta, tb;
    auto sa = make_synthetic(ta, 6, 4, 1, r1, /*zero_terminal=*/true);
    auto sb = make_synthetic(tb, 6, 4, 1, r2, /*zero_terminal=*/true);
    Value la = algo::actor_objective_apg(sa.buf, cfg);
    Value lb = algo::actor_objective_shac(sb.buf, cfg);
    REQUIRE(std::abs(la.v - lb.v) < 1e-12);
    ta.backward(la);
    tb.backward(lb);
    // reward leaves only: the zero critic leaf still carries the gamma^H
    // bootstrap weight under shac, while apg never reads it
    const std::size_t n_reward = 6 * 4;
    for (std::size_t j = 0; j < n_reward; ++j)
      REQUIRE(ta.grad(sa.leaves[j]) ==
              Catch::Approx(tb.grad(sb.leaves[j])).margin(1e-13));
  }

  SECTION("detached buffers are rejected") {
    Tape tape;
    RngStream r(29, 0);
    auto s = make_synthetic(tape, 3, 2, 1, r);
    s.buf.detach();
    CHECK_THROWS_AS(algo::actor_objective_sapo(s.buf, cfg, 0.1),
                    std::invalid_argument);
  }
}

TEST_CASE("collected rollout: actor gradient matches finite differences") {
  SapoProbe probe;
  auto pp = probe.init_params();
  std::vector<double> grad(pp.size());
  const double l0 = probe.loss(pp, true, grad.data(), pp.size());
  REQUIRE(std::isfinite(l0));

  RngStream pick(5, 0);
  const double h = 1e-6;
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t j =
        static_cast<std::size_t>(pick.uniform(0.0, 1.0) * pp.size());
    auto pl = pp, pr = pp;
    pl[j] -= h;
    pr[j] += h;
    const double fd = (probe.loss(pr, true) - probe.loss(pl, true)) / (2 * h);
    const double tol = 1e-4 * std::max(1.0, std::abs(fd));
    REQUIRE(grad[j] == Catch::Approx(fd).margin(tol));
  }
}

TEST_CASE("checkpointed and direct rollouts agree") {
  SapoProbe probe;
  auto pp = probe.init_params();
  std::vector<double> g_ck(pp.size()), g_direct(pp.size());
  const double l_ck = probe.loss(pp, true, g_ck.data(), pp.size());
  const double l_direct = probe.loss(pp, false, g_direct.data(), pp.size());
  REQUIRE(l_ck == l_direct);  // forward replay is bit-exact
  for (std::size_t j = 0; j < pp.size(); ++j)
    REQUIRE(g_ck[j] == Catch::Approx(g_direct[j]).margin(1e-10));
}

TEST_CASE("critic regression reduces the fitted error") {
  SapoProbe probe;
  RolloutBuffer b;
  b.n_envs = 4;
  b.horizon = 6;
  b.detached = true;
  RngStream rng(31, 0);
  b.obs.assign(b.horizon + 1,
               std::vector<std::vector<double>>(b.n_envs));
  std::vector<std::vector<double>> targets(b.horizon,
                                           std::vector<double>(b.n_envs));
  for (int t = 0; t <= b.horizon; ++t)
    for (int i = 0; i < b.n_envs; ++i) {
      b.obs[t][i] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      if (t < b.horizon) targets[t][i] = rng.normal();
    }
  auto cparams = probe.cparams;
  std::vector<nets::AdamW> opts(cparams.size());
  for (auto& o : opts) o.lr = 1e-2;
  const double l0 = algo::critic_update(probe.cspec, cparams, opts, b, targets, 1);
  const double l1 = algo::critic_update(probe.cspec, cparams, opts, b, targets, 40);
  CHECK(l1 < l0);
  CHECK(std::isfinite(l1));

  RolloutBuffer live;
  live.detached = false;
  CHECK_THROWS_AS(
      algo::critic_update(probe.cspec, cparams, opts, live, targets, 1),
      std::invalid_argument);
}

TEST_CASE("score-function and pathwise gradients are consistent") {
  tasks::PointMassReach task;
  auto pspec = nets::PolicySpec::make(4, {8}, 2);
  std::vector<double> pp(nets::policy_param_count(pspec));
  RngStream rng(13, 0);
  nets::policy_init(pspec, rng, pp);

  const int horizon = 8;
  auto fo = algo::fobg_estimate(task, pspec, pp, 2000, horizon, 41);
  auto zo = algo::zobg_estimate(task, pspec, pp, 20000, horizon, 41);

  // identical seeds walk identical trajectories
  auto zo_small = algo::zobg_estimate(task, pspec, pp, 2000, horizon, 41);
  REQUIRE(zo_small.return_mean == fo.return_mean);

  int checked = 0;
  for (std::size_t j = 0; j < pp.size(); ++j) {
    const double band = 3.0 * (zo.stderr_[j] + fo.stderr_[j]);
    if (std::abs(fo.grad[j]) < 1e-12 && zo.stderr_[j] < 1e-12) continue;
    REQUIRE(std::abs(zo.grad[j] - fo.grad[j]) <= band + 1e-12);
    ++checked;
  }
  REQUIRE(checked > 10);
}

TEST_CASE("pathwise estimator matches finite differences of one rollout") {
  tasks::PointMassReach task;
  auto pspec = nets::PolicySpec::make(4, {6}, 2);
  std::vector<double> pp(nets::policy_param_count(pspec));
  RngStream rng(19, 0);
  nets::policy_init(pspec, rng, pp);
  auto fo = algo::fobg_estimate(task, pspec, pp, 1, 6, 77);

  auto ret_at = [&](const std::vector<double>& p) {
    return algo::fobg_estimate(task, pspec, p, 1, 6, 77).return_mean;
  };
  const double h = 1e-6;
  RngStream pick(2, 0);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t j =
        static_cast<std::size_t>(pick.uniform(0.0, 1.0) * pp.size());
    auto pl = pp, pr = pp;
    pl[j] -= h;
    pr[j] += h;
    const double fd = (ret_at(pr) - ret_at(pl)) / (2 * h);
    REQUIRE(fo.grad[j] == Catch::Approx(fd).margin(1e-5));
  }
}

TEST_CASE("open-loop optimization reaches the saturated one-step optimum") {
  tasks::PointMassReach task;
  auto res = algo::trajopt_optimize(task, 1, 300, 0.05, 8);

  // replicate the initial draw: both acceleration components should slam to
  // the -1 clamp since |p0| >> dt^2
  RngStream rng(8, 0);
  tasks::PointMassReach::State<double> s0;
  task.reset(s0, rng);
  const double d2 = task.config().dt * task.config().dt;
  const double px = s0.px - d2, py = s0.py - d2;
  const double best = -(px * px + py * py);
  REQUIRE(res.objective == Catch::Approx(best).margin(1e-9));
  CHECK(res.actions[0][0] <= -1.0);
  CHECK(res.actions[0][1] <= -1.0);
}

TEST_CASE("training loop runs and replays exactly") {
  algo::TrainConfig cfg;
  cfg.returns = {0.99, 0.95, 8};
  cfg.n_envs = 4;
  cfg.critic_passes = 2;
  cfg.total_iterations = 6;
  cfg.actor_hidden = {16};
  cfg.critic_hidden = {16};

  SECTION("bitwise determinism across trainers") {
    algo::Trainer<tasks::PointMassReach> t1(tasks::PointMassReach{}, cfg, 5);
    algo::Trainer<tasks::PointMassReach> t2(tasks::PointMassReach{}, cfg, 5);
    for (int k = 0; k < 3; ++k) {
      auto a = t1.train_iteration();
      auto b = t2.train_iteration();
      REQUIRE(a.actor_loss == b.actor_loss);
      REQUIRE(a.critic_loss == b.critic_loss);
      REQUIRE(a.return_mean == b.return_mean);
      REQUIRE(a.entropy_mean == b.entropy_mean);
      REQUIRE(a.alpha == b.alpha);
      REQUIRE(a.env_steps == b.env_steps);
      REQUIRE(a.seconds == 0.0);
    }
  }

  SECTION("all three algorithms produce finite iterations") {
    for (auto alg : {algo::Algorithm::kSapo, algo::Algorithm::kShac,
                     algo::Algorithm::kApg}) {
      auto c = cfg;
      c.algorithm = alg;
      algo::Trainer<tasks::PointMassReach> tr(tasks::PointMassReach{}, c, 3);
      for (int k = 0; k < 2; ++k) {
        auto st = tr.train_iteration();
        REQUIRE(std::isfinite(st.actor_loss));
        REQUIRE(std::isfinite(st.critic_loss));
        REQUIRE(std::isfinite(st.entropy_mean));
      }
      if (alg == algo::Algorithm::kApg) REQUIRE(tr.critic_params().empty());
      if (alg == algo::Algorithm::kShac)
        REQUIRE(tr.critic_params().size() == 1);
    }
  }

  SECTION("greedy evaluation is deterministic") {
    algo::Trainer<tasks::PointMassReach> tr(tasks::PointMassReach{}, cfg, 5);
    auto r1 = algo::evaluate_policy(tr.envs().task(), tr.policy_spec(),
                                    tr.policy_params(), 4, 12);
    auto r2 = algo::evaluate_policy(tr.envs().task(), tr.policy_spec(),
                                    tr.policy_params(), 4, 12);
    REQUIRE(r1.size() == 4);
    REQUIRE(r1 == r2);
  }
}
