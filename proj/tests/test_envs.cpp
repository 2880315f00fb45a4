#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "diffsim/env.hpp"
#include "diffsim/tasks.hpp"

using namespace diffsim;
using namespace diffsim::env;
using namespace diffsim::tasks;

namespace {

tasks::MiniRollFlat small_rollflat() {
  MiniRollFlat::Config cfg;
  cfg.grid_n = 16;
  cfg.ppc = 1;
  cfg.substeps = 5;
  cfg.dt = 0.01;
  cfg.episode_len = 8;
  return MiniRollFlat(cfg);
}

tasks::MiniFluidMove small_fluidmove() {
  MiniFluidMove::Config cfg;
  cfg.grid_n = 16;
  cfg.ppc = 1;
  cfg.substeps = 10;
  cfg.dt = 0.01;
  cfg.episode_len = 8;
  return MiniFluidMove(cfg);
}

tasks::MiniJumper small_jumper() {
  MiniJumper::Config cfg;
  cfg.substeps = 5;
  cfg.dt = 0.005;
  cfg.episode_len = 8;
  return MiniJumper(cfg);
}

}  // namespace

TEST_CASE("reward helpers") {
  SECTION("normalized improvement") {
    CHECK(reward_normalized_improvement(1.0, 1.0) == 0.0);
    CHECK(reward_normalized_improvement(0.0, 1.0) == 1.0);
    CHECK(reward_normalized_improvement(3.0, 1.0) == -1.0);
    CHECK_THROWS_AS(reward_normalized_improvement(1.0, 0.0),
                    std::invalid_argument);
  }
  SECTION("tiered distance") {
    CHECK(reward_distance_tiered(0.0, 0.33, 1.0, 2.0) == 2.0);
    CHECK(reward_distance_tiered(1.0, 0.33, 1.0, 2.0) ==
          Catch::Approx(0.25));
    CHECK(reward_distance_tiered(100.0, 0.33, 1.0, 2.0) < 1e-3);
  }
}

TEST_CASE("PointMassReach") {
  SECTION("zero actions give the analytic reward at the nominal state") {
    PointMassReach::Config cfg;
    cfg.spread = 0.0;
    PointMassReach task(cfg);
    PointMassReach::State<double> s;
    RngStream rng(1, 0);
    task.reset(s, rng);
    std::vector<double> a{0.0, 0.0};
    const double r = task.step(s, std::span<const double>(a));
    CHECK(r == Catch::Approx(-(0.6 * 0.6 + 0.4 * 0.4)));
  }
  SECTION("resets stay inside the declared bounds") {
    PointMassReach task;
    RngStream rng(7, 0);
    for (int i = 0; i < 1000; ++i) {
      PointMassReach::State<double> s;
      task.reset(s, rng);
      CHECK(std::fabs(s.px - 0.6) <= 0.2);
      CHECK(std::fabs(s.py - 0.4) <= 0.2);
      CHECK(s.vx == 0.0);
    }
  }
  SECTION("same seed gives identical initial states") {
    PointMassReach task;
    RngStream a(3, 5), b(3, 5);
    PointMassReach::State<double> sa, sb;
    task.reset(sa, a);
    task.reset(sb, b);
    CHECK(sa.px == sb.px);
    CHECK(sa.py == sb.py);
  }
  SECTION("reward gradient w.r.t. action matches FD") {
    PointMassReach task;
    PointMassReach::State<double> s0;
    RngStream rng(9, 0);
    task.reset(s0, rng);
    auto run = [&](double a0) {
      auto s = s0;
      std::vector<double> a{a0, 0.3};
      return task.step(s, std::span<const double>(a));
    };
    Tape t;
    auto sv = lift_state<PointMassReach>(t, s0);
    std::vector<Value> a{t.var(0.2), t.var(0.3)};
    Value r = task.step(sv, std::span<const Value>(a));
    t.backward(r);
    const double h = 1e-6;
    const double fd = (run(0.2 + h) - run(0.2 - h)) / (2.0 * h);
    CHECK(std::fabs(t.grad(a[0]) - fd) <= 1e-8 * std::max(std::fabs(fd), 1.0));
  }
}

TEST_CASE("EnvBatch bookkeeping") {
  PointMassReach::Config cfg;
  cfg.episode_len = 4;
  SECTION("done fires exactly at t = T") {
    EnvBatch<PointMassReach> batch(PointMassReach(cfg), 2, 11);
    std::vector<std::vector<double>> acts{{0.1, 0.0}, {0.0, 0.1}};
    std::vector<double> r;
    std::vector<bool> d;
    for (int t = 0; t < 4; ++t) {
      batch.step(acts, r, d);
      CHECK(d[0] == (t == 3));
      CHECK(d[1] == (t == 3));
    }
    CHECK(batch.cursor(0) == 0);  // auto-reset
  }
  SECTION("auto-reset continues the env's own rng stream") {
    EnvBatch<PointMassReach> batch(PointMassReach(cfg), 1, 42);
    std::vector<std::vector<double>> acts{{0.2, -0.1}};
    std::vector<double> r;
    std::vector<bool> d;
    for (int t = 0; t < 4; ++t) batch.step(acts, r, d);
    REQUIRE(d[0]);
    // mirror stream: construction consumed one reset (2 draws)
    RngStream mirror(42, 0);
    PointMassReach task(cfg);
    PointMassReach::State<double> expect;
    task.reset(expect, mirror);  // the construction-time draw
    task.reset(expect, mirror);  // the auto-reset draw
    CHECK(batch.state(0).px == expect.px);
    CHECK(batch.state(0).py == expect.py);
  }
  SECTION("trajectories are bit-deterministic in (seed, actions)") {
    auto run = [&]() {
      EnvBatch<PointMassReach> batch(PointMassReach(cfg), 3, 5);
      std::vector<std::vector<double>> acts{{0.2, -0.1}, {0.0, 0.4},
                                            {-0.3, 0.3}};
      std::vector<double> r, sum(3, 0.0);
      std::vector<bool> d;
      for (int t = 0; t < 10; ++t) {
        batch.step(acts, r, d);
        for (int i = 0; i < 3; ++i) sum[i] += r[i];
      }
      return sum;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("MiniPendulum") {
  MiniPendulum task;
  SECTION("matches a direct rigid-body rollout") {
    MiniPendulum::State<double> s;
    RngStream rng(13, 0);
    task.reset(s, rng);
    rigid::RigidState<double> ref{{s.q[0]}, {s.qd[0]}};
    std::vector<double> a{0.4};
    task.step(s, std::span<const double>(a));
    const double tau = 0.4 * task.config().torque_max;
    for (int k = 0; k < task.config().substeps; ++k) {
      std::vector<double> torque{tau};
      rigid::rigid_step(task.model(), ref, torque, rigid::ContactParams{},
                        Vec3<double>{0.0, 0.0, -9.81},
                        task.config().dt / task.config().substeps);
    }
    CHECK(s.q[0] == ref.q[0]);
    CHECK(s.qd[0] == ref.qd[0]);
  }
  SECTION("reward formula") {
    MiniPendulum::State<double> s;
    RngStream rng(14, 0);
    task.reset(s, rng);
    std::vector<double> a{0.5};
    const double r = task.step(s, std::span<const double>(a));
    const double tau = 0.5 * task.config().torque_max;
    CHECK(r == Catch::Approx(-s.q[0] * s.q[0] - 0.1 * s.qd[0] * s.qd[0] -
                             0.001 * tau * tau));
  }
  SECTION("episode return gradient w.r.t. first action is nonzero") {
    MiniPendulum::State<double> s0;
    RngStream rng(15, 0);
    task.reset(s0, rng);
    Tape t;
    auto sv = lift_state<MiniPendulum>(t, s0);
    std::vector<Value> a{t.var(0.3)};
    Value ret(0.0);
    for (int k = 0; k < 3; ++k)
      ret += task.step(sv, std::span<const Value>(a));
    t.backward(ret);
    CHECK(std::fabs(t.grad(a[0])) > 1e-8);
  }
}

TEST_CASE("MiniRollFlat") {
  auto task = small_rollflat();
  SECTION("steps produce finite rewards, deterministically") {
    auto run = [&]() {
      MiniRollFlat::State<double> s;
      RngStream rng(16, 0);
      task.reset(s, rng);
      double sum = 0.0;
      std::vector<double> a{0.3, -0.2, -0.5};
      for (int k = 0; k < 4; ++k) {
        const double r = task.step(s, std::span<const double>(a));
        REQUIRE(std::isfinite(r));
        sum += r;
      }
      return sum;
    };
    const double first = run();
    CHECK(first == run());
  }
  SECTION("return gradient w.r.t. first action is nonzero") {
    MiniRollFlat::State<double> s0;
    RngStream rng(17, 0);
    task.reset(s0, rng);
    Tape t;
    auto sv = lift_state<MiniRollFlat>(t, s0);
    std::vector<Value> a{t.var(0.1), t.var(0.1), t.var(-0.8)};
    Value ret(0.0);
    for (int k = 0; k < 2; ++k)
      ret += task.step(sv, std::span<const Value>(a));
    t.backward(ret);
    const double g = std::fabs(t.grad(a[0])) + std::fabs(t.grad(a[1])) +
                     std::fabs(t.grad(a[2]));
    CHECK(g > 1e-10);
  }
}

TEST_CASE("MiniJumper") {
  auto task = small_jumper();
  SECTION("periodic activation moves the body and stays finite") {
    MiniJumper::State<double> s;
    RngStream rng(18, 0);
    task.reset(s, rng);
    std::vector<double> a(task.act_dim(), 0.0);
    double sum = 0.0;
    for (int k = 0; k < 8; ++k) {
      for (auto& ai : a) ai = (k % 4 < 2) ? 0.8 : -0.8;
      const double r = task.step(s, std::span<const double>(a));
      REQUIRE(std::isfinite(r));
      sum += r;
    }
    CHECK(std::isfinite(sum));
  }
  SECTION("return gradient w.r.t. first action is nonzero") {
    MiniJumper::State<double> s0;
    RngStream rng(19, 0);
    task.reset(s0, rng);
    Tape t;
    auto sv = lift_state<MiniJumper>(t, s0);
    std::vector<Value> a;
    for (int i = 0; i < task.act_dim(); ++i) a.push_back(t.var(0.5));
    Value ret(0.0);
    for (int k = 0; k < 2; ++k)
      ret += task.step(sv, std::span<const Value>(a));
    t.backward(ret);
    double g = 0.0;
    for (const auto& ai : a) g += std::fabs(t.grad(ai));
    CHECK(g > 1e-10);
  }
}

TEST_CASE("MiniFluidMove") {
  auto task = small_fluidmove();
  SECTION("no spill at the start, finite rewards") {
    MiniFluidMove::State<double> s;
    RngStream rng(20, 0);
    task.reset(s, rng);
    std::vector<double> a{0.0, 0.0};
    const double r = task.step(s, std::span<const double>(a));
    REQUIRE(std::isfinite(r));
    // distance ~0.3: R_d small; spill should be near zero
    CHECK(r > -0.5);
  }
  SECTION("return gradient w.r.t. action is nonzero") {
    MiniFluidMove::State<double> s0;
    RngStream rng(21, 0);
    task.reset(s0, rng);
    Tape t;
    auto sv = lift_state<MiniFluidMove>(t, s0);
    std::vector<Value> a{t.var(0.5), t.var(0.0)};
    Value ret(0.0);
    for (int k = 0; k < 2; ++k)
      ret += task.step(sv, std::span<const Value>(a));
    t.backward(ret);
    CHECK(std::fabs(t.grad(a[0])) + std::fabs(t.grad(a[1])) > 1e-10);
  }
}

TEST_CASE("lift/lower round trip") {
  auto task = small_rollflat();
  MiniRollFlat::State<double> s0;
  RngStream rng(22, 0);
  task.reset(s0, rng);
  std::vector<double> a{0.2, 0.1, -0.3};
  task.step(s0, std::span<const double>(a));
  Tape t;
  auto sv = lift_state<MiniRollFlat>(t, s0);
  auto back = lower_state<MiniRollFlat>(sv);
  CHECK(back.roller.x == s0.roller.x);
  for (std::size_t p = 0; p < s0.particles.size(); ++p)
    for (int k = 0; k < 3; ++k) {
      CHECK(back.particles.x[p][k] == s0.particles.x[p][k]);
      CHECK(back.particles.v[p][k] == s0.particles.v[p][k]);
    }
}

TEST_CASE("random-action fuzz keeps rewards finite") {
  RngStream rng(23, 0);
  SECTION("PointMassReach, 10000 steps") {
    EnvBatch<PointMassReach> batch(PointMassReach(), 4, 99);
    std::vector<std::vector<double>> acts(4, std::vector<double>(2));
    std::vector<double> r;
    std::vector<bool> d;
    for (int t = 0; t < 2500; ++t) {
      for (auto& a : acts)
        for (auto& ai : a) ai = rng.uniform(-1.5, 1.5);
      batch.step(acts, r, d);
      for (double ri : r) REQUIRE(std::isfinite(ri));
    }
  }
  SECTION("MiniPendulum, 10000 steps") {
    EnvBatch<MiniPendulum> batch(MiniPendulum(), 4, 98);
    std::vector<std::vector<double>> acts(4, std::vector<double>(1));
    std::vector<double> r;
    std::vector<bool> d;
    for (int t = 0; t < 2500; ++t) {
      for (auto& a : acts) a[0] = rng.uniform(-1.5, 1.5);
      batch.step(acts, r, d);
      for (double ri : r) REQUIRE(std::isfinite(ri));
    }
  }
  SECTION("MiniRollFlat, short fuzz") {
    EnvBatch<MiniRollFlat> batch(small_rollflat(), 1, 97);
    std::vector<std::vector<double>> acts(1, std::vector<double>(3));
    std::vector<double> r;
    std::vector<bool> d;
    for (int t = 0; t < 24; ++t) {
      for (auto& ai : acts[0]) ai = rng.uniform(-1.0, 1.0);
      batch.step(acts, r, d);
      REQUIRE(std::isfinite(r[0]));
    }
  }
}
