#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "diffsim/linalg.hpp"
#include "diffsim/rng.hpp"
#include "diffsim/tape.hpp"

using diffsim::Mat3;
using diffsim::RngStream;
using diffsim::Tape;
using diffsim::Value;
using diffsim::Vec3;

TEST_CASE("product rule") {
  Tape t;
  Value x = t.var(2.0);
  Value y = t.var(3.0);
  Value z = x * y;
  REQUIRE(z.v == 6.0);
  t.backward(z);
  CHECK(t.grad(x) == 3.0);
  CHECK(t.grad(y) == 2.0);
}

TEST_CASE("tanh at zero has unit adjoint") {
  Tape t;
  Value x = t.var(0.0);
  Value y = tanh(x);
  REQUIRE(y.v == 0.0);
  t.backward(y);
  CHECK(t.grad(x) == 1.0);
}

TEST_CASE("square gradient") {
  Tape t;
  Value x = t.var(3.0);
  Value y = x * x;
  t.backward(y);
  CHECK(t.grad(x) == 6.0);
}

TEST_CASE("repeated backward is identical") {
  Tape t;
  Value x = t.var(0.7);
  Value y = tanh(x * x) + exp(-x);
  t.backward(y);
  const double g1 = t.grad(x);
  t.backward(y);
  CHECK(t.grad(x) == g1);
}

TEST_CASE("domain errors rejected") {
  Tape t;
  Value x = t.var(-1.0);
  CHECK_THROWS_AS(log(x), std::domain_error);
  CHECK_THROWS_AS(diffsim::sqrt(x), std::domain_error);
}

TEST_CASE("backward requires a recorded root") {
  Tape t;
  Value c = t.constant(1.0);
  CHECK_THROWS_AS(t.backward(c), std::invalid_argument);
}

namespace {

// Central finite difference of a scalar function of one packed input vector.
double central_fd(const std::function<double(const std::vector<double>&)>& f,
                  std::vector<double> x, std::size_t i, double h = 1e-6) {
  x[i] += h;
  const double hi = f(x);
  x[i] -= 2.0 * h;
  const double lo = f(x);
  return (hi - lo) / (2.0 * h);
}

}  // namespace

TEST_CASE("every smooth primitive matches central differences") {
  RngStream rng(17, 0);
  auto check_unary = [&](auto op, double lo, double hi) {
    for (int k = 0; k < 100; ++k) {
      const double x0 = rng.uniform(lo, hi);
      Tape t;
      Value x = t.var(x0);
      Value y = op(x);
      t.backward(y);
      const double fd = central_fd(
          [&](const std::vector<double>& v) {
            Tape s;
            s.set_recording(false);
            return op(s.var(v[0])).v;
          },
          {x0}, 0);
      const double denom = std::max(std::fabs(fd), 1e-8);
      CHECK(std::fabs(t.grad(x) - fd) / denom < 1e-6);
    }
  };
  check_unary([](Value x) { return exp(x); }, -2.0, 2.0);
  check_unary([](Value x) { return log(x); }, 0.1, 5.0);
  check_unary([](Value x) { return diffsim::sqrt(x); }, 0.1, 5.0);
  check_unary([](Value x) { return tanh(x); }, -2.0, 2.0);
  check_unary([](Value x) { return sin(x); }, -2.0, 2.0);
  check_unary([](Value x) { return cos(x); }, -2.0, 2.0);
  check_unary([](Value x) { return -x; }, -2.0, 2.0);

  auto check_binary = [&](auto op) {
    for (int k = 0; k < 100; ++k) {
      const double a0 = rng.uniform(-2.0, 2.0);
      double b0 = rng.uniform(-2.0, 2.0);
      if (std::fabs(a0 - b0) < 1e-3) b0 += 0.1;  // stay off min/max kinks
      if (std::fabs(b0) < 1e-2) b0 = 0.5;        // and away from div poles
      Tape t;
      Value a = t.var(a0);
      Value b = t.var(b0);
      Value y = op(a, b);
      t.backward(y);
      for (int i = 0; i < 2; ++i) {
        const double fd = central_fd(
            [&](const std::vector<double>& v) {
              Tape s;
              s.set_recording(false);
              return op(s.var(v[0]), s.var(v[1])).v;
            },
            {a0, b0}, i);
        const double g = i == 0 ? t.grad(a) : t.grad(b);
        const double denom = std::max(std::fabs(fd), 1e-8);
        CHECK(std::fabs(g - fd) / denom < 1e-6);
      }
    }
  };
  check_binary([](Value a, Value b) { return a + b; });
  check_binary([](Value a, Value b) { return a - b; });
  check_binary([](Value a, Value b) { return a * b; });
  check_binary([](Value a, Value b) { return a / b; });
  check_binary([](Value a, Value b) { return diffsim::min(a, b); });
  check_binary([](Value a, Value b) { return diffsim::max(a, b); });
  check_binary([](Value a, Value b) { return atan2(a, b); });
}

TEST_CASE("clamp subgradient is zero outside and at the kink") {
  Tape t;
  Value a = t.var(0.5);
  Value b = t.var(2.0);
  Value c = t.var(1.0);
  Value ra = clamp(a, 0.0, 1.0);
  Value rb = clamp(b, 0.0, 1.0);
  Value rc = clamp(c, 0.0, 1.0);
  Value root = ra + rb + rc;
  t.backward(root);
  CHECK(t.grad(a) == 1.0);
  CHECK(t.grad(b) == 0.0);
  CHECK(t.grad(c) == 0.0);
}

TEST_CASE("sum of tanh of a random linear layer matches FD") {
  RngStream rng(3, 0);
  const int n = 6, m = 4;
  std::vector<double> w(m * n), x(n);
  for (auto& v : w) v = rng.normal();
  for (auto& v : x) v = rng.normal();

  auto eval = [&](const std::vector<double>& wv, bool rec, Tape& t,
                  std::vector<Value>* leaves) {
    Value total(0.0);
    std::vector<Value> wl;
    wl.reserve(wv.size());
    for (double v : wv) wl.push_back(rec ? t.var(v) : t.constant(v));
    for (int r = 0; r < m; ++r) {
      Value acc(0.0);
      for (int c = 0; c < n; ++c) acc += wl[r * n + c] * x[c];
      total += tanh(acc);
    }
    if (leaves) *leaves = wl;
    return total;
  };

  Tape t;
  std::vector<Value> leaves;
  Value y = eval(w, true, t, &leaves);
  t.backward(y);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double fd = central_fd(
        [&](const std::vector<double>& wv) {
          Tape s;
          s.set_recording(false);
          return eval(wv, false, s, nullptr).v;
        },
        w, i);
    CHECK(std::fabs(t.grad(leaves[i]) - fd) <=
          1e-6 * std::max(std::fabs(fd), 1e-6));
  }
}

TEST_CASE("svd3x3 of a diagonal matrix") {
  Tape t;
  Mat3<Value> f = Mat3<Value>::diag(t.var(2.0), t.var(1.0), t.var(0.5));
  Mat3<Value> u, vt;
  Vec3<Value> s;
  svd3(f, u, s, vt);
  CHECK(s.x.v == Catch::Approx(2.0));
  CHECK(s.y.v == Catch::Approx(1.0));
  CHECK(s.z.v == Catch::Approx(0.5));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      CHECK(std::fabs(u(r, c).v - (r == c ? 1.0 : 0.0)) < 1e-12);
      CHECK(std::fabs(vt(r, c).v - (r == c ? 1.0 : 0.0)) < 1e-12);
    }
}

TEST_CASE("svd3x3 adjoint matches FD") {
  RngStream rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    // Well-conditioned F with separated singular values, positive det.
    std::vector<double> f0(9);
    for (auto& v : f0) v = 0.15 * rng.normal();
    f0[0] += 1.6;
    f0[4] += 1.0;
    f0[8] += 0.6;

    // Scalar probe: weighted sums of all svd outputs.
    std::vector<double> wu(9), ws(3), wv(9);
    for (auto& v : wu) v = rng.normal();
    for (auto& v : ws) v = rng.normal();
    for (auto& v : wv) v = rng.normal();

    auto probe = [&](const std::vector<double>& fv, Tape& t, bool rec,
                     std::vector<Value>* leaves) {
      Mat3<Value> f, u, vt;
      Vec3<Value> s;
      std::vector<Value> fl;
      for (double v : fv) fl.push_back(rec ? t.var(v) : t.constant(v));
      for (int i = 0; i < 9; ++i) f.m[i] = fl[i];
      svd3(f, u, s, vt);
      Value out(0.0);
      for (int i = 0; i < 9; ++i) out += u.m[i] * wu[i];
      for (int i = 0; i < 3; ++i) out += s[i] * ws[i];
      for (int i = 0; i < 9; ++i) out += vt.m[i] * wv[i];
      if (leaves) *leaves = fl;
      return out;
    };

    Tape t;
    std::vector<Value> leaves;
    Value y = probe(f0, t, true, &leaves);
    t.backward(y);
    for (int i = 0; i < 9; ++i) {
      const double fd = central_fd(
          [&](const std::vector<double>& fv) {
            Tape s;
            s.set_recording(false);
            return probe(fv, s, false, nullptr).v;
          },
          f0, i, 1e-6);
      CHECK(std::fabs(t.grad(leaves[i]) - fd) <=
            1e-5 * std::max(std::fabs(fd), 1e-3));
    }
  }
}

namespace {

diffsim::SegmentFn growth_step() {
  return [](Tape& t, std::span<const Value> in) {
    (void)t;
    return std::vector<Value>{in[0] * 1.1};
  };
}

}  // namespace

TEST_CASE("checkpointed chain gradient equals plain gradient exactly") {
  auto run = [](bool checkpointed) {
    Tape t;
    Value x0 = t.var(2.0);
    Value x = x0;
    for (int i = 0; i < 32; ++i) {
      if (checkpointed) {
        std::vector<Value> in{x};
        x = t.checkpoint(growth_step(), in)[0];
      } else {
        x = x * 1.1;
      }
    }
    t.backward(x);
    return std::pair<double, double>(x.v, t.grad(x0));
  };
  auto [v_plain, g_plain] = run(false);
  auto [v_ck, g_ck] = run(true);
  CHECK(v_ck == v_plain);
  CHECK(g_ck == g_plain);
}

TEST_CASE("identity segment passes values and gradients through") {
  Tape t;
  Value x = t.var(1.5);
  std::vector<Value> in{x};
  auto out = t.checkpoint(
      [](Tape&, std::span<const Value> v) {
        return std::vector<Value>(v.begin(), v.end());
      },
      in);
  REQUIRE(out.size() == 1);
  CHECK(out[0].v == 1.5);
  t.backward(out[0]);
  CHECK(t.grad(x) == 1.0);
}

TEST_CASE("non-deterministic segment replay is detected") {
  Tape t;
  Value x = t.var(1.0);
  int calls = 0;
  std::vector<Value> in{x};
  auto out = t.checkpoint(
      [&calls](Tape&, std::span<const Value> v) {
        ++calls;
        return std::vector<Value>{v[0] * (calls > 1 ? 2.0 : 1.0)};
      },
      in);
  CHECK_THROWS_AS(t.backward(out[0]), std::runtime_error);
}

TEST_CASE("checkpointing bounds retained nodes") {
  auto build = [](bool checkpointed, Tape& t) {
    Value x = t.var(0.3);
    auto body = [](Tape&, std::span<const Value> v) {
      Value y = v[0];
      for (int i = 0; i < 50; ++i) y = tanh(y * 1.01 + 0.001);
      return std::vector<Value>{y};
    };
    for (int step = 0; step < 16; ++step) {
      if (checkpointed) {
        std::vector<Value> in{x};
        x = t.checkpoint(body, in)[0];
      } else {
        Tape* tp = &t;
        std::vector<Value> in{x};
        x = body(*tp, in)[0];
      }
    }
    t.backward(x);
    return t.peak_live_nodes();
  };
  Tape plain, ck;
  const std::size_t plain_nodes = build(false, plain);
  const std::size_t ck_nodes = build(true, ck);
  CHECK(ck_nodes * 4 <= plain_nodes);
}
