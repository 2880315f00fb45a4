// diffsim command-line front end: training, evaluation, gradient checks, and
// loss-surface probes over the tasks in the library.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "diffsim/algo.hpp"
#include "diffsim/checkpoint_io.hpp"
#include "diffsim/config.hpp"
#include "diffsim/fem.hpp"
#include "diffsim/metrics.hpp"
#include "diffsim/mpm.hpp"
#include "diffsim/tasks.hpp"

namespace {

using namespace diffsim;

struct CliOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::string checkpoint_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int episodes = 0;
  bool episodes_set = false;
  int grid = 9;
  double radius = 1.0;
  std::string component;
};

config::RunConfig load_config(const CliOptions& opt) {
  config::RunConfig cfg;
  if (!opt.config_path.empty())
    cfg = config::load_run_config(opt.config_path);
  if (opt.seed_set) cfg.seed = opt.seed;
  if (opt.episodes_set) cfg.eval_episodes = opt.episodes;
  return cfg;
}

template <class F>
int with_task(const config::RunConfig& cfg, F&& fn) {
  if (cfg.task == "pointmass")
    return fn(tasks::PointMassReach(cfg.pointmass));
  if (cfg.task == "pendulum") return fn(tasks::MiniPendulum(cfg.pendulum));
  if (cfg.task == "rollflat") return fn(tasks::MiniRollFlat(cfg.rollflat));
  if (cfg.task == "jumper") return fn(tasks::MiniJumper(cfg.jumper));
  if (cfg.task == "fluidmove") return fn(tasks::MiniFluidMove(cfg.fluidmove));
  throw config::ConfigError("unknown task: " + cfg.task);
}

// ---- train ----

int cmd_train(const CliOptions& opt) {
  const auto cfg = load_config(opt);
  std::filesystem::create_directories(opt.out_dir);
  return with_task(cfg, [&](auto task) {
    algo::Trainer<decltype(task)> tr(task, cfg.train, cfg.seed);
    const bool resumed = !opt.checkpoint_path.empty();
    if (resumed)
      ckpt::restore_trainer(tr, ckpt::load_checkpoint(opt.checkpoint_path));
    metrics::CsvWriter csv(opt.out_dir + "/metrics.csv", resumed);
    char name[64];
    while (tr.iteration() < cfg.train.total_iterations) {
      const auto stats = tr.train_iteration();
      csv.append(stats);
      if (tr.iteration() % cfg.checkpoint_every == 0 &&
          tr.iteration() < cfg.train.total_iterations) {
        std::snprintf(name, sizeof(name), "/checkpoint_%06d.ckpt",
                      tr.iteration());
        ckpt::save_checkpoint(ckpt::snapshot_trainer(tr), opt.out_dir + name);
      }
    }
    ckpt::save_checkpoint(ckpt::snapshot_trainer(tr),
                          opt.out_dir + "/checkpoint_final.ckpt");
    return 0;
  });
}

// ---- eval ----

int cmd_eval(const CliOptions& opt) {
  const auto cfg = load_config(opt);
  if (cfg.eval_episodes < 1) {
    std::cerr << "eval: --episodes must be >= 1\n";
    return 2;
  }
  return with_task(cfg, [&](auto task) {
    algo::Trainer<decltype(task)> tr(task, cfg.train, cfg.seed);
    if (!opt.checkpoint_path.empty())
      ckpt::restore_trainer(tr, ckpt::load_checkpoint(opt.checkpoint_path));
    std::vector<double> rets;
    if (cfg.eval_stochastic) {
      rets.reserve(cfg.eval_episodes);
      for (int e = 0; e < cfg.eval_episodes; ++e) {
        RngStream rng(cfg.seed, static_cast<std::uint64_t>(e));
        typename decltype(task)::template State<double> st;
        task.reset(st, rng);
        std::vector<double> noise(task.act_dim());
        double ret = 0.0;
        for (int t = 0; t < task.episode_len(); ++t) {
          auto obs = task.observe(st);
          for (double& z : noise) z = rng.normal();
          auto samp = nets::policy_sample(
              tr.policy_spec(), std::span<const double>(tr.policy_params()),
              std::span<const double>(obs), std::span<const double>(noise));
          ret += task.step(st, std::span<const double>(samp.action));
          if (task.terminated(st)) break;
        }
        rets.push_back(ret);
      }
    } else {
      rets = algo::evaluate_policy(task, tr.policy_spec(), tr.policy_params(),
                                   cfg.eval_episodes, cfg.seed);
    }
    double s = 0.0, s2 = 0.0;
    for (double r : rets) {
      s += r;
      s2 += r * r;
    }
    const double mean = s / rets.size();
    const double var = std::max(0.0, s2 / rets.size() - mean * mean);
    const double se = rets.size() > 1
                          ? std::sqrt(var / (rets.size() - 1))
                          : 0.0;
    std::printf("episodes=%zu return_mean=%.17g ci95=%.17g\n", rets.size(),
                mean, 1.96 * se);
    return 0;
  });
}

// ---- gradcheck ----

struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_err < tolerance; }
};

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

CheckResult check_tape(std::uint64_t seed) {
  RngStream rng(seed, 0);
  CheckResult res{"tape", 0.0, 1e-6};
  for (int trial = 0; trial < 20; ++trial) {
    const double x0 = rng.uniform(-2.0, 2.0), y0 = rng.uniform(0.5, 2.0);
    auto f = [](auto x, auto y) {
      return sin(x) * exp(y * 0.3) + atan2(x, y) + sqrt(x * x + 1.0) +
             tanh(x * y) + log(y);
    };
    Tape t;
    Value x = t.var(x0), y = t.var(y0);
    t.backward(f(x, y));
    const double h = 1e-6;
    const double fdx =
        (f(Value(x0 + h), Value(y0)).v - f(Value(x0 - h), Value(y0)).v) /
        (2 * h);
    const double fdy =
        (f(Value(x0), Value(y0 + h)).v - f(Value(x0), Value(y0 - h)).v) /
        (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, rel_err(t.grad(x), fdx));
    res.max_rel_err = std::max(res.max_rel_err, rel_err(t.grad(y), fdy));
  }
  return res;
}

CheckResult check_rigid(std::uint64_t seed) {
  tasks::MiniPendulum task;
  CheckResult res{"rigid", 0.0, 1e-4};
  auto ret_at = [&](double a0) {
    RngStream rng(seed, 0);
    tasks::MiniPendulum::State<double> st;
    task.reset(st, rng);
    double ret = 0.0;
    for (int t = 0; t < 5; ++t) {
      const std::vector<double> a{a0};
      ret += task.step(st, std::span<const double>(a));
    }
    return ret;
  };
  Tape tape;
  Value a = tape.var(0.3);
  {
    RngStream rng(seed, 0);
    tasks::MiniPendulum::State<double> sd;
    task.reset(sd, rng);
    auto st = env::lift_state<tasks::MiniPendulum>(tape, sd);
    Value ret(0.0);
    for (int t = 0; t < 5; ++t) {
      const std::vector<Value> act{a};
      ret += task.step(st, std::span<const Value>(act));
    }
    tape.backward(ret);
  }
  const double h = 1e-6;
  const double fd = (ret_at(0.3 + h) - ret_at(0.3 - h)) / (2 * h);
  res.max_rel_err = rel_err(tape.grad(a), fd);
  return res;
}

CheckResult check_fem(std::uint64_t seed) {
  // energy gradient against the assembled internal forces
  RngStream rng(seed, 0);
  CheckResult res{"fem", 0.0, 1e-8};
  auto mesh = fem::make_box_mesh({0, 0, 0}, {0.1, 0.1, 0.1}, 1, 1, 1, 1000.0);
  fem::FemMaterial mat;
  mat.lambda = 3e4;
  mat.mu = 1e4;
  for (auto& x : mesh.x)
    for (int k = 0; k < 3; ++k) x[k] += rng.uniform(-0.005, 0.005);
  const std::vector<double> act(mesh.tets.size(), 0.0);
  auto energy_at = [&](const fem::FemMesh<double>& m) {
    double e = 0.0;
    for (std::size_t t = 0; t < m.tets.size(); ++t) {
      auto f = fem::deformation_gradient(m, t);
      e += m.rest_volume[t] *
           fem::neo_hookean_energy(f, mat, 0.0);
    }
    return e;
  };
  mat.k_damp = 0.0;
  fem::FemMesh<double> m0 = mesh;
  const auto forces = fem::elastic_forces(m0, mat, act);
  const double h = 1e-7;
  for (std::size_t i = 0; i < m0.x.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      auto mp = m0, mm = m0;
      mp.x[i][k] += h;
      mm.x[i][k] -= h;
      const double fd = -(energy_at(mp) - energy_at(mm)) / (2 * h);
      res.max_rel_err = std::max(
          res.max_rel_err,
          std::abs(forces[i][k] - fd) / std::max(1e2, std::abs(fd)));
    }
  return res;
}

CheckResult check_mpm(std::uint64_t seed) {
  CheckResult res{"mpm", 0.0, 1e-3};
  mpm::MpmMaterial mat;
  mat.kind = mpm::MaterialKind::kElastoplastic;
  auto ret_at = [&](double v0) {
    mpm::MpmState<double> st =
        mpm::sample_box({0.4, 0.4, 0.4}, {0.1, 0.1, 0.1}, 1.0 / 16, 1, mat, 0);
    for (auto& v : st.v) v.x = v0;
    mpm::MpmGrid<double> grid;
    grid.dims = {16, 16, 16};
    grid.dx = 1.0 / 16;
    mpm::mpm_step(st, grid, {mat}, {}, mpm::CouplingParams{},
                  Vec3<double>{0, 0, -9.81}, 1e-3, 5);
    double com = 0.0;
    for (auto& x : st.x) com += x.x;
    return com / st.x.size();
  };
  Tape tape;
  Value v0 = tape.var(0.2);
  {
    auto sd =
        mpm::sample_box({0.4, 0.4, 0.4}, {0.1, 0.1, 0.1}, 1.0 / 16, 1, mat, 0);
    auto st = mpm::convert_state<Value>(sd);
    for (auto& v : st.v) v.x = v0;
    mpm::MpmGrid<Value> grid;
    grid.dims = {16, 16, 16};
    grid.dx = 1.0 / 16;
    mpm::mpm_step(st, grid, {mat}, {}, mpm::CouplingParams{},
                  Vec3<double>{0, 0, -9.81}, 1e-3, 5);
    Value com(0.0);
    for (auto& x : st.x) com += x.x;
    tape.backward(com * Value(1.0 / st.x.size()));
  }
  (void)seed;
  const double h = 1e-5;
  const double fd = (ret_at(0.2 + h) - ret_at(0.2 - h)) / (2 * h);
  res.max_rel_err = rel_err(tape.grad(v0), fd);
  return res;
}

CheckResult check_envs(std::uint64_t seed) {
  tasks::PointMassReach task;
  CheckResult res{"envs", 0.0, 1e-6};
  auto ret_at = [&](double a0) {
    RngStream rng(seed, 0);
    tasks::PointMassReach::State<double> st;
    task.reset(st, rng);
    double ret = 0.0;
    for (int t = 0; t < 8; ++t) {
      const std::vector<double> a{a0, -a0};
      ret += task.step(st, std::span<const double>(a));
    }
    return ret;
  };
  Tape tape;
  Value a = tape.var(0.4);
  {
    RngStream rng(seed, 0);
    tasks::PointMassReach::State<double> sd;
    task.reset(sd, rng);
    auto st = env::lift_state<tasks::PointMassReach>(tape, sd);
    Value ret(0.0);
    for (int t = 0; t < 8; ++t) {
      const std::vector<Value> act{a, -a};
      ret += task.step(st, std::span<const Value>(act));
    }
    tape.backward(ret);
  }
  const double h = 1e-6;
  const double fd = (ret_at(0.4 + h) - ret_at(0.4 - h)) / (2 * h);
  res.max_rel_err = rel_err(tape.grad(a), fd);
  return res;
}

CheckResult check_nets(std::uint64_t seed) {
  CheckResult res{"nets", 0.0, 1e-6};
  auto pspec = nets::PolicySpec::make(3, {8}, 2);
  std::vector<double> pp(nets::policy_param_count(pspec));
  RngStream rng(seed, 0);
  nets::policy_init(pspec, rng, pp);
  const std::vector<double> obs{0.3, -0.2, 0.9}, noise{0.4, -1.1};
  auto lp_at = [&](const std::vector<double>& p) {
    return nets::policy_sample(pspec, std::span<const double>(p),
                               std::span<const double>(obs),
                               std::span<const double>(noise))
        .log_prob;
  };
  Tape tape;
  auto leaves = nets::make_leaves(tape, pp);
  const std::vector<Value> obs_v(obs.begin(), obs.end());
  tape.backward(nets::policy_sample(pspec, std::span<const Value>(leaves),
                                    std::span<const Value>(obs_v),
                                    std::span<const double>(noise))
                    .log_prob);
  const double h = 1e-6;
  RngStream pick(seed, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t j =
        static_cast<std::size_t>(pick.uniform(0.0, 1.0) * pp.size());
    auto pl = pp, pr = pp;
    pl[j] -= h;
    pr[j] += h;
    const double fd = (lp_at(pr) - lp_at(pl)) / (2 * h);
    res.max_rel_err =
        std::max(res.max_rel_err, rel_err(tape.grad(leaves[j]), fd));
  }
  return res;
}

CheckResult check_returns(std::uint64_t seed) {
  // full collected-rollout actor objective against finite differences
  CheckResult res{"returns", 0.0, 1e-4};
  tasks::PointMassReach task;
  auto pspec = nets::PolicySpec::make(4, {8}, 2);
  nets::MlpSpec cspec;
  cspec.dims = {4, 8, 1};
  cspec.act = nets::Activation::kELU;
  std::vector<std::vector<double>> cparams(
      2, std::vector<double>(nets::mlp_param_count(cspec)));
  RngStream rng(seed, 0);
  for (auto& p : cparams) nets::mlp_init(cspec, rng, p, 1.0);
  std::vector<double> pp(nets::policy_param_count(pspec));
  nets::policy_init(pspec, rng, pp);
  algo::ReturnsConfig rc{0.97, 0.9, 5};
  auto loss_at = [&](const std::vector<double>& p, std::vector<double>* g) {
    env::EnvBatch<tasks::PointMassReach> batch(task, 2, seed + 3);
    Tape tape;
    auto leaves = nets::make_leaves(tape, p);
    auto buf = algo::collect_rollout(tape, batch, pspec, leaves, cspec,
                                     cparams, rc.horizon, -1.0, true);
    Value l = algo::actor_objective_sapo(buf, rc, 0.2);
    if (g) {
      tape.backward(l);
      *g = nets::collect_grads(tape, leaves);
    }
    return l.v;
  };
  std::vector<double> grad;
  loss_at(pp, &grad);
  const double h = 1e-6;
  RngStream pick(seed, 5);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t j =
        static_cast<std::size_t>(pick.uniform(0.0, 1.0) * pp.size());
    auto pl = pp, pr = pp;
    pl[j] -= h;
    pr[j] += h;
    const double fd = (loss_at(pr, nullptr) - loss_at(pl, nullptr)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, rel_err(grad[j], fd));
  }
  return res;
}

int cmd_gradcheck(const CliOptions& opt) {
  const std::uint64_t seed = opt.seed_set ? opt.seed : 0;
  CheckResult res;
  if (opt.component == "tape") res = check_tape(seed);
  else if (opt.component == "rigid") res = check_rigid(seed);
  else if (opt.component == "fem") res = check_fem(seed);
  else if (opt.component == "mpm") res = check_mpm(seed);
  else if (opt.component == "envs") res = check_envs(seed);
  else if (opt.component == "nets") res = check_nets(seed);
  else if (opt.component == "returns") res = check_returns(seed);
  else {
    std::cerr << "gradcheck: unknown component '" << opt.component
              << "' (expected tape|rigid|fem|mpm|envs|nets|returns)\n";
    return 2;
  }
  std::printf("component=%s max_rel_err=%.3e tolerance=%.0e %s\n",
              res.name.c_str(), res.max_rel_err, res.tolerance,
              res.pass() ? "pass" : "FAIL");
  return res.pass() ? 0 : 1;
}

// ---- loss surface ----

double symlog(double x) {
  return (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0)) * std::log1p(std::abs(x));
}

// parameter tensor extents of the policy trunk, for filter normalization
std::vector<std::size_t> param_blocks(const nets::MlpSpec& spec) {
  std::vector<std::size_t> blocks;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const std::size_t rows = spec.dims[l + 1], cols = spec.dims[l];
    blocks.push_back(rows * cols);  // W
    blocks.push_back(rows);         // b
    if (spec.is_hidden(l) && spec.layer_norm) {
      blocks.push_back(rows);  // gamma
      blocks.push_back(rows);  // beta
    }
  }
  return blocks;
}

std::vector<double> filter_normalized_direction(const nets::MlpSpec& spec,
                                                const std::vector<double>& theta,
                                                RngStream& rng) {
  std::vector<double> d(theta.size());
  for (double& x : d) x = rng.normal();
  std::size_t off = 0;
  for (std::size_t n : param_blocks(spec)) {
    double tn = 0.0, dn = 0.0;
    for (std::size_t j = off; j < off + n; ++j) {
      tn += theta[j] * theta[j];
      dn += d[j] * d[j];
    }
    const double scale = dn > 0.0 ? std::sqrt(tn / dn) : 0.0;
    for (std::size_t j = off; j < off + n; ++j) d[j] *= scale;
    off += n;
  }
  return d;
}

int cmd_loss_surface(const CliOptions& opt) {
  const auto cfg = load_config(opt);
  if (opt.grid < 1 || opt.radius < 0.0) {
    std::cerr << "loss-surface: need --grid >= 1 and --radius >= 0\n";
    return 2;
  }
  std::filesystem::create_directories(opt.out_dir);
  return with_task(cfg, [&](auto task) {
    algo::Trainer<decltype(task)> tr(task, cfg.train, cfg.seed);
    if (!opt.checkpoint_path.empty())
      ckpt::restore_trainer(tr, ckpt::load_checkpoint(opt.checkpoint_path));
    const auto& theta = tr.policy_params();
    RngStream d1_rng(cfg.seed, 1001), d2_rng(cfg.seed, 1002);
    const auto d1 =
        filter_normalized_direction(tr.policy_spec().trunk, theta, d1_rng);
    const auto d2 =
        filter_normalized_direction(tr.policy_spec().trunk, theta, d2_rng);
    auto mean_return = [&](const std::vector<double>& p) {
      auto rets = algo::evaluate_policy(task, tr.policy_spec(), p,
                                        cfg.eval_episodes, cfg.seed);
      double s = 0.0;
      for (double r : rets) s += r;
      return s / rets.size();
    };
    std::ofstream out(opt.out_dir + "/loss_surface.csv", std::ios::trunc);
    if (!out) {
      std::cerr << "loss-surface: cannot write output\n";
      return 1;
    }
    out << "u,v,return,symlog_return\n";
    for (int iu = 0; iu < opt.grid; ++iu)
      for (int iv = 0; iv < opt.grid; ++iv) {
        const double u =
            opt.grid == 1 ? 0.0
                          : -opt.radius + 2.0 * opt.radius * iu / (opt.grid - 1);
        const double v =
            opt.grid == 1 ? 0.0
                          : -opt.radius + 2.0 * opt.radius * iv / (opt.grid - 1);
        std::vector<double> p(theta.size());
        for (std::size_t j = 0; j < p.size(); ++j)
          p[j] = theta[j] + u * d1[j] + v * d2[j];
        const double r = mean_return(p);
        out << metrics::format_double(u) << ',' << metrics::format_double(v)
            << ',' << metrics::format_double(r) << ','
            << metrics::format_double(symlog(r)) << '\n';
      }
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable multiphysics training toolkit"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "config file path");
    sub->add_option("--seed", opt.seed, "override the config seed")
        ->each([&](const std::string&) { opt.seed_set = true; });
    sub->add_option("--out-dir", opt.out_dir, "artifact directory");
    sub->add_option("--checkpoint", opt.checkpoint_path, "checkpoint path");
  };

  auto* train = app.add_subcommand("train", "run the training loop");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  add_common(eval);
  eval->add_option("--episodes", opt.episodes, "evaluation episodes")
      ->each([&](const std::string&) { opt.episodes_set = true; });
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("component", opt.component, "component to check")
      ->required();
  gradcheck->add_option("--seed", opt.seed, "rng seed")
      ->each([&](const std::string&) { opt.seed_set = true; });
  auto* surface =
      app.add_subcommand("loss-surface", "sample the return surface");
  add_common(surface);
  surface->add_option("--grid", opt.grid, "grid resolution per axis");
  surface->add_option("--radius", opt.radius, "perturbation radius");
  surface->add_option("--episodes", opt.episodes, "episodes per grid cell")
      ->each([&](const std::string&) { opt.episodes_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (gradcheck->parsed()) return cmd_gradcheck(opt);
    if (surface->parsed()) return cmd_loss_surface(opt);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
