#pragma once

// The five desk-scale tasks. Each satisfies the Task shape documented in
// env.hpp and keeps its physics constants in a small config struct so tests
// can shrink them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "diffsim/env.hpp"
#include "diffsim/fem.hpp"
#include "diffsim/linalg.hpp"
#include "diffsim/mpm.hpp"
#include "diffsim/rigid.hpp"
#include "diffsim/rng.hpp"
#include "diffsim/tape.hpp"

namespace diffsim::tasks {

// ---- PointMassReach: analytic 2-D double integrator ----

class PointMassReach {
 public:
  template <typename T>
  struct State {
    T px{}, py{}, vx{}, vy{};
  };

  struct Config {
    double dt = 0.1;
    double start_x = 0.6, start_y = 0.4;
    double spread = 0.2;  // rho_0 half-width on position
    int episode_len = 32;
  };

  PointMassReach() = default;
  explicit PointMassReach(Config cfg) : cfg_(cfg) {}

  int obs_dim() const { return 4; }
  int act_dim() const { return 2; }
  int episode_len() const { return cfg_.episode_len; }

  void reset(State<double>& s, RngStream& rng) const {
    s.px = cfg_.start_x + rng.uniform(-cfg_.spread, cfg_.spread);
    s.py = cfg_.start_y + rng.uniform(-cfg_.spread, cfg_.spread);
    s.vx = 0.0;
    s.vy = 0.0;
  }

  template <typename T>
  std::vector<T> observe(const State<T>& s) const {
    return {s.px, s.py, s.vx, s.vy};
  }

  template <typename T>
  T step(State<T>& s, std::span<const T> a) const {
    const T ax = clamp(a[0], -1.0, 1.0), ay = clamp(a[1], -1.0, 1.0);
    s.vx += T(cfg_.dt) * ax;
    s.vy += T(cfg_.dt) * ay;
    s.px += T(cfg_.dt) * s.vx;
    s.py += T(cfg_.dt) * s.vy;
    return -(s.px * s.px + s.py * s.py);
  }

  bool terminated(const State<double>&) const { return false; }

  template <typename To, typename From>
  static State<To> convert(const State<From>& s) {
    return {To(value_of(s.px)), To(value_of(s.py)), To(value_of(s.vx)),
            To(value_of(s.vy))};
  }

  template <typename T, class F>
  static void visit(State<T>& s, F&& f) {
    f(s.px);
    f(s.py);
    f(s.vx);
    f(s.vy);
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
};

// ---- MiniPendulum: single revolute swing-up on the rigid backend ----

class MiniPendulum {
 public:
  template <typename T>
  struct State {
    std::vector<T> q{T(0.0)};
    std::vector<T> qd{T(0.0)};
  };

  struct Config {
    double mass = 1.0, length = 1.0;
    double torque_max = 2.5;
    double dt = 0.05;
    int substeps = 5;
    double spread = 0.1;
    int episode_len = 100;
  };

  MiniPendulum() : MiniPendulum(Config{}) {}
  explicit MiniPendulum(Config cfg) : cfg_(cfg) {
    rigid::LinkSpec link;
    link.mass = cfg_.mass;
    link.inertia = Mat3<double>::diag(1e-6, 1e-6, 1e-6);
    link.com = {0.0, 0.0, cfg_.length};  // q = 0 is upright (unstable)
    rigid::JointSpec joint;
    joint.type = rigid::JointType::kRevolute;
    joint.parent = -1;
    joint.axis = {0.0, 1.0, 0.0};
    model_.links.push_back(link);
    model_.joints.push_back(joint);
    model_.torque_limits = {cfg_.torque_max};
  }

  int obs_dim() const { return 3; }
  int act_dim() const { return 1; }
  int episode_len() const { return cfg_.episode_len; }

  void reset(State<double>& s, RngStream& rng) const {
    s.q = {M_PI + rng.uniform(-cfg_.spread, cfg_.spread)};
    s.qd = {rng.uniform(-cfg_.spread, cfg_.spread)};
  }

  template <typename T>
  std::vector<T> observe(const State<T>& s) const {
    return {sin(s.q[0]), cos(s.q[0]), s.qd[0] * T(0.25)};
  }

  template <typename T>
  T step(State<T>& s, std::span<const T> a) const {
    const T tau = clamp(a[0], -1.0, 1.0) * T(cfg_.torque_max);
    rigid::RigidState<T> rs{s.q, s.qd};
    const double h = cfg_.dt / cfg_.substeps;
    for (int k = 0; k < cfg_.substeps; ++k) {
      std::vector<T> torque{tau};
      rigid::rigid_step(model_, rs, torque, rigid::ContactParams{},
                        Vec3<double>{0.0, 0.0, -9.81}, h);
    }
    s.q = std::move(rs.q);
    s.qd = std::move(rs.qd);
    return -s.q[0] * s.q[0] - T(0.1) * s.qd[0] * s.qd[0] -
           T(0.001) * tau * tau;
  }

  bool terminated(const State<double>&) const { return false; }

  template <typename To, typename From>
  static State<To> convert(const State<From>& s) {
    State<To> out;
    out.q = {To(value_of(s.q[0]))};
    out.qd = {To(value_of(s.qd[0]))};
    return out;
  }

  template <typename T, class F>
  static void visit(State<T>& s, F&& f) {
    f(s.q[0]);
    f(s.qd[0]);
  }

  const rigid::ArticulationModel& model() const { return model_; }
  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  rigid::ArticulationModel model_;
};

namespace detail {

template <typename To, typename From>
mpm::MpmState<To> convert_particles(const mpm::MpmState<From>& src) {
  mpm::MpmState<To> out;
  for (const auto& p : src.x)
    out.x.push_back({To(value_of(p.x)), To(value_of(p.y)), To(value_of(p.z))});
  for (const auto& p : src.v)
    out.v.push_back({To(value_of(p.x)), To(value_of(p.y)), To(value_of(p.z))});
  for (const auto& f : src.F) {
    Mat3<To> m;
    for (int i = 0; i < 9; ++i) m.m[i] = To(value_of(f.m[i]));
    out.F.push_back(m);
  }
  for (const auto& c : src.C) {
    Mat3<To> m;
    for (int i = 0; i < 9; ++i) m.m[i] = To(value_of(c.m[i]));
    out.C.push_back(m);
  }
  out.mass = src.mass;
  out.volume0 = src.volume0;
  out.material_id = src.material_id;
  return out;
}

template <typename T, class F>
void visit_particles(mpm::MpmState<T>& st, F&& f) {
  for (auto& p : st.x) {
    f(p.x);
    f(p.y);
    f(p.z);
  }
  for (auto& p : st.v) {
    f(p.x);
    f(p.y);
    f(p.z);
  }
  for (auto& m : st.F)
    for (int i = 0; i < 9; ++i) f(m.m[i]);
  for (auto& m : st.C)
    for (int i = 0; i < 9; ++i) f(m.m[i]);
}

template <typename T>
T mean_of(const std::vector<T>& xs) {
  T acc(0.0);
  for (const auto& x : xs) acc += x;
  return acc * T(1.0 / static_cast<double>(xs.size()));
}

}  // namespace detail

// ---- MiniRollFlat: flatten an elastoplastic block with a kinematic roller --

class MiniRollFlat {
 public:
  template <typename T>
  struct State {
    mpm::MpmState<T> particles;
    Vec3<T> roller{T(0.0), T(0.0), T(0.0)};
  };

  struct Config {
    int grid_n = 20;
    int ppc = 8;
    double block_size = 0.2, block_height = 0.1;
    double roller_radius = 0.07;
    double roller_speed = 0.25;
    double dt = 0.02;
    int substeps = 20;
    double h_flat = 0.1;  // tier-ratio reference height
    int cloud_k = 16;
    int episode_len = 40;
    double youngs = 1e5;
    double yield_stress = 2e3;
  };

  MiniRollFlat() : MiniRollFlat(Config{}) {}
  explicit MiniRollFlat(Config cfg) : cfg_(cfg) {
    dx_ = 1.0 / cfg_.grid_n;
    floor_z_ = 3.0 * dx_;
    mpm::MpmMaterial mat;
    mat.kind = mpm::MaterialKind::kElastoplastic;
    mat.youngs = cfg_.youngs;
    mat.yield_stress = cfg_.yield_stress;
    materials_ = {mat};
    const double half = cfg_.block_size / 2.0;
    template_ = mpm::sample_box({0.5 - half, 0.5 - half, floor_z_ + 0.5 * dx_},
                                {cfg_.block_size, cfg_.block_size,
                                 cfg_.block_height},
                                dx_, cfg_.ppc, mat, 0);
    cloud_stride_ = std::max<std::size_t>(1, template_.size() / cfg_.cloud_k);
  }

  int cloud_size() const {
    return static_cast<int>((template_.size() + cloud_stride_ - 1) /
                            cloud_stride_);
  }
  int obs_dim() const { return 5 + 3 * cloud_size(); }
  int act_dim() const { return 3; }
  int episode_len() const { return cfg_.episode_len; }

  void reset(State<double>& s, RngStream& rng) const {
    s.particles = template_;
    s.roller = {0.5 + rng.uniform(-0.02, 0.02), 0.5 + rng.uniform(-0.02, 0.02),
                floor_z_ + cfg_.block_height + cfg_.roller_radius + 0.02};
  }

  template <typename T>
  std::vector<T> observe(const State<T>& s) const {
    std::vector<T> obs{s.roller.x, s.roller.y, s.roller.z};
    T mean_z(0.0), var_z(0.0);
    const double inv_n = 1.0 / static_cast<double>(s.particles.size());
    for (const auto& p : s.particles.x) mean_z += (p.z - T(floor_z_)) * T(inv_n);
    for (const auto& p : s.particles.x) {
      const T d = p.z - T(floor_z_) - mean_z;
      var_z += d * d * T(inv_n);
    }
    obs.push_back(mean_z);
    obs.push_back(var_z);
    for (std::size_t p = 0; p < s.particles.size(); p += cloud_stride_) {
      obs.push_back(s.particles.x[p].x);
      obs.push_back(s.particles.x[p].y);
      obs.push_back(s.particles.x[p].z);
    }
    return obs;
  }

  template <typename T>
  T step(State<T>& s, std::span<const T> a) const {
    Vec3<T> vel{clamp(a[0], -1.0, 1.0) * T(cfg_.roller_speed),
                clamp(a[1], -1.0, 1.0) * T(cfg_.roller_speed),
                clamp(a[2], -1.0, 1.0) * T(cfg_.roller_speed)};
    mpm::SdfCollider<T> roller;
    roller.kind = mpm::SdfCollider<T>::Kind::kSphere;
    roller.center = s.roller;
    roller.radius = cfg_.roller_radius;
    roller.velocity = vel;
    std::vector<mpm::SdfCollider<T>> cols{roller};

    mpm::MpmGrid<T> grid;
    grid.dims = {cfg_.grid_n, cfg_.grid_n, cfg_.grid_n};
    grid.dx = dx_;
    grid.clear();
    const double h = cfg_.dt / cfg_.substeps;
    mpm::mpm_step(s.particles, grid, materials_, cols, coupling_,
                  {0.0, 0.0, -9.81}, h, cfg_.substeps);

    for (int k = 0; k < 3; ++k)
      s.roller[k] = clamp(s.roller[k] + vel[k] * T(cfg_.dt), 3.5 * dx_,
                          1.0 - 3.5 * dx_);

    T mean_z(0.0), var_z(0.0);
    const double inv_n = 1.0 / static_cast<double>(s.particles.size());
    for (const auto& p : s.particles.x) mean_z += (p.z - T(floor_z_)) * T(inv_n);
    for (const auto& p : s.particles.x) {
      const T d = p.z - T(floor_z_) - mean_z;
      var_z += d * d * T(inv_n);
    }
    const T ratio = mean_z * T(1.0 / cfg_.h_flat);
    return env::reward_distance_tiered(ratio, 0.33, 1.0, 2.0) - var_z;
  }

  bool terminated(const State<double>&) const { return false; }

  template <typename To, typename From>
  static State<To> convert(const State<From>& s) {
    State<To> out;
    out.particles = detail::convert_particles<To, From>(s.particles);
    out.roller = {To(value_of(s.roller.x)), To(value_of(s.roller.y)),
                  To(value_of(s.roller.z))};
    return out;
  }

  template <typename T, class F>
  static void visit(State<T>& s, F&& f) {
    detail::visit_particles(s.particles, f);
    f(s.roller.x);
    f(s.roller.y);
    f(s.roller.z);
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  double dx_ = 0.05, floor_z_ = 0.15;
  std::vector<mpm::MpmMaterial> materials_;
  mpm::CouplingParams coupling_;
  mpm::MpmState<double> template_;
  std::size_t cloud_stride_ = 1;
};

// ---- MiniJumper: actuated FEM box on the ground ----

class MiniJumper {
 public:
  template <typename T>
  struct State {
    fem::FemMesh<T> mesh;
  };

  struct Config {
    double size_x = 0.1, size_y = 0.05, size_z = 0.05;
    int res_x = 2, res_y = 1, res_z = 1;
    double density = 1000.0;
    double lambda = 3e4, mu = 1e4;
    double dt = 0.02;
    int substeps = 20;
    double spread = 0.01;  // rho_0 velocity jitter
    int episode_len = 50;
    rigid::ContactParams contact{};
  };

  MiniJumper() : MiniJumper(Config{}) {}
  explicit MiniJumper(Config cfg) : cfg_(cfg), contact_(cfg.contact) {
    template_ = fem::make_box_mesh({-cfg_.size_x / 2, -cfg_.size_y / 2, 0.0},
                                   {cfg_.size_x, cfg_.size_y, cfg_.size_z},
                                   cfg_.res_x, cfg_.res_y, cfg_.res_z,
                                   cfg_.density);
    material_.lambda = cfg_.lambda;
    material_.mu = cfg_.mu;
    double z = 0.0, m = 0.0;
    for (std::size_t i = 0; i < template_.x.size(); ++i) {
      z += template_.particle_mass[i] * template_.x[i].z;
      m += template_.particle_mass[i];
    }
    rest_com_z_ = z / m;
    // actions subsampled by 2 relative to the tets, nearest-neighbor upsampled
    act_dim_ = static_cast<int>((template_.tets.size() + 1) / 2);
  }

  int obs_dim() const { return 6 + 3 * static_cast<int>(template_.x.size()); }
  int act_dim() const { return act_dim_; }
  int episode_len() const { return cfg_.episode_len; }

  void reset(State<double>& s, RngStream& rng) const {
    s.mesh = template_;
    for (auto& v : s.mesh.v)
      for (int k = 0; k < 3; ++k)
        v[k] = rng.uniform(-cfg_.spread, cfg_.spread);
  }

  template <typename T>
  std::vector<T> observe(const State<T>& s) const {
    std::vector<T> obs(6, T(0.0));
    const double inv_n = 1.0 / static_cast<double>(s.mesh.x.size());
    for (std::size_t i = 0; i < s.mesh.x.size(); ++i)
      for (int k = 0; k < 3; ++k) {
        obs[k] += s.mesh.x[i][k] * T(inv_n);
        obs[3 + k] += s.mesh.v[i][k] * T(inv_n);
      }
    for (std::size_t i = 0; i < s.mesh.x.size(); ++i)
      for (int k = 0; k < 3; ++k) obs.push_back(s.mesh.x[i][k] - obs[k]);
    return obs;
  }

  template <typename T>
  T step(State<T>& s, std::span<const T> a) const {
    std::vector<T> acts;
    acts.reserve(s.mesh.tets.size());
    for (std::size_t e = 0; e < s.mesh.tets.size(); ++e)
      acts.push_back(clamp(a[e / 2], -1.0, 1.0));
    const double h = cfg_.dt / cfg_.substeps;
    for (int k = 0; k < cfg_.substeps; ++k)
      fem::fem_step(s.mesh, material_, acts, {0.0, 0.0, -9.81}, contact_, h);

    T com_vx(0.0), com_z(0.0);
    const double inv_n = 1.0 / static_cast<double>(s.mesh.x.size());
    for (std::size_t i = 0; i < s.mesh.x.size(); ++i) {
      com_vx += s.mesh.v[i].x * T(inv_n);
      com_z += s.mesh.x[i].z * T(inv_n);
    }
    T act_norm(0.0);
    for (std::size_t i = 0; i < a.size(); ++i) act_norm += a[i] * a[i];
    const T r_up = max(com_z - T(rest_com_z_), T(0.0));
    return com_vx + T(3.0) * r_up - T(1e-4) * act_norm;
  }

  bool terminated(const State<double>&) const { return false; }

  template <typename To, typename From>
  static State<To> convert(const State<From>& s) {
    State<To> out;
    out.mesh.tets = s.mesh.tets;
    out.mesh.Dm_inv = s.mesh.Dm_inv;
    out.mesh.rest_volume = s.mesh.rest_volume;
    out.mesh.particle_mass = s.mesh.particle_mass;
    for (const auto& p : s.mesh.x)
      out.mesh.x.push_back(
          {To(value_of(p.x)), To(value_of(p.y)), To(value_of(p.z))});
    for (const auto& p : s.mesh.v)
      out.mesh.v.push_back(
          {To(value_of(p.x)), To(value_of(p.y)), To(value_of(p.z))});
    return out;
  }

  template <typename T, class F>
  static void visit(State<T>& s, F&& f) {
    for (auto& p : s.mesh.x) {
      f(p.x);
      f(p.y);
      f(p.z);
    }
    for (auto& p : s.mesh.v) {
      f(p.x);
      f(p.y);
      f(p.z);
    }
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  fem::FemMesh<double> template_;
  fem::FemMaterial material_;
  rigid::ContactParams contact_;
  double rest_com_z_ = 0.0;
  int act_dim_ = 0;
};

// ---- MiniFluidMove: slide a container of fluid to a target without spill --

class MiniFluidMove {
 public:
  template <typename T>
  struct State {
    mpm::MpmState<T> particles;
    T cx{}, cy{};  // container center
  };

  struct Config {
    int grid_n = 20;
    int ppc = 8;
    double container_half = 0.1;
    double fill = 0.08;  // fluid depth
    double speed = 0.25;
    double dt = 0.02;
    int substeps = 40;
    double start_x = 0.35, start_y = 0.5;
    double target_x = 0.65, target_y = 0.5;
    double spill_temp = 0.01;
    int cloud_k = 16;
    int episode_len = 40;
  };

  MiniFluidMove() : MiniFluidMove(Config{}) {}
  explicit MiniFluidMove(Config cfg) : cfg_(cfg) {
    dx_ = 1.0 / cfg_.grid_n;
    floor_z_ = 3.0 * dx_;
    mpm::MpmMaterial mat;
    mat.kind = mpm::MaterialKind::kFluid;
    mat.youngs = 1e4;
    materials_ = {mat};
    const double inner = cfg_.container_half - 0.02;
    template_ = mpm::sample_box(
        {cfg_.start_x - inner, cfg_.start_y - inner, floor_z_ + 0.25 * dx_},
        {2.0 * inner, 2.0 * inner, cfg_.fill}, dx_, cfg_.ppc, mat, 0);
    cloud_stride_ = std::max<std::size_t>(1, template_.size() / cfg_.cloud_k);
  }

  int cloud_size() const {
    return static_cast<int>((template_.size() + cloud_stride_ - 1) /
                            cloud_stride_);
  }
  int obs_dim() const { return 7 + 3 * cloud_size(); }
  int act_dim() const { return 2; }
  int episode_len() const { return cfg_.episode_len; }

  void reset(State<double>& s, RngStream& rng) const {
    s.particles = template_;
    s.cx = cfg_.start_x + rng.uniform(-0.01, 0.01);
    s.cy = cfg_.start_y + rng.uniform(-0.01, 0.01);
  }

  template <typename T>
  std::vector<T> observe(const State<T>& s) const {
    std::vector<T> obs{s.cx, s.cy, T(cfg_.target_x) - s.cx,
                       T(cfg_.target_y) - s.cy};
    Vec3<T> mean{T(0.0), T(0.0), T(0.0)};
    const double inv_n = 1.0 / static_cast<double>(s.particles.size());
    for (const auto& p : s.particles.x) mean += p * T(inv_n);
    obs.push_back(mean.x);
    obs.push_back(mean.y);
    obs.push_back(mean.z);
    for (std::size_t p = 0; p < s.particles.size(); p += cloud_stride_) {
      obs.push_back(s.particles.x[p].x);
      obs.push_back(s.particles.x[p].y);
      obs.push_back(s.particles.x[p].z);
    }
    return obs;
  }

  template <typename T>
  T step(State<T>& s, std::span<const T> a) const {
    const Vec3<T> vel{clamp(a[0], -1.0, 1.0) * T(cfg_.speed),
                      clamp(a[1], -1.0, 1.0) * T(cfg_.speed), T(0.0)};
    // four container walls as inward-facing moving planes
    std::vector<mpm::SdfCollider<T>> cols;
    const double half = cfg_.container_half;
    const Vec3<double> normals[4] = {
        {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}};
    for (int w = 0; w < 4; ++w) {
      mpm::SdfCollider<T> wall;
      wall.kind = mpm::SdfCollider<T>::Kind::kPlane;
      wall.normal = normals[w];
      wall.center = {s.cx - T(normals[w].x * half),
                     s.cy - T(normals[w].y * half), T(0.0)};
      wall.velocity = vel;
      cols.push_back(wall);
    }

    mpm::MpmGrid<T> grid;
    grid.dims = {cfg_.grid_n, cfg_.grid_n, cfg_.grid_n};
    grid.dx = dx_;
    grid.clear();
    const double h = cfg_.dt / cfg_.substeps;
    mpm::mpm_step(s.particles, grid, materials_, cols, coupling_,
                  {0.0, 0.0, -9.81}, h, cfg_.substeps);

    s.cx = clamp(s.cx + vel.x * T(cfg_.dt), 4.0 * dx_ + half,
                 1.0 - 4.0 * dx_ - half);
    s.cy = clamp(s.cy + vel.y * T(cfg_.dt), 4.0 * dx_ + half,
                 1.0 - 4.0 * dx_ - half);

    const T ex = s.cx - T(cfg_.target_x), ey = s.cy - T(cfg_.target_y);
    const T dist = sqrt(ex * ex + ey * ey + T(1e-12));
    const T r_d = env::reward_distance_tiered(dist, 0.02, 1.0, 2.0);

    // smoothed fraction of particles outside the container footprint
    T spill(0.0);
    const double inv_n = 1.0 / static_cast<double>(s.particles.size());
    for (const auto& p : s.particles.x) {
      const T sd = max(abs(p.x - s.cx), abs(p.y - s.cy)) - T(half);
      spill += T(inv_n) / (T(1.0) + exp(-sd * T(1.0 / cfg_.spill_temp)));
    }
    return r_d - spill;
  }

  bool terminated(const State<double>&) const { return false; }

  template <typename To, typename From>
  static State<To> convert(const State<From>& s) {
    State<To> out;
    out.particles = detail::convert_particles<To, From>(s.particles);
    out.cx = To(value_of(s.cx));
    out.cy = To(value_of(s.cy));
    return out;
  }

  template <typename T, class F>
  static void visit(State<T>& s, F&& f) {
    detail::visit_particles(s.particles, f);
    f(s.cx);
    f(s.cy);
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  double dx_ = 0.05, floor_z_ = 0.15;
  std::vector<mpm::MpmMaterial> materials_;
  mpm::CouplingParams coupling_;
  mpm::MpmState<double> template_;
  std::size_t cloud_stride_ = 1;
};

}  // namespace diffsim::tasks
