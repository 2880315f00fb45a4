#pragma once

// Batched MLS-MPM with quadratic B-spline transfers (APIC), von Mises
// elastoplasticity, weakly compressible fluid, and one-way kinematic
// collider coupling via a smoothed collision strength.

#include <array>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diffsim/linalg.hpp"
#include "diffsim/tape.hpp"

namespace diffsim::mpm {

enum class MaterialKind { kElastoplastic, kFluid };

struct MpmMaterial {
  double density = 1000.0;
  double youngs = 1e5;
  double poisson = 0.3;
  double yield_stress = 1e3;  // elastoplastic only
  MaterialKind kind = MaterialKind::kElastoplastic;
  // the return-mapping yield constant; false: sigma_y / (2 mu),
  // true: sigma_y / mu
  bool wide_yield = false;

  double lame_lambda() const {
    return youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  }
  double lame_mu() const { return youngs / (2.0 * (1.0 + poisson)); }
  double yield_threshold() const {
    const double mu = lame_mu();
    return wide_yield ? yield_stress / mu : yield_stress / (2.0 * mu);
  }
};

template <typename T>
struct MpmState {
  std::vector<Vec3<T>> x;
  std::vector<Vec3<T>> v;
  std::vector<Mat3<T>> F;
  std::vector<Mat3<T>> C;
  std::vector<double> mass;
  std::vector<double> volume0;
  std::vector<int> material_id;

  std::size_t size() const { return x.size(); }
};

template <typename T>
struct MpmGrid {
  std::array<int, 3> dims{32, 32, 32};
  double dx = 1.0 / 32.0;
  std::vector<Vec3<T>> momentum;
  std::vector<T> mass;
  std::vector<Vec3<T>> vel;  // filled by grid_update

  int node_count() const { return dims[0] * dims[1] * dims[2]; }
  int node_index(int i, int j, int k) const {
    return (i * dims[1] + j) * dims[2] + k;
  }
  void clear() {
    momentum.assign(node_count(), Vec3<T>{T(0.0), T(0.0), T(0.0)});
    mass.assign(node_count(), T(0.0));
    vel.assign(node_count(), Vec3<T>{T(0.0), T(0.0), T(0.0)});
  }
};

// Kinematic rigid collider: analytic SDF plus a translational velocity.
template <typename T>
struct SdfCollider {
  enum class Kind { kPlane, kSphere, kBox };
  Kind kind = Kind::kPlane;
  Vec3<T> center{T(0.0), T(0.0), T(0.0)};  // point on plane / center
  Vec3<double> normal{0.0, 0.0, 1.0};      // plane only (unit)
  double radius = 0.1;                     // sphere only
  Vec3<double> half{0.1, 0.1, 0.1};        // box only
  Vec3<T> velocity{T(0.0), T(0.0), T(0.0)};

  // signed distance and outward normal at p
  std::pair<T, Vec3<T>> query(const Vec3<T>& p) const {
    const Vec3<T> rel = p - center;
    switch (kind) {
      case Kind::kPlane: {
        const Vec3<T> n{T(normal.x), T(normal.y), T(normal.z)};
        return {dot(rel, n), n};
      }
      case Kind::kSphere: {
        const T r = sqrt(dot(rel, rel) + T(1e-18));
        return {r - T(radius), rel * (T(1.0) / r)};
      }
      case Kind::kBox: {
        // exact outside, interior-face distance inside; normal from the
        // dominant axis (gradient-blocked axis selection)
        const T qx = abs(rel.x) - T(half.x);
        const T qy = abs(rel.y) - T(half.y);
        const T qz = abs(rel.z) - T(half.z);
        const T ox = max(qx, T(0.0)), oy = max(qy, T(0.0)),
                oz = max(qz, T(0.0));
        const T outside = sqrt(ox * ox + oy * oy + oz * oz + T(1e-18));
        const T inside = min(max(qx, max(qy, qz)), T(0.0));
        const bool is_out = value_of(qx) > 0.0 || value_of(qy) > 0.0 ||
                            value_of(qz) > 0.0;
        const T d = where(is_out, outside - T(1e-9), inside);
        Vec3<T> n{T(0.0), T(0.0), T(0.0)};
        if (is_out) {
          n = {ox / outside, oy / outside, oz / outside};
        } else {
          const double ax = value_of(qx), ay = value_of(qy),
                       az = value_of(qz);
          if (ax >= ay && ax >= az)
            n.x = T(1.0);
          else if (ay >= az)
            n.y = T(1.0);
          else
            n.z = T(1.0);
        }
        if (value_of(rel.x) < 0.0) n.x = -n.x;
        if (value_of(rel.y) < 0.0) n.y = -n.y;
        if (value_of(rel.z) < 0.0) n.z = -n.z;
        return {d, n};
      }
    }
    return {T(0.0), Vec3<T>{T(0.0), T(0.0), T(1.0)}};
  }
};

struct CouplingParams {
  double alpha_c = 100.0;  // collision strength sharpness (1/m)
  double mu_b = 0.0;       // collider friction
};

namespace detail {

// quadratic B-spline weights for fx in [0.5, 1.5) relative to base node
template <typename T>
std::array<T, 3> bspline_weights(const T& fx) {
  return {T(0.5) * (T(1.5) - fx) * (T(1.5) - fx),
          T(0.75) - (fx - T(1.0)) * (fx - T(1.0)),
          T(0.5) * (fx - T(0.5)) * (fx - T(0.5))};
}

template <typename T>
void stencil_base(const MpmGrid<T>& grid, const Vec3<T>& x, std::size_t p,
                  std::array<int, 3>& base, Vec3<T>& fx) {
  for (int a = 0; a < 3; ++a) {
    const double gx = value_of(x[a]) / grid.dx;
    base[a] = static_cast<int>(std::floor(gx - 0.5));
    if (base[a] < 1 || base[a] + 2 > grid.dims[a] - 2)
      throw std::runtime_error(
          "mpm: particle " + std::to_string(p) +
          " outside grid interior (axis " + std::to_string(a) + ")");
    fx[a] = x[a] * T(1.0 / grid.dx) - T(static_cast<double>(base[a]));
  }
}

}  // namespace detail

template <typename T>
std::pair<Mat3<T>, Mat3<T>> stress_elastoplastic(const Mat3<T>& f,
                                                 const MpmMaterial& mat) {
  if (value_of(det(f)) <= 0.0)
    throw std::runtime_error("stress_elastoplastic: det(F) <= 0");
  Mat3<T> u, vt;
  Vec3<T> sig;
  svd3(f, u, sig, vt);
  Vec3<T> eps{log(sig.x), log(sig.y), log(sig.z)};
  const T tr = eps.x + eps.y + eps.z;
  const Vec3<T> dev = eps - Vec3<T>{tr * T(1.0 / 3.0), tr * T(1.0 / 3.0),
                                    tr * T(1.0 / 3.0)};
  const T dev_norm = sqrt(dot(dev, dev) + T(1e-30));
  const double c_y = mat.yield_threshold();
  const T dgamma = dev_norm - T(c_y);

  Mat3<T> f_proj = f;
  if (value_of(dgamma) > 0.0) {
    const T s = dgamma / dev_norm;
    eps = eps - dev * s;
    const Vec3<T> sig_new{exp(eps.x), exp(eps.y), exp(eps.z)};
    f_proj = u * Mat3<T>::diag(sig_new.x, sig_new.y, sig_new.z) * vt;
    sig = sig_new;
  }
  // first Piola from the Hencky-strain law; P F^T gives the Kirchhoff form
  // U (2 mu eps + lambda tr(eps)) U^T
  const double mu = mat.lame_mu(), lam = mat.lame_lambda();
  const T tr2 = eps.x + eps.y + eps.z;
  Vec3<T> ps{(T(2.0 * mu) * eps.x + T(lam) * tr2) / sig.x,
             (T(2.0 * mu) * eps.y + T(lam) * tr2) / sig.y,
             (T(2.0 * mu) * eps.z + T(lam) * tr2) / sig.z};
  const Mat3<T> p = u * Mat3<T>::diag(ps.x, ps.y, ps.z) * vt;
  return {p, f_proj};
}

template <typename T>
std::pair<Mat3<T>, Mat3<T>> stress_fluid(const Mat3<T>& f,
                                         const MpmMaterial& mat) {
  const T j = det(f);
  if (value_of(j) <= 0.0)
    throw std::runtime_error("stress_fluid: det(F) <= 0");
  // P = lambda J (J - 1) F^{-T} = lambda (J - 1) cof(F)
  const Mat3<T> p = cofactor(f) * (T(mat.lame_lambda()) * (j - T(1.0)));
  const T s = exp(log(j) * T(1.0 / 3.0));
  return {p, Mat3<T>::diag(s, s, s)};
}

template <typename T>
std::pair<Mat3<T>, Mat3<T>> material_stress(const Mat3<T>& f,
                                            const MpmMaterial& mat) {
  return mat.kind == MaterialKind::kFluid ? stress_fluid(f, mat)
                                          : stress_elastoplastic(f, mat);
}

template <typename T>
void p2g(const MpmState<T>& state, MpmGrid<T>& grid,
         const std::vector<MpmMaterial>& materials, double dt) {
  grid.clear();
  const double inv_dx = 1.0 / grid.dx;
  for (std::size_t p = 0; p < state.size(); ++p) {
    std::array<int, 3> base;
    Vec3<T> fx;
    detail::stencil_base(grid, state.x[p], p, base, fx);
    const auto wx = detail::bspline_weights(fx.x);
    const auto wy = detail::bspline_weights(fx.y);
    const auto wz = detail::bspline_weights(fx.z);

    const auto& mat = materials.at(state.material_id[p]);
    const auto [stress, f_proj] = material_stress(state.F[p], mat);
    (void)f_proj;
    // MLS-MPM fused momentum contribution
    const Mat3<T> affine =
        stress * state.F[p].transposed() *
            T(-dt * state.volume0[p] * 4.0 * inv_dx * inv_dx) +
        state.C[p] * T(state.mass[p]);

    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const T w = wx[i] * wy[j] * wz[k];
          const Vec3<T> dpos{(T(static_cast<double>(i)) - fx.x) * T(grid.dx),
                             (T(static_cast<double>(j)) - fx.y) * T(grid.dx),
                             (T(static_cast<double>(k)) - fx.z) * T(grid.dx)};
          const int n = grid.node_index(base[0] + i, base[1] + j, base[2] + k);
          grid.mass[n] += w * T(state.mass[p]);
          grid.momentum[n] +=
              (state.v[p] * T(state.mass[p]) + affine * dpos) * w;
        }
  }
}

template <typename T>
void grid_update(MpmGrid<T>& grid, const Vec3<double>& gravity,
                 const std::vector<SdfCollider<T>>& colliders,
                 const CouplingParams& coupling, double dt) {
  const int bound = 3;
  for (int i = 0; i < grid.dims[0]; ++i)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int k = 0; k < grid.dims[2]; ++k) {
        const int n = grid.node_index(i, j, k);
        if (value_of(grid.mass[n]) <= 0.0) {
          grid.vel[n] = Vec3<T>{T(0.0), T(0.0), T(0.0)};
          continue;
        }
        Vec3<T> v = grid.momentum[n] * (T(1.0) / grid.mass[n]);
        v.x += T(dt * gravity.x);
        v.y += T(dt * gravity.y);
        v.z += T(dt * gravity.z);

        const Vec3<T> node{T(i * grid.dx), T(j * grid.dx), T(k * grid.dx)};
        for (const auto& col : colliders) {
          auto [d, nrm] = col.query(node);
          const T s = where(value_of(d) < 0.0, T(1.0),
                            exp(-T(coupling.alpha_c) * max(d, T(0.0))));
          Vec3<T> rel = v - col.velocity;
          const T vn = dot(rel, nrm);
          // admissible set: no approach along the normal; Coulomb-style
          // tangential damping proportional to the removed normal speed
          Vec3<T> tang = rel - nrm * vn;
          const T tnorm = sqrt(dot(tang, tang) + T(1e-18));
          const T keep =
              max(T(1.0) - T(coupling.mu_b) * max(-vn, T(0.0)) / tnorm,
                  T(0.0));
          const Vec3<T> proj_rel = tang * keep + nrm * max(vn, T(0.0));
          const Vec3<T> v_proj = col.velocity + proj_rel;
          const bool approaching = value_of(vn) < 0.0;
          for (int a = 0; a < 3; ++a)
            v[a] = where(approaching, v[a] * (T(1.0) - s) + v_proj[a] * s,
                         v[a]);
        }

        // domain boundary: zero the outward normal component
        if (i < bound && value_of(v.x) < 0.0) v.x = T(0.0);
        if (i >= grid.dims[0] - bound && value_of(v.x) > 0.0) v.x = T(0.0);
        if (j < bound && value_of(v.y) < 0.0) v.y = T(0.0);
        if (j >= grid.dims[1] - bound && value_of(v.y) > 0.0) v.y = T(0.0);
        if (k < bound && value_of(v.z) < 0.0) v.z = T(0.0);
        if (k >= grid.dims[2] - bound && value_of(v.z) > 0.0) v.z = T(0.0);
        grid.vel[n] = v;
      }
}

template <typename T>
void g2p(MpmState<T>& state, const MpmGrid<T>& grid,
         const std::vector<MpmMaterial>& materials, double dt) {
  const double inv_dx = 1.0 / grid.dx;
  for (std::size_t p = 0; p < state.size(); ++p) {
    std::array<int, 3> base;
    Vec3<T> fx;
    detail::stencil_base(grid, state.x[p], p, base, fx);
    const auto wx = detail::bspline_weights(fx.x);
    const auto wy = detail::bspline_weights(fx.y);
    const auto wz = detail::bspline_weights(fx.z);

    Vec3<T> v{T(0.0), T(0.0), T(0.0)};
    Mat3<T> b;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const T w = wx[i] * wy[j] * wz[k];
          const Vec3<T> dpos{(T(static_cast<double>(i)) - fx.x) * T(grid.dx),
                             (T(static_cast<double>(j)) - fx.y) * T(grid.dx),
                             (T(static_cast<double>(k)) - fx.z) * T(grid.dx)};
          const int n = grid.node_index(base[0] + i, base[1] + j, base[2] + k);
          v += grid.vel[n] * w;
          b += outer(grid.vel[n] * w, dpos);
        }
    state.v[p] = v;
    state.C[p] = b * T(4.0 * inv_dx * inv_dx);
    for (int a = 0; a < 3; ++a) state.x[p][a] += T(dt) * v[a];
    for (int a = 0; a < 3; ++a) {
      const double gx = value_of(state.x[p][a]) / grid.dx;
      if (gx < 1.5 || gx > grid.dims[a] - 2.5)
        throw std::runtime_error("g2p: particle " + std::to_string(p) +
                                 " advected outside grid interior");
    }
    const Mat3<T> fnew =
        (Mat3<T>::identity() + state.C[p] * T(dt)) * state.F[p];
    state.F[p] = material_stress(fnew, materials.at(state.material_id[p]))
                     .second;
  }
}

template <typename T>
void mpm_step(MpmState<T>& state, MpmGrid<T>& grid,
              const std::vector<MpmMaterial>& materials,
              const std::vector<SdfCollider<T>>& colliders,
              const CouplingParams& coupling, const Vec3<double>& gravity,
              double dt, int substeps) {
  if (substeps < 1) throw std::invalid_argument("mpm_step: substeps < 1");
  double vmax = 0.0;
  for (const auto& v : state.v)
    for (int a = 0; a < 3; ++a)
      vmax = std::max(vmax, std::fabs(value_of(v[a])));
  if (vmax * dt >= grid.dx)
    std::cerr << "mpm_step: CFL violated (max|v| dt = " << vmax * dt
              << " >= dx = " << grid.dx << ")\n";
  for (int s = 0; s < substeps; ++s) {
    p2g(state, grid, materials, dt);
    grid_update(grid, gravity, colliders, coupling, dt);
    g2p(state, grid, materials, dt);
  }
}

// ---- particle samplers ----

// Regular lattice filling an axis-aligned box, ppc particles per cell side
// spacing dx / cbrt(ppc).
inline MpmState<double> sample_box(const Vec3<double>& org,
                                   const Vec3<double>& size, double dx,
                                   int ppc, const MpmMaterial& mat,
                                   int material_id) {
  const double h = dx / std::cbrt(static_cast<double>(ppc));
  MpmState<double> st;
  const int nx = std::max(1, static_cast<int>(std::round(size.x / h)));
  const int ny = std::max(1, static_cast<int>(std::round(size.y / h)));
  const int nz = std::max(1, static_cast<int>(std::round(size.z / h)));
  const double vol = (size.x / nx) * (size.y / ny) * (size.z / nz);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k) {
        st.x.push_back({org.x + size.x * (i + 0.5) / nx,
                        org.y + size.y * (j + 0.5) / ny,
                        org.z + size.z * (k + 0.5) / nz});
        st.v.push_back({0.0, 0.0, 0.0});
        st.F.push_back(Mat3<double>::identity());
        st.C.push_back(Mat3<double>{});
        st.mass.push_back(mat.density * vol);
        st.volume0.push_back(vol);
        st.material_id.push_back(material_id);
      }
  return st;
}

// Lattice clipped to a z-axis-aligned cylinder.
inline MpmState<double> sample_cylinder(const Vec3<double>& base_center,
                                        double radius, double height,
                                        double dx, int ppc,
                                        const MpmMaterial& mat,
                                        int material_id) {
  auto box = sample_box({base_center.x - radius, base_center.y - radius,
                         base_center.z},
                        {2.0 * radius, 2.0 * radius, height}, dx, ppc, mat,
                        material_id);
  MpmState<double> st;
  for (std::size_t p = 0; p < box.size(); ++p) {
    const double rx = box.x[p].x - base_center.x;
    const double ry = box.x[p].y - base_center.y;
    if (rx * rx + ry * ry > radius * radius) continue;
    st.x.push_back(box.x[p]);
    st.v.push_back(box.v[p]);
    st.F.push_back(box.F[p]);
    st.C.push_back(box.C[p]);
    st.mass.push_back(box.mass[p]);
    st.volume0.push_back(box.volume0[p]);
    st.material_id.push_back(box.material_id[p]);
  }
  return st;
}

template <typename T>
MpmState<T> convert_state(const MpmState<double>& src) {
  MpmState<T> out;
  for (const auto& p : src.x) out.x.push_back({T(p.x), T(p.y), T(p.z)});
  for (const auto& p : src.v) out.v.push_back({T(p.x), T(p.y), T(p.z)});
  for (const auto& f : src.F) {
    Mat3<T> m;
    for (int i = 0; i < 9; ++i) m.m[i] = T(f.m[i]);
    out.F.push_back(m);
  }
  for (const auto& c : src.C) {
    Mat3<T> m;
    for (int i = 0; i < 9; ++i) m.m[i] = T(c.m[i]);
    out.C.push_back(m);
  }
  out.mass = src.mass;
  out.volume0 = src.volume0;
  out.material_id = src.material_id;
  return out;
}

}  // namespace diffsim::mpm
