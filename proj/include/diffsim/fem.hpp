#pragma once

// Tetrahedral FEM with the stable neo-Hookean energy and per-element
// volumetric actuation.  Mesh file format: a header line "nv nt" followed by
// nv vertex lines "x y z" and nt tet lines "i j k l" (0-based indices).

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffsim/linalg.hpp"
#include "diffsim/rigid.hpp"
#include "diffsim/tape.hpp"

namespace diffsim::fem {

struct FemMaterial {
  double lambda = 1e4;
  double mu = 1e3;
  double alpha_nh = 0.0;  // 0 means "use the stress-free default"
  double k_damp = 1.0;
  double actuation_scale = 0.3;

  double alpha() const {
    return alpha_nh != 0.0 ? alpha_nh : 1.0 + 3.0 * mu / (4.0 * lambda);
  }
};

template <typename T>
struct FemMesh {
  std::vector<Vec3<T>> x;
  std::vector<Vec3<T>> v;
  std::vector<std::array<int, 4>> tets;
  std::vector<Mat3<double>> Dm_inv;
  std::vector<double> rest_volume;
  std::vector<double> particle_mass;
};

// Build rest-shape data from positions + connectivity; lumps mass per vertex.
inline FemMesh<double> make_fem_mesh(std::vector<Vec3<double>> x,
                                     std::vector<std::array<int, 4>> tets,
                                     double density) {
  FemMesh<double> mesh;
  mesh.x = std::move(x);
  mesh.v.assign(mesh.x.size(), Vec3<double>{0.0, 0.0, 0.0});
  mesh.tets = std::move(tets);
  mesh.particle_mass.assign(mesh.x.size(), 0.0);
  mesh.Dm_inv.reserve(mesh.tets.size());
  mesh.rest_volume.reserve(mesh.tets.size());
  for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
    const auto& t = mesh.tets[e];
    for (int k = 0; k < 4; ++k)
      if (t[k] < 0 || t[k] >= static_cast<int>(mesh.x.size()))
        throw std::invalid_argument("make_fem_mesh: tet index out of range");
    Mat3<double> dm;
    for (int c = 0; c < 3; ++c) {
      const Vec3<double> edge = mesh.x[t[c + 1]] - mesh.x[t[0]];
      dm(0, c) = edge.x;
      dm(1, c) = edge.y;
      dm(2, c) = edge.z;
    }
    const double vol = det(dm) / 6.0;
    if (vol <= 0.0)
      throw std::invalid_argument("make_fem_mesh: non-positive tet volume at " +
                                  std::to_string(e));
    mesh.rest_volume.push_back(vol);
    mesh.Dm_inv.push_back(inverse(dm));
    for (int k = 0; k < 4; ++k)
      mesh.particle_mass[t[k]] += density * vol / 4.0;
  }
  return mesh;
}

// Lift rest data into a tape-scalar mesh (positions/velocities become leaves
// only if the caller replaces them; here they start as constants).
template <typename T>
FemMesh<T> convert_mesh(const FemMesh<double>& src) {
  FemMesh<T> out;
  out.x.reserve(src.x.size());
  out.v.reserve(src.v.size());
  for (const auto& p : src.x) out.x.push_back({T(p.x), T(p.y), T(p.z)});
  for (const auto& p : src.v) out.v.push_back({T(p.x), T(p.y), T(p.z)});
  out.tets = src.tets;
  out.Dm_inv = src.Dm_inv;
  out.rest_volume = src.rest_volume;
  out.particle_mass = src.particle_mass;
  return out;
}

template <typename T>
Mat3<T> deformation_gradient(const FemMesh<T>& mesh, std::size_t tet_index) {
  const auto& t = mesh.tets[tet_index];
  Mat3<T> ds;
  for (int c = 0; c < 3; ++c) {
    const Vec3<T> edge = mesh.x[t[c + 1]] - mesh.x[t[0]];
    ds(0, c) = edge.x;
    ds(1, c) = edge.y;
    ds(2, c) = edge.z;
  }
  Mat3<T> dm_inv;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) dm_inv(r, c) = T(mesh.Dm_inv[tet_index](r, c));
  return ds * dm_inv;
}

template <typename T>
T neo_hookean_energy(const Mat3<T>& f, const FemMaterial& mat, T activation) {
  const T a = clamp(activation, -1.0, 1.0);
  const T alpha = T(mat.alpha()) + T(mat.actuation_scale) * a;
  T ic(0.0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) ic += f(r, c) * f(r, c);
  const T j = det(f);
  return T(0.5 * mat.mu) * (ic - T(3.0)) +
         T(0.5 * mat.lambda) * (j - alpha) * (j - alpha) -
         T(0.5 * mat.mu) * log(ic + T(1.0));
}

// First Piola-Kirchhoff stress dPsi/dF for the energy above.
template <typename T>
Mat3<T> neo_hookean_stress(const Mat3<T>& f, const FemMaterial& mat,
                           T activation) {
  const T a = clamp(activation, -1.0, 1.0);
  const T alpha = T(mat.alpha()) + T(mat.actuation_scale) * a;
  T ic(0.0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) ic += f(r, c) * f(r, c);
  const T j = det(f);
  const T mu_term = T(mat.mu) * (T(1.0) - T(1.0) / (ic + T(1.0)));
  const Mat3<T> cof = cofactor(f);
  Mat3<T> p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      p(r, c) = mu_term * f(r, c) +
                  T(mat.lambda) * (j - alpha) * cof(r, c);
  return p;
}

// Elastic + strain-rate damping forces; internal forces sum to zero exactly.
template <typename T>
std::vector<Vec3<T>> elastic_forces(const FemMesh<T>& mesh,
                                    const FemMaterial& mat,
                                    const std::vector<T>& activations) {
  if (!activations.empty() && activations.size() != mesh.tets.size())
    throw std::invalid_argument("elastic_forces: activation count mismatch");
  const Vec3<T> zero{T(0.0), T(0.0), T(0.0)};
  std::vector<Vec3<T>> f(mesh.x.size(), zero);
  for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
    const auto& t = mesh.tets[e];
    const Mat3<T> def = deformation_gradient(mesh, e);
    const T act = activations.empty() ? T(0.0) : activations[e];
    Mat3<T> p = neo_hookean_stress(def, mat, act);
    if (mat.k_damp > 0.0) {
      // F-dot from vertex velocities gives a simple strain-rate stress
      Mat3<T> dvs;
      for (int c = 0; c < 3; ++c) {
        const Vec3<T> edge = mesh.v[t[c + 1]] - mesh.v[t[0]];
        dvs(0, c) = edge.x;
        dvs(1, c) = edge.y;
        dvs(2, c) = edge.z;
      }
      Mat3<T> dm_inv;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) dm_inv(r, c) = T(mesh.Dm_inv[e](r, c));
      const Mat3<T> fdot = dvs * dm_inv;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          p(r, c) += T(mat.k_damp) * fdot(r, c);
    }
    // H = -V0 * P * Dm_inv^T holds the forces on vertices 1..3
    const double v0 = mesh.rest_volume[e];
    for (int k = 1; k < 4; ++k) {
      Vec3<T> fk = zero;
      for (int r = 0; r < 3; ++r) {
        T acc(0.0);
        for (int c = 0; c < 3; ++c)
          acc += p(r, c) * T(mesh.Dm_inv[e](k - 1, c));
        fk[r] = T(-v0) * acc;
      }
      f[t[k]] += fk;
      f[t[0]] -= fk;
    }
  }
  return f;
}

template <typename T>
void fem_step(FemMesh<T>& mesh, const FemMaterial& mat,
              const std::vector<T>& activations, const Vec3<double>& gravity,
              const rigid::ContactParams& contact, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("fem_step: dt must be positive");
  for (std::size_t i = 0; i < mesh.x.size(); ++i)
    for (int k = 0; k < 3; ++k)
      if (std::isnan(value_of(mesh.x[i][k])) ||
          std::isnan(value_of(mesh.v[i][k])))
        throw std::runtime_error("fem_step: NaN state at particle " +
                                 std::to_string(i));
  auto forces = elastic_forces(mesh, mat, activations);
  for (std::size_t i = 0; i < mesh.x.size(); ++i) {
    const Vec3<T> fc =
        rigid::ground_contact_force(mesh.x[i], mesh.v[i], contact);
    const double inv_m = 1.0 / mesh.particle_mass[i];
    for (int k = 0; k < 3; ++k) {
      mesh.v[i][k] += T(dt) * ((forces[i][k] + fc[k]) * T(inv_m) +
                               T(gravity[k]));
      mesh.x[i][k] += T(dt) * mesh.v[i][k];
    }
    for (int k = 0; k < 3; ++k)
      if (std::isnan(value_of(mesh.x[i][k])) ||
          std::isnan(value_of(mesh.v[i][k])))
        throw std::runtime_error("fem_step: NaN state at particle " +
                                 std::to_string(i));
  }
}

// ---- mesh generation and I/O ----

// Axis-aligned box [org, org+size] split into nx*ny*nz cells of 5 tets each.
inline FemMesh<double> make_box_mesh(const Vec3<double>& org,
                                     const Vec3<double>& size, int nx, int ny,
                                     int nz, double density) {
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::invalid_argument("make_box_mesh: resolution must be >= 1");
  std::vector<Vec3<double>> verts;
  auto vid = [&](int i, int j, int k) {
    return (i * (ny + 1) + j) * (nz + 1) + k;
  };
  for (int i = 0; i <= nx; ++i)
    for (int j = 0; j <= ny; ++j)
      for (int k = 0; k <= nz; ++k)
        verts.push_back({org.x + size.x * i / nx, org.y + size.y * j / ny,
                         org.z + size.z * k / nz});
  std::vector<std::array<int, 4>> tets;
  // 5-tet decomposition, mirrored on odd cells so faces are compatible
  static const int even[5][4] = {
      {0, 1, 2, 4}, {1, 2, 3, 7}, {1, 4, 5, 7}, {2, 4, 6, 7}, {1, 2, 4, 7}};
  static const int odd[5][4] = {
      {0, 1, 3, 5}, {0, 2, 3, 6}, {0, 4, 5, 6}, {3, 5, 6, 7}, {0, 3, 5, 6}};
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k) {
        int c[8];
        for (int b = 0; b < 8; ++b)
          c[b] = vid(i + (b >> 2 & 1), j + (b >> 1 & 1), k + (b & 1));
        const auto& pat = ((i + j + k) & 1) ? odd : even;
        for (int t = 0; t < 5; ++t) {
          std::array<int, 4> tet{c[pat[t][0]], c[pat[t][1]], c[pat[t][2]],
                                 c[pat[t][3]]};
          // orient for positive volume
          Mat3<double> dm;
          for (int col = 0; col < 3; ++col) {
            const Vec3<double> e = verts[tet[col + 1]] - verts[tet[0]];
            dm(0, col) = e.x;
            dm(1, col) = e.y;
            dm(2, col) = e.z;
          }
          if (det(dm) < 0.0) std::swap(tet[2], tet[3]);
          tets.push_back(tet);
        }
      }
  return make_fem_mesh(std::move(verts), std::move(tets), density);
}

// Box body with four box legs; origin at ground level under the body center.
inline FemMesh<double> make_quadruped_mesh(double body_len, double body_wid,
                                           double body_hei, double leg_size,
                                           double leg_hei, int res,
                                           double density) {
  std::vector<Vec3<double>> verts;
  std::vector<std::array<int, 4>> tets;
  auto append = [&](const FemMesh<double>& part) {
    const int base = static_cast<int>(verts.size());
    verts.insert(verts.end(), part.x.begin(), part.x.end());
    for (auto t : part.tets) {
      for (auto& idx : t) idx += base;
      tets.push_back(t);
    }
  };
  append(make_box_mesh({-body_len / 2, -body_wid / 2, leg_hei},
                       {body_len, body_wid, body_hei}, 2 * res, res, res,
                       density));
  for (int sx : {-1, 1})
    for (int sy : {-1, 1}) {
      const double cx = sx * (body_len / 2 - leg_size / 2) - leg_size / 2 +
                        (sx < 0 ? leg_size : 0.0);
      const double cy = sy * (body_wid / 2 - leg_size / 2) - leg_size / 2 +
                        (sy < 0 ? leg_size : 0.0);
      append(make_box_mesh({cx, cy, 0.0}, {leg_size, leg_size, leg_hei}, res,
                           res, res, density));
    }
  return make_fem_mesh(std::move(verts), std::move(tets), density);
}

inline void save_mesh(const FemMesh<double>& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mesh: cannot open " + path);
  out << mesh.x.size() << " " << mesh.tets.size() << "\n";
  out.precision(17);
  for (const auto& p : mesh.x) out << p.x << " " << p.y << " " << p.z << "\n";
  for (const auto& t : mesh.tets)
    out << t[0] << " " << t[1] << " " << t[2] << " " << t[3] << "\n";
}

inline FemMesh<double> load_mesh(const std::string& path, double density) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mesh: cannot open " + path);
  std::size_t nv = 0, nt = 0;
  if (!(in >> nv >> nt))
    throw std::runtime_error("load_mesh: bad header in " + path);
  std::vector<Vec3<double>> verts(nv);
  for (auto& p : verts)
    if (!(in >> p.x >> p.y >> p.z))
      throw std::runtime_error("load_mesh: truncated vertex data in " + path);
  std::vector<std::array<int, 4>> tets(nt);
  for (auto& t : tets)
    if (!(in >> t[0] >> t[1] >> t[2] >> t[3]))
      throw std::runtime_error("load_mesh: truncated tet data in " + path);
  return make_fem_mesh(std::move(verts), std::move(tets), density);
}

}  // namespace diffsim::fem
