#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace diffsim::detail {

inline void svd3x3_values(const double f[9], double u[9], double s[3],
                          double vt[9]) {
  Eigen::Matrix3d a;
  a << f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8];
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(a, Eigen::ComputeFullU |
                                               Eigen::ComputeFullV);
  const Eigen::Matrix3d eu = svd.matrixU();
  const Eigen::Matrix3d evt = svd.matrixV().transpose();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      u[3 * r + c] = eu(r, c);
      vt[3 * r + c] = evt(r, c);
    }
  for (int i = 0; i < 3; ++i) s[i] = svd.singularValues()(i);
}

// Reverse-mode rule for F = U diag(S) V^T. out_adj holds the cotangents of
// U (9), S (3), V^T (9) in that order. Sigma-difference denominators are
// clamped to magnitude 1e-9 so near-degenerate spectra stay finite.
inline void svd3x3_adjoint(const double u[9], const double s[3],
                           const double vt[9], const double out_adj[21],
                           double f_adj[9]) {
  Eigen::Matrix3d eu, evt, gu, gvt;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      eu(r, c) = u[3 * r + c];
      evt(r, c) = vt[3 * r + c];
      gu(r, c) = out_adj[3 * r + c];
      gvt(r, c) = out_adj[12 + 3 * r + c];
    }
  const Eigen::Vector3d sv(s[0], s[1], s[2]);
  const Eigen::Matrix3d ev = evt.transpose();
  const Eigen::Matrix3d gv = gvt.transpose();

  const Eigen::Matrix3d p = eu.transpose() * gu;
  const Eigen::Matrix3d q = ev.transpose() * gv;

  auto clamp_den = [](double d) {
    if (d >= 0.0 && d < 1e-9) return 1e-9;
    if (d < 0.0 && d > -1e-9) return -1e-9;
    return d;
  };

  Eigen::Matrix3d inner = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) inner(i, i) = out_adj[9 + i];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double fij = 1.0 / clamp_den(sv(j) * sv(j) - sv(i) * sv(i));
      inner(i, j) += fij * (p(i, j) - p(j, i)) * sv(j);
      inner(i, j) += sv(i) * fij * (q(i, j) - q(j, i));
    }
  const Eigen::Matrix3d fa = eu * inner * evt;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f_adj[3 * r + c] = fa(r, c);
}

}  // namespace diffsim::detail
