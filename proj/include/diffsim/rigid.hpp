#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffsim/linalg.hpp"
#include "diffsim/tape.hpp"

namespace diffsim::rigid {

enum class JointType { kRevolute, kFree };

struct LinkSpec {
  double mass = 1.0;
  Mat3<double> inertia = Mat3<double>::identity();  // about CoM, link frame
  Vec3<double> com{0.0, 0.0, 0.0};                  // CoM offset in link frame
  std::vector<Vec3<double>> contact_points;         // link-frame points
};

struct JointSpec {
  JointType type = JointType::kRevolute;
  int parent = -1;                         // -1 attaches to the world
  Vec3<double> axis{0.0, 1.0, 0.0};        // revolute axis, parent frame
  Vec3<double> origin{0.0, 0.0, 0.0};      // joint frame origin, parent frame
  Mat3<double> rot = Mat3<double>::identity();  // joint frame rotation
};

// Joint tree; link i is the child of joint i, parents precede children.
struct ArticulationModel {
  std::vector<LinkSpec> links;
  std::vector<JointSpec> joints;
  std::vector<double> torque_limits;  // per dof; empty = unlimited

  int dof() const {
    int n = 0;
    for (const auto& j : joints) n += j.type == JointType::kFree ? 6 : 1;
    return n;
  }

  void validate() const {
    if (links.size() != joints.size())
      throw std::invalid_argument("articulation: links/joints size mismatch");
    for (std::size_t i = 0; i < joints.size(); ++i) {
      if (joints[i].parent >= static_cast<int>(i))
        throw std::invalid_argument(
            "articulation: joint graph must be a parent-before-child tree");
      if (links[i].mass <= 0.0)
        throw std::invalid_argument("articulation: link mass must be > 0");
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          if (links[i].inertia(r, c) != links[i].inertia(c, r))
            throw std::invalid_argument("articulation: inertia not symmetric");
    }
  }
};

template <class T>
struct RigidState {
  std::vector<T> q;
  std::vector<T> qd;
};

struct ContactParams {
  double k_n = 1e4;   // normal stiffness
  double k_d = 10.0;  // normal damping
  double mu_f = 0.9;  // friction coefficient
  double v_s = 0.1;   // friction smoothing velocity
};

namespace detail {

template <class T>
Mat3<T> axis_angle(const Vec3<T>& axis, const T& angle) {
  const T c = cos(angle), s = sin(angle);
  const T omc = T(1.0) - c;
  Mat3<T> r;
  r(0, 0) = c + axis.x * axis.x * omc;
  r(0, 1) = axis.x * axis.y * omc - axis.z * s;
  r(0, 2) = axis.x * axis.z * omc + axis.y * s;
  r(1, 0) = axis.y * axis.x * omc + axis.z * s;
  r(1, 1) = c + axis.y * axis.y * omc;
  r(1, 2) = axis.y * axis.z * omc - axis.x * s;
  r(2, 0) = axis.z * axis.x * omc - axis.y * s;
  r(2, 1) = axis.z * axis.y * omc + axis.x * s;
  r(2, 2) = c + axis.z * axis.z * omc;
  return r;
}

template <class T>
Mat3<T> to_t(const Mat3<double>& m) {
  Mat3<T> out;
  for (int i = 0; i < 9; ++i) out.m[i] = T(m.m[i]);
  return out;
}

template <class T>
Vec3<T> to_t(const Vec3<double>& v) {
  return {T(v.x), T(v.y), T(v.z)};
}

// World-frame kinematics plus per-dof motion axes.
template <class T>
struct Kinematics {
  struct Dof {
    Vec3<T> axis;    // angular part (zero for translational dofs)
    Vec3<T> lin;     // translational part (zero for revolute dofs)
    Vec3<T> origin;  // world point on the joint axis
    int joint = 0;
  };
  std::vector<Mat3<T>> link_rot;    // world rotation per link
  std::vector<Vec3<T>> link_com;    // world CoM per link
  std::vector<Vec3<T>> joint_org;   // world joint origin per link
  std::vector<Dof> dofs;
  std::vector<int> dof_start;       // first dof index per joint
  std::vector<int> dof_count;
};

template <class T>
Kinematics<T> forward_kinematics(const ArticulationModel& model,
                                 const std::vector<T>& q) {
  const std::size_t n = model.joints.size();
  Kinematics<T> k;
  k.link_rot.resize(n);
  k.link_com.resize(n);
  k.joint_org.resize(n);
  k.dof_start.resize(n);
  k.dof_count.resize(n);
  int qi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const JointSpec& j = model.joints[i];
    Mat3<T> parent_rot = Mat3<T>::identity();
    Vec3<T> parent_pos{T(0.0), T(0.0), T(0.0)};
    if (j.parent >= 0) {
      parent_rot = k.link_rot[j.parent];
      // link origin is its joint origin
      parent_pos = k.joint_org[j.parent];
    }
    const Mat3<T> frame_rot = parent_rot * to_t<T>(j.rot);
    const Vec3<T> frame_org = parent_pos + parent_rot * to_t<T>(j.origin);
    k.dof_start[i] = qi;
    if (j.type == JointType::kRevolute) {
      k.dof_count[i] = 1;
      const Vec3<T> axis_w = frame_rot * to_t<T>(j.axis);
      k.link_rot[i] = frame_rot * axis_angle(to_t<T>(j.axis), q[qi]);
      k.joint_org[i] = frame_org;
      k.dofs.push_back({axis_w, {T(0.0), T(0.0), T(0.0)}, frame_org,
                        static_cast<int>(i)});
      qi += 1;
    } else {
      k.dof_count[i] = 6;
      // q = (x, y, z, roll, pitch, yaw); R = Rz(yaw) Ry(pitch) Rx(roll)
      const Vec3<T> trans{q[qi], q[qi + 1], q[qi + 2]};
      const Mat3<T> rz =
          axis_angle(Vec3<T>{T(0.0), T(0.0), T(1.0)}, q[qi + 5]);
      const Mat3<T> ry =
          axis_angle(Vec3<T>{T(0.0), T(1.0), T(0.0)}, q[qi + 4]);
      const Mat3<T> rx =
          axis_angle(Vec3<T>{T(1.0), T(0.0), T(0.0)}, q[qi + 3]);
      k.link_rot[i] = frame_rot * (rz * (ry * rx));
      k.joint_org[i] = frame_org + frame_rot * trans;
      for (int a = 0; a < 3; ++a) {
        Vec3<T> dir{T(a == 0 ? 1.0 : 0.0), T(a == 1 ? 1.0 : 0.0),
                    T(a == 2 ? 1.0 : 0.0)};
        k.dofs.push_back({{T(0.0), T(0.0), T(0.0)}, frame_rot * dir,
                          k.joint_org[i], static_cast<int>(i)});
      }
      const Vec3<T> e_yaw = frame_rot * Vec3<T>{T(0.0), T(0.0), T(1.0)};
      const Vec3<T> e_pitch =
          (frame_rot * rz) * Vec3<T>{T(0.0), T(1.0), T(0.0)};
      const Vec3<T> e_roll =
          (frame_rot * (rz * ry)) * Vec3<T>{T(1.0), T(0.0), T(0.0)};
      // dof order matches q: roll, pitch, yaw
      k.dofs.push_back({e_roll, {T(0.0), T(0.0), T(0.0)}, k.joint_org[i],
                        static_cast<int>(i)});
      k.dofs.push_back({e_pitch, {T(0.0), T(0.0), T(0.0)}, k.joint_org[i],
                        static_cast<int>(i)});
      k.dofs.push_back({e_yaw, {T(0.0), T(0.0), T(0.0)}, k.joint_org[i],
                        static_cast<int>(i)});
      qi += 6;
    }
    k.link_com[i] = k.joint_org[i] + k.link_rot[i] * to_t<T>(model.links[i].com);
  }
  return k;
}

}  // namespace detail

// Joint-space mass matrix by composite rigid body accumulation over the
// tree, assembled in world coordinates. Output is exactly symmetric.
template <class T>
std::vector<std::vector<T>> crba_mass_matrix(const ArticulationModel& model,
                                             const std::vector<T>& q) {
  model.validate();
  const int nd = model.dof();
  if (static_cast<int>(q.size()) != nd)
    throw std::invalid_argument("crba_mass_matrix: q size mismatch");
  auto kin = detail::forward_kinematics(model, q);
  const std::size_t n = model.joints.size();

  // Composite inertia per subtree about the world origin: (mass, h = m*c,
  // I_o), accumulated child to parent.
  std::vector<T> cmass(n, T(0.0));
  std::vector<Vec3<T>> ch(n, Vec3<T>{T(0.0), T(0.0), T(0.0)});
  std::vector<Mat3<T>> cinertia(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = model.links[i].mass;
    const Vec3<T>& c = kin.link_com[i];
    const Mat3<T> r = kin.link_rot[i];
    const Mat3<T> iw =
        r * (detail::to_t<T>(model.links[i].inertia) * r.transposed());
    Mat3<T> io = iw;
    const T c2 = dot(c, c);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        io(a, b) += T(m) * ((a == b ? c2 : T(0.0)) - c[a] * c[b]);
    cmass[i] = T(m);
    ch[i] = c * T(m);
    cinertia[i] = io;
  }
  for (int i = static_cast<int>(n) - 1; i >= 0; --i) {
    const int p = model.joints[i].parent;
    if (p >= 0) {
      cmass[p] += cmass[i];
      ch[p] += ch[i];
      cinertia[p] += cinertia[i];
    }
  }

  std::vector<std::vector<T>> mass(nd, std::vector<T>(nd, T(0.0)));
  for (std::size_t j = 0; j < n; ++j) {
    for (int a = 0; a < kin.dof_count[j]; ++a) {
      const int da = kin.dof_start[j] + a;
      const auto& sa = kin.dofs[da];
      // spatial velocity about world origin
      const Vec3<T> v0a = sa.lin + cross(sa.axis, -sa.origin);
      // composite momentum of subtree j under unit motion of dof da
      const Vec3<T> lin_mom = v0a * cmass[j] + cross(sa.axis, ch[j]);
      const Vec3<T> ang_mom = cinertia[j] * sa.axis + cross(ch[j], v0a);
      // pair against every dof on the path from j to the root
      for (int anc = static_cast<int>(j); anc >= 0;
           anc = model.joints[anc].parent) {
        for (int b = 0; b < kin.dof_count[anc]; ++b) {
          const int db = kin.dof_start[anc] + b;
          if (db > da) continue;
          const auto& sb = kin.dofs[db];
          const Vec3<T> v0b = sb.lin + cross(sb.axis, -sb.origin);
          const T mab = dot(sb.axis, ang_mom) + dot(v0b, lin_mom);
          mass[da][db] = mab;
          mass[db][da] = mab;
        }
      }
    }
  }
  return mass;
}

// Generalized bias force (gravity + Coriolis/centrifugal, moved to the
// right-hand side of M qdd = c + tau) via recursive Newton-Euler with
// zero joint accelerations.
template <class T>
std::vector<T> bias_forces(const ArticulationModel& model,
                           const std::vector<T>& q, const std::vector<T>& qd,
                           const Vec3<double>& gravity) {
  const int nd = model.dof();
  if (static_cast<int>(q.size()) != nd ||
      static_cast<int>(qd.size()) != nd)
    throw std::invalid_argument("bias_forces: state size mismatch");
  auto kin = detail::forward_kinematics(model, q);
  const std::size_t n = model.joints.size();
  const Vec3<T> g = detail::to_t<T>(gravity);
  const Vec3<T> zero{T(0.0), T(0.0), T(0.0)};

  // Outward pass: angular velocity / acceleration and CoM acceleration per
  // link, with qdd = 0.
  std::vector<Vec3<T>> w(n), alpha(n), a_org(n), a_com(n), v_org(n);
  for (std::size_t i = 0; i < n; ++i) {
    const JointSpec& j = model.joints[i];
    Vec3<T> wp = zero, alphap = zero, ap = zero, vp = zero;
    Vec3<T> porg = zero;
    if (j.parent >= 0) {
      const int p = j.parent;
      const Vec3<T> rel = kin.joint_org[i] - kin.joint_org[p];
      wp = w[p];
      alphap = alpha[p];
      vp = v_org[p] + cross(w[p], rel);
      ap = a_org[p] + cross(alpha[p], rel) + cross(w[p], cross(w[p], rel));
    }
    Vec3<T> wi = wp, alphai = alphap, ai = ap, vi = vp;
    const int ds = kin.dof_start[i];
    if (j.type == JointType::kRevolute) {
      const Vec3<T>& axis = kin.dofs[ds].axis;
      wi += axis * qd[ds];
      alphai += cross(wp, axis) * qd[ds];
    } else {
      // translation dofs move the joint origin through the parent frame
      Vec3<T> vt = zero;
      for (int a = 0; a < 3; ++a) vt += kin.dofs[ds + a].lin * qd[ds + a];
      vi += vt;
      ai += cross(wp, vt) * T(2.0);  // Coriolis term for motion in the parent frame
      // euler-rate axes; their rates come from the outer rotations
      const Vec3<T>& e_roll = kin.dofs[ds + 3].axis;
      const Vec3<T>& e_pitch = kin.dofs[ds + 4].axis;
      const Vec3<T>& e_yaw = kin.dofs[ds + 5].axis;
      const Vec3<T> w_yaw = wp + e_yaw * qd[ds + 5];
      const Vec3<T> w_pitch = w_yaw + e_pitch * qd[ds + 4];
      wi += e_roll * qd[ds + 3] + e_pitch * qd[ds + 4] + e_yaw * qd[ds + 5];
      alphai += cross(wp, e_yaw) * qd[ds + 5] +
                cross(w_yaw, e_pitch) * qd[ds + 4] +
                cross(w_pitch, e_roll) * qd[ds + 3];
    }
    w[i] = wi;
    alpha[i] = alphai;
    v_org[i] = vi;
    a_org[i] = ai;
    const Vec3<T> rc = kin.link_com[i] - kin.joint_org[i];
    a_com[i] = ai + cross(alphai, rc) + cross(wi, cross(wi, rc));
  }

  // Inward pass: required force/torque per subtree, gravity included.
  std::vector<Vec3<T>> f_net(n), n_org(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = model.links[i].mass;
    const Mat3<T> r = kin.link_rot[i];
    const Mat3<T> iw =
        r * (detail::to_t<T>(model.links[i].inertia) * r.transposed());
    f_net[i] = (a_com[i] - g) * T(m);
    const Vec3<T> rc = kin.link_com[i] - kin.joint_org[i];
    n_org[i] = iw * alpha[i] + cross(w[i], iw * w[i]) + cross(rc, f_net[i]);
  }
  for (int i = static_cast<int>(n) - 1; i >= 0; --i) {
    const int p = model.joints[i].parent;
    if (p >= 0) {
      f_net[p] += f_net[i];
      n_org[p] += n_org[i] + cross(kin.joint_org[i] - kin.joint_org[p], f_net[i]);
    }
  }

  std::vector<T> bias(nd, T(0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const int ds = kin.dof_start[i];
    for (int a = 0; a < kin.dof_count[i]; ++a) {
      const auto& d = kin.dofs[ds + a];
      bias[ds + a] = -(dot(d.axis, n_org[i]) + dot(d.lin, f_net[i]));
    }
  }
  return bias;
}

template <class T>
struct ContactForce {
  Vec3<T> point;  // world contact point
  Vec3<T> force;  // world force on the link
  int link = 0;
};

// Softened ground-plane contact at z = 0: penalty normal with damping,
// clamped non-adhesive, and tanh-smoothed Coulomb friction.
template <typename T>
Vec3<T> ground_contact_force(const Vec3<T>& p, const Vec3<T>& v,
                             const ContactParams& params) {
  const T d = p.z;
  const T raw = T(params.k_n) * max(T(0.0), -d) - T(params.k_d) * v.z;
  const T fn = where(value_of(d) < 0.0, max(T(0.0), raw), T(0.0));
  const T vt2 = v.x * v.x + v.y * v.y + T(1e-12);
  const T vt_norm = sqrt(vt2);
  const T scale =
      T(params.mu_f) * fn * tanh(vt_norm * T(1.0 / params.v_s)) / vt_norm;
  return {-scale * v.x, -scale * v.y, fn};
}

template <typename T>
std::vector<ContactForce<T>> contact_forces(const ArticulationModel& model,
                                            const std::vector<T>& q,
                                            const std::vector<T>& qd,
                                            const ContactParams& params) {
  auto kin = detail::forward_kinematics(model, q);
  const std::size_t n = model.joints.size();
  const Vec3<T> zero{T(0.0), T(0.0), T(0.0)};

  // link twists from accumulated dof rates
  std::vector<Vec3<T>> w(n, zero), v_org(n, zero);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = model.joints[i].parent;
    if (p >= 0) {
      const Vec3<T> rel = kin.joint_org[i] - kin.joint_org[p];
      w[i] = w[p];
      v_org[i] = v_org[p] + cross(w[p], rel);
    }
    const int ds = kin.dof_start[i];
    for (int a = 0; a < kin.dof_count[i]; ++a) {
      const auto& d = kin.dofs[ds + a];
      w[i] += d.axis * qd[ds + a];
      v_org[i] += d.lin * qd[ds + a];
    }
  }

  std::vector<ContactForce<T>> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& cp_local : model.links[i].contact_points) {
      const Vec3<T> p = kin.joint_org[i] + kin.link_rot[i] * detail::to_t<T>(cp_local);
      const Vec3<T> v = v_org[i] + cross(w[i], p - kin.joint_org[i]);
      ContactForce<T> cf;
      cf.point = p;
      cf.force = ground_contact_force(p, v, params);
      cf.link = static_cast<int>(i);
      out.push_back(cf);
    }
  }
  return out;
}

// Generalized force for a set of world-frame point forces.
template <class T>
std::vector<T> generalized_forces(const ArticulationModel& model,
                                  const std::vector<T>& q,
                                  const std::vector<ContactForce<T>>& forces) {
  auto kin = detail::forward_kinematics(model, q);
  std::vector<T> tau(model.dof(), T(0.0));
  for (const auto& cf : forces) {
    for (int link = cf.link; link >= 0; link = model.joints[link].parent) {
      const int ds = kin.dof_start[link];
      for (int a = 0; a < kin.dof_count[link]; ++a) {
        const auto& d = kin.dofs[ds + a];
        const Vec3<T> jcol = d.lin + cross(d.axis, cf.point - d.origin);
        tau[ds + a] += dot(jcol, cf.force);
      }
    }
  }
  return tau;
}

namespace detail {

// In-place Cholesky solve of the SPD system M x = b.
template <class T>
std::vector<T> cholesky_solve(std::vector<std::vector<T>> m, std::vector<T> b) {
  const int n = static_cast<int>(b.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      T s = m[i][j];
      for (int k = 0; k < j; ++k) s -= m[i][k] * m[j][k];
      if (i == j) {
        if (!(value_of(s) > 1e-12))
          throw std::runtime_error(
              "forward_dynamics: mass matrix not positive definite (pivot " +
              std::to_string(i) + " = " + std::to_string(value_of(s)) + ")");
        m[i][j] = sqrt(s);
      } else {
        m[i][j] = s / m[j][j];
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    T s = b[i];
    for (int k = 0; k < i; ++k) s -= m[i][k] * b[k];
    b[i] = s / m[i][i];
  }
  for (int i = n - 1; i >= 0; --i) {
    T s = b[i];
    for (int k = i + 1; k < n; ++k) s -= m[k][i] * b[k];
    b[i] = s / m[i][i];
  }
  return b;
}

}  // namespace detail

// M qdd = tau + external, dense Cholesky solve. `external` carries the bias
// and contact terms already mapped to joint space.
template <class T>
std::vector<T> forward_dynamics(const ArticulationModel& model,
                                const std::vector<T>& q,
                                const std::vector<T>& tau,
                                const std::vector<T>& external) {
  auto m = crba_mass_matrix(model, q);
  const int nd = model.dof();
  std::vector<T> rhs(nd, T(0.0));
  for (int i = 0; i < nd; ++i) rhs[i] = tau[i] + external[i];
  return detail::cholesky_solve(std::move(m), std::move(rhs));
}

template <class T>
void step_semi_implicit(RigidState<T>& state, const std::vector<T>& qdd,
                        double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  for (std::size_t i = 0; i < state.q.size(); ++i) {
    state.qd[i] += qdd[i] * T(dt);
    state.q[i] += state.qd[i] * T(dt);
  }
}

// One full dynamics step: torque clamp, contact, bias, solve, integrate.
template <class T>
void rigid_step(const ArticulationModel& model, RigidState<T>& state,
                const std::vector<T>& tau_in, const ContactParams& contact,
                const Vec3<double>& gravity, double dt) {
  const int nd = model.dof();
  std::vector<T> tau(nd, T(0.0));
  for (int i = 0; i < nd; ++i) {
    tau[i] = tau_in[i];
    if (!model.torque_limits.empty()) {
      const double lim = model.torque_limits[i];
      tau[i] = clamp(tau[i], -lim, lim);
    }
  }
  auto bias = bias_forces(model, state.q, state.qd, gravity);
  auto contacts = contact_forces(model, state.q, state.qd, contact);
  auto tau_ext = generalized_forces(model, state.q, contacts);
  auto m = crba_mass_matrix(model, state.q);
  std::vector<T> rhs(nd);
  for (int i = 0; i < nd; ++i) rhs[i] = tau[i] + bias[i] + tau_ext[i];
  auto qdd = detail::cholesky_solve(std::move(m), std::move(rhs));
  step_semi_implicit(state, qdd, dt);
}

}  // namespace diffsim::rigid
