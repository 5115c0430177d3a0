#pragma once

#include <algorithm>
#include <span>
#include <utility>
#include <vector>

#include "diffpbd/chain.hpp"

namespace diffpbd {

/// Constraint directions shorter than this are treated as already satisfied
/// and produce zero corrections.
inline constexpr double kDegenerateEps = 1e-12;

template <class T>
struct JointCorrections {
  Vec3T<T> dx_parent, dx_child;
  Vec3T<T> dphi_parent, dphi_child;
  T violation{0};  // constraint magnitude before the correction
};

/// Records per-iteration worst-case violations of the constraint loop.
struct SolveTrace {
  std::vector<double> max_anchor_gap;        // metres
  std::vector<double> max_axis_misalignment;  // sine of the axis angle
};

/// Hinge anchor coincidence as a scalar distance constraint. Returns the
/// position and orientation corrections that cancel the violation to first
/// order, split by generalized inverse mass. The parent receives the impulse
/// +lambda*n at its anchor and the child -lambda*n, so linear and angular
/// momentum are conserved exactly.
template <class T>
JointCorrections<T> positional_project(const Chain<T>& chain, int joint_index) {
  const HingeJoint& j = chain.joints[joint_index];
  const RigidLink<T>& p = chain.links[j.parent];
  const RigidLink<T>& c = chain.links[j.child];

  Mat3T<T> rot_p = quat_to_rot(p.orientation);
  Mat3T<T> rot_c = quat_to_rot(c.orientation);
  Vec3T<T> arm_p = rot_p * p.com_to_child_joint;
  Vec3T<T> arm_c = rot_c * c.com_to_parent_joint;
  Vec3T<T> gap = (c.position + arm_c) - (p.position + arm_p);

  JointCorrections<T> out;
  T gap_sq = norm_squared(gap);
  if (value_of(gap_sq) < kDegenerateEps * kDegenerateEps) return out;

  using std::sqrt;
  T dist = sqrt(gap_sq);
  Vec3T<T> n = gap / dist;

  Mat3T<T> winv_p = p.is_static ? Mat3T<T>::zero() : rot_p * p.inv_inertia_local * rot_p.transposed();
  Mat3T<T> winv_c = c.is_static ? Mat3T<T>::zero() : rot_c * c.inv_inertia_local * rot_c.transposed();
  Vec3T<T> rxn_p = cross(arm_p, n);
  Vec3T<T> rxn_c = cross(arm_c, n);
  T w = p.inv_mass + c.inv_mass + dot(rxn_p, winv_p * rxn_p) + dot(rxn_c, winv_c * rxn_c);
  if (value_of(w) <= 0.0) return out;  // both sides immovable

  T lambda = dist / w;
  out.dx_parent = n * (lambda * p.inv_mass);
  out.dx_child = -(n * (lambda * c.inv_mass));
  out.dphi_parent = (winv_p * rxn_p) * lambda;
  out.dphi_child = -((winv_c * rxn_c) * lambda);
  out.violation = dist;
  return out;
}

/// Hinge axis alignment: the constraint is the cross product of the two world
/// axes; its norm is the sine of the misalignment angle. Each link rotates
/// toward alignment, split by rotational generalized inverse mass.
template <class T>
JointCorrections<T> angular_project(const Chain<T>& chain, int joint_index) {
  const HingeJoint& j = chain.joints[joint_index];
  const RigidLink<T>& p = chain.links[j.parent];
  const RigidLink<T>& c = chain.links[j.child];

  Mat3T<T> rot_p = quat_to_rot(p.orientation);
  Mat3T<T> rot_c = quat_to_rot(c.orientation);
  Vec3T<T> axis_p = rot_p * p.child_joint_axes.col(j.axis_column);
  Vec3T<T> axis_c = rot_c * c.parent_joint_axes.col(j.axis_column);
  Vec3T<T> cvec = cross(axis_p, axis_c);

  JointCorrections<T> out;
  T c_sq = norm_squared(cvec);
  if (value_of(c_sq) < kDegenerateEps * kDegenerateEps) return out;

  using std::sqrt;
  T mag = sqrt(c_sq);
  Vec3T<T> n = cvec / mag;

  Mat3T<T> winv_p = p.is_static ? Mat3T<T>::zero() : rot_p * p.inv_inertia_local * rot_p.transposed();
  Mat3T<T> winv_c = c.is_static ? Mat3T<T>::zero() : rot_c * c.inv_inertia_local * rot_c.transposed();
  T w = dot(n, winv_p * n) + dot(n, winv_c * n);
  if (value_of(w) <= 0.0) return out;

  T lambda = mag / w;
  out.dphi_parent = (winv_p * n) * lambda;
  out.dphi_child = -((winv_c * n) * lambda);
  out.violation = mag;
  return out;
}

template <class T>
void apply_corrections(Chain<T>& chain, int joint_index, const JointCorrections<T>& corr) {
  const HingeJoint& j = chain.joints[joint_index];
  RigidLink<T>& p = chain.links[j.parent];
  RigidLink<T>& c = chain.links[j.child];
  if (!p.is_static) {
    p.position += corr.dx_parent;
    p.orientation = apply_rotvec(p.orientation, corr.dphi_parent);
  }
  if (!c.is_static) {
    c.position += corr.dx_child;
    c.orientation = apply_rotvec(c.orientation, corr.dphi_child);
  }
}

namespace detail {

/// Double-valued violation measurement; never records onto a tape.
template <class T>
std::pair<double, double> measure_violations(const Chain<T>& chain) {
  double worst_gap = 0.0, worst_axis = 0.0;
  for (const auto& j : chain.joints) {
    const auto& p = chain.links[j.parent];
    const auto& c = chain.links[j.child];
    Quat qp = primal(p.orientation), qc = primal(c.orientation);
    Vec3 pa = primal(p.position) + rotate_vec(qp, primal(p.com_to_child_joint));
    Vec3 pb = primal(c.position) + rotate_vec(qc, primal(c.com_to_parent_joint));
    worst_gap = std::max(worst_gap, std::sqrt(norm_squared(pb - pa)));
    Vec3 ap = rotate_vec(qp, primal(p.child_joint_axes.col(j.axis_column)));
    Vec3 ac = rotate_vec(qc, primal(c.parent_joint_axes.col(j.axis_column)));
    worst_axis = std::max(worst_axis, std::sqrt(norm_squared(cross(ap, ac))));
  }
  return {worst_gap, worst_axis};
}

}  // namespace detail

/// Under-relaxation applied to accumulated Jacobi corrections. Full sums
/// overshoot when two joints pull a shared link the same way; halving them
/// (the averaged variant) costs a 3x slower tail on a chain with a static
/// base. 0.9 damps the even-odd bounce while keeping the propagation speed.
inline constexpr double kJacobiRelaxation = 0.9;

/// Runs the constraint loop: per iteration a positional sweep over all joints
/// followed by an angular sweep, base to tip. Gauss-Seidel applies each
/// joint's corrections immediately; Jacobi gathers corrections from a frozen
/// state and applies each link's relaxed accumulated correction once per
/// sweep.
template <class T>
void solve_constraints(Chain<T>& chain, const SimConfig& cfg, SolveTrace* trace = nullptr) {
  const int njoints = static_cast<int>(chain.joints.size());

  auto jacobi_sweep = [&](bool angular) {
    std::vector<Vec3T<T>> dx(chain.links.size());
    std::vector<Vec3T<T>> dphi(chain.links.size());
    for (int k = 0; k < njoints; ++k) {
      JointCorrections<T> corr =
          angular ? angular_project(chain, k) : positional_project(chain, k);
      const HingeJoint& j = chain.joints[k];
      dx[j.parent] += corr.dx_parent;
      dx[j.child] += corr.dx_child;
      dphi[j.parent] += corr.dphi_parent;
      dphi[j.child] += corr.dphi_child;
    }
    for (std::size_t i = 0; i < chain.links.size(); ++i) {
      if (chain.links[i].is_static) continue;
      chain.links[i].position += dx[i] * T(kJacobiRelaxation);
      chain.links[i].orientation =
          apply_rotvec(chain.links[i].orientation, dphi[i] * T(kJacobiRelaxation));
    }
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.solver == SolverKind::gauss_seidel) {
      for (int k = 0; k < njoints; ++k) apply_corrections(chain, k, positional_project(chain, k));
      for (int k = 0; k < njoints; ++k) apply_corrections(chain, k, angular_project(chain, k));
    } else {
      jacobi_sweep(false);
      jacobi_sweep(true);
    }
    if (trace) {
      auto [gap, axis] = detail::measure_violations(chain);
      trace->max_anchor_gap.push_back(gap);
      trace->max_axis_misalignment.push_back(axis);
    }
  }
}

/// Unconstrained prediction: semi-implicit Euler. Velocity integrates gravity
/// first and the position update uses the already-updated velocity. Angular
/// velocity integrates applied torque and gyroscopic coupling with the world
/// inertia evaluated at the current orientation; the quaternion then takes a
/// first-order update and is renormalized.
template <class T>
void predict(Chain<T>& chain, const SimConfig& cfg, std::span<const Vec3T<T>> link_torques) {
  Vec3T<T> g{T(cfg.gravity.x), T(cfg.gravity.y), T(cfg.gravity.z)};
  double dt = cfg.dt;
  for (std::size_t i = 0; i < chain.links.size(); ++i) {
    RigidLink<T>& l = chain.links[i];
    if (l.is_static) continue;
    l.velocity += g * T(dt);
    l.position += l.velocity * T(dt);

    Mat3T<T> rot = quat_to_rot(l.orientation);
    Mat3T<T> inertia_w = rot * l.inertia_local * rot.transposed();
    Mat3T<T> inv_inertia_w = rot * l.inv_inertia_local * rot.transposed();
    Vec3T<T> tau = link_torques.empty() ? Vec3T<T>{} : link_torques[i];
    Vec3T<T> gyro = cross(l.angular_velocity, inertia_w * l.angular_velocity);
    Vec3T<T> torque_total = cfg.gyroscopic_plus_sign ? tau + gyro : tau - gyro;
    l.angular_velocity += (inv_inertia_w * torque_total) * T(dt);
    l.orientation = apply_rotvec(l.orientation, l.angular_velocity * T(dt));
  }
}

/// Rebuilds velocities from the positional change over the step. The angular
/// velocity comes from the relative quaternion; the sign flips when its real
/// part is negative so the shorter rotation is reported.
template <class T>
void update_velocities(Chain<T>& chain, std::span<const Vec3T<T>> prev_positions,
                       std::span<const QuatT<T>> prev_orientations, double dt) {
  for (std::size_t i = 0; i < chain.links.size(); ++i) {
    RigidLink<T>& l = chain.links[i];
    if (l.is_static) continue;
    l.velocity = (l.position - prev_positions[i]) * T(1.0 / dt);
    QuatT<T> dq = quat_mul(l.orientation, conjugate(prev_orientations[i]));
    Vec3T<T> omega = vec_part(dq) * T(2.0 / dt);
    if (value_of(dq.w) < 0.0) omega = -omega;
    l.angular_velocity = omega;
  }
}

/// Converts per-joint scalar torques into world torque vectors per link. The
/// torque acts about the joint's world axis (taken from the parent's frame)
/// on the child, with the equal-and-opposite reaction on the parent.
template <class T>
std::vector<Vec3T<T>> joint_torques_to_link_torques(const Chain<T>& chain,
                                                    std::span<const T> joint_torques) {
  std::vector<Vec3T<T>> out(chain.links.size());
  for (std::size_t k = 0; k < chain.joints.size(); ++k) {
    const HingeJoint& j = chain.joints[k];
    const RigidLink<T>& p = chain.links[j.parent];
    Vec3T<T> axis = rotate_vec(p.orientation, p.child_joint_axes.col(j.axis_column));
    Vec3T<T> tau = axis * joint_torques[k];
    out[j.child] += tau;
    out[j.parent] -= tau;
  }
  return out;
}

/// One full simulation step: predict, project constraints, rebuild
/// velocities. `joint_torques` has one scalar per joint; `extra_link_torques`
/// optionally adds world torque vectors per link (external disturbances).
template <class T>
Chain<T> step(Chain<T> chain, const SimConfig& cfg, std::span<const T> joint_torques,
              std::span<const Vec3T<T>> extra_link_torques = {}, SolveTrace* trace = nullptr) {
  std::vector<Vec3T<T>> torques(chain.links.size());
  if (!joint_torques.empty()) torques = joint_torques_to_link_torques(chain, joint_torques);
  if (!extra_link_torques.empty()) {
    for (std::size_t i = 0; i < torques.size(); ++i) torques[i] += extra_link_torques[i];
  }

  std::vector<Vec3T<T>> prev_x(chain.links.size());
  std::vector<QuatT<T>> prev_q(chain.links.size());
  for (std::size_t i = 0; i < chain.links.size(); ++i) {
    prev_x[i] = chain.links[i].position;
    prev_q[i] = chain.links[i].orientation;
  }

  predict(chain, cfg, std::span<const Vec3T<T>>(torques));
  solve_constraints(chain, cfg, trace);
  update_velocities(chain, std::span<const Vec3T<T>>(prev_x), std::span<const QuatT<T>>(prev_q),
                    cfg.dt);
  return chain;
}

}  // namespace diffpbd
