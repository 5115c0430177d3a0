#pragma once

#include <cstdio>
#include <numbers>
#include <span>
#include <vector>

#include "diffpbd/chain.hpp"

namespace diffpbd {

inline constexpr double kAsinClampMargin = 1e-12;

/// Joint angle readout from link orientations. The sine of the angle between
/// the two link axes is measured about the hinge axis via a scalar triple
/// product, disambiguated into (-pi, pi] with the dot-product branch and a
/// wrap. The arcsin argument is clamped just inside [-1, 1]; clamping is
/// normal operation near +-90 degrees, where this parameterization has an
/// unavoidable derivative singularity.
template <class T>
T joint_angle(const Chain<T>& chain, int joint_index) {
  const HingeJoint& j = chain.joints[joint_index];
  const RigidLink<T>& p = chain.links[j.parent];
  const RigidLink<T>& c = chain.links[j.child];

  Vec3T<T> n_p = rotate_vec(p.orientation, p.link_axis);
  Vec3T<T> n_c = rotate_vec(c.orientation, c.link_axis);
  Vec3T<T> axis = rotate_vec(p.orientation, p.child_joint_axes.col(j.axis_column));

  T s = dot(cross(n_p, n_c), axis);
  const double lim = 1.0 - kAsinClampMargin;
  if (value_of(s) >= lim || value_of(s) <= -lim) {
    static bool warned = false;
    if (!warned) {
      std::fprintf(stderr,
                   "[diffpbd] joint_angle: arcsin argument clamped near +-1; normal near "
                   "90-degree configurations (further occurrences suppressed)\n");
      warned = true;
    }
    s = T(value_of(s) >= lim ? lim : -lim);  // saturates; gradient is zero here
  }

  using std::asin;
  T angle = asin(s);
  if (value_of(dot(n_p, n_c)) < 0.0) angle = std::numbers::pi - angle;
  if (value_of(angle) > std::numbers::pi) angle = angle - 2.0 * std::numbers::pi;
  if (value_of(angle) < -std::numbers::pi) angle = angle + 2.0 * std::numbers::pi;
  return angle;
}

/// Relative angular velocity of the child with respect to the parent,
/// projected on the joint's world axis.
template <class T>
T joint_rate(const Chain<T>& chain, int joint_index) {
  const HingeJoint& j = chain.joints[joint_index];
  const RigidLink<T>& p = chain.links[j.parent];
  const RigidLink<T>& c = chain.links[j.child];
  Vec3T<T> axis = rotate_vec(p.orientation, p.child_joint_axes.col(j.axis_column));
  return dot(c.angular_velocity - p.angular_velocity, axis);
}

template <class T>
std::vector<T> joint_angles(const Chain<T>& chain) {
  std::vector<T> out;
  out.reserve(chain.joints.size());
  for (std::size_t k = 0; k < chain.joints.size(); ++k)
    out.push_back(joint_angle(chain, static_cast<int>(k)));
  return out;
}

template <class T>
std::vector<T> joint_rates(const Chain<T>& chain) {
  std::vector<T> out;
  out.reserve(chain.joints.size());
  for (std::size_t k = 0; k < chain.joints.size(); ++k)
    out.push_back(joint_rate(chain, static_cast<int>(k)));
  return out;
}

/// Maps joint angular rates to the world angular velocity of every link by
/// accumulating each ancestor joint's axis contribution down the chain.
template <class T>
std::vector<Vec3T<T>> joint_velocity_to_world_omega(const Chain<T>& chain,
                                                    std::span<const T> rates) {
  std::vector<Vec3T<T>> omega(chain.links.size());
  omega[0] = chain.links[0].is_static ? Vec3T<T>{} : chain.links[0].angular_velocity;
  for (std::size_t k = 0; k < chain.joints.size(); ++k) {
    const HingeJoint& j = chain.joints[k];
    const RigidLink<T>& p = chain.links[j.parent];
    Vec3T<T> axis = rotate_vec(p.orientation, p.child_joint_axes.col(j.axis_column));
    omega[j.child] = omega[j.parent] + axis * rates[k];
  }
  return omega;
}

template <class T>
struct EndEffectorState {
  Vec3T<T> position;
  Vec3T<T> velocity;
};

/// Outboard anchor of the last link.
template <class T>
EndEffectorState<T> end_effector(const Chain<T>& chain) {
  const RigidLink<T>& l = chain.links.back();
  Vec3T<T> arm = rotate_vec(l.orientation, l.com_to_child_joint);
  return {l.position + arm, l.velocity + cross(l.angular_velocity, arm)};
}

/// Jacobian-transpose mapping of an end-effector force to joint torques:
/// tau_j = (axis_j x (p_ee - joint_j)) . f.
template <class T>
std::vector<T> jacobian_transpose_apply(const Chain<T>& chain, const Vec3T<T>& force) {
  EndEffectorState<T> ee = end_effector(chain);
  std::vector<T> tau;
  tau.reserve(chain.joints.size());
  for (std::size_t k = 0; k < chain.joints.size(); ++k) {
    const HingeJoint& j = chain.joints[k];
    const RigidLink<T>& p = chain.links[j.parent];
    Vec3T<T> axis = rotate_vec(p.orientation, p.child_joint_axes.col(j.axis_column));
    Vec3T<T> anchor = p.position + rotate_vec(p.orientation, p.com_to_child_joint);
    tau.push_back(dot(cross(axis, ee.position - anchor), force));
  }
  return tau;
}

/// Poses a chain at the given joint angles (and optional rates) by walking
/// base to tip. Requires the chain convention: at all-zero angles every link
/// orientation equals the base orientation, and for each joint the parent's
/// outboard axis column equals the child's inboard axis column in link
/// coordinates. The base link keeps its current state.
template <class T>
Chain<T> chain_from_angles(Chain<T> chain, std::span<const T> angles,
                           std::span<const T> rates = {}) {
  for (std::size_t k = 0; k < chain.joints.size(); ++k) {
    const HingeJoint& j = chain.joints[k];
    RigidLink<T>& p = chain.links[j.parent];
    RigidLink<T>& c = chain.links[j.child];

    Vec3T<T> axis = rotate_vec(p.orientation, p.child_joint_axes.col(j.axis_column));
    QuatT<T> q = normalize(quat_mul(quat_from_axis_angle(axis, angles[k]), p.orientation));
    Vec3T<T> anchor = p.position + rotate_vec(p.orientation, p.com_to_child_joint);
    Vec3T<T> arm_c = rotate_vec(q, c.com_to_parent_joint);

    c.orientation = q;
    c.position = anchor - arm_c;

    Vec3T<T> omega_p = p.is_static ? Vec3T<T>{} : p.angular_velocity;
    Vec3T<T> v_anchor = (p.is_static ? Vec3T<T>{} : p.velocity) +
                        cross(omega_p, rotate_vec(p.orientation, p.com_to_child_joint));
    T rate = rates.empty() ? T(0) : rates[k];
    Vec3T<T> omega_c = omega_p + axis * rate;
    c.angular_velocity = omega_c;
    c.velocity = v_anchor + cross(omega_c, c.position - anchor);
  }
  return chain;
}

}  // namespace diffpbd
