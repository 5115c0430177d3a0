#pragma once

#include <span>
#include <string>
#include <vector>

#include "diffpbd/autodiff.hpp"
#include "diffpbd/math.hpp"

namespace diffpbd {

enum class SolverKind { gauss_seidel, jacobi };

struct SimConfig {
  double dt = 0.01;
  Vec3 gravity{0.0, 0.0, -9.8};
  SolverKind solver = SolverKind::gauss_seidel;
  int iterations = 30;
  /// Flips the gyroscopic coupling in the angular velocity prediction to
  /// +omega x (I omega). Off by default, which is the physical sign.
  bool gyroscopic_plus_sign = false;
};

/// One rigid body of an articulated chain: point state (COM position,
/// velocity, orientation, world angular velocity) plus the constant geometry
/// that the hinge constraints reference. Anchors and axes live in the link
/// frame.
template <class T>
struct RigidLink {
  Vec3T<T> position;
  Vec3T<T> velocity;
  QuatT<T> orientation;
  Vec3T<T> angular_velocity;

  T inv_mass{0};
  bool is_static = false;
  Mat3T<T> inertia_local = Mat3T<T>::identity();
  Mat3T<T> inv_inertia_local = Mat3T<T>::identity();
  Vec3T<T> com_to_parent_joint;  // COM -> inboard hinge anchor
  Vec3T<T> com_to_child_joint;   // COM -> outboard hinge anchor
  Mat3T<T> parent_joint_axes = Mat3T<T>::identity();  // columns = inboard joint frame
  Mat3T<T> child_joint_axes = Mat3T<T>::identity();   // columns = outboard joint frame
  Vec3T<T> link_axis{T(1), T(0), T(0)};  // unit, used for the angle readout
  std::string name;
};

/// Hinge between links[parent] and links[child]. The shared rotation axis is
/// the given column of the parent's outboard frame and of the child's inboard
/// frame (equal in link coordinates by the chain convention).
struct HingeJoint {
  int parent = 0;
  int child = 0;
  int axis_column = 0;
};

template <class T>
struct Chain {
  std::vector<RigidLink<T>> links;
  std::vector<HingeJoint> joints;
};

template <class T>
Mat3T<T> world_inv_inertia(const RigidLink<T>& link) {
  if (link.is_static) return Mat3T<T>::zero();
  Mat3T<T> rot = quat_to_rot(link.orientation);
  return rot * link.inv_inertia_local * rot.transposed();
}

template <class T>
Mat3T<T> world_inertia(const RigidLink<T>& link) {
  Mat3T<T> rot = quat_to_rot(link.orientation);
  return rot * link.inertia_local * rot.transposed();
}

/// Number of state scalars per link when flattened (x, v, q, omega).
inline constexpr int kStateScalarsPerLink = 13;

template <class T>
void get_state(const Chain<T>& chain, std::vector<T>& out) {
  out.clear();
  out.reserve(chain.links.size() * kStateScalarsPerLink);
  for (const auto& l : chain.links) {
    out.push_back(l.position.x); out.push_back(l.position.y); out.push_back(l.position.z);
    out.push_back(l.velocity.x); out.push_back(l.velocity.y); out.push_back(l.velocity.z);
    out.push_back(l.orientation.w); out.push_back(l.orientation.x);
    out.push_back(l.orientation.y); out.push_back(l.orientation.z);
    out.push_back(l.angular_velocity.x); out.push_back(l.angular_velocity.y);
    out.push_back(l.angular_velocity.z);
  }
}

template <class T, class S>
void set_state(Chain<T>& chain, std::span<const S> flat) {
  std::size_t i = 0;
  for (auto& l : chain.links) {
    l.position = {T(flat[i]), T(flat[i + 1]), T(flat[i + 2])};
    l.velocity = {T(flat[i + 3]), T(flat[i + 4]), T(flat[i + 5])};
    l.orientation = {T(flat[i + 6]), T(flat[i + 7]), T(flat[i + 8]), T(flat[i + 9])};
    l.angular_velocity = {T(flat[i + 10]), T(flat[i + 11]), T(flat[i + 12])};
    i += kStateScalarsPerLink;
  }
}

namespace detail {
template <class T>
Vec3 primal(const Vec3T<T>& v) { return {value_of(v.x), value_of(v.y), value_of(v.z)}; }
template <class T>
Quat primal(const QuatT<T>& q) {
  return {value_of(q.w), value_of(q.x), value_of(q.y), value_of(q.z)};
}
}  // namespace detail

/// Lifts a double chain into any other scalar type; every scalar becomes a
/// constant of the target type. Callers substitute tracked leaves afterwards.
template <class T>
Chain<T> lift_chain(const Chain<double>& in) {
  Chain<T> out;
  out.joints = in.joints;
  out.links.reserve(in.links.size());
  for (const auto& l : in.links) {
    RigidLink<T> o;
    auto v3 = [](const Vec3& v) { return Vec3T<T>{T(v.x), T(v.y), T(v.z)}; };
    auto m3 = [](const Mat3& m) {
      Mat3T<T> r;
      for (int i = 0; i < 9; ++i) r.m[i] = T(m.m[i]);
      return r;
    };
    o.position = v3(l.position);
    o.velocity = v3(l.velocity);
    o.orientation = {T(l.orientation.w), T(l.orientation.x), T(l.orientation.y), T(l.orientation.z)};
    o.angular_velocity = v3(l.angular_velocity);
    o.inv_mass = T(l.inv_mass);
    o.is_static = l.is_static;
    o.inertia_local = m3(l.inertia_local);
    o.inv_inertia_local = m3(l.inv_inertia_local);
    o.com_to_parent_joint = v3(l.com_to_parent_joint);
    o.com_to_child_joint = v3(l.com_to_child_joint);
    o.parent_joint_axes = m3(l.parent_joint_axes);
    o.child_joint_axes = m3(l.child_joint_axes);
    o.link_axis = v3(l.link_axis);
    o.name = l.name;
    out.links.push_back(std::move(o));
  }
  return out;
}

/// Drops a chain of any scalar type to primal doubles.
template <class T>
Chain<double> primal_chain(const Chain<T>& in) {
  Chain<double> out;
  out.joints = in.joints;
  out.links.reserve(in.links.size());
  for (const auto& l : in.links) {
    RigidLink<double> o;
    auto m3 = [](const Mat3T<T>& m) {
      Mat3 r;
      for (int i = 0; i < 9; ++i) r.m[i] = value_of(m.m[i]);
      return r;
    };
    o.position = detail::primal(l.position);
    o.velocity = detail::primal(l.velocity);
    o.orientation = detail::primal(l.orientation);
    o.angular_velocity = detail::primal(l.angular_velocity);
    o.inv_mass = value_of(l.inv_mass);
    o.is_static = l.is_static;
    o.inertia_local = m3(l.inertia_local);
    o.inv_inertia_local = m3(l.inv_inertia_local);
    o.com_to_parent_joint = detail::primal(l.com_to_parent_joint);
    o.com_to_child_joint = detail::primal(l.com_to_child_joint);
    o.parent_joint_axes = m3(l.parent_joint_axes);
    o.child_joint_axes = m3(l.child_joint_axes);
    o.link_axis = detail::primal(l.link_axis);
    o.name = l.name;
    out.links.push_back(std::move(o));
  }
  return out;
}

}  // namespace diffpbd
