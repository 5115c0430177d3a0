#pragma once

#include <span>
#include <vector>

#include "diffpbd/chain.hpp"

namespace diffpbd {

/// Planar link description for the closed-form dynamics oracle. Angles are
/// measured from the straight-down rest pose; gravity points down.
struct PlanarLink {
  double length = 1.0;      // proximal joint to distal joint
  double com_offset = 0.5;  // proximal joint to COM
  double mass = 1.0;
  double inertia_com = 0.0;  // about the COM, hinge axis component
};

/// Closed-form Lagrangian dynamics for one- and two-link planar chains:
/// mass matrix, velocity bias, gravity vector, energies, and an RK4
/// integrator. Serves as the independent reference for the constraint-based
/// simulator.
class LagrangianChain {
 public:
  LagrangianChain(std::vector<PlanarLink> links, double gravity);

  int dof() const { return static_cast<int>(links_.size()); }

  /// dV/dp: the torque that balances gravity at pose p.
  std::vector<double> gravity_torque(std::span<const double> p) const;

  std::vector<double> mass_matrix(std::span<const double> p) const;  // row-major dof x dof
  std::vector<double> velocity_bias(std::span<const double> p, std::span<const double> pdot) const;

  /// Joint accelerations M^-1 (tau - c(p, pdot) - g(p)).
  std::vector<double> acceleration(std::span<const double> p, std::span<const double> pdot,
                                   std::span<const double> tau) const;

  void rk4_step(std::vector<double>& p, std::vector<double>& pdot, std::span<const double> tau,
                double dt) const;

  double potential(std::span<const double> p) const;
  double kinetic(std::span<const double> p, std::span<const double> pdot) const;

  /// Potential energy over a generic scalar so a tape can differentiate it.
  template <class T>
  T potential_t(std::span<const T> p) const {
    using std::cos;
    if (links_.size() == 1) {
      const auto& l = links_[0];
      return T(-l.mass * g_ * l.com_offset) * cos(p[0]);
    }
    const auto& l1 = links_[0];
    const auto& l2 = links_[1];
    T c1 = cos(p[0]);
    T c12 = cos(p[0] + p[1]);
    return T(-(l1.mass * l1.com_offset + l2.mass * l1.length) * g_) * c1 +
           T(-l2.mass * l2.com_offset * g_) * c12;
  }

 private:
  std::vector<PlanarLink> links_;
  double g_;
};

/// Extracts the planar oracle description from a 3D chain whose links all
/// hinge about the same axis. Lengths come from the anchor offsets, the COM
/// offset from the inboard anchor, and the scalar inertia from the hinge-axis
/// component of the local tensor.
LagrangianChain planar_from_chain(const Chain<double>& chain, double gravity_magnitude);

/// Discrete mechanical work bookkeeping: accumulates (p_t - p_{t-1}) . tau_t
/// per joint and keeps the per-step power series. Angle differences are
/// wrapped to (-pi, pi] so readout wraps do not register as work spikes.
class WorkAccumulator {
 public:
  explicit WorkAccumulator(int joints, double dt);
  void add(std::span<const double> angles, std::span<const double> torques);
  double total() const;
  const std::vector<double>& per_joint() const { return work_; }
  const std::vector<std::vector<double>>& power_series() const { return power_; }

 private:
  double dt_;
  bool primed_ = false;
  std::vector<double> prev_;
  std::vector<double> work_;
  std::vector<std::vector<double>> power_;  // per joint
};

}  // namespace diffpbd
