#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diffpbd/chain.hpp"
#include "diffpbd/kinematics.hpp"

namespace diffpbd {

/// Task-space stiffness controller gains.
struct StiffnessParams {
  double K = 60.0;  // N/m
  double D = 6.0;   // N s/m
};

/// Joint-space impedance controller gains plus the scaling applied to the
/// model-based net-torque term.
struct ImpedanceParams {
  double K_m = 30.0;   // N m/rad
  double D_m = 0.01;   // N m s/rad
  double scaling = 1.0;
};

struct GridSpec {
  int n_dtheta = 33;
  int n_omega = 33;
  double dtheta_max = 0.00625;  // rad, largest one-step displacement
  double omega_max = 0.5;       // rad/s
};

/// Lookup table from (goal angle - current angle, current angular velocity)
/// to the net torque that lands the joint on the goal in one simulation step.
/// Bilinear interpolation inside the bounds; queries outside clamp to the
/// edge and warn once per map instance. Queries are not thread-safe with
/// respect to the warning flag.
class NetTorqueMap {
 public:
  NetTorqueMap() = default;
  NetTorqueMap(const GridSpec& grid, std::vector<double> values);

  double query(double dtheta, double omega) const;
  double node_value(int i, int j) const { return values_[index(i, j)]; }
  double node_dtheta(int i) const;
  double node_omega(int j) const;
  const GridSpec& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  int invalid_cells_filled() const { return invalid_filled_; }
  void set_invalid_cells_filled(int n) { invalid_filled_ = n; }

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * grid_.n_omega + j; }
  GridSpec grid_;
  std::vector<double> values_;  // row-major [i_dtheta][j_omega]
  int invalid_filled_ = 0;
  mutable bool warned_out_of_bounds_ = false;
};

/// tau = J^T (K (p_des - p_ee) + D (pdot_des - pdot_ee)); one torque per
/// joint, base to tip. Templated so the closed loop can be recorded on the
/// tape when the controller sits inside an optimized rollout.
template <class T>
std::vector<T> stiffness_torque(const Chain<T>& chain, const Vec3T<T>& p_des,
                                const Vec3T<T>& p_des_dot, const StiffnessParams& params) {
  EndEffectorState<T> ee = end_effector(chain);
  Vec3T<T> force = params.K * (p_des - ee.position) + params.D * (p_des_dot - ee.velocity);
  return jacobian_transpose_apply(chain, force);
}

/// PD part of the impedance law.
inline double pd_torque(double p, double p_dot, double p_des, double p_des_dot,
                        const ImpedanceParams& params) {
  return params.D_m * (p_des_dot - p_dot) + params.K_m * (p_des - p);
}

/// Full impedance law: PD plus the scaled net-torque lookup keyed on
/// (p_des - p, p_dot). The desired-acceleration argument is accepted for
/// interface completeness; the map already covers the inertia-matching
/// component, and the experiments here use a constant goal (zero p_des_ddot).
double impedance_torque(double p, double p_dot, double p_des, double p_des_dot,
                        double p_des_ddot, const ImpedanceParams& params, const NetTorqueMap& map);

struct MapBuildReport {
  int invalid_cells = 0;
  std::vector<std::pair<int, int>> invalid_nodes;
};

/// Builds the lookup by solving, for every grid node (dtheta, omega0), the
/// one-step control problem: start the driven joint at goal - dtheta with
/// rate omega0, hold all other joints fixed, and optimize the torque so the
/// joint lands on the goal after one step (angle-error loss only).
/// Gauss-Newton per node; nodes that fail to converge are filled from valid
/// neighbors and counted in the report. Deterministic for a given grid and
/// seed; rows are distributed over `threads` workers with independent tapes.
NetTorqueMap build_net_torque_map(const Chain<double>& chain, std::size_t joint_index,
                                  const SimConfig& sim, const GridSpec& grid,
                                  std::uint64_t seed = 0, int threads = 0,
                                  MapBuildReport* report = nullptr);

}  // namespace diffpbd
