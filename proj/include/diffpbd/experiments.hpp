#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "diffpbd/chain.hpp"
#include "diffpbd/control.hpp"
#include "diffpbd/io.hpp"
#include "diffpbd/lagrangian.hpp"
#include "diffpbd/optimize.hpp"

namespace diffpbd {

inline constexpr double kRodRadius = 0.02;  // cross-section of the bundled rod links

/// Two rod links hinged about world z, moving in the horizontal xy plane
/// (gravity borne by the joints, so the bundled config sets g = 0). Rod
/// density is 1 kg/m. Differentiable in the lengths so the whole structure,
/// including the straight initial pose along +x, can carry design gradients.
template <class T>
Chain<T> design_chain(const T& l1, const T& l2);

/// Two rod links hanging along -z, hinges about world y; vertical-plane
/// motion under gravity. Mirrors the bundled double_pendulum.chain file.
template <class T>
Chain<T> hanging_chain(const T& l1, const T& l2, double density = 1.0);

/// Static base plus one rod hanging along -z with a y-axis hinge; the
/// workhorse for the spring, torque-map and impedance experiments.
Chain<double> single_joint_chain(double mass, double length);

// --- Double-pendulum design -------------------------------------------------

struct DesignConfig {
  double l1_init = 3.0;
  double l2_init = 0.1;
  int steps = 350;
  // Gravity is zeroed for the rollout (horizontal-plane arm); dt/iterations
  // are honored. dt = 0.005 keeps the short distal link's explicit damping
  // update inside its stability region over the whole search range.
  SimConfig sim{.dt = 0.005};
  double circle_radius = 0.3;
  double circle_center_x = 2.7;  // distance from the base joint along +x
  StiffnessParams controller;
  double lambda_work = 25.0;
  int opt_iterations = 40;
  double min_length = 0.01;
  int checkpoint_segment = 25;
};

/// One closed-loop rollout's scores and plot series.
struct DesignEval {
  double tracking = 0.0;  // sum of tip-to-target distances, m
  double work = 0.0;      // net joint work, J
  double loss = 0.0;      // tracking + lambda * work
  std::vector<double> time, tip_x, tip_y, desired_x, desired_y;
  std::vector<std::vector<double>> power;  // [joint][step]
  std::vector<double> joint_travel;        // total |angle change| per joint
};

struct DesignResult {
  double l1 = 0.0, l2 = 0.0;
  DesignEval initial;
  DesignEval optimized;
  std::vector<double> loss_history;
  int length_clamp_events = 0;
};

/// Desired tip target at step t (t = 0..steps): one full circle.
Vec3 design_target(const DesignConfig& cfg, int t);
Vec3 design_target_velocity(const DesignConfig& cfg, int t);

/// Closed-loop rollout at fixed lengths; fills plot series when detail given.
double design_eval(const DesignConfig& cfg, double l1, double l2, DesignEval* detail = nullptr);

/// Gradient descent with backtracking over the two link lengths.
DesignResult design_pendulum(const DesignConfig& cfg);

// --- Synthetic data ---------------------------------------------------------

/// Rolls the chain forward and records joint angles, rates and the applied
/// torques. Row k holds the state after k steps; torque columns hold the
/// torque applied between row k and row k+1 (last row zero). The callback
/// receives the step index and the joint angles the torque acts from.
TrajectoryData record_rollout(
    const Chain<double>& chain, const SimConfig& sim, int steps,
    const std::function<std::vector<double>(int, const std::vector<double>&)>& torque_fn);

/// Smooth two-joint excitation used by the synthetic MPC task.
std::vector<double> sinusoid_torques(int t, double dt, std::size_t joints);

// --- MPC torque estimation --------------------------------------------------

enum class InitScheme { zero, previous, gravcomp };
enum class LossScheme { angle_only, omega_only, angle_omega };

InitScheme parse_init_scheme(const std::string& name);    // zero|previous|gravcomp
LossScheme parse_loss_scheme(const std::string& name);    // angle-only|omega-only|angle-omega
std::string init_scheme_name(InitScheme s);
std::string loss_scheme_name(LossScheme s);
LossSpec loss_spec_for(LossScheme s, double lambda3 = 0.0);

struct MpcConfig {
  int horizon = 1;  // 1 = short, 3 = long
  InitScheme init = InitScheme::gravcomp;
  LossScheme loss = LossScheme::angle_omega;
  int iterations = 120;
  double lr = 0.2;        // 1.0 for zero init per the estimation experiments
  double lr_cold = 0.0;   // step size when a warm-start scheme has nothing to
                          // warm-start from yet (the first window); 0 = use lr
  double lambda3 = 0.0;   // 2e-7 for the long horizon
};

struct MpcResult {
  std::vector<std::vector<double>> torques;     // [step][joint], estimated
  std::vector<std::vector<double>> sim_angles;  // [step][joint], executed rollout
  double rmse = 0.0;                            // vs file torques when present
  std::vector<double> rmse_per_joint;
  double peak_true_torque = 0.0;
};

/// Receding-horizon torque estimation against an observed trajectory.
/// `gravcomp` supplies model gravity torques for a joint-angle vector; it is
/// required by the gravcomp init scheme and the long horizon, and may be null
/// otherwise.
MpcResult mpc_estimate(const Chain<double>& chain, const SimConfig& sim,
                       const TrajectoryData& observed, const MpcConfig& cfg,
                       const std::function<std::vector<double>(const std::vector<double>&)>&
                           gravcomp = nullptr);

/// Gravity-torque callback backed by the planar closed-form model; throws
/// std::invalid_argument when the chain is not planar-extractable.
std::function<std::vector<double>(const std::vector<double>&)> planar_gravcomp_fn(
    const Chain<double>& chain);

// --- Static gravity-compensation estimation ----------------------------------

struct GravCompConfig {
  int poses = 12;
  double angle_lo = -1.0, angle_hi = 1.0;
  AdamOpts adam{0.25, 0.9, 0.999, 1e-8, 300};
  LossSpec spec{1.0, 0.02, 0.0, 1};
  std::uint64_t seed = 1;
  // When nonempty these poses are evaluated instead of random ones (file mode).
  std::vector<std::vector<double>> poses_override;
};

struct GravCompResult {
  std::vector<std::vector<double>> pose_angles;  // [pose][joint]
  std::vector<std::vector<double>> estimated;    // [pose][joint]
  std::vector<std::vector<double>> oracle;       // [pose][joint]
  std::vector<double> mean, max, min, mae;       // per joint; mae vs oracle
  std::vector<double> loss_history;              // last pose's descent
};

/// Estimates the holding torque of random static poses by asking the
/// simulator to keep each pose still for one step, then compares against the
/// closed-form gravity torque.
GravCompResult gravcomp_estimate(const Chain<double>& chain, const SimConfig& sim,
                                 const GravCompConfig& cfg);

// --- Spring identification ----------------------------------------------------

struct SpringExperimentConfig {
  SpringModel geom{0.2, 0.3, 0.5, 0.2};  // l1, l2, alpha1, x_rest
  double k_true = 800.0;
  double alpha2_true = 0.4;
  int poses = 30;
  double theta_lo = -0.8, theta_hi = 0.5;
  double k_init = 400.0;
  AdamOpts adam{10.0, 0.9, 0.999, 1e-8, 250};
  double lambda2 = 0.02;  // stillness loss weight on angular velocity
  std::uint64_t seed = 2;
  std::vector<double> alpha2_offsets{-0.05, 0.0, 0.05};
  // Measured static poses (angle, motor holding torque). When nonempty they
  // replace the synthetic sweep and k_true is ignored.
  std::vector<double> file_thetas, file_motor;
};

struct SpringExperimentResult {
  std::vector<double> thetas;          // sampled poses
  std::vector<double> spring_torques;  // ground-truth spring torque per pose
  SpringFit curve_fit;
  double diffsim_k = 0.0;
  double diffsim_loss = 0.0;
  std::vector<double> diffsim_loss_history;
  double mean_sq_spring_torque = 0.0;   // normalizer for the shift study
  std::vector<double> shift_offsets;    // echoed alpha2 offsets
  std::vector<double> shift_min_losses; // curve-fit minimum loss per offset
};

/// Synthetic spring study on the bundled single-joint chain: generates static
/// poses from a known (k, alpha2), then recovers k along the curve-fit path
/// (gravity model + least squares) and the simulator path (spring inside the
/// step, Adam on k), plus the alpha2-offset sensitivity of the minimum loss.
SpringExperimentResult fit_spring_experiment(const Chain<double>& chain, const SimConfig& sim,
                                             const SpringExperimentConfig& cfg);

// --- Impedance closed loop -----------------------------------------------------

struct TorqueWindow {
  double t_start = 0.0, t_end = 0.0;
  double magnitude = 0.0;  // N m about the hinge axis
};

struct ImpedanceConfig {
  ImpedanceParams params;
  double goal = -0.45;       // rad
  double duration = 40.0;    // s
  std::vector<TorqueWindow> windows{{5.0, 15.0, 5.0}, {20.0, 30.0, 10.0}};
  double settle_band = 0.01;  // rad
};

struct ImpedanceResult {
  std::vector<double> time, angle, motor_torque, external_torque, pd_component,
      impedance_component;
  std::vector<double> angle_pd_only;     // same scenario without the map term
  std::vector<double> deflection;        // quasi-steady |angle - goal| per window
  std::vector<double> settle_time;       // s from release into the settle band
  double deflection_ratio = 0.0;
};

/// Runs the impedance loop (and a PD-only twin) on a single-joint chain with
/// scheduled external torques, reporting per-window deflections and settle
/// times after each release.
ImpedanceResult impedance_sim(const Chain<double>& chain, std::size_t joint_index,
                              const SimConfig& sim, const ImpedanceConfig& cfg,
                              const NetTorqueMap& map);

}  // namespace diffpbd
