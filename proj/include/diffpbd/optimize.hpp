#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffpbd/autodiff.hpp"
#include "diffpbd/chain.hpp"

namespace diffpbd {

/// Raised when an optimization loop detects a runaway loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction; moments are per-parameter.
struct AdamOpts {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int iterations = 100;
};

class AdamState {
 public:
  explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}
  void update(std::span<double> params, std::span<const double> grads, const AdamOpts& opts);
  int step_count() const { return t_; }

 private:
  std::vector<double> m_, v_;
  int t_ = 0;
};

/// Weights of the trajectory tracking loss: angle error, world angular
/// velocity error, and torque smoothness, averaged by K.
struct LossSpec {
  double lambda1 = 1.0;
  double lambda2 = 0.0;
  double lambda3 = 0.0;
  int K = 1;
};

/// Tracking loss over an executed rollout. `states[t]` is the chain after
/// step t (t = 0..T-1); observations index the same way. The angular velocity
/// term compares each link's world angular velocity against the observed
/// joint rates mapped through the current link orientations. The smoothness
/// term penalizes successive torque differences, starting at the second step.
Var trajectory_loss(const std::vector<Chain<Var>>& states,
                    const std::vector<std::vector<double>>& observed_angles,
                    const std::vector<std::vector<double>>& observed_rates,
                    const std::vector<std::vector<Var>>& torques, const LossSpec& spec);

/// Generic Adam fit of a scalar loss recorded on a tape. `build_loss` runs
/// under the active tape with the current parameters as leaves. Bounds are
/// optional elementwise clamps. Aborts with DivergenceError when the loss
/// exceeds 1e3 x the initial loss for 50 consecutive iterations.
struct FitProblem {
  std::function<Var(std::span<const Var> params)> build_loss;
  std::vector<double> initial;
  std::vector<double> lower, upper;  // empty = unbounded
};

struct FitResult {
  std::vector<double> params;
  std::vector<double> loss_history;
  double final_loss = 0.0;
};

FitResult identify_parameters(const FitProblem& problem, const AdamOpts& opts, Tape& tape);

/// Elbow spring model: torque about the sprung joint as a function of the
/// joint angle and the geometric mounting parameters. `alpha1`, `alpha2` are
/// the mount angles, `l1`, `l2` the mount arm lengths, `x_rest` the spring
/// rest length.
struct SpringModel {
  double l1 = 0.1;
  double l2 = 0.1;
  double alpha1 = 0.5;
  double x_rest = 0.2;
};

/// tau_s = sin(pi - a1 - a2 - theta) * (l1 l2 / x) * k * (x - x_rest) with
/// x the spring length closed over the two mount arms.
template <class T>
T spring_torque(const SpringModel& geom, const T& k, const T& alpha2, const T& theta) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const double pi = 3.14159265358979323846;
  T beta = T(pi) - T(geom.alpha1) - alpha2 - theta;
  T span = T(pi) - T(geom.alpha1) - alpha2;
  T x_sq = 2.0 * geom.l1 * geom.l2 * cos(span) + T(geom.l1 * geom.l1 + geom.l2 * geom.l2);
  T x = sqrt(x_sq);
  return sin(beta) * T(geom.l1 * geom.l2) / x * k * (x - T(geom.x_rest));
}

/// Least-squares spring fit from pose/torque pairs: linear in k for fixed
/// alpha2, with an optional 1-D refinement over alpha2. Returns the fitted
/// (k, alpha2) and the mean squared torque residual.
struct SpringFit {
  double k = 0.0;
  double alpha2 = 0.0;
  double loss = 0.0;  // mean squared residual, (N m)^2
};

SpringFit fit_spring_least_squares(const SpringModel& geom, std::span<const double> thetas,
                                   std::span<const double> spring_torques, double alpha2,
                                   bool refine_alpha2);

}  // namespace diffpbd
