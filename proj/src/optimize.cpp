#include "diffpbd/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diffpbd/kinematics.hpp"

namespace diffpbd {

void AdamState::update(std::span<double> params, std::span<const double> grads,
                       const AdamOpts& opts) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("AdamState::update: size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opts.beta1, t_);
  const double bc2 = 1.0 - std::pow(opts.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = opts.beta1 * m_[i] + (1.0 - opts.beta1) * grads[i];
    v_[i] = opts.beta2 * v_[i] + (1.0 - opts.beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps);
  }
}

Var trajectory_loss(const std::vector<Chain<Var>>& states,
                    const std::vector<std::vector<double>>& observed_angles,
                    const std::vector<std::vector<double>>& observed_rates,
                    const std::vector<std::vector<Var>>& torques, const LossSpec& spec) {
  if (states.empty()) throw std::invalid_argument("trajectory_loss: no states");
  if (observed_angles.size() < states.size()) {
    throw std::invalid_argument("trajectory_loss: fewer observations than states");
  }
  Var total(0.0);
  const double inv_k = 1.0 / static_cast<double>(std::max(spec.K, 1));
  for (std::size_t t = 0; t < states.size(); ++t) {
    const Chain<Var>& chain = states[t];
    if (spec.lambda1 != 0.0) {
      std::vector<Var> angles = joint_angles(chain);
      for (std::size_t j = 0; j < angles.size(); ++j) {
        Var d = angles[j] - observed_angles[t][j];
        total = total + spec.lambda1 * inv_k * d * d;
      }
    }
    if (spec.lambda2 != 0.0 && !observed_rates.empty()) {
      // Compare world angular velocities: map the observed joint rates through
      // the simulated orientations so both sides live in the same frame.
      std::vector<Var> rates(observed_rates[t].begin(), observed_rates[t].end());
      std::vector<Vec3T<Var>> want =
          joint_velocity_to_world_omega(chain, std::span<const Var>(rates));
      for (std::size_t li = 0; li < chain.links.size(); ++li) {
        if (chain.links[li].is_static) continue;
        Vec3T<Var> d = chain.links[li].angular_velocity - want[li];
        total = total + spec.lambda2 * inv_k * dot(d, d);
      }
    }
    if (spec.lambda3 != 0.0 && t + 1 < torques.size()) {
      for (std::size_t j = 0; j < torques[t].size(); ++j) {
        Var d = torques[t + 1][j] - torques[t][j];
        total = total + spec.lambda3 * inv_k * d * d;
      }
    }
  }
  return total;
}

FitResult identify_parameters(const FitProblem& problem, const AdamOpts& opts, Tape& tape) {
  FitResult result;
  result.params = problem.initial;
  const std::size_t n = result.params.size();
  if (n == 0) throw std::invalid_argument("identify_parameters: no parameters");
  AdamState adam(n);
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  int runaway_streak = 0;
  // Fixed-rate Adam keeps bouncing around the minimum; the best iterate seen
  // is a much lower-variance answer than the last one.
  std::vector<double> best_params = result.params;
  double best_loss = std::numeric_limits<double>::infinity();
  Tape::Scope scope(tape);
  for (int it = 0; it < opts.iterations; ++it) {
    tape.reset();
    std::vector<Var> params;
    params.reserve(n);
    for (double p : result.params) params.push_back(tape.leaf(p));
    Var loss = problem.build_loss(params);
    if (!std::isfinite(loss.v)) {
      throw DivergenceError("identify_parameters: non-finite loss at iteration " +
                            std::to_string(it));
    }
    if (it == 0) initial_loss = std::max(loss.v, 1e-12);
    if (loss.v > 1e3 * initial_loss) {
      if (++runaway_streak >= 50) {
        throw DivergenceError("identify_parameters: loss diverged (exceeded 1000x initial for 50 iterations)");
      }
    } else {
      runaway_streak = 0;
    }
    if (loss.v < best_loss) {
      best_loss = loss.v;
      best_params = result.params;
    }
    std::vector<double> adjoints = tape.backward(loss);
    std::vector<double> grads(n);
    for (std::size_t i = 0; i < n; ++i) grads[i] = gradient_of(adjoints, params[i]);
    result.loss_history.push_back(loss.v);
    adam.update(result.params, grads, opts);
    if (!problem.lower.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        result.params[i] = std::max(result.params[i], problem.lower[i]);
      }
    }
    if (!problem.upper.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        result.params[i] = std::min(result.params[i], problem.upper[i]);
      }
    }
  }
  // The loop's losses lag the updates by one, so the post-loop parameters
  // still need a look before picking the winner.
  tape.reset();
  std::vector<Var> params;
  params.reserve(n);
  for (double p : result.params) params.push_back(tape.leaf(p));
  double last_loss = problem.build_loss(params).v;
  tape.reset();
  if (last_loss <= best_loss) {
    result.final_loss = last_loss;
  } else {
    result.params = best_params;
    result.final_loss = best_loss;
  }
  return result;
}

namespace {

// Mean squared residual for stiffness k chosen optimally at fixed alpha2.
// The model is linear in k: tau = k * g(theta; alpha2), so the best k is the
// least-squares slope through the origin.
SpringFit closed_form_k(const SpringModel& geom, std::span<const double> thetas,
                        std::span<const double> torques, double alpha2) {
  double num = 0.0, den = 0.0;
  std::vector<double> basis(thetas.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    basis[i] = spring_torque(geom, 1.0, alpha2, thetas[i]);
    num += basis[i] * torques[i];
    den += basis[i] * basis[i];
  }
  SpringFit fit;
  fit.alpha2 = alpha2;
  fit.k = den > 0.0 ? num / den : 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const double r = fit.k * basis[i] - torques[i];
    sq += r * r;
  }
  fit.loss = sq / static_cast<double>(std::max<std::size_t>(thetas.size(), 1));
  return fit;
}

}  // namespace

SpringFit fit_spring_least_squares(const SpringModel& geom, std::span<const double> thetas,
                                   std::span<const double> spring_torques, double alpha2,
                                   bool refine_alpha2) {
  if (thetas.size() != spring_torques.size() || thetas.empty()) {
    throw std::invalid_argument("fit_spring_least_squares: need matching nonempty samples");
  }
  bool distinct = false;
  for (std::size_t i = 1; i < thetas.size() && !distinct; ++i) {
    distinct = std::abs(thetas[i] - thetas[0]) > 1e-12;
  }
  if (!distinct) {
    throw std::invalid_argument(
        "fit_spring_least_squares: rank-deficient sample set, need at least two distinct poses");
  }
  SpringFit best = closed_form_k(geom, thetas, spring_torques, alpha2);
  if (!refine_alpha2) return best;
  // Golden-section search over alpha2 in a +-0.3 rad window around the guess;
  // the residual is smooth and unimodal there for realistic mount geometry.
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = alpha2 - 0.3, hi = alpha2 + 0.3;
  double c = hi - phi * (hi - lo);
  double d = lo + phi * (hi - lo);
  SpringFit fc = closed_form_k(geom, thetas, spring_torques, c);
  SpringFit fd = closed_form_k(geom, thetas, spring_torques, d);
  for (int it = 0; it < 80; ++it) {
    if (fc.loss < fd.loss) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - phi * (hi - lo);
      fc = closed_form_k(geom, thetas, spring_torques, c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + phi * (hi - lo);
      fd = closed_form_k(geom, thetas, spring_torques, d);
    }
  }
  SpringFit refined = fc.loss < fd.loss ? fc : fd;
  return refined.loss < best.loss ? refined : best;
}

}  // namespace diffpbd
