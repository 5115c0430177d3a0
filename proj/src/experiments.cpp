#include "diffpbd/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "diffpbd/checkpoint.hpp"
#include "diffpbd/kinematics.hpp"
#include "diffpbd/rng.hpp"
#include "diffpbd/solver.hpp"

namespace diffpbd {

namespace {

constexpr double kPi = std::numbers::pi;

/// Per-step angle differences stay well inside one turn, so a single
/// correction recovers from readout wraps at +-pi.
template <class T>
T wrap_step_diff(T d) {
  const double v = value_of(d);
  if (v > kPi) return d - 2.0 * kPi;
  if (v < -kPi) return d + 2.0 * kPi;
  return d;
}

template <class T>
RigidLink<T> static_base(const Vec3T<T>& link_axis) {
  RigidLink<T> base;
  base.is_static = true;
  base.inv_mass = T(0);
  base.inv_inertia_local = Mat3T<T>::zero();
  base.link_axis = link_axis;
  base.name = "base";
  return base;
}

/// Thin solid cylinder along `axis_index` (0 = x, 2 = z) of the link frame.
template <class T>
void set_rod_inertia(RigidLink<T>& link, const T& mass, const T& length, int axis_index) {
  const double r2 = kRodRadius * kRodRadius;
  T along = mass * T(0.5 * r2);
  T perp = mass * (length * length * (1.0 / 12.0) + 0.25 * r2);
  T inv_along = 1.0 / along;
  T inv_perp = 1.0 / perp;
  if (axis_index == 0) {
    link.inertia_local = Mat3T<T>::diagonal(along, perp, perp);
    link.inv_inertia_local = Mat3T<T>::diagonal(inv_along, inv_perp, inv_perp);
  } else {
    link.inertia_local = Mat3T<T>::diagonal(perp, perp, along);
    link.inv_inertia_local = Mat3T<T>::diagonal(inv_perp, inv_perp, inv_along);
  }
}

}  // namespace

template <class T>
Chain<T> design_chain(const T& l1, const T& l2) {
  Chain<T> chain;
  chain.links.push_back(static_base<T>({T(1), T(0), T(0)}));

  const T lengths[2] = {l1, l2};
  const char* names[2] = {"link1", "link2"};
  T reach(0.0);
  for (int i = 0; i < 2; ++i) {
    const T& l = lengths[i];
    RigidLink<T> link;
    T mass = l;  // 1 kg/m rods
    link.inv_mass = 1.0 / mass;
    set_rod_inertia(link, mass, l, 0);
    link.com_to_parent_joint = {T(-0.5) * l, T(0), T(0)};
    link.com_to_child_joint = {T(0.5) * l, T(0), T(0)};
    link.link_axis = {T(1), T(0), T(0)};
    link.name = names[i];
    link.position = {reach + T(0.5) * l, T(0), T(0)};
    reach = reach + l;
    chain.links.push_back(std::move(link));
  }
  chain.joints.push_back({0, 1, 2});
  chain.joints.push_back({1, 2, 2});
  return chain;
}

template Chain<double> design_chain<double>(const double&, const double&);
template Chain<Var> design_chain<Var>(const Var&, const Var&);

template <class T>
Chain<T> hanging_chain(const T& l1, const T& l2, double density) {
  Chain<T> chain;
  chain.links.push_back(static_base<T>({T(0), T(0), T(-1)}));

  const T lengths[2] = {l1, l2};
  const char* names[2] = {"link1", "link2"};
  T depth(0.0);
  for (int i = 0; i < 2; ++i) {
    const T& l = lengths[i];
    RigidLink<T> link;
    T mass = density * l;
    link.inv_mass = 1.0 / mass;
    set_rod_inertia(link, mass, l, 2);
    link.com_to_parent_joint = {T(0), T(0), T(0.5) * l};
    link.com_to_child_joint = {T(0), T(0), T(-0.5) * l};
    link.link_axis = {T(0), T(0), T(-1)};
    link.name = names[i];
    link.position = {T(0), T(0), depth - T(0.5) * l};
    depth = depth - l;
    chain.links.push_back(std::move(link));
  }
  chain.joints.push_back({0, 1, 1});
  chain.joints.push_back({1, 2, 1});
  return chain;
}

template Chain<double> hanging_chain<double>(const double&, const double&, double);
template Chain<Var> hanging_chain<Var>(const Var&, const Var&, double);

Chain<double> single_joint_chain(double mass, double length) {
  Chain<double> chain;
  chain.links.push_back(static_base<double>({0.0, 0.0, -1.0}));
  RigidLink<double> link;
  link.inv_mass = 1.0 / mass;
  set_rod_inertia(link, mass, length, 2);
  link.com_to_parent_joint = {0.0, 0.0, 0.5 * length};
  link.com_to_child_joint = {0.0, 0.0, -0.5 * length};
  link.link_axis = {0.0, 0.0, -1.0};
  link.name = "rod";
  link.position = {0.0, 0.0, -0.5 * length};
  chain.links.push_back(std::move(link));
  chain.joints.push_back({0, 1, 1});
  return chain;
}

// --- Design -----------------------------------------------------------------

Vec3 design_target(const DesignConfig& cfg, int t) {
  const double phi = 2.0 * kPi * t / cfg.steps;
  return {cfg.circle_center_x + cfg.circle_radius * std::cos(phi),
          cfg.circle_radius * std::sin(phi), 0.0};
}

Vec3 design_target_velocity(const DesignConfig& cfg, int t) {
  const double phi = 2.0 * kPi * t / cfg.steps;
  const double rate = 2.0 * kPi / (cfg.steps * cfg.sim.dt);
  return {-cfg.circle_radius * rate * std::sin(phi), cfg.circle_radius * rate * std::cos(phi),
          0.0};
}

namespace {

SimConfig design_sim(const DesignConfig& cfg) {
  SimConfig sim = cfg.sim;
  sim.gravity = {0.0, 0.0, 0.0};  // horizontal-plane arm: gravity borne by the hinges
  return sim;
}

template <class T>
std::vector<T> design_torques(const DesignConfig& cfg, const Chain<T>& chain, int t) {
  const Vec3 pd = design_target(cfg, t);
  const Vec3 vd = design_target_velocity(cfg, t);
  return stiffness_torque(chain, Vec3T<T>{T(pd.x), T(pd.y), T(pd.z)},
                          Vec3T<T>{T(vd.x), T(vd.y), T(vd.z)}, cfg.controller);
}

/// Tracking-plus-work term for the transition ending at step t+1. The torque
/// is the controller output that produced the transition.
template <class T>
T design_loss_term(const DesignConfig& cfg, const Chain<T>& prev, const Chain<T>& next,
                   const std::vector<T>& tau, int t) {
  using std::sqrt;
  EndEffectorState<T> ee = end_effector(next);
  const Vec3 pd = design_target(cfg, t + 1);
  Vec3T<T> d = ee.position - Vec3T<T>{T(pd.x), T(pd.y), T(pd.z)};
  T dist_sq = dot(d, d);
  T term = value_of(dist_sq) < 1e-30 ? T(0.0) : sqrt(dist_sq);
  std::vector<T> th_prev = joint_angles(prev);
  std::vector<T> th_next = joint_angles(next);
  for (std::size_t j = 0; j < tau.size(); ++j) {
    term = term + cfg.lambda_work * (wrap_step_diff(th_next[j] - th_prev[j]) * tau[j]);
  }
  return term;
}

}  // namespace

double design_eval(const DesignConfig& cfg, double l1, double l2, DesignEval* detail) {
  const SimConfig sim = design_sim(cfg);
  Chain<double> chain = design_chain<double>(l1, l2);
  const int nj = static_cast<int>(chain.joints.size());
  WorkAccumulator acc(nj, sim.dt);
  acc.add(joint_angles(chain), std::vector<double>(nj, 0.0));

  double tracking = 0.0, loss = 0.0;
  std::vector<double> travel(nj, 0.0);
  std::vector<double> prev_angles = joint_angles(chain);
  for (int t = 0; t < cfg.steps; ++t) {
    std::vector<double> tau = design_torques(cfg, chain, t);
    Chain<double> next = step(chain, sim, std::span<const double>(tau));
    // A very short distal link puts the explicit damping update past its
    // stability limit. Such rollouts chatter at rates far above anything the
    // 3.6 rad/s reference motion needs (the velocity-from-positions update
    // caps rates near pi/dt, so they stay finite), and their signed work
    // swings negative, which would otherwise look attractive to the line
    // search. Score them as infinitely bad instead.
    bool diverged = false;
    for (const auto& link : next.links) {
      const double w2 = dot(link.angular_velocity, link.angular_velocity);
      if (!std::isfinite(w2) || w2 > 2500.0) diverged = true;  // 50 rad/s
    }
    if (diverged || acc.total() < -0.5) {
      if (detail != nullptr) {
        detail->tracking = detail->work = 0.0;
        detail->loss = std::numeric_limits<double>::infinity();
      }
      return std::numeric_limits<double>::infinity();
    }
    loss += design_loss_term(cfg, chain, next, tau, t);
    std::vector<double> angles = joint_angles(next);
    acc.add(angles, tau);

    EndEffectorState<double> ee = end_effector(next);
    const Vec3 pd = design_target(cfg, t + 1);
    tracking += norm(ee.position - pd);
    for (int j = 0; j < nj; ++j) {
      travel[j] += std::abs(wrap_step_diff(angles[j] - prev_angles[j]));
    }
    if (detail != nullptr) {
      detail->time.push_back((t + 1) * sim.dt);
      detail->tip_x.push_back(ee.position.x);
      detail->tip_y.push_back(ee.position.y);
      detail->desired_x.push_back(pd.x);
      detail->desired_y.push_back(pd.y);
    }
    prev_angles = std::move(angles);
    chain = std::move(next);
  }
  if (detail != nullptr) {
    detail->tracking = tracking;
    detail->work = acc.total();
    detail->loss = loss;
    detail->power = acc.power_series();
    detail->joint_travel = travel;
  }
  return loss;
}

DesignResult design_pendulum(const DesignConfig& cfg) {
  DesignResult res;
  design_eval(cfg, cfg.l1_init, cfg.l2_init, &res.initial);

  const SimConfig sim = design_sim(cfg);
  const std::size_t n_state = 3 * kStateScalarsPerLink;

  RolloutFns fns;
  // Step 0 rebuilds the straight initial pose from the length parameters so
  // their influence on the starting state is part of the gradient; the
  // incoming state vector is a placeholder there.
  fns.step = [&cfg, sim](std::span<const Var> params, std::span<const Var> state,
                         int t) -> std::vector<Var> {
    Chain<Var> chain = design_chain<Var>(params[0], params[1]);
    if (t > 0) set_state(chain, state);
    std::vector<Var> tau = design_torques(cfg, chain, t);
    Chain<Var> next = step(chain, sim, std::span<const Var>(tau));
    std::vector<Var> out;
    get_state(next, out);
    return out;
  };
  fns.transition_loss = [&cfg](std::span<const Var> params, std::span<const Var> prev,
                               std::span<const Var> next, int t) -> Var {
    Chain<Var> cprev = design_chain<Var>(params[0], params[1]);
    if (t > 0) set_state(cprev, prev);
    Chain<Var> cnext = design_chain<Var>(params[0], params[1]);
    set_state(cnext, next);
    std::vector<Var> tau = design_torques(cfg, cprev, t);
    return design_loss_term(cfg, cprev, cnext, tau, t);
  };

  Tape tape;
  std::vector<double> params{cfg.l1_init, cfg.l2_init};
  const std::vector<double> placeholder(n_state, 0.0);
  double alpha = 1e-2;
  double current_loss = res.initial.loss;

  for (int it = 0; it < cfg.opt_iterations; ++it) {
    RolloutGradients g =
        checkpoint_rollout(fns, params, placeholder, cfg.steps, cfg.checkpoint_segment, tape);
    res.loss_history.push_back(g.loss);
    current_loss = g.loss;

    const double gnorm_sq =
        g.wrt_params[0] * g.wrt_params[0] + g.wrt_params[1] * g.wrt_params[1];
    if (gnorm_sq < 1e-16) break;

    double a = std::min(alpha * 2.0, 1.0);
    bool accepted = false;
    std::vector<double> trial(2);
    while (a > 1e-7) {
      for (int i = 0; i < 2; ++i) {
        trial[i] = params[i] - a * g.wrt_params[i];
        if (trial[i] < cfg.min_length) {
          trial[i] = cfg.min_length;
          res.length_clamp_events += 1;
          std::fprintf(stderr,
                       "design: link %d length clamped to %g m during line search\n", i + 1,
                       cfg.min_length);
        }
      }
      const double trial_loss = design_eval(cfg, trial[0], trial[1]);
      if (trial_loss < current_loss - 1e-4 * a * gnorm_sq) {
        params = trial;
        current_loss = trial_loss;
        alpha = a;
        accepted = true;
        break;
      }
      a *= 0.5;
    }
    if (!accepted) break;  // no descent direction at line-search resolution
  }

  res.l1 = params[0];
  res.l2 = params[1];
  design_eval(cfg, res.l1, res.l2, &res.optimized);
  res.loss_history.push_back(res.optimized.loss);
  return res;
}

// --- Synthetic data -----------------------------------------------------------

TrajectoryData record_rollout(
    const Chain<double>& chain, const SimConfig& sim, int steps,
    const std::function<std::vector<double>(int, const std::vector<double>&)>& torque_fn) {
  TrajectoryData data;
  data.dt = sim.dt;
  for (const auto& j : chain.joints) {
    data.joint_names.push_back(chain.links[j.child].name.empty()
                                   ? "joint" + std::to_string(j.child)
                                   : chain.links[j.child].name);
  }
  const std::size_t nj = chain.joints.size();
  Chain<double> cur = chain;
  auto push_row = [&](int t, const std::vector<double>& tau) {
    data.times.push_back(t * sim.dt);
    data.angles.push_back(joint_angles(cur));
    data.rates.push_back(joint_rates(cur));
    data.torques.push_back(tau);
  };
  push_row(0, std::vector<double>(nj, 0.0));
  for (int t = 0; t < steps; ++t) {
    std::vector<double> tau = torque_fn(t, data.angles.back());
    if (tau.size() != nj) throw std::invalid_argument("record_rollout: torque size mismatch");
    data.torques.back() = tau;  // torque applied when leaving row t
    cur = step(cur, sim, std::span<const double>(tau));
    push_row(t + 1, std::vector<double>(nj, 0.0));
  }
  return data;
}

std::vector<double> sinusoid_torques(int t, double dt, std::size_t joints) {
  const double time = t * dt;
  std::vector<double> u(joints, 0.0);
  if (joints > 0) u[0] = 8.0 * std::sin(2.0 * kPi * 0.5 * time);
  if (joints > 1) u[1] = 3.0 * std::sin(2.0 * kPi * 0.8 * time + 1.0);
  for (std::size_t j = 2; j < joints; ++j) {
    u[j] = 1.5 * std::sin(2.0 * kPi * 0.4 * time + 0.7 * static_cast<double>(j));
  }
  return u;
}

// --- MPC ----------------------------------------------------------------------

InitScheme parse_init_scheme(const std::string& name) {
  if (name == "zero") return InitScheme::zero;
  if (name == "previous") return InitScheme::previous;
  if (name == "gravcomp") return InitScheme::gravcomp;
  throw std::invalid_argument("unknown init scheme '" + name + "' (zero|previous|gravcomp)");
}

LossScheme parse_loss_scheme(const std::string& name) {
  if (name == "angle-only") return LossScheme::angle_only;
  if (name == "omega-only") return LossScheme::omega_only;
  if (name == "angle-omega") return LossScheme::angle_omega;
  throw std::invalid_argument("unknown loss scheme '" + name +
                              "' (angle-only|omega-only|angle-omega)");
}

std::string init_scheme_name(InitScheme s) {
  switch (s) {
    case InitScheme::zero: return "zero";
    case InitScheme::previous: return "previous";
    case InitScheme::gravcomp: return "gravcomp";
  }
  return "?";
}

std::string loss_scheme_name(LossScheme s) {
  switch (s) {
    case LossScheme::angle_only: return "angle-only";
    case LossScheme::omega_only: return "omega-only";
    case LossScheme::angle_omega: return "angle-omega";
  }
  return "?";
}

LossSpec loss_spec_for(LossScheme s, double lambda3) {
  LossSpec spec;
  spec.lambda3 = lambda3;
  switch (s) {
    case LossScheme::angle_only:
      spec.lambda1 = 1.0;
      spec.lambda2 = 0.0;
      break;
    case LossScheme::omega_only:
      spec.lambda1 = 0.0;
      spec.lambda2 = 1.0;
      break;
    case LossScheme::angle_omega:
      spec.lambda1 = 1.0;
      spec.lambda2 = 0.02;
      break;
  }
  return spec;
}

std::function<std::vector<double>(const std::vector<double>&)> planar_gravcomp_fn(
    const Chain<double>& chain) {
  // captured by value; throws here (not later) when extraction is impossible
  LagrangianChain oracle = planar_from_chain(chain, 9.8);
  return [oracle](const std::vector<double>& angles) { return oracle.gravity_torque(angles); };
}

MpcResult mpc_estimate(const Chain<double>& chain, const SimConfig& sim,
                       const TrajectoryData& observed, const MpcConfig& cfg,
                       const std::function<std::vector<double>(const std::vector<double>&)>&
                           gravcomp) {
  const std::size_t nj = chain.joints.size();
  if (observed.joints() != nj) {
    throw std::invalid_argument("mpc_estimate: trajectory joint count does not match chain");
  }
  if (observed.steps() < 2) throw std::invalid_argument("mpc_estimate: need at least 2 rows");
  if (cfg.horizon < 1) throw std::invalid_argument("mpc_estimate: horizon must be >= 1");
  const bool needs_gravcomp = cfg.init == InitScheme::gravcomp ||
                              (cfg.horizon > 1 && cfg.init == InitScheme::previous);
  if (needs_gravcomp && !gravcomp) {
    throw std::invalid_argument(
        "mpc_estimate: this init scheme needs a gravity-compensation model");
  }

  const int total_steps = static_cast<int>(observed.steps()) - 1;
  Chain<double> cur = chain;
  {
    std::vector<double> rates0 =
        observed.has_rates() ? observed.rates[0] : std::vector<double>(nj, 0.0);
    cur = chain_from_angles(cur, std::span<const double>(observed.angles[0]),
                            std::span<const double>(rates0));
  }

  MpcResult res;
  Tape tape;
  std::vector<double> prev_solution;  // flat horizon x nj of the last solve

  for (int k = 0; k < total_steps; ++k) {
    const int h = std::min(cfg.horizon, total_steps - k);
    std::vector<double> init(static_cast<std::size_t>(h) * nj, 0.0);
    switch (cfg.init) {
      case InitScheme::zero:
        break;
      case InitScheme::previous:
        if (!prev_solution.empty()) {
          for (int i = 0; i < h; ++i) {
            // shift the previous window by one step; repeat its tail
            const int src = std::min(i + 1, static_cast<int>(prev_solution.size() / nj) - 1);
            for (std::size_t j = 0; j < nj; ++j) init[i * nj + j] = prev_solution[src * nj + j];
          }
        }
        break;
      case InitScheme::gravcomp:
        for (int i = 0; i < h; ++i) {
          std::vector<double> g = gravcomp(observed.angles[k + i]);
          for (std::size_t j = 0; j < nj; ++j) init[i * nj + j] = g[j];
        }
        break;
    }
    if (cfg.horizon > 1 && cfg.init == InitScheme::previous && !prev_solution.empty()) {
      // long-horizon convention: last window slot restarts from the model
      std::vector<double> g = gravcomp(observed.angles[k + h - 1]);
      for (std::size_t j = 0; j < nj; ++j) init[(h - 1) * nj + j] = g[j];
    }

    LossSpec spec = loss_spec_for(cfg.loss, cfg.lambda3);
    spec.K = h;
    FitProblem problem;
    problem.initial = init;
    problem.build_loss = [&, h, k](std::span<const Var> params) -> Var {
      Chain<Var> c = lift_chain<Var>(cur);
      std::vector<Chain<Var>> states;
      std::vector<std::vector<Var>> torques;
      states.reserve(h);
      for (int i = 0; i < h; ++i) {
        std::vector<Var> tau(params.begin() + i * nj, params.begin() + (i + 1) * nj);
        c = step(c, sim, std::span<const Var>(tau));
        states.push_back(c);
        torques.push_back(std::move(tau));
      }
      std::vector<std::vector<double>> obs_angles, obs_rates;
      for (int i = 1; i <= h; ++i) {
        obs_angles.push_back(observed.angles[k + i]);
        if (observed.has_rates()) obs_rates.push_back(observed.rates[k + i]);
      }
      return trajectory_loss(states, obs_angles, obs_rates, torques, spec);
    };
    AdamOpts opts;
    opts.lr = cfg.lr;
    // The first window of a previous-torque warm start is effectively a cold
    // zero start; at the warm-start step size its travel budget cannot reach a
    // gravity-loaded torque, and the undershoot feeds the next window.
    if (cfg.lr_cold > 0 && cfg.init == InitScheme::previous && prev_solution.empty()) {
      opts.lr = cfg.lr_cold;
    }
    opts.iterations = cfg.iterations;
    FitResult fit = identify_parameters(problem, opts, tape);

    std::vector<double> u_now(fit.params.begin(), fit.params.begin() + nj);
    res.torques.push_back(u_now);
    cur = step(cur, sim, std::span<const double>(u_now));
    res.sim_angles.push_back(joint_angles(cur));
    prev_solution = std::move(fit.params);
  }

  if (observed.has_torques()) {
    double sq = 0.0;
    std::vector<double> sq_joint(nj, 0.0);
    for (int k = 0; k < total_steps; ++k) {
      for (std::size_t j = 0; j < nj; ++j) {
        const double d = res.torques[k][j] - observed.torques[k][j];
        sq += d * d;
        sq_joint[j] += d * d;
        res.peak_true_torque = std::max(res.peak_true_torque, std::abs(observed.torques[k][j]));
      }
    }
    res.rmse = std::sqrt(sq / (static_cast<double>(total_steps) * nj));
    for (std::size_t j = 0; j < nj; ++j) {
      res.rmse_per_joint.push_back(std::sqrt(sq_joint[j] / total_steps));
    }
  }
  return res;
}

// --- Gravity compensation -------------------------------------------------------

GravCompResult gravcomp_estimate(const Chain<double>& chain, const SimConfig& sim,
                                 const GravCompConfig& cfg) {
  const std::size_t nj = chain.joints.size();
  auto oracle = planar_gravcomp_fn(chain);
  Rng rng(cfg.seed);
  GravCompResult res;
  Tape tape;

  const bool from_file = !cfg.poses_override.empty();
  const int n_poses = from_file ? static_cast<int>(cfg.poses_override.size()) : cfg.poses;
  for (int p = 0; p < n_poses; ++p) {
    std::vector<double> angles(nj);
    if (from_file) {
      if (cfg.poses_override[p].size() != nj) {
        throw std::invalid_argument("gravcomp_estimate: pose joint count does not match chain");
      }
      angles = cfg.poses_override[p];
    } else {
      for (auto& a : angles) a = rng.uniform(cfg.angle_lo, cfg.angle_hi);
    }
    const std::vector<double> zeros(nj, 0.0);
    Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles),
                                            std::span<const double>(zeros));

    FitProblem problem;
    problem.initial.assign(nj, 0.0);
    problem.build_loss = [&](std::span<const Var> params) -> Var {
      Chain<Var> c = lift_chain<Var>(posed);
      std::vector<Var> tau(params.begin(), params.end());
      Chain<Var> next = step(c, sim, std::span<const Var>(tau));
      std::vector<Chain<Var>> states{next};
      std::vector<std::vector<double>> obs_angles{angles};
      std::vector<std::vector<double>> obs_rates{zeros};
      std::vector<std::vector<Var>> torques{tau};
      return trajectory_loss(states, obs_angles, obs_rates, torques, cfg.spec);
    };
    FitResult fit = identify_parameters(problem, cfg.adam, tape);

    res.pose_angles.push_back(angles);
    res.estimated.push_back(fit.params);
    res.oracle.push_back(oracle(angles));
    if (p == n_poses - 1) res.loss_history = fit.loss_history;
  }

  res.mean.assign(nj, 0.0);
  res.max.assign(nj, -std::numeric_limits<double>::infinity());
  res.min.assign(nj, std::numeric_limits<double>::infinity());
  res.mae.assign(nj, 0.0);
  for (int p = 0; p < n_poses; ++p) {
    for (std::size_t j = 0; j < nj; ++j) {
      const double e = res.estimated[p][j];
      res.mean[j] += e / n_poses;
      res.max[j] = std::max(res.max[j], e);
      res.min[j] = std::min(res.min[j], e);
      res.mae[j] += std::abs(e - res.oracle[p][j]) / n_poses;
    }
  }
  return res;
}

// --- Spring -----------------------------------------------------------------------

SpringExperimentResult fit_spring_experiment(const Chain<double>& chain, const SimConfig& sim,
                                             const SpringExperimentConfig& cfg) {
  if (chain.joints.size() != 1) {
    throw std::invalid_argument("fit_spring_experiment: expects a single-joint chain");
  }
  auto oracle = planar_gravcomp_fn(chain);
  Rng rng(cfg.seed);

  SpringExperimentResult res;
  std::vector<double> motor;
  if (!cfg.file_thetas.empty()) {
    if (cfg.file_thetas.size() != cfg.file_motor.size()) {
      throw std::invalid_argument("fit_spring_experiment: pose/torque column size mismatch");
    }
    res.thetas = cfg.file_thetas;
    motor = cfg.file_motor;
    for (std::size_t i = 0; i < res.thetas.size(); ++i) {
      res.spring_torques.push_back(oracle({res.thetas[i]})[0] - motor[i]);
    }
  } else {
    if (cfg.poses < 2) {
      throw std::invalid_argument("fit_spring_experiment: need at least 2 poses");
    }
    motor.resize(cfg.poses);
    for (int i = 0; i < cfg.poses; ++i) {
      const double theta =
          cfg.theta_lo + (cfg.theta_hi - cfg.theta_lo) * i / (cfg.poses - 1.0);
      const double tau_s = spring_torque(cfg.geom, cfg.k_true, cfg.alpha2_true, theta);
      const double tau_g = oracle({theta})[0];
      const double noise = 0.05 * rng.normal();  // sensor-scale torque noise
      res.thetas.push_back(theta);
      motor[i] = tau_g - tau_s + noise;
      // what the curve-fit path reconstructs: spring = gravity model - motor
      res.spring_torques.push_back(tau_g - motor[i]);
    }
  }
  const int n_poses = static_cast<int>(res.thetas.size());
  for (double ts : res.spring_torques) {
    res.mean_sq_spring_torque += ts * ts / n_poses;
  }

  res.curve_fit = fit_spring_least_squares(cfg.geom, res.thetas, res.spring_torques,
                                           cfg.alpha2_true, /*refine_alpha2=*/false);

  // Simulator path: the spring lives inside the step and k is the leaf.
  Tape tape;
  FitProblem problem;
  problem.initial = {cfg.k_init};
  problem.lower = {0.0};
  problem.build_loss = [&](std::span<const Var> params) -> Var {
    const Var& k = params[0];
    Var loss(0.0);
    for (int i = 0; i < n_poses; ++i) {
      const double theta = res.thetas[i];
      const std::vector<double> angles{theta};
      const std::vector<double> zeros{0.0};
      Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles),
                                              std::span<const double>(zeros));
      Chain<Var> c = lift_chain<Var>(posed);
      std::vector<Var> tau{Var(motor[i]) +
                           spring_torque(cfg.geom, k, Var(cfg.alpha2_true), Var(theta))};
      Chain<Var> next = step(c, sim, std::span<const Var>(tau));
      Var da = joint_angle(next, 0) - theta;
      Vec3T<Var> w = next.links[1].angular_velocity;
      loss = loss + da * da + cfg.lambda2 * dot(w, w);
    }
    return loss * (1.0 / n_poses);
  };
  FitResult fit = identify_parameters(problem, cfg.adam, tape);
  res.diffsim_k = fit.params[0];
  res.diffsim_loss = fit.final_loss;
  res.diffsim_loss_history = fit.loss_history;

  for (double off : cfg.alpha2_offsets) {
    SpringFit shifted = fit_spring_least_squares(cfg.geom, res.thetas, res.spring_torques,
                                                 cfg.alpha2_true + off, false);
    res.shift_offsets.push_back(off);
    res.shift_min_losses.push_back(shifted.loss);
  }
  return res;
}

// --- Impedance ----------------------------------------------------------------------

ImpedanceResult impedance_sim(const Chain<double>& chain, std::size_t joint_index,
                              const SimConfig& sim, const ImpedanceConfig& cfg,
                              const NetTorqueMap& map) {
  if (joint_index >= chain.joints.size()) {
    throw std::invalid_argument("impedance_sim: joint index out of range");
  }
  const std::size_t nj = chain.joints.size();
  const int steps = static_cast<int>(std::llround(cfg.duration / sim.dt));
  const HingeJoint& joint = chain.joints[joint_index];

  auto external_at = [&](double time) {
    for (const TorqueWindow& w : cfg.windows) {
      if (time >= w.t_start && time < w.t_end) return w.magnitude;
    }
    return 0.0;
  };

  auto pose_at_goal = [&]() {
    std::vector<double> angles(nj, 0.0), zeros(nj, 0.0);
    angles[joint_index] = cfg.goal;
    return chain_from_angles(chain, std::span<const double>(angles),
                             std::span<const double>(zeros));
  };

  ImpedanceResult res;
  Chain<double> cur = pose_at_goal();
  Chain<double> cur_pd = pose_at_goal();
  for (int t = 0; t < steps; ++t) {
    const double time = t * sim.dt;
    const double ext = external_at(time);

    const double p = joint_angle(cur, static_cast<int>(joint_index));
    const double pdot = joint_rate(cur, static_cast<int>(joint_index));
    const double pd_part = pd_torque(p, pdot, cfg.goal, 0.0, cfg.params);
    const double imp_part = cfg.params.scaling * map.query(cfg.goal - p, pdot);
    const double motor = pd_part + imp_part;

    const RigidLink<double>& parent = cur.links[joint.parent];
    Vec3 axis_w = rotate_vec(parent.orientation, parent.child_joint_axes.col(joint.axis_column));
    std::vector<Vec3> extra(cur.links.size());
    extra[joint.child] = ext * axis_w;
    std::vector<double> tau(nj, 0.0);
    tau[joint_index] = motor;
    cur = step(cur, sim, std::span<const double>(tau), std::span<const Vec3>(extra));

    // PD-only twin for comparison traces
    {
      const double p2 = joint_angle(cur_pd, static_cast<int>(joint_index));
      const double pdot2 = joint_rate(cur_pd, static_cast<int>(joint_index));
      std::vector<double> tau2(nj, 0.0);
      tau2[joint_index] = pd_torque(p2, pdot2, cfg.goal, 0.0, cfg.params);
      const RigidLink<double>& parent2 = cur_pd.links[joint.parent];
      Vec3 axis2 = rotate_vec(parent2.orientation,
                              parent2.child_joint_axes.col(joint.axis_column));
      std::vector<Vec3> extra2(cur_pd.links.size());
      extra2[joint.child] = ext * axis2;
      cur_pd = step(cur_pd, sim, std::span<const double>(tau2), std::span<const Vec3>(extra2));
      res.angle_pd_only.push_back(joint_angle(cur_pd, static_cast<int>(joint_index)));
    }

    res.time.push_back((t + 1) * sim.dt);
    res.angle.push_back(joint_angle(cur, static_cast<int>(joint_index)));
    res.motor_torque.push_back(motor);
    res.external_torque.push_back(ext);
    res.pd_component.push_back(pd_part);
    res.impedance_component.push_back(imp_part);
  }

  // Quasi-steady deflection: mean |angle - goal| over each window's last second.
  for (const TorqueWindow& w : cfg.windows) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < res.time.size(); ++i) {
      if (res.time[i] >= w.t_end - 1.0 && res.time[i] < w.t_end) {
        sum += std::abs(res.angle[i] - cfg.goal);
        ++count;
      }
    }
    res.deflection.push_back(count > 0 ? sum / count : 0.0);

    // Earliest time after release from which the angle stays inside the band
    // until the next disturbance (or the end of the run).
    double horizon_end = cfg.duration;
    for (const TorqueWindow& w2 : cfg.windows) {
      if (w2.t_start > w.t_end) horizon_end = std::min(horizon_end, w2.t_start);
    }
    double settle_at = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < res.time.size(); ++i) {
      const double time = res.time[i];
      if (time < w.t_end || time >= horizon_end) continue;
      if (std::abs(res.angle[i] - cfg.goal) <= cfg.settle_band) {
        if (settle_at == std::numeric_limits<double>::infinity()) settle_at = time;
      } else {
        settle_at = std::numeric_limits<double>::infinity();
      }
    }
    res.settle_time.push_back(settle_at == std::numeric_limits<double>::infinity()
                                  ? std::numeric_limits<double>::infinity()
                                  : settle_at - w.t_end);
  }
  if (res.deflection.size() >= 2 && res.deflection[0] > 0.0) {
    res.deflection_ratio = res.deflection[1] / res.deflection[0];
  }
  return res;
}

}  // namespace diffpbd
