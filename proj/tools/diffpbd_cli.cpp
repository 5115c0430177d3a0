#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "diffpbd/control.hpp"
#include "diffpbd/experiments.hpp"
#include "diffpbd/io.hpp"
#include "diffpbd/kinematics.hpp"
#include "diffpbd/optimize.hpp"
#include "diffpbd/solver.hpp"

namespace {

using namespace diffpbd;

struct CommonOpts {
  std::string chain_path;
  std::string traj_path;
  std::string out_dir = "out";
  double dt = -1.0;            // <= 0 keeps the chain file's value
  int iterations = -1;         // <= 0 keeps the chain file's value
  std::string solver;          // "", "gs" or "jacobi"
  std::uint64_t seed = 0;
  int threads = 0;
};

void apply_sim_flags(SimConfig& sim, const CommonOpts& c) {
  if (c.dt > 0.0) sim.dt = c.dt;
  if (c.iterations > 0) sim.iterations = c.iterations;
  if (c.solver == "gs") sim.solver = SolverKind::gauss_seidel;
  else if (c.solver == "jacobi") sim.solver = SolverKind::jacobi;
  else if (!c.solver.empty()) throw std::invalid_argument("--solver must be gs or jacobi");
}

void add_common(CLI::App* cmd, CommonOpts& c, bool chain_required) {
  auto* chain = cmd->add_option("--chain", c.chain_path, "chain description file");
  if (chain_required) chain->required();
  cmd->add_option("--traj", c.traj_path, "trajectory file (enables file-data mode)");
  cmd->add_option("--out", c.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--dt", c.dt, "timestep override, s");
  cmd->add_option("--iters", c.iterations, "constraint iterations override");
  cmd->add_option("--solver", c.solver, "constraint sweep: gs or jacobi");
  cmd->add_option("--seed", c.seed, "seed for every stochastic choice")->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker threads (0 = auto)");
}

std::string fmt(double v) { return format_double(v); }

void base_config(RunResult& r, const CommonOpts& c, const SimConfig& sim) {
  if (!c.chain_path.empty()) r.config["chain"] = c.chain_path;
  if (!c.traj_path.empty()) r.config["traj"] = c.traj_path;
  r.config["dt"] = fmt(sim.dt);
  r.config["iterations"] = std::to_string(sim.iterations);
  r.config["solver"] = sim.solver == SolverKind::gauss_seidel ? "gs" : "jacobi";
  r.config["seed"] = std::to_string(c.seed);
}

void finish(RunResult& r, const CommonOpts& c) {
  std::filesystem::create_directories(c.out_dir);
  const std::string path = c.out_dir + "/" + r.experiment + "_result.json";
  save_result(path, r);
  std::printf("result: %s\n", path.c_str());
}

double chain_energy(const Chain<double>& chain, const Vec3& gravity) {
  double e = 0.0;
  for (const auto& link : chain.links) {
    if (link.is_static || link.inv_mass <= 0.0) continue;
    const double m = 1.0 / link.inv_mass;
    e += 0.5 * m * dot(link.velocity, link.velocity);
    Vec3 iw = world_inertia(link) * link.angular_velocity;
    e += 0.5 * dot(link.angular_velocity, iw);
    e -= m * dot(gravity, link.position);
  }
  return e;
}

// --- simulate ----------------------------------------------------------------

struct SimulateOpts {
  CommonOpts common;
  int steps = 200;
  std::string excite = "zero";  // zero | sine
  bool dump_iterations = false;
};

int run_simulate(const SimulateOpts& o) {
  LoadedChain loaded = load_chain(o.common.chain_path);
  SimConfig sim = loaded.config;
  apply_sim_flags(sim, o.common);
  Chain<double> cur = loaded.chain;
  const std::size_t nj = cur.joints.size();

  TrajectoryData file_torques;
  if (!o.common.traj_path.empty()) {
    file_torques = load_trajectory(o.common.traj_path);
    if (!file_torques.has_torques()) {
      throw std::invalid_argument("--traj file has no torque columns to replay");
    }
    if (file_torques.joints() != nj) {
      throw std::invalid_argument("--traj joint count does not match the chain");
    }
  }
  auto torque_fn = [&](int t) -> std::vector<double> {
    if (!o.common.traj_path.empty()) {
      const std::size_t row = std::min<std::size_t>(t, file_torques.steps() - 1);
      return file_torques.torques[row];
    }
    if (o.excite == "sine") return sinusoid_torques(t, sim.dt, nj);
    if (o.excite != "zero") throw std::invalid_argument("--excite must be zero or sine");
    return std::vector<double>(nj, 0.0);
  };

  TrajectoryData data;
  data.dt = sim.dt;
  for (const auto& j : cur.joints) data.joint_names.push_back(cur.links[j.child].name);
  std::vector<double> energy{chain_energy(cur, sim.gravity)};
  SolveTrace first_step_trace;
  data.times.push_back(0.0);
  data.angles.push_back(joint_angles(cur));
  data.rates.push_back(joint_rates(cur));
  data.torques.push_back(std::vector<double>(nj, 0.0));
  for (int t = 0; t < o.steps; ++t) {
    std::vector<double> tau = torque_fn(t);
    data.torques.back() = tau;
    cur = step(cur, sim, std::span<const double>(tau), {},
               t == 0 && o.dump_iterations ? &first_step_trace : nullptr);
    data.times.push_back((t + 1) * sim.dt);
    data.angles.push_back(joint_angles(cur));
    data.rates.push_back(joint_rates(cur));
    data.torques.push_back(std::vector<double>(nj, 0.0));
    energy.push_back(chain_energy(cur, sim.gravity));
  }

  std::filesystem::create_directories(o.common.out_dir);
  const std::string traj_out = o.common.out_dir + "/simulate_trajectory.traj";
  write_trajectory(traj_out, data);

  RunResult r;
  r.experiment = "simulate";
  base_config(r, o.common, sim);
  r.config["steps"] = std::to_string(o.steps);
  r.config["excite"] = o.excite;
  r.series["time"] = data.times;
  r.series["energy"] = energy;
  if (o.dump_iterations) {
    r.series["violation_anchor"] = first_step_trace.max_anchor_gap;
    r.series["violation_axis"] = first_step_trace.max_axis_misalignment;
    std::printf("first-step anchor gap by iteration:");
    for (double v : first_step_trace.max_anchor_gap) std::printf(" %.3e", v);
    std::printf("\n");
  }
  r.fitted["energy_initial"] = energy.front();
  r.fitted["energy_final"] = energy.back();
  r.fitted["energy_drift"] = energy.back() - energy.front();

  if (o.steps == 0) {
    std::printf("steps = 0: initial state echoed to %s\n", traj_out.c_str());
  } else {
    std::printf("trajectory: %s\n", traj_out.c_str());
    std::printf("energy drift over %d steps: E0 = %.6f J, E1 = %.6f J, drift = %.3e J",
                o.steps, energy.front(), energy.back(), energy.back() - energy.front());
    if (std::abs(energy.front()) > 1e-9) {
      std::printf(" (%.3f%%)",
                  100.0 * std::abs(energy.back() - energy.front()) / std::abs(energy.front()));
    }
    std::printf("\n");
  }
  finish(r, o.common);
  return 0;
}

// --- design ------------------------------------------------------------------

struct DesignOpts {
  CommonOpts common;
  int steps = 350;
  int opt_iters = 40;
  double l1 = 3.0, l2 = 0.1;
  double lambda_work = 25.0;
  int segment = 25;
};

int run_design(const DesignOpts& o) {
  DesignConfig cfg;
  cfg.l1_init = o.l1;
  cfg.l2_init = o.l2;
  cfg.steps = o.steps;
  cfg.opt_iterations = o.opt_iters;
  cfg.lambda_work = o.lambda_work;
  cfg.checkpoint_segment = o.segment;
  apply_sim_flags(cfg.sim, o.common);

  DesignResult res = design_pendulum(cfg);

  std::printf("          l1 [m]   l2 [m]   loss     work [J]\n");
  std::printf("initial   %-8.4f %-8.4f %-8.4f %-8.4f\n", cfg.l1_init, cfg.l2_init,
              res.initial.loss, res.initial.work);
  std::printf("optimal   %-8.4f %-8.4f %-8.4f %-8.4f\n", res.l1, res.l2, res.optimized.loss,
              res.optimized.work);

  RunResult r;
  r.experiment = "design";
  base_config(r, o.common, cfg.sim);
  r.config["steps"] = std::to_string(o.steps);
  r.config["opt_iters"] = std::to_string(o.opt_iters);
  r.config["lambda_work"] = fmt(o.lambda_work);
  r.config["l1_init"] = fmt(o.l1);
  r.config["l2_init"] = fmt(o.l2);
  r.loss_history = res.loss_history;
  r.fitted["l1"] = res.l1;
  r.fitted["l2"] = res.l2;
  r.fitted["loss"] = res.optimized.loss;
  r.fitted["work"] = res.optimized.work;
  r.fitted["tracking"] = res.optimized.tracking;
  r.fitted["loss_initial"] = res.initial.loss;
  r.fitted["work_initial"] = res.initial.work;
  r.series["time"] = res.optimized.time;
  r.series["tip_x"] = res.optimized.tip_x;
  r.series["tip_y"] = res.optimized.tip_y;
  r.series["desired_x"] = res.optimized.desired_x;
  r.series["desired_y"] = res.optimized.desired_y;
  for (std::size_t j = 0; j < res.optimized.power.size(); ++j) {
    // drop the priming row so the power series aligns with the time column
    const auto& p = res.optimized.power[j];
    r.series["power_" + std::to_string(j + 1)] =
        std::vector<double>(p.begin() + 1, p.end());
  }
  finish(r, o.common);
  for (const std::string& p : emit_plot_data(r, "loss-curve", o.common.out_dir)) {
    std::printf("plot: %s\n", p.c_str());
  }
  for (const std::string& p : emit_plot_data(r, "design-trajectory", o.common.out_dir)) {
    std::printf("plot: %s\n", p.c_str());
  }
  for (const std::string& p : emit_plot_data(r, "power", o.common.out_dir)) {
    std::printf("plot: %s\n", p.c_str());
  }
  return 0;
}

// --- gravity-comp ------------------------------------------------------------

struct GravCompOpts {
  CommonOpts common;
  int poses = 12;
  double lr = 0.25;
  int opt_iters = 300;
  double lambda1 = 1.0, lambda2 = 0.02;
};

int run_gravcomp(const GravCompOpts& o) {
  LoadedChain loaded = load_chain(o.common.chain_path);
  SimConfig sim = loaded.config;
  apply_sim_flags(sim, o.common);

  GravCompConfig cfg;
  cfg.poses = o.poses;
  cfg.adam.lr = o.lr;
  cfg.adam.iterations = o.opt_iters;
  cfg.spec.lambda1 = o.lambda1;
  cfg.spec.lambda2 = o.lambda2;
  cfg.seed = o.common.seed != 0 ? o.common.seed : 1;
  if (!o.common.traj_path.empty()) {
    TrajectoryData traj = load_trajectory(o.common.traj_path);
    const std::size_t cap = std::min<std::size_t>(traj.steps(), 50);
    for (std::size_t i = 0; i < cap; ++i) cfg.poses_override.push_back(traj.angles[i]);
  }

  GravCompResult res = gravcomp_estimate(loaded.chain, sim, cfg);
  const std::size_t nj = loaded.chain.joints.size();
  const std::size_t np = res.pose_angles.size();

  std::printf("estimated static holding torque vs closed-form model (%zu poses)\n", np);
  for (std::size_t j = 0; j < nj; ++j) {
    std::printf("joint %zu: mean %.4f  min %.4f  max %.4f  mae %.5f N m\n", j + 1, res.mean[j],
                res.min[j], res.max[j], res.mae[j]);
  }

  RunResult r;
  r.experiment = "gravity_comp";
  base_config(r, o.common, sim);
  r.config["poses"] = std::to_string(np);
  r.config["lr"] = fmt(o.lr);
  r.config["opt_iters"] = std::to_string(o.opt_iters);
  r.config["lambda1"] = fmt(o.lambda1);
  r.config["lambda2"] = fmt(o.lambda2);
  r.loss_history = res.loss_history;
  for (std::size_t j = 0; j < nj; ++j) {
    std::vector<double> pose(np), est(np), orc(np);
    for (std::size_t p = 0; p < np; ++p) {
      pose[p] = res.pose_angles[p][j];
      est[p] = res.estimated[p][j];
      orc[p] = res.oracle[p][j];
    }
    const std::string tag = std::to_string(j + 1);
    r.series["pose_angle_" + tag] = pose;
    r.series["estimated_" + tag] = est;
    r.series["oracle_" + tag] = orc;
    r.rmse["mae_joint_" + tag] = res.mae[j];
    r.fitted["mean_torque_joint_" + tag] = res.mean[j];
  }
  finish(r, o.common);
  emit_plot_data(r, "loss-curve", o.common.out_dir);
  return 0;
}

// --- spring-fit ----------------------------------------------------------------

struct SpringOpts {
  CommonOpts common;
  int poses = 30;
  double k_init = 400.0;
  double lr = 10.0;
  int opt_iters = 250;
  double lambda2 = 0.02;
};

int run_spring(const SpringOpts& o) {
  Chain<double> chain;
  SimConfig sim;
  if (!o.common.chain_path.empty()) {
    LoadedChain loaded = load_chain(o.common.chain_path);
    chain = loaded.chain;
    sim = loaded.config;
  } else {
    chain = single_joint_chain(2.0, 0.5);
  }
  apply_sim_flags(sim, o.common);

  SpringExperimentConfig cfg;
  cfg.poses = o.poses;
  cfg.k_init = o.k_init;
  cfg.adam.lr = o.lr;
  cfg.adam.iterations = o.opt_iters;
  cfg.lambda2 = o.lambda2;
  if (o.common.seed != 0) cfg.seed = o.common.seed;
  const bool synthetic = o.common.traj_path.empty();
  if (!synthetic) {
    TrajectoryData traj = load_trajectory(o.common.traj_path);
    if (!traj.has_torques()) {
      throw std::invalid_argument("--traj file needs motor torque columns for spring-fit");
    }
    if (traj.joints() != 1) {
      throw std::invalid_argument("spring-fit expects a single-joint trajectory");
    }
    for (std::size_t i = 0; i < traj.steps(); ++i) {
      cfg.file_thetas.push_back(traj.angles[i][0]);
      cfg.file_motor.push_back(traj.torques[i][0]);
    }
  }

  SpringExperimentResult res = fit_spring_experiment(chain, sim, cfg);

  std::printf("curve-fit path:   k = %.3f N/m (alpha2 = %.3f rad)\n", res.curve_fit.k,
              res.curve_fit.alpha2);
  std::printf("diff-sim path:    k = %.3f N/m\n", res.diffsim_k);
  if (synthetic) {
    std::printf("true stiffness:   k = %.3f N/m\n", cfg.k_true);
  }
  const double agree =
      100.0 * std::abs(res.curve_fit.k - res.diffsim_k) / std::max(res.curve_fit.k, 1e-12);
  std::printf("path agreement:   %.3f%%\n", agree);
  for (std::size_t i = 0; i < res.shift_offsets.size(); ++i) {
    std::printf("alpha2 %+0.2f rad: min loss %.6f (%.4f%% of mean squared torque)\n",
                res.shift_offsets[i], res.shift_min_losses[i],
                100.0 * res.shift_min_losses[i] / std::max(res.mean_sq_spring_torque, 1e-12));
  }

  RunResult r;
  r.experiment = "spring_fit";
  base_config(r, o.common, sim);
  r.config["poses"] = std::to_string(res.thetas.size());
  r.config["k_init"] = fmt(o.k_init);
  r.config["lr"] = fmt(o.lr);
  r.config["opt_iters"] = std::to_string(o.opt_iters);
  r.config["lambda2"] = fmt(o.lambda2);
  r.loss_history = res.diffsim_loss_history;
  r.fitted["k_curve_fit"] = res.curve_fit.k;
  r.fitted["k_diff_sim"] = res.diffsim_k;
  r.fitted["alpha2"] = res.curve_fit.alpha2;
  if (synthetic) r.fitted["k_true"] = cfg.k_true;
  r.series["theta"] = res.thetas;
  r.series["spring_torque"] = res.spring_torques;
  r.series["alpha2_offset"] = res.shift_offsets;
  r.series["alpha2_min_loss"] = res.shift_min_losses;
  finish(r, o.common);
  emit_plot_data(r, "loss-curve", o.common.out_dir);
  return 0;
}

// --- mpc --------------------------------------------------------------------

struct MpcOpts {
  CommonOpts common;
  int steps = 200;
  int horizon = 1;
  std::string init;    // empty = sweep all
  std::string scheme;  // empty = sweep all
  double lr = -1.0;
  int opt_iters = -1;
  double lambda3 = -1.0;
};

MpcConfig mpc_config_for(const MpcOpts& o, InitScheme init, LossScheme loss) {
  MpcConfig cfg;
  cfg.horizon = o.horizon;
  cfg.init = init;
  cfg.loss = loss;
  if (o.horizon > 1) {
    cfg.lr = 0.1;
    cfg.iterations = 120;
    cfg.lambda3 = 2e-7;
  } else {
    cfg.lr = init == InitScheme::zero ? 1.0 : 0.2;
    cfg.lr_cold = 1.0;  // first window of a warm-start run is a cold start
    cfg.iterations = 120;
    cfg.lambda3 = 0.0;
  }
  if (o.lr > 0.0) cfg.lr = o.lr;
  if (o.opt_iters > 0) cfg.iterations = o.opt_iters;
  if (o.lambda3 >= 0.0) cfg.lambda3 = o.lambda3;
  return cfg;
}

int run_mpc(const MpcOpts& o) {
  LoadedChain loaded = load_chain(o.common.chain_path);
  SimConfig sim = loaded.config;
  apply_sim_flags(sim, o.common);
  const std::size_t nj = loaded.chain.joints.size();

  TrajectoryData observed;
  auto gravcomp = planar_gravcomp_fn(loaded.chain);
  if (!o.common.traj_path.empty()) {
    observed = load_trajectory(o.common.traj_path);
  } else {
    // Synthetic reference: lift the arm away from the hanging equilibrium so
    // holding torques carry real load, then drive it with the holding torque
    // for the current pose plus a smooth excitation. This mirrors a
    // gravity-loaded arm tracking task.
    std::vector<double> tilt(nj, 0.3);
    if (nj > 0) tilt[0] = 1.2;
    if (nj > 1) tilt[1] = 0.6;
    std::vector<double> still(nj, 0.0);
    Chain<double> lifted = chain_from_angles(loaded.chain, std::span<const double>(tilt),
                                             std::span<const double>(still));
    observed = record_rollout(lifted, sim, o.steps,
                              [&](int t, const std::vector<double>& angles) {
                                std::vector<double> u = gravcomp(angles);
                                std::vector<double> s = sinusoid_torques(t, sim.dt, nj);
                                for (std::size_t j = 0; j < nj; ++j) u[j] += s[j];
                                return u;
                              });
  }

  std::vector<InitScheme> inits = o.init.empty()
                                      ? std::vector<InitScheme>{InitScheme::zero,
                                                                InitScheme::previous,
                                                                InitScheme::gravcomp}
                                      : std::vector<InitScheme>{parse_init_scheme(o.init)};
  std::vector<LossScheme> losses =
      o.scheme.empty()
          ? std::vector<LossScheme>{LossScheme::angle_only, LossScheme::omega_only,
                                    LossScheme::angle_omega}
          : std::vector<LossScheme>{parse_loss_scheme(o.scheme)};

  struct Run {
    InitScheme init;
    LossScheme loss;
    MpcResult result;
    std::exception_ptr error;
  };
  std::vector<Run> runs;
  for (InitScheme i : inits) {
    for (LossScheme l : losses) runs.push_back({i, l, {}, nullptr});
  }

  const int hw = o.common.threads > 0
                     ? o.common.threads
                     : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int nthreads = std::min<int>(hw, static_cast<int>(runs.size()));
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < nthreads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < runs.size(); i = next.fetch_add(1)) {
        try {
          runs[i].result = mpc_estimate(loaded.chain, sim, observed,
                                        mpc_config_for(o, runs[i].init, runs[i].loss), gravcomp);
        } catch (...) {
          runs[i].error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const Run& run : runs) {
    if (run.error) std::rethrow_exception(run.error);
  }

  RunResult r;
  r.experiment = "mpc";
  base_config(r, o.common, sim);
  r.config["horizon"] = std::to_string(o.horizon);
  r.config["steps"] = std::to_string(static_cast<int>(observed.steps()) - 1);
  if (!o.init.empty()) r.config["init"] = o.init;
  if (!o.scheme.empty()) r.config["scheme"] = o.scheme;

  std::printf("torque estimation RMSE, horizon %d (%zu steps)\n", o.horizon,
              observed.steps() - 1);
  std::printf("%-10s", "init");
  for (LossScheme l : losses) std::printf(" %12s", loss_scheme_name(l).c_str());
  std::printf("\n");
  const Run* featured = nullptr;
  for (InitScheme i : inits) {
    std::printf("%-10s", init_scheme_name(i).c_str());
    for (const Run& run : runs) {
      if (run.init != i) continue;
      std::printf(" %12.5f", run.result.rmse);
      r.rmse[init_scheme_name(run.init) + "/" + loss_scheme_name(run.loss)] = run.result.rmse;
      if (featured == nullptr ||
          (run.init == InitScheme::gravcomp && run.loss == LossScheme::angle_omega)) {
        featured = &run;
      }
    }
    std::printf("\n");
  }
  if (!runs.empty() && runs.front().result.peak_true_torque > 0.0) {
    r.fitted["peak_true_torque"] = runs.front().result.peak_true_torque;
    std::printf("peak reference torque: %.4f N m\n", runs.front().result.peak_true_torque);
  }

  if (featured != nullptr) {
    const MpcResult& m = featured->result;
    std::vector<double> time(m.torques.size());
    for (std::size_t t = 0; t < time.size(); ++t) time[t] = t * sim.dt;
    r.series["time"] = time;
    for (std::size_t j = 0; j < nj; ++j) {
      std::vector<double> est(m.torques.size()), ref(m.torques.size());
      for (std::size_t t = 0; t < m.torques.size(); ++t) {
        est[t] = m.torques[t][j];
        ref[t] = observed.has_torques() ? observed.torques[t][j] : 0.0;
      }
      const std::string tag = std::to_string(j + 1);
      r.series["torque_sim_" + tag] = est;
      r.series["torque_ref_" + tag] = ref;
    }
    r.config["featured"] =
        init_scheme_name(featured->init) + "/" + loss_scheme_name(featured->loss);
  }
  finish(r, o.common);
  if (featured != nullptr && observed.has_torques()) {
    emit_plot_data(r, "torque-traces", o.common.out_dir);
  }
  return 0;
}

// --- torque-map ----------------------------------------------------------------

struct MapOpts {
  CommonOpts common;
  int joint = 0;
  GridSpec grid;
};

Chain<double> impedance_chain_or_load(const CommonOpts& c, SimConfig& sim) {
  if (!c.chain_path.empty()) {
    LoadedChain loaded = load_chain(c.chain_path);
    sim = loaded.config;
    return loaded.chain;
  }
  sim = SimConfig{};
  sim.gravity = {0.0, 0.0, 0.0};  // drive torque map and impedance demos gravity-free
  return single_joint_chain(0.1, 0.5);
}

int run_torque_map(const MapOpts& o) {
  SimConfig sim;
  Chain<double> chain = impedance_chain_or_load(o.common, sim);
  apply_sim_flags(sim, o.common);
  if (o.joint < 0 || o.joint >= static_cast<int>(chain.joints.size())) {
    throw std::invalid_argument("--joint index out of range for this chain");
  }

  MapBuildReport report;
  NetTorqueMap map = build_net_torque_map(chain, o.joint, sim, o.grid, o.common.seed,
                                          o.common.threads, &report);

  std::filesystem::create_directories(o.common.out_dir);
  const std::string map_path = o.common.out_dir + "/net_torque_map.json";
  save_map(map_path, map);
  std::printf("net torque map: %d x %d nodes over [%+.5f, %+.5f] rad x [%+.2f, %+.2f] rad/s\n",
              o.grid.n_dtheta, o.grid.n_omega, -o.grid.dtheta_max, o.grid.dtheta_max,
              -o.grid.omega_max, o.grid.omega_max);
  std::printf("invalid cells filled from neighbors: %d\n", report.invalid_cells);
  std::printf("map file: %s\n", map_path.c_str());

  RunResult r;
  r.experiment = "torque_map";
  base_config(r, o.common, sim);
  r.config["joint"] = std::to_string(o.joint);
  r.config["n_dtheta"] = std::to_string(o.grid.n_dtheta);
  r.config["n_omega"] = std::to_string(o.grid.n_omega);
  r.fitted["invalid_cells"] = report.invalid_cells;
  r.fitted["center_value"] = map.query(0.0, 0.0);
  std::vector<double> gd, go, gv;
  for (int i = 0; i < o.grid.n_dtheta; ++i) {
    for (int k = 0; k < o.grid.n_omega; ++k) {
      gd.push_back(map.node_dtheta(i));
      go.push_back(map.node_omega(k));
      gv.push_back(map.node_value(i, k));
    }
  }
  r.series["map_dtheta"] = gd;
  r.series["map_omega"] = go;
  r.series["map_value"] = gv;
  finish(r, o.common);
  emit_plot_data(r, "torque-map-grid", o.common.out_dir);
  return 0;
}

// --- impedance-sim ----------------------------------------------------------------

struct ImpedanceOpts {
  CommonOpts common;
  std::string map_path;
  int joint = 0;
  double goal = -0.45;
  double km = 30.0, dm = 0.01, scaling = 1.0;
  double duration = 40.0;
};

int run_impedance(const ImpedanceOpts& o) {
  SimConfig sim;
  Chain<double> chain = impedance_chain_or_load(o.common, sim);
  apply_sim_flags(sim, o.common);
  if (o.joint < 0 || o.joint >= static_cast<int>(chain.joints.size())) {
    throw std::invalid_argument("--joint index out of range for this chain");
  }

  NetTorqueMap map = o.map_path.empty()
                         ? build_net_torque_map(chain, o.joint, sim, GridSpec{},
                                                o.common.seed, o.common.threads)
                         : load_map(o.map_path);

  ImpedanceConfig cfg;
  cfg.params.K_m = o.km;
  cfg.params.D_m = o.dm;
  cfg.params.scaling = o.scaling;
  cfg.goal = o.goal;
  cfg.duration = o.duration;
  ImpedanceResult res = impedance_sim(chain, o.joint, sim, cfg, map);

  for (std::size_t w = 0; w < res.deflection.size(); ++w) {
    std::printf("window %zu: quasi-steady deflection %.4f rad, settle %.2f s after release\n",
                w + 1, res.deflection[w], res.settle_time[w]);
  }
  if (res.deflection_ratio > 0.0) {
    std::printf("deflection ratio (window 2 / window 1): %.3f\n", res.deflection_ratio);
  }

  RunResult r;
  r.experiment = "impedance_sim";
  base_config(r, o.common, sim);
  r.config["joint"] = std::to_string(o.joint);
  r.config["goal"] = fmt(o.goal);
  r.config["K_m"] = fmt(o.km);
  r.config["D_m"] = fmt(o.dm);
  r.config["scaling"] = fmt(o.scaling);
  r.config["duration"] = fmt(o.duration);
  if (!o.map_path.empty()) r.config["map"] = o.map_path;
  r.series["time"] = res.time;
  r.series["angle"] = res.angle;
  r.series["motor_torque"] = res.motor_torque;
  r.series["external_torque"] = res.external_torque;
  r.series["pd_component"] = res.pd_component;
  r.series["impedance_component"] = res.impedance_component;
  r.series["angle_pd_only"] = res.angle_pd_only;
  for (std::size_t w = 0; w < res.deflection.size(); ++w) {
    r.fitted["deflection_" + std::to_string(w + 1)] = res.deflection[w];
    // -1 marks "never settled"; infinity would not survive the JSON round trip
    r.fitted["settle_" + std::to_string(w + 1)] =
        std::isfinite(res.settle_time[w]) ? res.settle_time[w] : -1.0;
  }
  r.fitted["deflection_ratio"] = res.deflection_ratio;
  finish(r, o.common);
  emit_plot_data(r, "impedance-traces", o.common.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable position-based dynamics experiments"};
  app.require_subcommand(1);

  SimulateOpts sim_opts;
  auto* c_sim = app.add_subcommand("simulate", "roll a chain forward and record a trajectory");
  add_common(c_sim, sim_opts.common, true);
  c_sim->add_option("--steps", sim_opts.steps, "number of timesteps")->capture_default_str();
  c_sim->add_option("--excite", sim_opts.excite, "torque source when no --traj: zero or sine")
      ->capture_default_str();
  c_sim->add_flag("--dump-iterations", sim_opts.dump_iterations,
                  "record per-iteration constraint violations of the first step");

  DesignOpts design_opts;
  auto* c_design = app.add_subcommand("design", "optimize the two link lengths of the arm");
  add_common(c_design, design_opts.common, false);
  c_design->add_option("--steps", design_opts.steps, "rollout steps per circle")
      ->capture_default_str();
  c_design->add_option("--opt-iters", design_opts.opt_iters, "descent iterations")
      ->capture_default_str();
  c_design->add_option("--l1", design_opts.l1, "initial length of link 1, m")
      ->capture_default_str();
  c_design->add_option("--l2", design_opts.l2, "initial length of link 2, m")
      ->capture_default_str();
  c_design->add_option("--lambda1", design_opts.lambda_work, "work penalty weight")
      ->capture_default_str();
  c_design->add_option("--segment", design_opts.segment, "checkpoint segment length")
      ->capture_default_str();

  GravCompOpts grav_opts;
  auto* c_grav = app.add_subcommand("gravity-comp",
                                    "estimate static holding torques for random poses");
  add_common(c_grav, grav_opts.common, true);
  c_grav->add_option("--poses", grav_opts.poses, "number of random poses")
      ->capture_default_str();
  c_grav->add_option("--lr", grav_opts.lr, "optimizer step size")->capture_default_str();
  c_grav->add_option("--opt-iters", grav_opts.opt_iters, "optimizer iterations")
      ->capture_default_str();
  c_grav->add_option("--lambda1", grav_opts.lambda1, "angle loss weight")
      ->capture_default_str();
  c_grav->add_option("--lambda2", grav_opts.lambda2, "angular velocity loss weight")
      ->capture_default_str();

  SpringOpts spring_opts;
  auto* c_spring = app.add_subcommand("spring-fit",
                                      "identify spring stiffness from static poses");
  add_common(c_spring, spring_opts.common, false);
  c_spring->add_option("--poses", spring_opts.poses, "synthetic pose count")
      ->capture_default_str();
  c_spring->add_option("--k-init", spring_opts.k_init, "initial stiffness guess, N/m")
      ->capture_default_str();
  c_spring->add_option("--lr", spring_opts.lr, "optimizer step size")->capture_default_str();
  c_spring->add_option("--opt-iters", spring_opts.opt_iters, "optimizer iterations")
      ->capture_default_str();
  c_spring->add_option("--lambda2", spring_opts.lambda2, "stillness loss weight")
      ->capture_default_str();

  MpcOpts mpc_opts;
  auto* c_mpc = app.add_subcommand("mpc", "receding-horizon torque estimation");
  add_common(c_mpc, mpc_opts.common, true);
  c_mpc->add_option("--steps", mpc_opts.steps, "synthetic trajectory steps when no --traj")
      ->capture_default_str();
  c_mpc->add_option("--horizon", mpc_opts.horizon, "lookahead steps (1 or 3)")
      ->capture_default_str();
  c_mpc->add_option("--init", mpc_opts.init, "zero|previous|gravcomp (default: sweep all)");
  c_mpc->add_option("--scheme", mpc_opts.scheme,
                    "angle-only|omega-only|angle-omega (default: sweep all)");
  c_mpc->add_option("--lr", mpc_opts.lr, "optimizer step size (default per scheme)");
  c_mpc->add_option("--opt-iters", mpc_opts.opt_iters, "optimizer iterations per step");
  c_mpc->add_option("--lambda3", mpc_opts.lambda3, "torque smoothness weight");

  MapOpts map_opts;
  auto* c_map = app.add_subcommand("torque-map",
                                   "precompute the net-torque lookup for one joint");
  add_common(c_map, map_opts.common, false);
  c_map->add_option("--joint", map_opts.joint, "joint index")->capture_default_str();

  ImpedanceOpts imp_opts;
  auto* c_imp = app.add_subcommand("impedance-sim",
                                   "closed-loop impedance control with scheduled disturbances");
  add_common(c_imp, imp_opts.common, false);
  c_imp->add_option("--map", imp_opts.map_path, "net torque map file (built fresh if absent)");
  c_imp->add_option("--joint", imp_opts.joint, "joint index")->capture_default_str();
  c_imp->add_option("--goal", imp_opts.goal, "goal angle, rad")->capture_default_str();
  c_imp->add_option("--km", imp_opts.km, "impedance stiffness K_m")->capture_default_str();
  c_imp->add_option("--dm", imp_opts.dm, "impedance damping D_m")->capture_default_str();
  c_imp->add_option("--scaling", imp_opts.scaling, "map term scaling")->capture_default_str();
  c_imp->add_option("--duration", imp_opts.duration, "simulated seconds")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(c_sim)) return run_simulate(sim_opts);
    if (app.got_subcommand(c_design)) return run_design(design_opts);
    if (app.got_subcommand(c_grav)) return run_gravcomp(grav_opts);
    if (app.got_subcommand(c_spring)) return run_spring(spring_opts);
    if (app.got_subcommand(c_mpc)) return run_mpc(mpc_opts);
    if (app.got_subcommand(c_map)) return run_torque_map(map_opts);
    if (app.got_subcommand(c_imp)) return run_impedance(imp_opts);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
