#include "diffpbd/control.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "diffpbd/autodiff.hpp"
#include "diffpbd/solver.hpp"

namespace diffpbd {

NetTorqueMap::NetTorqueMap(const GridSpec& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (grid_.n_dtheta < 2 || grid_.n_omega < 2) {
    throw std::invalid_argument("NetTorqueMap: grid needs at least 2 nodes per axis");
  }
  if (values_.size() != static_cast<std::size_t>(grid_.n_dtheta) * grid_.n_omega) {
    throw std::invalid_argument("NetTorqueMap: value count does not match grid");
  }
}

double NetTorqueMap::node_dtheta(int i) const {
  const double h = 2.0 * grid_.dtheta_max / (grid_.n_dtheta - 1);
  return -grid_.dtheta_max + i * h;
}

double NetTorqueMap::node_omega(int j) const {
  const double h = 2.0 * grid_.omega_max / (grid_.n_omega - 1);
  return -grid_.omega_max + j * h;
}

namespace {

// Fractional grid coordinate with node snapping so queries at node
// coordinates return the stored value exactly.
void locate(double x, double lo, double hi, int n, bool& clamped, int& i0, double& frac) {
  clamped = false;
  if (x < lo) {
    x = lo;
    clamped = true;
  } else if (x > hi) {
    x = hi;
    clamped = true;
  }
  const double s = (x - lo) / (hi - lo) * (n - 1);
  i0 = static_cast<int>(s);
  i0 = std::clamp(i0, 0, n - 2);
  frac = s - i0;
  if (frac < 1e-9) {
    frac = 0.0;
  } else if (frac > 1.0 - 1e-9) {
    i0 += 1;
    frac = 0.0;
    if (i0 > n - 2) {
      i0 = n - 2;
      frac = 1.0;
    }
  }
}

}  // namespace

double NetTorqueMap::query(double dtheta, double omega) const {
  bool clamped_a = false, clamped_b = false;
  int i0 = 0, j0 = 0;
  double fa = 0.0, fb = 0.0;
  locate(dtheta, -grid_.dtheta_max, grid_.dtheta_max, grid_.n_dtheta, clamped_a, i0, fa);
  locate(omega, -grid_.omega_max, grid_.omega_max, grid_.n_omega, clamped_b, j0, fb);
  if ((clamped_a || clamped_b) && !warned_out_of_bounds_) {
    warned_out_of_bounds_ = true;
    std::fprintf(stderr,
                 "net torque map: query (%g rad, %g rad/s) outside bounds; clamping to edge "
                 "(further clamps not reported)\n",
                 dtheta, omega);
  }
  const double v00 = values_[index(i0, j0)];
  const double v10 = values_[index(i0 + 1, j0)];
  const double v01 = values_[index(i0, j0 + 1)];
  const double v11 = values_[index(i0 + 1, j0 + 1)];
  return (1.0 - fa) * ((1.0 - fb) * v00 + fb * v01) + fa * ((1.0 - fb) * v10 + fb * v11);
}

double impedance_torque(double p, double p_dot, double p_des, double p_des_dot,
                        double /*p_des_ddot*/, const ImpedanceParams& params,
                        const NetTorqueMap& map) {
  return pd_torque(p, p_dot, p_des, p_des_dot, params) +
         params.scaling * map.query(p_des - p, p_dot);
}

namespace {

struct NodeSolve {
  double torque = 0.0;
  bool valid = false;
};

// One-step landing problem at a single grid node: Gauss-Newton on the scalar
// residual r(u) = angle_after_step(u) - goal, with a halving line search.
NodeSolve solve_node(const Chain<double>& base, std::size_t joint_index, const SimConfig& sim,
                     double dtheta, double omega0) {
  Tape tape;
  Tape::Scope scope(tape);
  const std::size_t n_joints = base.joints.size();
  const HingeJoint& joint = base.joints[joint_index];
  const std::size_t child = joint.child;

  // Start pose: the chain as given, with the driven joint's rate set to
  // omega0 about its world hinge axis. The goal sits dtheta ahead.
  Chain<double> start = base;
  {
    const RigidLink<double>& parent = start.links[joint.parent];
    Vec3 axis_w = rotate_vec(parent.orientation, parent.child_joint_axes.col(joint.axis_column));
    start.links[child].angular_velocity = omega0 * axis_w;
    Vec3 arm = rotate_vec(start.links[child].orientation, start.links[child].com_to_parent_joint);
    // COM velocity consistent with rotation about the (stationary) joint anchor.
    start.links[child].velocity = cross(start.links[child].angular_velocity, -1.0 * arm);
  }
  const double goal = value_of(joint_angle(start, static_cast<int>(joint_index))) + dtheta;

  auto residual = [&](const Var& u) {
    Chain<Var> chain = lift_chain<Var>(start);
    std::vector<Var> torques(n_joints, Var(0.0));
    torques[joint_index] = u;
    Chain<Var> next = step(chain, sim, std::span<const Var>(torques));
    return joint_angle(next, static_cast<int>(joint_index)) - goal;
  };

  double u = 0.0;
  NodeSolve out;
  for (int it = 0; it < 50; ++it) {
    tape.reset();
    Var uv = tape.leaf(u);
    Var r = residual(uv);
    if (!std::isfinite(r.v)) return out;
    if (std::abs(r.v) < 1e-12) {
      out.torque = u;
      out.valid = true;
      return out;
    }
    std::vector<double> adj = tape.backward(r);
    const double drdu = gradient_of(adj, uv);
    if (!std::isfinite(drdu) || std::abs(drdu) < 1e-14) return out;
    double step_u = -r.v / drdu;
    // Halving line search on |r|.
    double best = std::abs(r.v);
    bool improved = false;
    for (int ls = 0; ls < 20; ++ls) {
      tape.reset();
      Var trial = tape.leaf(u + step_u);
      Var rt = residual(trial);
      if (std::isfinite(rt.v) && std::abs(rt.v) < best) {
        u += step_u;
        improved = true;
        break;
      }
      step_u *= 0.5;
    }
    if (!improved) return out;
  }
  tape.reset();
  {
    Var uv = tape.leaf(u);
    if (std::abs(residual(uv).v) < 1e-10) {
      out.torque = u;
      out.valid = true;
    }
  }
  return out;
}

}  // namespace

NetTorqueMap build_net_torque_map(const Chain<double>& chain, std::size_t joint_index,
                                  const SimConfig& sim, const GridSpec& grid,
                                  std::uint64_t /*seed*/, int threads, MapBuildReport* report) {
  if (joint_index >= chain.joints.size()) {
    throw std::invalid_argument("build_net_torque_map: joint index out of range");
  }
  if (grid.n_dtheta < 2 || grid.n_omega < 2) {
    throw std::invalid_argument("build_net_torque_map: grid needs at least 2 nodes per axis");
  }
  const int ni = grid.n_dtheta, nj = grid.n_omega;
  std::vector<double> values(static_cast<std::size_t>(ni) * nj, 0.0);
  std::vector<char> valid(values.size(), 0);

  NetTorqueMap probe(grid, values);  // for node coordinates only
  auto run_rows = [&](int row_begin, int row_end) {
    for (int i = row_begin; i < row_end; ++i) {
      for (int j = 0; j < nj; ++j) {
        NodeSolve s = solve_node(chain, joint_index, sim, probe.node_dtheta(i), probe.node_omega(j));
        const std::size_t idx = static_cast<std::size_t>(i) * nj + j;
        values[idx] = s.torque;
        valid[idx] = s.valid ? 1 : 0;
      }
    }
  };

  int n_workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_workers = std::clamp(n_workers, 1, ni);
  if (n_workers == 1) {
    run_rows(0, ni);
  } else {
    std::vector<std::thread> pool;
    const int rows_per = (ni + n_workers - 1) / n_workers;
    for (int w = 0; w < n_workers; ++w) {
      const int b = w * rows_per;
      const int e = std::min(ni, b + rows_per);
      if (b < e) pool.emplace_back(run_rows, b, e);
    }
    for (auto& t : pool) t.join();
  }

  // Fill failed nodes from the average of their valid axis neighbors.
  MapBuildReport local_report;
  for (int i = 0; i < ni; ++i) {
    for (int j = 0; j < nj; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * nj + j;
      if (valid[idx]) continue;
      local_report.invalid_cells += 1;
      local_report.invalid_nodes.emplace_back(i, j);
      double sum = 0.0;
      int count = 0;
      auto take = [&](int a, int b) {
        if (a < 0 || a >= ni || b < 0 || b >= nj) return;
        const std::size_t k = static_cast<std::size_t>(a) * nj + b;
        if (valid[k]) {
          sum += values[k];
          count += 1;
        }
      };
      take(i - 1, j);
      take(i + 1, j);
      take(i, j - 1);
      take(i, j + 1);
      values[idx] = count > 0 ? sum / count : 0.0;
    }
  }
  if (report != nullptr) *report = local_report;

  NetTorqueMap map(grid, std::move(values));
  map.set_invalid_cells_filled(local_report.invalid_cells);
  return map;
}

}  // namespace diffpbd
