#include "diffpbd/lagrangian.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffpbd {

LagrangianChain::LagrangianChain(std::vector<PlanarLink> links, double gravity)
    : links_(std::move(links)), g_(gravity) {
  if (links_.empty() || links_.size() > 2)
    throw std::invalid_argument("LagrangianChain: supports one or two links");
  for (const auto& l : links_) {
    if (l.mass <= 0.0) throw std::invalid_argument("LagrangianChain: masses must be positive");
  }
}

std::vector<double> LagrangianChain::gravity_torque(std::span<const double> p) const {
  if (links_.size() == 1) {
    const auto& l = links_[0];
    return {l.mass * g_ * l.com_offset * std::sin(p[0])};
  }
  const auto& l1 = links_[0];
  const auto& l2 = links_[1];
  double s1 = std::sin(p[0]);
  double s12 = std::sin(p[0] + p[1]);
  double g2 = l2.mass * l2.com_offset * g_ * s12;
  double g1 = (l1.mass * l1.com_offset + l2.mass * l1.length) * g_ * s1 + g2;
  return {g1, g2};
}

std::vector<double> LagrangianChain::mass_matrix(std::span<const double> p) const {
  if (links_.size() == 1) {
    const auto& l = links_[0];
    double m11 = l.inertia_com + l.mass * l.com_offset * l.com_offset;
    return {m11};
  }
  const auto& l1 = links_[0];
  const auto& l2 = links_[1];
  double c2 = std::cos(p[1]);
  double a = l1.inertia_com + l1.mass * l1.com_offset * l1.com_offset +
             l2.mass * l1.length * l1.length;
  double b = l2.inertia_com + l2.mass * l2.com_offset * l2.com_offset;
  double h = l2.mass * l1.length * l2.com_offset * c2;
  double m11 = a + b + 2.0 * h;
  double m12 = b + h;
  double m22 = b;
  return {m11, m12, m12, m22};
}

std::vector<double> LagrangianChain::velocity_bias(std::span<const double> p,
                                                   std::span<const double> pdot) const {
  if (links_.size() == 1) return {0.0};
  const auto& l1 = links_[0];
  const auto& l2 = links_[1];
  double hs = l2.mass * l1.length * l2.com_offset * std::sin(p[1]);
  double c1 = -hs * (2.0 * pdot[0] * pdot[1] + pdot[1] * pdot[1]);
  double c2 = hs * pdot[0] * pdot[0];
  return {c1, c2};
}

std::vector<double> LagrangianChain::acceleration(std::span<const double> p,
                                                  std::span<const double> pdot,
                                                  std::span<const double> tau) const {
  auto m = mass_matrix(p);
  auto c = velocity_bias(p, pdot);
  auto g = gravity_torque(p);
  if (links_.size() == 1) {
    if (m[0] == 0.0) throw std::runtime_error("LagrangianChain: singular mass matrix");
    return {(tau[0] - c[0] - g[0]) / m[0]};
  }
  double det = m[0] * m[3] - m[1] * m[2];
  if (det == 0.0) throw std::runtime_error("LagrangianChain: singular mass matrix");
  double r0 = tau[0] - c[0] - g[0];
  double r1 = tau[1] - c[1] - g[1];
  return {(m[3] * r0 - m[1] * r1) / det, (-m[2] * r0 + m[0] * r1) / det};
}

void LagrangianChain::rk4_step(std::vector<double>& p, std::vector<double>& pdot,
                               std::span<const double> tau, double dt) const {
  const int n = dof();
  auto deriv = [&](const std::vector<double>& pp, const std::vector<double>& vv) {
    return acceleration(pp, vv, tau);
  };
  std::vector<double> k1v = deriv(p, pdot);
  std::vector<double> p2(n), v2(n);
  for (int i = 0; i < n; ++i) {
    p2[i] = p[i] + 0.5 * dt * pdot[i];
    v2[i] = pdot[i] + 0.5 * dt * k1v[i];
  }
  std::vector<double> k2v = deriv(p2, v2);
  std::vector<double> p3(n), v3(n);
  for (int i = 0; i < n; ++i) {
    p3[i] = p[i] + 0.5 * dt * v2[i];
    v3[i] = pdot[i] + 0.5 * dt * k2v[i];
  }
  std::vector<double> k3v = deriv(p3, v3);
  std::vector<double> p4(n), v4(n);
  for (int i = 0; i < n; ++i) {
    p4[i] = p[i] + dt * v3[i];
    v4[i] = pdot[i] + dt * k3v[i];
  }
  std::vector<double> k4v = deriv(p4, v4);
  for (int i = 0; i < n; ++i) {
    double dp = (pdot[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]) / 6.0;
    double dv = (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]) / 6.0;
    p[i] += dt * dp;
    pdot[i] += dt * dv;
  }
}

double LagrangianChain::potential(std::span<const double> p) const { return potential_t(p); }

double LagrangianChain::kinetic(std::span<const double> p, std::span<const double> pdot) const {
  auto m = mass_matrix(p);
  if (links_.size() == 1) return 0.5 * m[0] * pdot[0] * pdot[0];
  return 0.5 * (m[0] * pdot[0] * pdot[0] + 2.0 * m[1] * pdot[0] * pdot[1] +
                m[3] * pdot[1] * pdot[1]);
}

LagrangianChain planar_from_chain(const Chain<double>& chain, double gravity_magnitude) {
  std::vector<PlanarLink> out;
  for (const auto& j : chain.joints) {
    const auto& c = chain.links[j.child];
    PlanarLink l;
    l.com_offset = std::sqrt(norm_squared(c.com_to_parent_joint));
    l.length = std::sqrt(norm_squared(c.com_to_child_joint - c.com_to_parent_joint));
    l.mass = c.inv_mass > 0.0 ? 1.0 / c.inv_mass : 0.0;
    Vec3 axis = c.parent_joint_axes.col(j.axis_column);
    l.inertia_com = dot(axis, c.inertia_local * axis);
    out.push_back(l);
  }
  return LagrangianChain(std::move(out), gravity_magnitude);
}

WorkAccumulator::WorkAccumulator(int joints, double dt)
    : dt_(dt), prev_(joints, 0.0), work_(joints, 0.0), power_(joints) {}

namespace {
double wrap_pi(double a) {
  const double pi = std::numbers::pi;
  while (a > pi) a -= 2.0 * pi;
  while (a < -pi) a += 2.0 * pi;
  return a;
}
}  // namespace

void WorkAccumulator::add(std::span<const double> angles, std::span<const double> torques) {
  if (!primed_) {
    for (std::size_t i = 0; i < prev_.size(); ++i) {
      prev_[i] = angles[i];
      power_[i].push_back(0.0);
    }
    primed_ = true;
    return;
  }
  for (std::size_t i = 0; i < prev_.size(); ++i) {
    double dp = wrap_pi(angles[i] - prev_[i]);
    work_[i] += dp * torques[i];
    power_[i].push_back(dp * torques[i] / dt_);
    prev_[i] = angles[i];
  }
}

double WorkAccumulator::total() const {
  double t = 0.0;
  for (double w : work_) t += w;
  return t;
}

}  // namespace diffpbd
