#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "diffpbd/io.hpp"
#include "diffpbd/lagrangian.hpp"
#include "oracles.hpp"

using namespace diffpbd;

namespace {
constexpr double kPi = std::numbers::pi;

LagrangianChain two_link_reference() {
  std::vector<PlanarLink> links{{1.0, 0.5, 2.0, 2.0 / 12.0}, {0.7, 0.35, 0.5, 0.5 * 0.49 / 12.0}};
  return LagrangianChain(links, 9.8);
}
}  // namespace

TEST_CASE("horizontal one-link arm needs exactly m g l_com of torque") {
  LagrangianChain chain({{1.0, 0.5, 1.0, 1.0 / 12.0}}, 9.8);
  std::vector<double> p{kPi / 2};  // horizontal, measured from straight down
  std::vector<double> tau = chain.gravity_torque(p);
  CHECK(tau[0] == doctest::Approx(4.9).epsilon(1e-12));
  std::vector<double> down{0.0};
  CHECK(std::abs(chain.gravity_torque(down)[0]) < 1e-12);
}

TEST_CASE("gravity torque equals the gradient of the potential") {
  LagrangianChain chain = two_link_reference();
  oracles::Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p{rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5)};
    std::vector<double> tau = chain.gravity_torque(p);
    std::vector<double> fd = oracles::central_fd(
        [&](const std::vector<double>& q) { return chain.potential(q); }, p);
    CHECK(oracles::rel_err(tau[0], fd[0], 1e-8) < 1e-8);
    CHECK(oracles::rel_err(tau[1], fd[1], 1e-8) < 1e-8);
  }
}

TEST_CASE("gravity torque equals the taped gradient of the potential") {
  LagrangianChain chain = two_link_reference();
  Tape tape;
  Tape::Scope scope(tape);
  std::vector<double> p{0.7, -1.3};
  std::vector<Var> pv{tape.leaf(p[0]), tape.leaf(p[1])};
  Var v = chain.potential_t<Var>(pv);
  auto adj = tape.backward(v);
  std::vector<double> tau = chain.gravity_torque(p);
  CHECK(std::abs(gradient_of(adj, pv[0]) - tau[0]) < 1e-9);
  CHECK(std::abs(gradient_of(adj, pv[1]) - tau[1]) < 1e-9);
}

TEST_CASE("mass matrix is symmetric positive definite and matches kinetic energy") {
  LagrangianChain chain = two_link_reference();
  std::vector<double> p{0.4, -0.9};
  std::vector<double> pd{1.2, -0.5};
  std::vector<double> m = chain.mass_matrix(p);  // row-major 2x2
  CHECK(m[1] == doctest::Approx(m[2]).epsilon(1e-14));
  CHECK(m[0] > 0);
  CHECK(m[0] * m[3] - m[1] * m[2] > 0);
  double ke = 0.5 * (m[0] * pd[0] * pd[0] + 2 * m[1] * pd[0] * pd[1] + m[3] * pd[1] * pd[1]);
  CHECK(chain.kinetic(p, pd) == doctest::Approx(ke).epsilon(1e-12));
}

TEST_CASE("acceleration balances gravity when the holding torque is applied") {
  LagrangianChain chain = two_link_reference();
  std::vector<double> p{0.8, 0.3};
  std::vector<double> pd{0.0, 0.0};
  std::vector<double> tau = chain.gravity_torque(p);
  std::vector<double> acc = chain.acceleration(p, pd, tau);
  CHECK(std::abs(acc[0]) < 1e-10);
  CHECK(std::abs(acc[1]) < 1e-10);
}

TEST_CASE("one-link drop from horizontal accelerates at the rigid-rod rate") {
  // pdd = m g l_com / I_pivot with I_pivot = I_com + m l_com^2.
  LagrangianChain chain({{1.0, 0.5, 1.0, 1.0 / 12.0}}, 9.8);
  std::vector<double> p{kPi / 2}, pd{0.0}, tau{0.0};
  double i_pivot = 1.0 / 12.0 + 0.25;
  std::vector<double> acc = chain.acceleration(p, pd, tau);
  CHECK(acc[0] == doctest::Approx(-4.9 / i_pivot).epsilon(1e-12));
}

TEST_CASE("undamped RK4 pendulum conserves energy to 1e-6 over 10 seconds") {
  LagrangianChain chain({{1.0, 0.5, 1.0, 1.0 / 12.0}}, 9.8);
  std::vector<double> p{0.6}, pd{0.0}, tau{0.0};
  double e0 = chain.kinetic(p, pd) + chain.potential(p);
  const double dt = 1e-4;
  for (int t = 0; t < 100000; ++t) chain.rk4_step(p, pd, tau, dt);
  double e1 = chain.kinetic(p, pd) + chain.potential(p);
  CHECK(std::abs(e1 - e0) / std::abs(e0) < 1e-6);
}

TEST_CASE("velocity bias vanishes at rest and resists fast swings") {
  LagrangianChain chain = two_link_reference();
  std::vector<double> p{0.5, -0.2};
  std::vector<double> zero{0.0, 0.0};
  std::vector<double> c = chain.velocity_bias(p, zero);
  CHECK(std::abs(c[0]) < 1e-14);
  CHECK(std::abs(c[1]) < 1e-14);
  // Coriolis torques are quadratic in the rates.
  std::vector<double> pd{1.0, 2.0};
  std::vector<double> pd2{2.0, 4.0};
  std::vector<double> c1 = chain.velocity_bias(p, pd);
  std::vector<double> c2 = chain.velocity_bias(p, pd2);
  CHECK(c2[0] == doctest::Approx(4 * c1[0]).epsilon(1e-10));
  CHECK(c2[1] == doctest::Approx(4 * c1[1]).epsilon(1e-10));
}

TEST_CASE("planar model extracted from the bundled double pendulum matches its file") {
  LoadedChain loaded = load_chain(DIFFPBD_DATA_DIR "/double_pendulum.chain");
  LagrangianChain planar = planar_from_chain(loaded.chain, 9.8);
  REQUIRE(planar.dof() == 2);
  // Hanging at rest carries no gravity torque; horizontal carries the full
  // first-link moment.
  std::vector<double> down{0.0, 0.0};
  std::vector<double> tau = planar.gravity_torque(down);
  CHECK(std::abs(tau[0]) < 1e-9);
  CHECK(std::abs(tau[1]) < 1e-9);
  std::vector<double> flat{kPi / 2, 0.0};
  std::vector<double> tau_flat = planar.gravity_torque(flat);
  CHECK(tau_flat[0] > 0);
  CHECK(tau_flat[1] > 0);
  CHECK(tau_flat[0] > tau_flat[1]);
}

TEST_CASE("work accumulator integrates applied torque over joint travel") {
  // The first add primes the reference pose; constant torque 2 Nm through
  // 0.1 rad of travel gives W = 0.2 J, and reversing the travel cancels it.
  WorkAccumulator acc(1, 0.01);
  std::vector<double> tau{2.0};
  double angle = 0.0;
  acc.add(std::vector<double>{angle}, tau);
  for (int t = 0; t < 10; ++t) {
    angle += 0.01;
    acc.add(std::vector<double>{angle}, tau);
  }
  CHECK(acc.total() == doctest::Approx(0.2).epsilon(1e-12));
  for (int t = 0; t < 10; ++t) {
    angle -= 0.01;
    acc.add(std::vector<double>{angle}, tau);
  }
  CHECK(std::abs(acc.total()) < 1e-12);
  // dt = 0.01 and dp = 0.01 per step at 2 Nm: instantaneous power 2 W.
  CHECK(acc.power_series()[0][1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("work accumulator treats a wrap crossing as a small step") {
  WorkAccumulator acc(1, 0.01);
  std::vector<double> tau{1.0};
  acc.add(std::vector<double>{kPi - 0.01}, tau);
  acc.add(std::vector<double>{-kPi + 0.01}, tau);
  // Travel is 0.02 rad across the seam, not 2 pi - 0.02.
  CHECK(acc.total() == doctest::Approx(0.02).epsilon(1e-9));
  CHECK(acc.per_joint()[0] == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("constant angle accumulates no work regardless of torque") {
  WorkAccumulator acc(2, 0.01);
  std::vector<double> pose{0.4, -1.0};
  std::vector<double> tau{50.0, -20.0};
  for (int t = 0; t < 5; ++t) acc.add(pose, tau);
  CHECK(acc.total() == 0.0);
}
