#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "diffpbd/experiments.hpp"
#include "diffpbd/io.hpp"
#include "diffpbd/kinematics.hpp"
#include "oracles.hpp"

using namespace diffpbd;
using oracles::Rng;

namespace {
constexpr double kPi = std::numbers::pi;

std::vector<double> wrap_all(std::vector<double> a) {
  for (double& x : a) {
    while (x > kPi) x -= 2 * kPi;
    while (x < -kPi) x += 2 * kPi;
  }
  return a;
}
}  // namespace

TEST_CASE("joint angles round-trip through forward kinematics") {
  Chain<double> chain = design_chain<double>(1.2, 0.8);
  Rng rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<double> angles{rng.uniform(-kPi + 0.01, kPi - 0.01),
                               rng.uniform(-kPi + 0.01, kPi - 0.01)};
    Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles));
    std::vector<double> back = joint_angles(posed);
    REQUIRE(back.size() == angles.size());
    for (std::size_t j = 0; j < angles.size(); ++j)
      CHECK(std::abs(back[j] - angles[j]) < 1e-9);
  }
}

TEST_CASE("angles beyond a quarter turn disambiguate via the link-axis dot product") {
  // sin(3.0) == sin(pi - 3.0); the arcsin alone cannot tell them apart.
  Chain<double> chain = design_chain<double>(1.0, 1.0);
  for (double a : {3.0, -3.0, 2.0, -2.0, 0.0, 3.1399, -3.1399}) {
    std::vector<double> angles{a, -a / 2};
    Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles));
    std::vector<double> back = wrap_all(joint_angles(posed));
    CHECK(std::abs(back[0] - angles[0]) < 1e-9);
    CHECK(std::abs(back[1] - angles[1]) < 1e-9);
  }
}

TEST_CASE("forward kinematics matches a homogeneous-transform oracle") {
  LoadedChain loaded = load_chain(DIFFPBD_DATA_DIR "/two_link_arm.chain");
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> angles;
    for (std::size_t j = 0; j < loaded.chain.joints.size(); ++j)
      angles.push_back(rng.uniform(-2.5, 2.5));
    Chain<double> posed = chain_from_angles(loaded.chain, std::span<const double>(angles));
    oracles::HomogeneousFk ref = oracles::homogeneous_fk(loaded.chain, angles);
    for (std::size_t i = 0; i < posed.links.size(); ++i) {
      Vec3 d = posed.links[i].position - ref.com[i];
      CHECK(norm(d) < 1e-10);
      Mat3 r = quat_to_rot(posed.links[i].orientation);
      for (int k = 0; k < 9; ++k) CHECK(std::abs(r.m[k] - ref.rot[i].m[k]) < 1e-10);
    }
  }
}

TEST_CASE("seven-link arm poses agree with the oracle joint by joint") {
  LoadedChain loaded = load_chain(DIFFPBD_DATA_DIR "/baxter_left_arm.chain");
  REQUIRE(loaded.chain.joints.size() == 7);
  for (std::size_t k = 0; k < loaded.chain.joints.size(); ++k) {
    CHECK(loaded.chain.joints[k].parent == int(k));
    CHECK(loaded.chain.joints[k].child == int(k) + 1);
  }
  Rng rng(23);
  std::vector<double> angles;
  for (int j = 0; j < 7; ++j) angles.push_back(rng.uniform(-1.5, 1.5));
  Chain<double> posed = chain_from_angles(loaded.chain, std::span<const double>(angles));
  oracles::HomogeneousFk ref = oracles::homogeneous_fk(loaded.chain, angles);
  for (std::size_t i = 0; i < posed.links.size(); ++i)
    CHECK(norm(posed.links[i].position - ref.com[i]) < 1e-10);
  std::vector<double> back = joint_angles(posed);
  for (int j = 0; j < 7; ++j) CHECK(std::abs(back[j] - angles[j]) < 1e-9);
}

TEST_CASE("joint rates round-trip through the velocity map") {
  Chain<double> chain = design_chain<double>(1.5, 0.7);
  std::vector<double> angles{0.4, -1.1};
  std::vector<double> rates{0.7, -0.3};
  Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles),
                                          std::span<const double>(rates));
  std::vector<double> back = joint_rates(posed);
  CHECK(std::abs(back[0] - rates[0]) < 1e-12);
  CHECK(std::abs(back[1] - rates[1]) < 1e-12);
}

TEST_CASE("world angular velocities accumulate joint rates down the chain") {
  Chain<double> chain = design_chain<double>(1.5, 0.7);
  std::vector<double> angles{0.3, 0.9};
  Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles));
  std::vector<double> rates{0.5, -1.2};
  std::vector<Vec3> omega = joint_velocity_to_world_omega(posed, std::span<const double>(rates));
  REQUIRE(omega.size() == posed.links.size());
  // Planar chain about z: omegas are cumulative sums of the rates.
  CHECK(norm(omega[0]) < 1e-15);
  CHECK(std::abs(omega[1].z - 0.5) < 1e-12);
  CHECK(std::abs(omega[2].z - (0.5 - 1.2)) < 1e-12);
  CHECK(std::abs(omega[1].x) + std::abs(omega[1].y) < 1e-12);

  // Assigning those omegas back onto the links must reproduce the rates.
  for (std::size_t i = 0; i < posed.links.size(); ++i) posed.links[i].angular_velocity = omega[i];
  std::vector<double> back = joint_rates(posed);
  CHECK(std::abs(back[0] - rates[0]) < 1e-9);
  CHECK(std::abs(back[1] - rates[1]) < 1e-9);
}

TEST_CASE("straight planar arm has the textbook Jacobian transpose") {
  const double l1 = 1.5, l2 = 0.7;
  Chain<double> chain = design_chain<double>(l1, l2);
  std::vector<double> angles{0.0, 0.0};
  Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles));
  std::vector<double> tau = jacobian_transpose_apply(posed, Vec3{0, 1, 0});
  REQUIRE(tau.size() == 2);
  CHECK(tau[0] == doctest::Approx(l1 + l2).epsilon(1e-12));
  CHECK(tau[1] == doctest::Approx(l2).epsilon(1e-12));
  // A force along the arm does no work through either joint.
  std::vector<double> tau_x = jacobian_transpose_apply(posed, Vec3{1, 0, 0});
  CHECK(std::abs(tau_x[0]) < 1e-12);
  CHECK(std::abs(tau_x[1]) < 1e-12);
}

TEST_CASE("Jacobian transpose equals the gradient of force dot tip position") {
  Chain<double> chain = design_chain<double>(1.1, 0.6);
  Vec3 f{0.8, -0.5, 0.0};
  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> angles{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
    Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles));
    std::vector<double> tau = jacobian_transpose_apply(posed, f);
    auto work = [&](const std::vector<double>& th) {
      Chain<double> c = chain_from_angles(chain, std::span<const double>(th));
      return dot(f, end_effector(c).position);
    };
    std::vector<double> fd = oracles::central_fd(work, angles);
    CHECK(oracles::rel_err(tau[0], fd[0], 1e-8) < 1e-6);
    CHECK(oracles::rel_err(tau[1], fd[1], 1e-8) < 1e-6);
  }
}

TEST_CASE("tip velocity is the time derivative of tip position") {
  Chain<double> chain = design_chain<double>(1.3, 0.9);
  std::vector<double> angles{0.35, -0.8};
  std::vector<double> rates{0.6, 1.4};
  Chain<double> posed = chain_from_angles(chain, std::span<const double>(angles),
                                          std::span<const double>(rates));
  EndEffectorState<double> ee = end_effector(posed);

  const double h = 1e-6;
  std::vector<double> plus{angles[0] + h * rates[0], angles[1] + h * rates[1]};
  std::vector<double> minus{angles[0] - h * rates[0], angles[1] - h * rates[1]};
  Vec3 p_plus = end_effector(chain_from_angles(chain, std::span<const double>(plus))).position;
  Vec3 p_minus = end_effector(chain_from_angles(chain, std::span<const double>(minus))).position;
  Vec3 v_fd = (p_plus - p_minus) / (2 * h);
  CHECK(norm(ee.velocity - v_fd) < 1e-6);
}

TEST_CASE("joint angle gradients flow through the tape") {
  Tape tape;
  Tape::Scope scope(tape);
  Chain<double> base = design_chain<double>(1.0, 0.5);
  std::vector<double> angles{0.4, -0.2};

  Chain<Var> lifted = lift_chain<Var>(base);
  std::vector<Var> a{tape.leaf(angles[0]), tape.leaf(angles[1])};
  Chain<Var> posed = chain_from_angles(lifted, std::span<const Var>(a));
  Var loss = joint_angle(posed, 0) * 2.0 + joint_angle(posed, 1) * joint_angle(posed, 1);
  auto adj = tape.backward(loss);
  CHECK(gradient_of(adj, a[0]) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(gradient_of(adj, a[1]) == doctest::Approx(2 * angles[1]).epsilon(1e-9));
}
