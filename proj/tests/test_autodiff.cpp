#include <doctest.h>

#include <cmath>
#include <vector>

#include "diffpbd/autodiff.hpp"
#include "diffpbd/math.hpp"
#include "oracles.hpp"

using namespace diffpbd;

TEST_CASE("recorded multiply stores value and both partials") {
  Tape tape;
  Tape::Scope scope(tape);
  Var a = tape.leaf(3.0), b = tape.leaf(4.0);
  Var c = a * b;
  CHECK(value_of(c) == 12.0);
  const auto& node = tape.node(c.id);
  CHECK(node.op == Tape::Op::mul);
  CHECK(node.a == a.id);
  CHECK(node.b == b.id);
  CHECK(node.da == 4.0);
  CHECK(node.db == 3.0);
}

TEST_CASE("constants fold without touching the tape") {
  Tape tape;
  Tape::Scope scope(tape);
  Var a = Var(2.0) * Var(3.0) + Var(1.0);
  CHECK(value_of(a) == 7.0);
  CHECK(a.id == -1);
  CHECK(tape.size() == 0);
}

TEST_CASE("backward on a small composite matches hand derivatives") {
  // f = sin(x) * y + sqrt(y) at x=0.7, y=2.0
  Tape tape;
  Tape::Scope scope(tape);
  Var x = tape.leaf(0.7), y = tape.leaf(2.0);
  Var f = sin(x) * y + sqrt(y);
  auto adj = tape.backward(f);
  CHECK(gradient_of(adj, x) == doctest::Approx(std::cos(0.7) * 2.0).epsilon(1e-15));
  CHECK(gradient_of(adj, y) ==
        doctest::Approx(std::sin(0.7) + 0.5 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("every op matches central finite differences") {
  auto check_unary = [](double x0, auto fn_var, auto fn_dbl) {
    Tape tape;
    Tape::Scope scope(tape);
    Var x = tape.leaf(x0);
    Var f = fn_var(x);
    auto adj = tape.backward(f);
    auto fd = oracles::central_fd([&](const std::vector<double>& v) { return fn_dbl(v[0]); },
                                  {x0}, 1e-6);
    CHECK(oracles::rel_err(gradient_of(adj, x), fd[0], 1e-9) < 1e-6);
  };
  check_unary(0.37, [](Var x) { return sqrt(x); }, [](double x) { return std::sqrt(x); });
  check_unary(0.37, [](Var x) { return sin(x); }, [](double x) { return std::sin(x); });
  check_unary(0.37, [](Var x) { return cos(x); }, [](double x) { return std::cos(x); });
  check_unary(0.37, [](Var x) { return asin(x); }, [](double x) { return std::asin(x); });
  check_unary(-0.8, [](Var x) { return abs(x); }, [](double x) { return std::abs(x); });
  check_unary(0.37, [](Var x) { return -x; }, [](double x) { return -x; });

  auto check_binary = [](double a0, double b0, auto fn_var, auto fn_dbl) {
    Tape tape;
    Tape::Scope scope(tape);
    Var a = tape.leaf(a0), b = tape.leaf(b0);
    Var f = fn_var(a, b);
    auto adj = tape.backward(f);
    auto fd = oracles::central_fd(
        [&](const std::vector<double>& v) { return fn_dbl(v[0], v[1]); }, {a0, b0}, 1e-6);
    CHECK(oracles::rel_err(gradient_of(adj, a), fd[0], 1e-9) < 1e-6);
    CHECK(oracles::rel_err(gradient_of(adj, b), fd[1], 1e-9) < 1e-6);
  };
  check_binary(1.3, 2.7, [](Var a, Var b) { return a + b; }, [](double a, double b) { return a + b; });
  check_binary(1.3, 2.7, [](Var a, Var b) { return a - b; }, [](double a, double b) { return a - b; });
  check_binary(1.3, 2.7, [](Var a, Var b) { return a * b; }, [](double a, double b) { return a * b; });
  check_binary(1.3, 2.7, [](Var a, Var b) { return a / b; }, [](double a, double b) { return a / b; });
  check_binary(1.3, 2.7, [](Var a, Var b) { return min(a, b); },
               [](double a, double b) { return std::min(a, b); });
  check_binary(1.3, 2.7, [](Var a, Var b) { return max(a, b); },
               [](double a, double b) { return std::max(a, b); });
}

TEST_CASE("domain errors name the op") {
  Tape tape;
  Tape::Scope scope(tape);
  Var zero = tape.leaf(0.0);
  CHECK_THROWS_WITH_AS(sqrt(zero), doctest::Contains("sqrt"), AutodiffDomainError);
  Var one = tape.leaf(1.0);
  CHECK_THROWS_WITH_AS(one / zero, doctest::Contains("div"), AutodiffDomainError);
  Var big = tape.leaf(1.5);
  CHECK_THROWS_WITH_AS(asin(big), doctest::Contains("asin"), AutodiffDomainError);
  CHECK_THROWS_WITH_AS(asin(Var(-1.5)), doctest::Contains("asin"), AutodiffDomainError);
}

TEST_CASE("stale variables are rejected after reset") {
  Tape tape;
  Tape::Scope scope(tape);
  Var x = tape.leaf(1.0);
  tape.reset();
  Var y = tape.leaf(2.0);
  CHECK_THROWS_AS(x + y, TapeMismatchError);
  CHECK_THROWS_AS(tape.backward(x), TapeMismatchError);
}

TEST_CASE("ops without an active tape are rejected") {
  Tape tape;
  Var x;
  {
    Tape::Scope scope(tape);
    x = tape.leaf(1.0);
  }
  CHECK_THROWS_AS(x * x, TapeMismatchError);
}

TEST_CASE("abs at zero uses subgradient zero and min ties pick the first argument") {
  Tape tape;
  Tape::Scope scope(tape);
  Var x = tape.leaf(0.0);
  Var f = abs(x);
  auto adj = tape.backward(f);
  CHECK(gradient_of(adj, x) == 0.0);

  Var a = tape.leaf(2.0), b = tape.leaf(2.0);
  Var m = min(a, b);
  adj = tape.backward(m);
  CHECK(gradient_of(adj, a) == 1.0);
  CHECK(gradient_of(adj, b) == 0.0);
}

TEST_CASE("select records only the branch taken at the primal") {
  Tape tape;
  Tape::Scope scope(tape);
  Var a = tape.leaf(3.0), b = tape.leaf(5.0);
  Var picked = select(value_of(a) < value_of(b), a, b);
  CHECK(value_of(picked) == 3.0);
  auto adj = tape.backward(picked);
  CHECK(gradient_of(adj, a) == 1.0);
  CHECK(gradient_of(adj, b) == 0.0);
}

TEST_CASE("backward is linear in the loss") {
  Tape tape;
  Tape::Scope scope(tape);
  Var x = tape.leaf(0.8), y = tape.leaf(-0.3);
  Var l1 = sin(x) * y;
  Var l2 = x * x + cos(y);
  Var combo = 2.0 * l1 + 3.0 * l2;
  auto g1 = tape.backward(l1);
  auto g2 = tape.backward(l2);
  auto gc = tape.backward(combo);
  for (const Var* v : {&x, &y}) {
    CHECK(gradient_of(gc, *v) ==
          doctest::Approx(2.0 * gradient_of(g1, *v) + 3.0 * gradient_of(g2, *v)).epsilon(1e-14));
  }
}

TEST_CASE("gradient pulled back through normalization is orthogonal to the input") {
  Tape tape;
  Tape::Scope scope(tape);
  oracles::Rng rng(5);
  Quat q0 = rng.unit_quat();
  // Scale off unit length so the normalization does real work.
  QuatT<Var> q{tape.leaf(1.3 * q0.w), tape.leaf(1.3 * q0.x), tape.leaf(1.3 * q0.y),
               tape.leaf(1.3 * q0.z)};
  QuatT<Var> qn = normalize(q);

  // Any scalar read of the normalized quaternion has gradient tangent to the
  // norm level set, i.e. orthogonal to q.
  Var loss = 0.7 * qn.w - 0.2 * qn.x + 0.9 * qn.y + 0.4 * qn.z;
  auto adj = tape.backward(loss);
  double d = gradient_of(adj, q.w) * value_of(q.w) + gradient_of(adj, q.x) * value_of(q.x) +
             gradient_of(adj, q.y) * value_of(q.y) + gradient_of(adj, q.z) * value_of(q.z);
  CHECK(std::abs(d) < 1e-9);

  Var unit_sq = qn.w * qn.w + qn.x * qn.x + qn.y * qn.y + qn.z * qn.z;
  auto adj2 = tape.backward(unit_sq);
  for (const Var* v : {&q.w, &q.x, &q.y, &q.z}) CHECK(std::abs(gradient_of(adj2, *v)) < 1e-9);
}

TEST_CASE("node count grows monotonically and reset clears it") {
  Tape tape;
  Tape::Scope scope(tape);
  Var x = tape.leaf(1.0);
  std::size_t last = tape.size();
  for (int i = 0; i < 10; ++i) {
    x = x * 1.5 + 0.1;
    CHECK(tape.size() > last);
    last = tape.size();
  }
  uint32_t gen = tape.generation();
  tape.reset();
  CHECK(tape.size() == 0);
  CHECK(tape.generation() == gen + 1);
}

TEST_CASE("unreachable leaves receive zero gradient") {
  Tape tape;
  Tape::Scope scope(tape);
  Var x = tape.leaf(1.0);
  Var unused = tape.leaf(9.0);
  Var f = x * x;
  auto adj = tape.backward(f);
  CHECK(gradient_of(adj, unused) == 0.0);
  CHECK(gradient_of(adj, Var(3.0)) == 0.0);  // constants read zero
}
