#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace diffpbd {

/// Raised when an op is recorded at a point where its derivative does not
/// exist (sqrt at or below zero, division by zero, arcsin outside [-1, 1]).
class AutodiffDomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a variable from a stale or foreign tape is used.
class TapeMismatchError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Scalar that records onto the active tape. id < 0 marks a constant that
/// lives off-tape; ops fold constants so untracked arithmetic stays free.
struct Var {
  double v = 0.0;
  int32_t id = -1;
  uint32_t gen = 0;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constant lift is intended
};

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

/// Reverse-mode tape. One tape per thread may be active at a time; nodes hold
/// parent indices and local partials, and backward() runs a single reverse
/// sweep over topological (= insertion) order.
class Tape {
 public:
  enum class Op : uint8_t {
    leaf, add, sub, mul, div, neg, sqrt_op, sin_op, cos_op, asin_op,
    abs_op, min_op, max_op, select_op
  };

  struct Node {
    Op op;
    int32_t a = -1;
    int32_t b = -1;
    double da = 0.0;
    double db = 0.0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Creates an input node. Leaves are the only nodes without parents.
  Var leaf(double value) {
    Var out;
    out.v = value;
    out.id = static_cast<int32_t>(nodes_.size());
    out.gen = gen_;
    nodes_.push_back(Node{Op::leaf});
    return out;
  }

  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Drops all nodes and invalidates every Var recorded so far.
  void reset() {
    nodes_.clear();
    ++gen_;
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t capacity() const { return nodes_.capacity(); }
  uint32_t generation() const { return gen_; }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  /// Adjoints of every node for a scalar loss (seed adjoint 1). A constant
  /// loss yields an all-zero gradient.
  std::vector<double> backward(const Var& loss) const;

  /// Reverse sweep with explicit seeds, accumulated before sweeping. Used to
  /// inject boundary adjoints when a rollout is recomputed in segments.
  std::vector<double> backward(std::span<const std::pair<Var, double>> seeds) const;

  static Tape* active();

  /// Activates a tape on this thread for the scope's lifetime; restores the
  /// previously active tape on exit.
  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  Var record_unary(Op op, const Var& a, double value, double da) {
    check_input(a, op);
    Var out;
    out.v = value;
    out.id = static_cast<int32_t>(nodes_.size());
    out.gen = gen_;
    nodes_.push_back(Node{op, a.id, -1, da, 0.0});
    return out;
  }

  Var record_binary(Op op, const Var& a, const Var& b, double value, double da, double db) {
    check_input(a, op);
    check_input(b, op);
    Var out;
    out.v = value;
    out.id = static_cast<int32_t>(nodes_.size());
    out.gen = gen_;
    nodes_.push_back(Node{op, a.id, b.id, da, db});
    return out;
  }

  static const char* op_name(Op op);

 private:
  void check_input(const Var& x, Op op) const {
    if (x.id >= 0 && x.gen != gen_) {
      throw TapeMismatchError(std::string(op_name(op)) +
                              ": input from a stale tape generation");
    }
  }

  std::vector<Node> nodes_;
  uint32_t gen_ = 1;
};

/// Adjoint lookup for a recorded variable; constants and foreign nodes read 0.
inline double gradient_of(const std::vector<double>& adjoints, const Var& x) {
  if (x.id < 0 || static_cast<std::size_t>(x.id) >= adjoints.size()) return 0.0;
  return adjoints[x.id];
}

namespace detail {

inline Tape& require_tape(const char* op) {
  Tape* t = Tape::active();
  if (!t) throw TapeMismatchError(std::string(op) + ": no active tape on this thread");
  return *t;
}

[[noreturn]] void throw_domain(const char* op, const Var& input, const std::string& what);

inline bool tracked(const Var& x) { return x.id >= 0; }

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  if (!detail::tracked(a) && !detail::tracked(b)) return Var(a.v + b.v);
  return detail::require_tape("add").record_binary(Tape::Op::add, a, b, a.v + b.v, 1.0, 1.0);
}

inline Var operator-(const Var& a, const Var& b) {
  if (!detail::tracked(a) && !detail::tracked(b)) return Var(a.v - b.v);
  return detail::require_tape("sub").record_binary(Tape::Op::sub, a, b, a.v - b.v, 1.0, -1.0);
}

inline Var operator*(const Var& a, const Var& b) {
  if (!detail::tracked(a) && !detail::tracked(b)) return Var(a.v * b.v);
  return detail::require_tape("mul").record_binary(Tape::Op::mul, a, b, a.v * b.v, b.v, a.v);
}

inline Var operator/(const Var& a, const Var& b) {
  if (b.v == 0.0) detail::throw_domain("div", b, "division by zero");
  if (!detail::tracked(a) && !detail::tracked(b)) return Var(a.v / b.v);
  return detail::require_tape("div").record_binary(Tape::Op::div, a, b, a.v / b.v, 1.0 / b.v,
                                                   -a.v / (b.v * b.v));
}

inline Var operator-(const Var& a) {
  if (!detail::tracked(a)) return Var(-a.v);
  return detail::require_tape("neg").record_unary(Tape::Op::neg, a, -a.v, -1.0);
}

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& operator+=(Var& a, const Var& b) { a = a + b; return a; }
inline Var& operator-=(Var& a, const Var& b) { a = a - b; return a; }
inline Var& operator*=(Var& a, const Var& b) { a = a * b; return a; }
inline Var& operator/=(Var& a, const Var& b) { a = a / b; return a; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
inline bool operator<(const Var& a, double b) { return a.v < b; }
inline bool operator>(const Var& a, double b) { return a.v > b; }
inline bool operator<=(const Var& a, double b) { return a.v <= b; }
inline bool operator>=(const Var& a, double b) { return a.v >= b; }

inline Var sqrt(const Var& a) {
  if (a.v <= 0.0) detail::throw_domain("sqrt", a, "argument must be positive");
  double r = std::sqrt(a.v);
  if (!detail::tracked(a)) return Var(r);
  return detail::require_tape("sqrt").record_unary(Tape::Op::sqrt_op, a, r, 0.5 / r);
}

inline Var sin(const Var& a) {
  if (!detail::tracked(a)) return Var(std::sin(a.v));
  return detail::require_tape("sin").record_unary(Tape::Op::sin_op, a, std::sin(a.v), std::cos(a.v));
}

inline Var cos(const Var& a) {
  if (!detail::tracked(a)) return Var(std::cos(a.v));
  return detail::require_tape("cos").record_unary(Tape::Op::cos_op, a, std::cos(a.v), -std::sin(a.v));
}

inline Var asin(const Var& a) {
  if (a.v <= -1.0 || a.v >= 1.0)
    detail::throw_domain("asin", a, "argument must lie strictly inside [-1, 1]");
  if (!detail::tracked(a)) return Var(std::asin(a.v));
  return detail::require_tape("asin").record_unary(Tape::Op::asin_op, a, std::asin(a.v),
                                                   1.0 / std::sqrt(1.0 - a.v * a.v));
}

/// Subgradient 0 at the kink.
inline Var abs(const Var& a) {
  if (!detail::tracked(a)) return Var(std::abs(a.v));
  double d = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
  return detail::require_tape("abs").record_unary(Tape::Op::abs_op, a, std::abs(a.v), d);
}

/// Ties route the partial to the first argument.
inline Var min(const Var& a, const Var& b) {
  if (!detail::tracked(a) && !detail::tracked(b)) return Var(a.v <= b.v ? a.v : b.v);
  bool first = a.v <= b.v;
  return detail::require_tape("min").record_binary(Tape::Op::min_op, a, b, first ? a.v : b.v,
                                                   first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

inline Var max(const Var& a, const Var& b) {
  if (!detail::tracked(a) && !detail::tracked(b)) return Var(a.v >= b.v ? a.v : b.v);
  bool first = a.v >= b.v;
  return detail::require_tape("max").record_binary(Tape::Op::max_op, a, b, first ? a.v : b.v,
                                                   first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

/// Branch resolved at recording time; only the chosen side flows gradient.
inline Var select(bool take_first, const Var& a, const Var& b) {
  const Var& chosen = take_first ? a : b;
  if (!detail::tracked(chosen)) return Var(chosen.v);
  return detail::require_tape("select").record_unary(Tape::Op::select_op, chosen, chosen.v, 1.0);
}

inline double select(bool take_first, double a, double b) { return take_first ? a : b; }

}  // namespace diffpbd
