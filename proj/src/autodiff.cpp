#include "diffpbd/autodiff.hpp"

#include <algorithm>

namespace diffpbd {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::sqrt_op: return "sqrt";
    case Op::sin_op: return "sin";
    case Op::cos_op: return "cos";
    case Op::asin_op: return "asin";
    case Op::abs_op: return "abs";
    case Op::min_op: return "min";
    case Op::max_op: return "max";
    case Op::select_op: return "select";
  }
  return "?";
}

std::vector<double> Tape::backward(const Var& loss) const {
  std::pair<Var, double> seed{loss, 1.0};
  return backward(std::span<const std::pair<Var, double>>(&seed, 1));
}

std::vector<double> Tape::backward(std::span<const std::pair<Var, double>> seeds) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  int32_t top = -1;
  for (const auto& [var, weight] : seeds) {
    if (var.id < 0) continue;  // constant seed contributes nothing
    if (var.gen != gen_)
      throw TapeMismatchError("backward: seed from a stale tape generation");
    adj[var.id] += weight;
    top = std::max(top, var.id);
  }
  for (int32_t i = top; i >= 0; --i) {
    double a = adj[i];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) adj[n.a] += a * n.da;
    if (n.b >= 0) adj[n.b] += a * n.db;
  }
  return adj;
}

namespace detail {

[[noreturn]] void throw_domain(const char* op, const Var& input, const std::string& what) {
  std::string msg = std::string(op) + ": " + what + " (value " + std::to_string(input.v);
  if (input.id >= 0) {
    msg += ", node " + std::to_string(input.id);
  } else {
    msg += ", constant";
  }
  msg += ")";
  throw AutodiffDomainError(msg);
}

}  // namespace detail

}  // namespace diffpbd
