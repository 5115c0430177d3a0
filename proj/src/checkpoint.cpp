#include "diffpbd/checkpoint.hpp"

#include <algorithm>
#include <stdexcept>

namespace diffpbd {

RolloutGradients checkpoint_rollout(const RolloutFns& fns, std::span<const double> params,
                                    std::span<const double> initial_state, int horizon,
                                    int segment, Tape& tape) {
  if (!fns.step) throw std::invalid_argument("checkpoint_rollout: step callback is required");
  if (horizon < 0) throw std::invalid_argument("checkpoint_rollout: negative horizon");
  if (segment <= 0) throw std::invalid_argument("checkpoint_rollout: segment must be positive");

  const std::size_t sdim = initial_state.size();

  // Forward, values only: constant Vars fold, so the tape stays empty.
  std::vector<Checkpoint> cps;
  cps.push_back({std::vector<double>(initial_state.begin(), initial_state.end()), 0});
  {
    Tape::Scope scope(tape);
    std::vector<Var> prm(params.begin(), params.end());
    std::vector<Var> state(initial_state.begin(), initial_state.end());
    for (int t = 0; t < horizon; ++t) {
      state = fns.step(prm, state, t);
      if (state.size() != sdim)
        throw std::logic_error("checkpoint_rollout: step changed the state dimension");
      if ((t + 1) % segment == 0 && t + 1 < horizon) {
        Checkpoint cp;
        cp.t = t + 1;
        cp.state.reserve(sdim);
        for (const Var& v : state) cp.state.push_back(value_of(v));
        cps.push_back(std::move(cp));
      }
    }
  }

  RolloutGradients out;
  out.wrt_params.assign(params.size(), 0.0);
  std::vector<double> adj_state(sdim, 0.0);
  std::vector<double> segment_losses(cps.size(), 0.0);

  for (int si = static_cast<int>(cps.size()) - 1; si >= 0; --si) {
    const Checkpoint& cp = cps[si];
    const int t_end = std::min(cp.t + segment, horizon);

    tape.reset();
    Tape::Scope scope(tape);
    std::vector<Var> prm;
    prm.reserve(params.size());
    for (double p : params) prm.push_back(tape.leaf(p));
    std::vector<Var> entry;
    entry.reserve(sdim);
    for (double s : cp.state) entry.push_back(tape.leaf(s));

    Var seg_loss(0.0);
    std::vector<Var> state = entry;
    for (int t = cp.t; t < t_end; ++t) {
      std::vector<Var> next = fns.step(prm, state, t);
      if (fns.transition_loss) seg_loss += fns.transition_loss(prm, state, next, t);
      state = std::move(next);
    }
    if (t_end == horizon && fns.terminal_loss) seg_loss += fns.terminal_loss(prm, state);
    segment_losses[si] = value_of(seg_loss);

    std::vector<std::pair<Var, double>> seeds;
    seeds.reserve(sdim + 1);
    seeds.emplace_back(seg_loss, 1.0);
    if (t_end < horizon) {
      for (std::size_t d = 0; d < sdim; ++d) seeds.emplace_back(state[d], adj_state[d]);
    }
    auto adj = tape.backward(seeds);

    for (std::size_t k = 0; k < prm.size(); ++k) out.wrt_params[k] += gradient_of(adj, prm[k]);
    for (std::size_t d = 0; d < sdim; ++d) adj_state[d] = gradient_of(adj, entry[d]);
    out.peak_tape_nodes = std::max(out.peak_tape_nodes, tape.size());
  }

  for (double l : segment_losses) out.loss += l;
  out.wrt_initial_state = std::move(adj_state);
  tape.reset();
  return out;
}

}  // namespace diffpbd
