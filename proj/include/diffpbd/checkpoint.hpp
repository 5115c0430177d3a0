#pragma once

#include <functional>
#include <span>
#include <vector>

#include "diffpbd/autodiff.hpp"

namespace diffpbd {

/// Values-only snapshot of all state scalars at a timestep boundary.
struct Checkpoint {
  std::vector<double> state;
  int t = 0;
};

/// Callbacks describing a differentiable rollout over a flat state vector.
/// All three run under the active tape; `transition_loss` and
/// `terminal_loss` may be null.
struct RolloutFns {
  std::function<std::vector<Var>(std::span<const Var> params, std::span<const Var> state, int t)>
      step;
  std::function<Var(std::span<const Var> params, std::span<const Var> prev,
                    std::span<const Var> next, int t)>
      transition_loss;
  std::function<Var(std::span<const Var> params, std::span<const Var> state)> terminal_loss;
};

struct RolloutGradients {
  double loss = 0.0;
  std::vector<double> wrt_params;
  std::vector<double> wrt_initial_state;
  std::size_t peak_tape_nodes = 0;
};

/// Reverse-mode gradient of a rollout loss with bounded tape size. The
/// forward pass stores checkpoints every `segment` steps without recording;
/// the backward pass re-records one segment at a time on the given tape,
/// injecting the downstream state adjoints at the segment boundary. Gradients
/// match a single-tape rollout up to summation-order roundoff. The tape is
/// reset; variables recorded on it beforehand are invalidated.
RolloutGradients checkpoint_rollout(const RolloutFns& fns, std::span<const double> params,
                                    std::span<const double> initial_state, int horizon,
                                    int segment, Tape& tape);

}  // namespace diffpbd
