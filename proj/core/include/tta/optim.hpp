#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tta/autograd.hpp"
#include "tta/data.hpp"

namespace tta {

/// Adam hyperparameters plus per-parameter first/second moments. Moments are
/// matched to parameters by position in the list passed to adam_step.
struct AdamState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update of every parameter from its accumulated grad.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Constant learning rate for `hold_epochs`, then linear decay reaching zero
/// at epoch hold_epochs + decay_epochs.
struct LrSchedule {
  float base_lr = 1e-3f;
  int hold_epochs = 0;
  int decay_epochs = 0;

  int total_epochs() const { return hold_epochs + decay_epochs; }
  float at(int epoch) const;
};

/// Loss of one training sample, built on the given tape.
using SampleLoss = std::function<Var(Tape&, std::size_t sample)>;

/// Shared mini-batch loop: per-epoch shuffle from (seed, epoch), per-sample
/// tapes whose gradients accumulate, one Adam step per batch with the
/// scheduled learning rate.
TrainReport run_minibatch_training(std::span<Parameter* const> params, std::size_t n_samples,
                                   const SampleLoss& sample_loss, const LrSchedule& schedule,
                                   std::uint64_t seed, const TrainOptions& options);

}  // namespace tta
