#include "tta/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tta/rng.hpp"

namespace tta {

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (!(state.lr > 0.0f) || !(state.beta1 > 0.0f && state.beta1 < 1.0f) ||
      !(state.beta2 > 0.0f && state.beta2 < 1.0f) || !(state.eps > 0.0f)) {
    throw DomainError("adam_step: invalid hyperparameters");
  }
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.emplace_back(p->value.size(), 0.0);
      state.second_moment.emplace_back(p->value.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter list changed between steps");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    if (p.grad.shape() != p.value.shape()) {
      throw Error("adam_step: missing gradient for parameter '" + p.name + "'");
    }
    if (state.first_moment[k].size() != p.value.size()) {
      throw ShapeError("adam_step: moment buffer does not match parameter '" + p.name + "'");
    }
    check_finite(p.grad.data(), "gradient of " + p.name);
  }

  state.step_count += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double update = state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
      p.value[i] = static_cast<float>(p.value[i] - update);
    }
    check_finite(p.value.data(), "parameter " + p.name);
  }
}

float LrSchedule::at(int epoch) const {
  if (epoch < hold_epochs) return base_lr;
  if (epoch >= hold_epochs + decay_epochs) return 0.0f;
  const double frac = static_cast<double>(epoch - hold_epochs) / decay_epochs;
  return static_cast<float>(base_lr * (1.0 - frac));
}

TrainReport run_minibatch_training(std::span<Parameter* const> params, std::size_t n_samples,
                                   const SampleLoss& sample_loss, const LrSchedule& schedule,
                                   std::uint64_t seed, const TrainOptions& options) {
  if (n_samples == 0) throw DomainError("training: empty dataset");
  if (schedule.total_epochs() < 1) throw DomainError("training: schedule has no epochs");
  if (options.batch_size < 1) throw DomainError("training: batch size must be positive");

  AdamState adam;
  TrainReport report;
  std::vector<std::size_t> order(n_samples);
  const auto bs = static_cast<std::size_t>(options.batch_size);
  for (int epoch = 0; epoch < schedule.total_epochs(); ++epoch) {
    adam.lr = schedule.at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_samples; start += bs) {
      const std::size_t end = std::min(n_samples, start + bs);
      for (Parameter* p : params) p->zero_grad();
      const float inv = 1.0f / static_cast<float>(end - start);
      for (std::size_t j = start; j < end; ++j) {
        Tape tape;
        Var loss = sample_loss(tape, order[j]);
        epoch_loss += loss.value().item();
        tape.backward(scale(loss, inv));
      }
      adam_step(params, adam);
    }
    epoch_loss /= static_cast<double>(n_samples);
    report.epoch_loss.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  return report;
}

}  // namespace tta
