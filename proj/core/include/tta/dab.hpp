#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tta/autograd.hpp"
#include "tta/recon_suite.hpp"
#include "tta/translate_net.hpp"

namespace tta {

/// Non-empty subset of reconstruction levels; bit i-1 stands for level i.
using Configuration = std::uint32_t;

inline constexpr int kMaxLevels = 16;

int config_size(Configuration omega);
std::vector<int> config_levels(Configuration omega);
Configuration make_configuration(std::span<const int> levels);
/// Throws DomainError if `omega` is empty or names a level above k.
void validate_configuration(Configuration omega, int k);
/// All 2^k - 1 configurations ordered by size, then lexicographically.
std::vector<Configuration> all_configurations(int k);
/// True if `a` precedes `b` in the canonical order.
bool canonical_less(Configuration a, Configuration b);
/// "{1,3}"
std::string config_to_string(Configuration omega);

/// Per-sample test-time trainable adaptors. A_x is a residual two-layer conv
/// stack on the input image; A_i is a 1x1 channel map applied at depths i and
/// n-i, one shared block when both depths have the same width, otherwise one
/// block per depth under the same selector bit. A fresh set is an exact identity.
class AdaptorSet {
 public:
  AdaptorSet(const TaskModel& task, std::uint64_t seed, int input_width = 8);

  int n_layers() const { return n_layers_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }

  Configuration selector() const { return selector_; }
  void select(Configuration omega);
  /// Level served at `depth`, or 0 if the depth carries no adaptor.
  int level_at_depth(int depth) const;
  bool level_shared(int level) const;

  Var apply_input(Tape& tape, Var x);
  Var apply_level(Tape& tape, int depth, Var h);

  /// A_x plus every block of the levels in `omega`.
  std::vector<Parameter*> trainable(Configuration omega);
  std::vector<Parameter>& input_parameters() { return input_; }
  std::vector<Parameter>& level_parameters(int level);
  const std::vector<Parameter>& level_parameters(int level) const;
  std::size_t level_parameter_count(int level) const;

  std::uint64_t checksum() const;
  std::uint64_t level_checksum(int level) const;

 private:
  int n_layers_ = 0;
  Configuration selector_ = 0;
  std::vector<Parameter> input_;                // conv1 w,b; conv2 w,b
  std::vector<std::vector<Parameter>> levels_;  // w,b per block
};

struct LossWeights {
  double input = 1.0;
  double levels = 1.0;
  double output = 1.0;
};

/// Graph of one adapted forward pass on a tape.
struct AdaptedPass {
  Var input;              // x^a
  std::vector<Var> taps;  // h^a_1..h^a_n
  Var eps_x;
  std::map<int, Var> eps_i;
  Var eps_y;
  Var loss;

  const Var& output() const { return taps.back(); }
  ShiftErrors errors() const;
};

AdaptedPass build_adapted_pass(Tape& tape, const TaskModel& task, const ReconSuite& suite,
                               AdaptorSet& adaptors, Configuration omega, const Tensor& x,
                               const LossWeights& weights = {});

/// Forward pass through the selected adaptors with shift errors for eps_x,
/// eps_y and the levels in `omega`.
std::pair<FeatureTrace, ShiftErrors> adapted_forward(const TaskModel& task, const ReconSuite& suite,
                                                     AdaptorSet& adaptors, Configuration omega,
                                                     const Tensor& x);

struct AdaptOptions {
  int steps = 5;
  float lr = 2e-4f;
  LossWeights weights;
};

struct StepRecord {
  int step = 0;  // 1-based
  double loss = 0.0;
  ShiftErrors errors;
  bool chosen = false;
};

struct StepTrace {
  Configuration omega = 0;
  std::vector<StepRecord> steps;
  int best_step = 0;  // 1-based; 0 when no step completed
  double best_eps_y = 0.0;
  Tensor best_output;
  Tensor last_output;
  bool failed = false;
  std::string failure;
};

/// M rounds of {adapted forward, loss, backward, Adam on A_x and the active
/// A_i}. Returns the output snapshot of the step with the lowest eps_y. A
/// numeric failure ends the loop; with no completed step the unadapted output
/// is returned.
StepTrace adapt_steps(const TaskModel& task, const ReconSuite& suite, AdaptorSet& adaptors,
                      Configuration omega, const Tensor& x, const AdaptOptions& options = {});

}  // namespace tta
