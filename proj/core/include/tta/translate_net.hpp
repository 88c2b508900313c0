#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tta/autograd.hpp"
#include "tta/data.hpp"
#include "tta/optim.hpp"

namespace tta {

struct TaskArch {
  int n_layers = 7;
  int image_size = 32;
  int io_channels = 1;
  int base_channels = 16;

  /// Number of intermediate reconstruction levels, floor((n-1)/2).
  int num_levels() const { return (n_layers - 1) / 2; }
  friend bool operator==(const TaskArch&, const TaskArch&) = default;
};

enum class LayerKind { Same, Down, Up, Output };

struct LayerSpec {
  int depth = 0;  // 1-based
  LayerKind kind = LayerKind::Same;
  int in_channels = 0;
  int out_channels = 0;
  int out_size = 0;
};

/// Feature maps h_1..h_n of one forward pass; h_n is the output image.
struct FeatureTrace {
  std::vector<Tensor> features;

  const Tensor& feature(int depth) const;
  const Tensor& output() const { return features.back(); }
  int n_layers() const { return static_cast<int>(features.size()); }
};

/// Symmetric encoder-decoder translation network: 3x3 convolutions, stride-2
/// downsampling, nearest upsampling followed by a convolution, LeakyReLU(0.2)
/// hidden activations and a tanh head. Depths i and n-i have identical
/// feature shapes for every i <= floor((n-1)/2).
class TaskModel {
 public:
  /// Replaces the feature at `depth` during a forward pass.
  using FeatureHook = std::function<Var(int depth, Var h)>;

  TaskModel() = default;
  TaskModel(TaskArch arch, std::uint64_t init_seed);

  const TaskArch& arch() const { return arch_; }
  int n_layers() const { return arch_.n_layers; }
  int num_levels() const { return arch_.num_levels(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  Shape input_shape() const;
  Shape feature_shape(int depth) const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::uint64_t checksum() const;

  bool trained() const { return trained_; }
  void set_trained(bool trained) { trained_ = trained; }
  std::uint64_t init_seed() const { return init_seed_; }

  /// Zeroes the output layer so every forward pass yields tanh(0) = 0.
  void zero_output_layer();

  /// Forward pass with parameters bound as constants. `hook` is consulted for
  /// depths 1..n-1; `taps`, when given, receives the (post-hook) h_1..h_n.
  Var forward(Tape& tape, Var x, const FeatureHook& hook = {},
              std::vector<Var>* taps = nullptr) const;
  /// Forward pass with parameters bound for gradient accumulation.
  Var forward_trainable(Tape& tape, Var x);

 private:
  template <class Bind>
  Var run(Var x, Bind&& bind, const FeatureHook& hook, std::vector<Var>* taps) const;

  TaskArch arch_;
  std::vector<LayerSpec> layers_;
  std::vector<Parameter> params_;  // weight, bias per layer
  std::uint64_t init_seed_ = 0;
  bool trained_ = false;
};

/// Validates an architecture and returns its layer plan.
std::vector<LayerSpec> plan_layers(const TaskArch& arch);

/// Deterministic frozen forward pass recording every feature map.
FeatureTrace translate(const TaskModel& model, const Tensor& x);

/// Supervised per-pixel L1 training with Adam and the given schedule.
TrainReport train_task(TaskModel& model, const PairedDataset& data, const LrSchedule& schedule,
                       std::uint64_t seed, const TrainOptions& options = {});

/// He-style normal initialization for a conv kernel [C_out,C_in,kH,kW].
Tensor init_conv_kernel(int c_out, int c_in, int k, std::uint64_t seed);

// CycleGAN objective terms, computed on given batches.

inline constexpr float kProbClamp = 1e-7f;

/// mean[log d_real] + mean[log(1 - d_fake)], probabilities clamped to
/// [1e-7, 1 - 1e-7]. Throws DomainError for values outside [0, 1].
Var adversarial_loss(Var d_real, Var d_fake);
double adversarial_loss(const Tensor& d_real, const Tensor& d_fake);

/// mean|F(G(x)) - x| + mean|G(F(y)) - y|
Var cycle_consistency_loss(Var x, Var f_g_x, Var y, Var g_f_y);
double cycle_consistency_loss(const Tensor& x, const Tensor& f_g_x, const Tensor& y,
                              const Tensor& g_f_y);

/// mean|G(x) - x| + mean|F(y) - y|
Var identity_loss(Var g_x, Var x, Var f_y, Var y);
double identity_loss(const Tensor& g_x, const Tensor& x, const Tensor& f_y, const Tensor& y);

/// adv + lambda_cycle * cyc + lambda_identity * idt
double cyclegan_total_loss(double adv, double cyc, double idt, double lambda_cycle = 10.0,
                           double lambda_identity = 5.0);

}  // namespace tta
