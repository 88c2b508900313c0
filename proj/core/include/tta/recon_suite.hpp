#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tta/autograd.hpp"
#include "tta/data.hpp"
#include "tta/optim.hpp"
#include "tta/translate_net.hpp"

namespace tta {

/// Undercomplete convolutional autoencoder on [C,S,S] tensors: two stride-2
/// encoder convs to a [B,S/4,S/4] bottleneck, mirrored upsample+conv decoder,
/// LeakyReLU between layers and a linear output.
class Autoencoder {
 public:
  enum class Kind { Conv, Identity };

  Autoencoder() = default;
  /// Hidden width max(min_hidden, C/2), bottleneck width max(min_bottleneck, C/2).
  Autoencoder(int channels, int size, std::uint64_t seed, int min_hidden = 8, int min_bottleneck = 2);
  /// Passes its input through unchanged; has no parameters.
  static Autoencoder identity(int channels, int size);

  Kind kind() const { return kind_; }
  int channels() const { return channels_; }
  int size() const { return size_; }
  int hidden_channels() const { return hidden_; }
  int bottleneck_channels() const { return bottleneck_; }
  Shape input_shape() const { return {channels_, size_, size_}; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::uint64_t checksum() const;
  bool trained() const { return trained_; }
  void set_trained(bool trained) { trained_ = trained; }

  Var forward(Tape& tape, Var x) const;
  Var forward_trainable(Tape& tape, Var x);
  Tensor reconstruct(const Tensor& x) const;

 private:
  template <class Bind>
  Var run(Var x, Bind&& bind) const;

  Kind kind_ = Kind::Identity;
  int channels_ = 0;
  int size_ = 0;
  int hidden_ = 0;
  int bottleneck_ = 0;
  std::vector<Parameter> params_;
  bool trained_ = false;
};

struct ShiftErrors {
  double eps_x = 0.0;
  std::map<int, double> eps_i;  // level -> error
  double eps_y = 0.0;
};

/// R_x, R_1..R_k and R_y for a task architecture with k = floor((n-1)/2).
class ReconSuite {
 public:
  ReconSuite() = default;
  /// Width floors are forwarded to every member's Autoencoder constructor.
  ReconSuite(const TaskArch& arch, std::uint64_t seed, int min_hidden = 8, int min_bottleneck = 2);

  const TaskArch& arch() const { return arch_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }

  Autoencoder& input() { return input_; }
  const Autoencoder& input() const { return input_; }
  Autoencoder& output() { return output_; }
  const Autoencoder& output() const { return output_; }
  Autoencoder& level(int i);
  const Autoencoder& level(int i) const;

  /// Members in fixed order: "x", "1".."k", "y".
  std::vector<std::string> member_names() const;
  Autoencoder& member(const std::string& name);
  const Autoencoder& member(const std::string& name) const;

  std::uint64_t checksum() const;
  bool trained() const;

 private:
  TaskArch arch_;
  Autoencoder input_;
  std::vector<Autoencoder> levels_;
  Autoencoder output_;
};

/// Channel concatenation of h_i and h_{n-i}, h_i leading.
Tensor concat_symmetric(const FeatureTrace& trace, int level);
Var concat_symmetric(std::span<const Var> taps, int level);

struct SuiteTrainReport {
  std::vector<std::pair<std::string, TrainReport>> members;
};

/// Trains every member independently with its own MSE objective on the
/// tensors the frozen task model produces for `data.inputs`.
SuiteTrainReport train_recon_suite(ReconSuite& suite, const TaskModel& task, const PairedDataset& data,
                                   const LrSchedule& schedule, std::uint64_t seed,
                                   const TrainOptions& options = {});

/// Trains a single autoencoder on the given tensors with MSE.
TrainReport train_autoencoder(Autoencoder& ae, std::span<const Tensor> samples,
                              const LrSchedule& schedule, std::uint64_t seed,
                              const TrainOptions& options = {});

/// Mean-L1 reconstruction error of one member.
Var reconstruction_error(Tape& tape, const Autoencoder& ae, Var x);
double reconstruction_error(const Autoencoder& ae, const Tensor& x);

/// eps_x on `adapted_input`, eps_i for each requested level (all when empty)
/// and eps_y on the trace output.
ShiftErrors shift_errors(const ReconSuite& suite, const FeatureTrace& trace,
                         const Tensor& adapted_input, std::span<const int> levels = {});

/// eps_y of the plain task output; the trigger statistic.
double unadapted_output_error(const ReconSuite& suite, const TaskModel& task, const Tensor& x);

}  // namespace tta
