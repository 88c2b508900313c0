#include "tta/recon_suite.hpp"

#include <algorithm>

#include "tta/rng.hpp"

namespace tta {

Autoencoder::Autoencoder(int channels, int size, std::uint64_t seed, int min_hidden, int min_bottleneck)
    : kind_(Kind::Conv), channels_(channels), size_(size) {
  if (channels < 1) throw DomainError("autoencoder needs at least one channel");
  if (size < 4 || size % 4 != 0) {
    throw DomainError("autoencoder input size must be a positive multiple of 4, got " +
                      std::to_string(size));
  }
  if (min_hidden < 1 || min_bottleneck < 1) throw DomainError("autoencoder widths must be positive");
  hidden_ = std::max(min_hidden, channels / 2);
  bottleneck_ = std::max(min_bottleneck, channels / 2);
  const int widths[5] = {channels_, hidden_, bottleneck_, hidden_, channels_};
  const char* names[4] = {"enc1", "enc2", "dec1", "dec2"};
  for (int l = 0; l < 4; ++l) {
    params_.emplace_back(std::string(names[l]) + ".weight",
                         init_conv_kernel(widths[l + 1], widths[l], 3,
                                          derive_seed(seed, {static_cast<std::uint64_t>(l)})));
    params_.emplace_back(std::string(names[l]) + ".bias", Tensor({widths[l + 1]}, 0.0f));
  }
}

Autoencoder Autoencoder::identity(int channels, int size) {
  Autoencoder ae;
  ae.kind_ = Kind::Identity;
  ae.channels_ = channels;
  ae.size_ = size;
  ae.trained_ = true;
  return ae;
}

std::uint64_t Autoencoder::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : params_) h = tta::checksum(p.value, h);
  return h;
}

template <class Bind>
Var Autoencoder::run(Var x, Bind&& bind) const {
  if (x.shape() != input_shape()) {
    throw ShapeError("autoencoder expects " + to_string(input_shape()) + ", got " +
                     to_string(x.shape()));
  }
  if (kind_ == Kind::Identity) return x;
  Var h = leaky_relu(conv2d(x, bind(0), bind(1), 2, 1));
  h = leaky_relu(conv2d(h, bind(2), bind(3), 2, 1));
  h = leaky_relu(conv2d(upsample2x(h), bind(4), bind(5), 1, 1));
  return conv2d(upsample2x(h), bind(6), bind(7), 1, 1);
}

Var Autoencoder::forward(Tape& tape, Var x) const {
  return run(x, [&](std::size_t i) { return tape.constant_ref(params_[i].value); });
}

Var Autoencoder::forward_trainable(Tape& tape, Var x) {
  return run(x, [&](std::size_t i) { return tape.parameter(params_[i]); });
}

Tensor Autoencoder::reconstruct(const Tensor& x) const {
  Tape tape;
  return forward(tape, tape.constant_ref(x)).value();
}

ReconSuite::ReconSuite(const TaskArch& arch, std::uint64_t seed, int min_hidden, int min_bottleneck)
    : arch_(arch) {
  const TaskModel shape_probe(arch, 0);
  const int k = arch.num_levels();
  std::uint64_t idx = 0;
  input_ = Autoencoder(arch.io_channels, arch.image_size, derive_seed(seed, {idx++}), min_hidden, min_bottleneck);
  for (int i = 1; i <= k; ++i) {
    const Shape a = shape_probe.feature_shape(i);
    const Shape b = shape_probe.feature_shape(arch.n_layers - i);
    levels_.emplace_back(a[0] + b[0], a[1], derive_seed(seed, {idx++}), min_hidden, min_bottleneck);
  }
  output_ = Autoencoder(arch.io_channels, arch.image_size, derive_seed(seed, {idx++}), min_hidden,
                        min_bottleneck);
}

Autoencoder& ReconSuite::level(int i) {
  return const_cast<Autoencoder&>(std::as_const(*this).level(i));
}

const Autoencoder& ReconSuite::level(int i) const {
  if (i < 1 || i > num_levels()) {
    throw DomainError("depth out of range: level " + std::to_string(i) + " not in 1.." +
                      std::to_string(num_levels()));
  }
  return levels_[static_cast<std::size_t>(i - 1)];
}

std::vector<std::string> ReconSuite::member_names() const {
  std::vector<std::string> names{"x"};
  for (int i = 1; i <= num_levels(); ++i) names.push_back(std::to_string(i));
  names.push_back("y");
  return names;
}

Autoencoder& ReconSuite::member(const std::string& name) {
  return const_cast<Autoencoder&>(std::as_const(*this).member(name));
}

const Autoencoder& ReconSuite::member(const std::string& name) const {
  if (name == "x") return input_;
  if (name == "y") return output_;
  try {
    std::size_t used = 0;
    const int i = std::stoi(name, &used);
    if (used == name.size()) return level(i);
  } catch (const std::logic_error&) {
  }
  throw DomainError("unknown reconstruction member '" + name + "'");
}

std::uint64_t ReconSuite::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& name : member_names()) {
    for (const Parameter& p : member(name).parameters()) h = tta::checksum(p.value, h);
  }
  return h;
}

bool ReconSuite::trained() const {
  if (levels_.empty()) return false;
  for (const std::string& name : member_names()) {
    if (!member(name).trained()) return false;
  }
  return true;
}

namespace {

void check_level(int n_layers, int level) {
  const int k = (n_layers - 1) / 2;
  if (level < 1 || level > k) {
    throw DomainError("depth out of range: level " + std::to_string(level) + " not in 1.." +
                      std::to_string(k));
  }
}

}  // namespace

Tensor concat_symmetric(const FeatureTrace& trace, int level) {
  check_level(trace.n_layers(), level);
  Tape tape;
  const Var taps[2] = {tape.constant_ref(trace.feature(level)),
                       tape.constant_ref(trace.feature(trace.n_layers() - level))};
  return concat_channels(taps[0], taps[1]).value();
}

Var concat_symmetric(std::span<const Var> taps, int level) {
  const int n = static_cast<int>(taps.size());
  check_level(n, level);
  return concat_channels(taps[static_cast<std::size_t>(level - 1)],
                         taps[static_cast<std::size_t>(n - level - 1)]);
}

TrainReport train_autoencoder(Autoencoder& ae, std::span<const Tensor> samples,
                              const LrSchedule& schedule, std::uint64_t seed,
                              const TrainOptions& options) {
  if (samples.empty()) throw DomainError("train_autoencoder: empty dataset");
  TrainReport report;
  if (ae.kind() == Autoencoder::Kind::Conv) {
    std::vector<Parameter*> params;
    for (Parameter& p : ae.parameters()) params.push_back(&p);
    report = run_minibatch_training(
        params, samples.size(),
        [&](Tape& tape, std::size_t i) {
          Var x = tape.constant_ref(samples[i]);
          return mse_loss(ae.forward_trainable(tape, x), x);
        },
        schedule, seed, options);
  }
  ae.set_trained(true);
  return report;
}

SuiteTrainReport train_recon_suite(ReconSuite& suite, const TaskModel& task, const PairedDataset& data,
                                   const LrSchedule& schedule, std::uint64_t seed,
                                   const TrainOptions& options) {
  if (!task.trained()) throw DomainError("train_recon_suite: task model is not trained");
  if (data.empty()) throw DomainError("train_recon_suite: empty dataset");
  if (!(task.arch() == suite.arch())) {
    throw ShapeError("train_recon_suite: suite was built for a different task architecture");
  }
  const int k = suite.num_levels();
  std::vector<std::vector<Tensor>> per_level(static_cast<std::size_t>(k));
  std::vector<Tensor> outputs;
  outputs.reserve(data.size());
  for (const Tensor& x : data.inputs) {
    const FeatureTrace trace = translate(task, x);
    for (int i = 1; i <= k; ++i) {
      per_level[static_cast<std::size_t>(i - 1)].push_back(concat_symmetric(trace, i));
    }
    outputs.push_back(trace.output());
  }
  SuiteTrainReport report;
  std::uint64_t idx = 0;
  auto train_member = [&](const std::string& name, std::span<const Tensor> samples) {
    report.members.emplace_back(
        name, train_autoencoder(suite.member(name), samples, schedule, derive_seed(seed, {idx++}),
                                options));
  };
  train_member("x", data.inputs);
  for (int i = 1; i <= k; ++i) {
    train_member(std::to_string(i), per_level[static_cast<std::size_t>(i - 1)]);
    per_level[static_cast<std::size_t>(i - 1)].clear();
    per_level[static_cast<std::size_t>(i - 1)].shrink_to_fit();
  }
  train_member("y", outputs);
  return report;
}

Var reconstruction_error(Tape& tape, const Autoencoder& ae, Var x) {
  return l1_distance(x, ae.forward(tape, x));
}

double reconstruction_error(const Autoencoder& ae, const Tensor& x) {
  Tape tape;
  return reconstruction_error(tape, ae, tape.constant_ref(x)).value().item();
}

ShiftErrors shift_errors(const ReconSuite& suite, const FeatureTrace& trace,
                         const Tensor& adapted_input, std::span<const int> levels) {
  if (trace.n_layers() != suite.arch().n_layers) {
    throw ShapeError("shift_errors: trace depth does not match the suite");
  }
  ShiftErrors e;
  e.eps_x = reconstruction_error(suite.input(), adapted_input);
  auto add_level = [&](int i) { e.eps_i[i] = reconstruction_error(suite.level(i), concat_symmetric(trace, i)); };
  if (levels.empty()) {
    for (int i = 1; i <= suite.num_levels(); ++i) add_level(i);
  } else {
    for (int i : levels) add_level(i);
  }
  e.eps_y = reconstruction_error(suite.output(), trace.output());
  return e;
}

double unadapted_output_error(const ReconSuite& suite, const TaskModel& task, const Tensor& x) {
  return reconstruction_error(suite.output(), translate(task, x).output());
}

}  // namespace tta
