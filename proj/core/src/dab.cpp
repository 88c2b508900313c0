#include "tta/dab.hpp"

#include <algorithm>
#include <bit>

#include "tta/optim.hpp"
#include "tta/rng.hpp"

namespace tta {

int config_size(Configuration omega) { return std::popcount(omega); }

std::vector<int> config_levels(Configuration omega) {
  std::vector<int> out;
  for (int i = 1; i <= kMaxLevels; ++i) {
    if (omega & (1u << (i - 1))) out.push_back(i);
  }
  return out;
}

Configuration make_configuration(std::span<const int> levels) {
  Configuration omega = 0;
  for (int i : levels) {
    if (i < 1 || i > kMaxLevels) throw DomainError("level " + std::to_string(i) + " out of range");
    omega |= 1u << (i - 1);
  }
  return omega;
}

void validate_configuration(Configuration omega, int k) {
  if (omega == 0) throw DomainError("configuration must be non-empty");
  if (k < kMaxLevels && (omega >> k) != 0) {
    throw DomainError("configuration " + config_to_string(omega) + " exceeds " + std::to_string(k) +
                      " levels");
  }
}

bool canonical_less(Configuration a, Configuration b) {
  const int sa = config_size(a), sb = config_size(b);
  if (sa != sb) return sa < sb;
  const auto la = config_levels(a), lb = config_levels(b);
  return la < lb;
}

std::vector<Configuration> all_configurations(int k) {
  if (k < 1 || k > kMaxLevels) throw DomainError("level count out of range");
  std::vector<Configuration> out;
  for (Configuration c = 1; c < (1u << k); ++c) out.push_back(c);
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

std::string config_to_string(Configuration omega) {
  std::string s = "{";
  for (int i : config_levels(omega)) {
    if (s.size() > 1) s += ',';
    s += std::to_string(i);
  }
  return s + "}";
}

namespace {

Parameter identity_map(const std::string& name, int channels) {
  Tensor w({channels, channels, 1, 1}, 0.0f);
  for (int c = 0; c < channels; ++c) w[static_cast<std::size_t>(c) * channels + c] = 1.0f;
  return Parameter(name, std::move(w));
}

}  // namespace

AdaptorSet::AdaptorSet(const TaskModel& task, std::uint64_t seed, int input_width)
    : n_layers_(task.n_layers()) {
  if (input_width < 1) throw DomainError("adaptor width must be positive");
  const int c = task.arch().io_channels;
  input_.emplace_back("ax.conv1.weight", init_conv_kernel(input_width, c, 3, derive_seed(seed, {0})));
  input_.emplace_back("ax.conv1.bias", Tensor({input_width}, 0.0f));
  input_.emplace_back("ax.conv2.weight", Tensor({c, input_width, 3, 3}, 0.0f));
  input_.emplace_back("ax.conv2.bias", Tensor({c}, 0.0f));
  for (int i = 1; i <= task.num_levels(); ++i) {
    const int enc = task.feature_shape(i)[0];
    const int dec = task.feature_shape(n_layers_ - i)[0];
    const std::string prefix = "a" + std::to_string(i);
    std::vector<Parameter> block;
    if (enc == dec) {
      block.push_back(identity_map(prefix + ".weight", enc));
      block.emplace_back(prefix + ".bias", Tensor({enc}, 0.0f));
    } else {
      block.push_back(identity_map(prefix + ".enc.weight", enc));
      block.emplace_back(prefix + ".enc.bias", Tensor({enc}, 0.0f));
      block.push_back(identity_map(prefix + ".dec.weight", dec));
      block.emplace_back(prefix + ".dec.bias", Tensor({dec}, 0.0f));
    }
    levels_.push_back(std::move(block));
  }
}

void AdaptorSet::select(Configuration omega) {
  validate_configuration(omega, num_levels());
  selector_ = omega;
}

int AdaptorSet::level_at_depth(int depth) const {
  for (int i = 1; i <= num_levels(); ++i) {
    if (depth == i || depth == n_layers_ - i) return i;
  }
  return 0;
}

bool AdaptorSet::level_shared(int level) const { return level_parameters(level).size() == 2; }

std::vector<Parameter>& AdaptorSet::level_parameters(int level) {
  return const_cast<std::vector<Parameter>&>(std::as_const(*this).level_parameters(level));
}

const std::vector<Parameter>& AdaptorSet::level_parameters(int level) const {
  if (level < 1 || level > num_levels()) {
    throw DomainError("adaptor level " + std::to_string(level) + " out of range");
  }
  return levels_[static_cast<std::size_t>(level - 1)];
}

std::size_t AdaptorSet::level_parameter_count(int level) const {
  std::size_t n = 0;
  for (const Parameter& p : level_parameters(level)) n += p.value.size();
  return n;
}

Var AdaptorSet::apply_input(Tape& tape, Var x) {
  Var h = leaky_relu(conv2d(x, tape.parameter(input_[0]), tape.parameter(input_[1]), 1, 1));
  return add(x, conv2d(h, tape.parameter(input_[2]), tape.parameter(input_[3]), 1, 1));
}

Var AdaptorSet::apply_level(Tape& tape, int depth, Var h) {
  const int level = level_at_depth(depth);
  if (level == 0) throw DomainError("no adaptor at depth " + std::to_string(depth));
  std::vector<Parameter>& block = levels_[static_cast<std::size_t>(level - 1)];
  const std::size_t off = (block.size() == 4 && depth != level) ? 2 : 0;
  return conv2d_1x1(h, tape.parameter(block[off]), tape.parameter(block[off + 1]));
}

std::vector<Parameter*> AdaptorSet::trainable(Configuration omega) {
  validate_configuration(omega, num_levels());
  std::vector<Parameter*> out;
  for (Parameter& p : input_) out.push_back(&p);
  for (int i : config_levels(omega)) {
    for (Parameter& p : levels_[static_cast<std::size_t>(i - 1)]) out.push_back(&p);
  }
  return out;
}

std::uint64_t AdaptorSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : input_) h = tta::checksum(p.value, h);
  for (const auto& block : levels_) {
    for (const Parameter& p : block) h = tta::checksum(p.value, h);
  }
  return h;
}

std::uint64_t AdaptorSet::level_checksum(int level) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : level_parameters(level)) h = tta::checksum(p.value, h);
  return h;
}

ShiftErrors AdaptedPass::errors() const {
  ShiftErrors e;
  e.eps_x = eps_x.value().item();
  for (const auto& [i, v] : eps_i) e.eps_i[i] = v.value().item();
  e.eps_y = eps_y.value().item();
  return e;
}

AdaptedPass build_adapted_pass(Tape& tape, const TaskModel& task, const ReconSuite& suite,
                               AdaptorSet& adaptors, Configuration omega, const Tensor& x,
                               const LossWeights& weights) {
  if (!(suite.arch() == task.arch())) throw ShapeError("reconstruction suite does not match the task model");
  adaptors.select(omega);
  AdaptedPass pass;
  pass.input = adaptors.apply_input(tape, tape.constant_ref(x));
  auto hook = [&](int depth, Var h) {
    const int level = adaptors.level_at_depth(depth);
    if (level == 0 || !(omega & (1u << (level - 1)))) return h;
    return adaptors.apply_level(tape, depth, h);
  };
  task.forward(tape, pass.input, hook, &pass.taps);
  pass.eps_x = reconstruction_error(tape, suite.input(), pass.input);
  pass.eps_y = reconstruction_error(tape, suite.output(), pass.output());
  Var loss = scale(pass.eps_x, static_cast<float>(weights.input));
  for (int i : config_levels(omega)) {
    Var e = reconstruction_error(tape, suite.level(i), concat_symmetric(pass.taps, i));
    pass.eps_i[i] = e;
    loss = add(loss, scale(e, static_cast<float>(weights.levels)));
  }
  pass.loss = add(loss, scale(pass.eps_y, static_cast<float>(weights.output)));
  return pass;
}

std::pair<FeatureTrace, ShiftErrors> adapted_forward(const TaskModel& task, const ReconSuite& suite,
                                                     AdaptorSet& adaptors, Configuration omega,
                                                     const Tensor& x) {
  Tape tape;
  AdaptedPass pass = build_adapted_pass(tape, task, suite, adaptors, omega, x);
  FeatureTrace trace;
  for (Var v : pass.taps) trace.features.push_back(v.value());
  return {std::move(trace), pass.errors()};
}

StepTrace adapt_steps(const TaskModel& task, const ReconSuite& suite, AdaptorSet& adaptors,
                      Configuration omega, const Tensor& x, const AdaptOptions& options) {
  if (options.steps < 1) throw DomainError("adaptation needs at least one step");
  validate_configuration(omega, adaptors.num_levels());
  StepTrace trace;
  trace.omega = omega;
  std::vector<Parameter*> params = adaptors.trainable(omega);
  for (Parameter* p : params) p->zero_grad();
  AdamState adam;
  adam.lr = options.lr;
  try {
    for (int s = 1; s <= options.steps; ++s) {
      Tape tape;
      AdaptedPass pass = build_adapted_pass(tape, task, suite, adaptors, omega, x, options.weights);
      StepRecord rec;
      rec.step = s;
      rec.loss = pass.loss.value().item();
      rec.errors = pass.errors();
      if (trace.best_step == 0 || rec.errors.eps_y < trace.best_eps_y) {
        trace.best_step = s;
        trace.best_eps_y = rec.errors.eps_y;
        trace.best_output = pass.output().value();
      }
      trace.last_output = pass.output().value();
      trace.steps.push_back(std::move(rec));
      tape.backward(pass.loss);
      adam_step(params, adam);
      for (Parameter* p : params) p->zero_grad();
    }
  } catch (const NumericError& e) {
    trace.failed = true;
    trace.failure = e.what();
    if (trace.best_step == 0) {
      Tape tape;
      Var y = task.forward(tape, tape.constant_ref(x));
      trace.best_output = y.value();
      trace.best_eps_y = reconstruction_error(tape, suite.output(), y).value().item();
    }
    trace.last_output = trace.best_output;
  }
  if (trace.best_step > 0) trace.steps[static_cast<std::size_t>(trace.best_step - 1)].chosen = true;
  return trace;
}

}  // namespace tta
