#include "tta/translate_net.hpp"

#include <cmath>

#include "tta/rng.hpp"

namespace tta {

const Tensor& FeatureTrace::feature(int depth) const {
  if (depth < 1 || depth > n_layers()) {
    throw DomainError("feature depth " + std::to_string(depth) + " out of range 1.." +
                      std::to_string(n_layers()));
  }
  return features[static_cast<std::size_t>(depth - 1)];
}

std::vector<LayerSpec> plan_layers(const TaskArch& arch) {
  const int n = arch.n_layers;
  if (n < 5 || n > 9) throw DomainError("task model needs 5..9 layers, got " + std::to_string(n));
  if (arch.io_channels < 1 || arch.base_channels < 1) throw DomainError("channel counts must be positive");
  const int k = arch.num_levels();
  // Spatial level (number of downsamplings) of each depth's output.
  auto level = [&](int d) {
    if (d == n) return 0;
    if (d <= k) return d - 1;
    if (d >= n - k) return n - d - 1;
    return k - 1;
  };
  const int deepest = k - 1;
  // Every reconstruction level is autoencoded down to a quarter of its size.
  const int divisor = 1 << (deepest + 2);
  if (arch.image_size < divisor || arch.image_size % divisor != 0) {
    throw DomainError("image size " + std::to_string(arch.image_size) + " must be a multiple of " +
                      std::to_string(divisor) + " for " + std::to_string(n) + " layers");
  }
  std::vector<LayerSpec> layers;
  int prev_level = 0;
  int prev_channels = arch.io_channels;
  for (int d = 1; d <= n; ++d) {
    LayerSpec s;
    s.depth = d;
    const int lv = level(d);
    if (d == n) {
      s.kind = LayerKind::Output;
    } else if (lv > prev_level) {
      s.kind = LayerKind::Down;
    } else if (lv < prev_level) {
      s.kind = LayerKind::Up;
    } else {
      s.kind = LayerKind::Same;
    }
    s.in_channels = prev_channels;
    s.out_channels = d == n ? arch.io_channels : arch.base_channels << lv;
    s.out_size = arch.image_size >> lv;
    layers.push_back(s);
    prev_level = lv;
    prev_channels = s.out_channels;
  }
  return layers;
}

Tensor init_conv_kernel(int c_out, int c_in, int k, std::uint64_t seed) {
  Rng rng(seed);
  const double fan_in = static_cast<double>(c_in) * k * k;
  std::normal_distribution<float> dist(0.0f,
                                       static_cast<float>(std::sqrt(2.0 / (1.04 * fan_in))));
  Tensor w({c_out, c_in, k, k});
  for (float& v : w.data()) v = dist(rng);
  return w;
}

TaskModel::TaskModel(TaskArch arch, std::uint64_t init_seed)
    : arch_(arch), layers_(plan_layers(arch)), init_seed_(init_seed) {
  for (const LayerSpec& s : layers_) {
    const std::string prefix = "layer" + std::to_string(s.depth);
    params_.emplace_back(prefix + ".weight",
                         init_conv_kernel(s.out_channels, s.in_channels, 3,
                                          derive_seed(init_seed, {static_cast<std::uint64_t>(s.depth)})));
    params_.emplace_back(prefix + ".bias", Tensor({s.out_channels}, 0.0f));
  }
}

Shape TaskModel::input_shape() const {
  return {arch_.io_channels, arch_.image_size, arch_.image_size};
}

Shape TaskModel::feature_shape(int depth) const {
  if (depth < 1 || depth > n_layers()) throw DomainError("depth out of range");
  const LayerSpec& s = layers_[static_cast<std::size_t>(depth - 1)];
  return {s.out_channels, s.out_size, s.out_size};
}

std::uint64_t TaskModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : params_) h = tta::checksum(p.value, h);
  return h;
}

void TaskModel::zero_output_layer() {
  params_[params_.size() - 2].value.fill(0.0f);
  params_[params_.size() - 1].value.fill(0.0f);
}

template <class Bind>
Var TaskModel::run(Var x, Bind&& bind, const FeatureHook& hook,
                   std::vector<Var>* taps) const {
  if (x.shape() != input_shape()) {
    throw ShapeError("task model expects input " + to_string(input_shape()) + ", got " +
                     to_string(x.shape()));
  }
  if (taps) taps->clear();
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& s = layers_[i];
    Var w = bind(2 * i);
    Var b = bind(2 * i + 1);
    switch (s.kind) {
      case LayerKind::Down:
        h = conv2d(h, w, b, 2, 1);
        break;
      case LayerKind::Up:
        h = conv2d(upsample2x(h), w, b, 1, 1);
        break;
      case LayerKind::Same:
      case LayerKind::Output:
        h = conv2d(h, w, b, 1, 1);
        break;
    }
    if (s.kind == LayerKind::Output) {
      h = tta::tanh(h);
    } else {
      h = leaky_relu(h, 0.2f);
      if (hook) h = hook(s.depth, h);
    }
    if (taps) taps->push_back(h);
  }
  return h;
}

Var TaskModel::forward(Tape& tape, Var x, const FeatureHook& hook, std::vector<Var>* taps) const {
  return run(
      x, [&](std::size_t i) { return tape.constant_ref(params_[i].value); }, hook, taps);
}

Var TaskModel::forward_trainable(Tape& tape, Var x) {
  return run(
      x, [&](std::size_t i) { return tape.parameter(params_[i]); }, {}, nullptr);
}

FeatureTrace translate(const TaskModel& model, const Tensor& x) {
  for (float v : x.data()) {
    if (!(v >= -1.0f && v <= 1.0f)) {
      throw DomainError("translate: input values must lie in [-1, 1]");
    }
  }
  Tape tape;
  std::vector<Var> taps;
  model.forward(tape, tape.constant_ref(x), {}, &taps);
  FeatureTrace trace;
  trace.features.reserve(taps.size());
  for (Var v : taps) trace.features.push_back(v.value());
  return trace;
}

TrainReport train_task(TaskModel& model, const PairedDataset& data, const LrSchedule& schedule,
                       std::uint64_t seed, const TrainOptions& options) {
  if (data.empty()) throw DomainError("train_task: empty dataset");
  if (data.targets.size() != data.inputs.size()) throw ShapeError("train_task: unpaired dataset");
  std::vector<Parameter*> params;
  for (Parameter& p : model.parameters()) params.push_back(&p);
  TrainReport report = run_minibatch_training(
      params, data.size(),
      [&](Tape& tape, std::size_t i) {
        Var y_hat = model.forward_trainable(tape, tape.constant_ref(data.inputs[i]));
        return l1_distance(y_hat, tape.constant_ref(data.targets[i]));
      },
      schedule, seed, options);
  model.set_trained(true);
  return report;
}

namespace {

void check_probabilities(const Tensor& t, std::string_view what) {
  for (float v : t.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DomainError(std::string(what) + ": discriminator outputs must lie in [0, 1]");
    }
  }
}

template <class F>
double evaluate_scalar(F&& f) {
  Tape tape;
  return f(tape).value().item();
}

}  // namespace

Var adversarial_loss(Var d_real, Var d_fake) {
  check_probabilities(d_real.value(), "adversarial_loss");
  check_probabilities(d_fake.value(), "adversarial_loss");
  Tape& tape = *d_real.tape();
  Var one_minus_fake = sub(tape.constant(Tensor(d_fake.shape(), 1.0f)), d_fake);
  return add(mean(log_clamped(d_real, kProbClamp, 1.0f - kProbClamp)),
             mean(log_clamped(one_minus_fake, kProbClamp, 1.0f - kProbClamp)));
}

double adversarial_loss(const Tensor& d_real, const Tensor& d_fake) {
  return evaluate_scalar([&](Tape& t) {
    return adversarial_loss(t.constant_ref(d_real), t.constant_ref(d_fake));
  });
}

Var cycle_consistency_loss(Var x, Var f_g_x, Var y, Var g_f_y) {
  return add(l1_distance(f_g_x, x), l1_distance(g_f_y, y));
}

double cycle_consistency_loss(const Tensor& x, const Tensor& f_g_x, const Tensor& y,
                              const Tensor& g_f_y) {
  return evaluate_scalar([&](Tape& t) {
    return cycle_consistency_loss(t.constant_ref(x), t.constant_ref(f_g_x), t.constant_ref(y),
                                  t.constant_ref(g_f_y));
  });
}

Var identity_loss(Var g_x, Var x, Var f_y, Var y) {
  return add(l1_distance(g_x, x), l1_distance(f_y, y));
}

double identity_loss(const Tensor& g_x, const Tensor& x, const Tensor& f_y, const Tensor& y) {
  return evaluate_scalar([&](Tape& t) {
    return identity_loss(t.constant_ref(g_x), t.constant_ref(x), t.constant_ref(f_y),
                         t.constant_ref(y));
  });
}

double cyclegan_total_loss(double adv, double cyc, double idt, double lambda_cycle,
                           double lambda_identity) {
  if (lambda_cycle < 0.0 || lambda_identity < 0.0) {
    throw DomainError("cyclegan_total_loss: weights must be non-negative");
  }
  return adv + lambda_cycle * cyc + lambda_identity * idt;
}

}  // namespace tta
