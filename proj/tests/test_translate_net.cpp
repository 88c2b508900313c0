#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "tta/dataset.hpp"
#include "tta/metrics.hpp"
#include "tta/translate_net.hpp"

using namespace tta;
using tta::testing::random_tensor;

namespace {

TaskArch small_arch(int n = 7, int size = 16) {
  TaskArch a;
  a.n_layers = n;
  a.image_size = size;
  a.base_channels = 4;
  return a;
}

}  // namespace

TEST_CASE("layer plan of the default depth") {
  TaskArch a;  // n=7, 32px, 16 base channels
  const auto layers = plan_layers(a);
  REQUIRE(layers.size() == 7);
  const LayerKind kinds[7] = {LayerKind::Same, LayerKind::Down, LayerKind::Down, LayerKind::Same,
                              LayerKind::Up,   LayerKind::Up,   LayerKind::Output};
  const int channels[7] = {16, 32, 64, 64, 32, 16, 1};
  const int sizes[7] = {32, 16, 8, 8, 16, 32, 32};
  for (int d = 0; d < 7; ++d) {
    CHECK(layers[d].depth == d + 1);
    CHECK(layers[d].kind == kinds[d]);
    CHECK(layers[d].out_channels == channels[d]);
    CHECK(layers[d].out_size == sizes[d]);
  }
  CHECK(a.num_levels() == 3);
}

TEST_CASE("symmetric depths share feature shapes") {
  for (int n = 5; n <= 9; ++n) {
    const TaskModel m(small_arch(n, 32), 1);
    CHECK(m.num_levels() == (n - 1) / 2);
    for (int i = 1; i <= m.num_levels(); ++i) CHECK(m.feature_shape(i) == m.feature_shape(n - i));
    CHECK(m.feature_shape(n) == m.input_shape());
  }
}

TEST_CASE("architecture validation") {
  CHECK_THROWS_AS(plan_layers(small_arch(4)), DomainError);
  CHECK_THROWS_AS(plan_layers(small_arch(10)), DomainError);
  CHECK_THROWS_AS(plan_layers(small_arch(7, 12)), DomainError);
  CHECK_THROWS_AS(plan_layers(small_arch(9, 16)), DomainError);
  TaskArch a = small_arch();
  a.base_channels = 0;
  CHECK_THROWS_AS(plan_layers(a), DomainError);
}

TEST_CASE("forward pass") {
  const TaskModel m(small_arch(), 3);
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(m.input_shape(), rng);
  const FeatureTrace t = translate(m, x);
  REQUIRE(t.n_layers() == 7);
  for (int d = 1; d <= 7; ++d) CHECK(t.feature(d).shape() == m.feature_shape(d));
  for (float v : t.output().data()) CHECK(std::fabs(v) < 1.0f);
  CHECK_THROWS_AS(t.feature(0), DomainError);
  CHECK_THROWS_AS(t.feature(8), DomainError);

  SUBCASE("deterministic") { CHECK(bitwise_equal(translate(m, x).output(), t.output())); }

  SUBCASE("identity hook leaves the output unchanged") {
    Tape tape;
    std::vector<Var> taps;
    const Var y = m.forward(tape, tape.constant_ref(x), [](int, Var h) { return h; }, &taps);
    CHECK(bitwise_equal(y.value(), t.output()));
    REQUIRE(taps.size() == 7);
    for (int d = 1; d <= 7; ++d) CHECK(bitwise_equal(taps[d - 1].value(), t.feature(d)));
  }

  SUBCASE("hook replaces the feature at its depth") {
    Tape tape;
    std::vector<Var> taps;
    const Var y = m.forward(
        tape, tape.constant_ref(x),
        [&](int depth, Var h) { return depth == 2 ? tape.constant(Tensor(h.shape(), 0.0f)) : h; }, &taps);
    for (float v : taps[1].value().data()) CHECK(v == 0.0f);
    CHECK(bitwise_equal(taps[0].value(), t.feature(1)));
    CHECK_FALSE(bitwise_equal(y.value(), t.output()));
  }

  SUBCASE("wrong input shape") { CHECK_THROWS_AS(translate(m, Tensor({1, 8, 8})), ShapeError); }
}

TEST_CASE("zeroed output layer yields exactly zero") {
  TaskModel m(small_arch(), 3);
  m.zero_output_layer();
  std::mt19937_64 rng(1);
  const FeatureTrace t = translate(m, random_tensor(m.input_shape(), rng));
  for (float v : t.output().data()) CHECK(v == 0.0f);
}

TEST_CASE("initialization is a function of the seed") {
  const TaskModel a(small_arch(), 9), b(small_arch(), 9), c(small_arch(), 10);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  CHECK_FALSE(a.trained());
}

TEST_CASE("supervised training lowers the L1 loss") {
  SyntheticTaskSpec spec;
  spec.image_size = 16;
  spec.n_train = 16;
  spec.n_calib = 1;
  spec.n_id_test = 1;
  spec.n_ood_test = 1;
  const SyntheticDataset data = generate_dataset(spec);
  TaskModel m(small_arch(5, 16), 1);
  const std::uint64_t before = m.checksum();
  const TrainReport r = train_task(m, data.train, LrSchedule{5e-3f, 4, 4}, 2, {4, {}});
  REQUIRE(r.epoch_loss.size() == 8);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
  CHECK(m.trained());
  CHECK(m.checksum() != before);

  TaskModel again(small_arch(5, 16), 1);
  train_task(again, data.train, LrSchedule{5e-3f, 4, 4}, 2, {4, {}});
  CHECK(again.checksum() == m.checksum());
}

TEST_CASE("training beats the untrained model on held-out data") {
  SyntheticTaskSpec spec;
  spec.image_size = 16;
  spec.n_train = 32;
  spec.n_calib = 1;
  spec.n_id_test = 16;
  spec.n_ood_test = 1;
  const SyntheticDataset data = generate_dataset(spec);
  auto held_out_mae = [&](const TaskModel& m) {
    double s = 0;
    for (std::size_t i = 0; i < data.id_test.size(); ++i) {
      s += image_metrics(translate(m, data.id_test.inputs[i]).output(), data.id_test.targets[i]).mae;
    }
    return s / static_cast<double>(data.id_test.size());
  };
  const TaskModel untrained(small_arch(5, 16), 1);
  TaskModel m(small_arch(5, 16), 1);
  train_task(m, data.train, LrSchedule{5e-3f, 5, 5}, 2, {8, {}});
  CHECK(held_out_mae(m) < held_out_mae(untrained));
}

TEST_CASE("identity task is learned to MAE < 0.05") {
  SyntheticTaskSpec spec;
  spec.image_size = 16;
  spec.n_train = 128;
  spec.n_calib = 1;
  spec.n_id_test = 16;
  spec.n_ood_test = 1;
  SyntheticDataset data = generate_dataset(spec);
  data.train.targets = data.train.inputs;
  TaskArch arch = small_arch(5, 16);
  arch.base_channels = 8;
  TaskModel m(arch, 1);
  train_task(m, data.train, LrSchedule{5e-3f, 15, 15}, 2, {8, {}});
  double s = 0;
  for (const Tensor& x : data.id_test.inputs) s += image_metrics(translate(m, x).output(), x).mae;
  const double held_out = s / static_cast<double>(data.id_test.size());
  MESSAGE("identity-task held-out MAE " << held_out);
  CHECK(held_out < 0.05);
}

TEST_CASE("a single sample is overfit") {
  SyntheticTaskSpec spec;
  spec.image_size = 16;
  spec.n_train = 1;
  spec.n_calib = spec.n_id_test = spec.n_ood_test = 0;
  const SyntheticDataset data = generate_dataset(spec);
  TaskModel m(small_arch(5, 16), 4);
  const TrainReport r = train_task(m, data.train, LrSchedule{2e-3f, 10, 0}, 2, {1, {}});
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
}

TEST_CASE("adversarial loss") {
  CHECK(std::fabs(adversarial_loss(Tensor({8}, 1.0f - 1e-7f), Tensor({8}, 1e-7f))) < 1e-5);
  CHECK(adversarial_loss(Tensor({4}, 0.5f), Tensor({4}, 0.5f)) == doctest::Approx(-1.3863).epsilon(1e-4));
  const Tensor real({4}, std::vector<float>{0.9f, 0.8f, 1.0f, 0.6f});
  const Tensor fake({3}, std::vector<float>{0.1f, 0.0f, 0.3f});
  auto clamp = [](double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); };
  double lr = 0, lf = 0;
  for (float p : real.data()) lr += std::log(clamp(p));
  for (float p : fake.data()) lf += std::log(1.0 - clamp(p));
  CHECK(adversarial_loss(real, fake) == doctest::Approx(lr / 4 + lf / 3).epsilon(1e-6));
  CHECK(std::isfinite(adversarial_loss(Tensor({2}, 1.0f), Tensor({2}, 1.0f))));
  CHECK_THROWS_AS(adversarial_loss(Tensor({1}, 1.5f), fake), DomainError);
  CHECK_THROWS_AS(adversarial_loss(real, Tensor({1}, -0.1f)), DomainError);
}

TEST_CASE("cycle, identity and total losses") {
  std::mt19937_64 rng(4);
  const Shape s{1, 4, 4};
  const Tensor x = random_tensor(s, rng), fgx = random_tensor(s, rng), y = random_tensor(s, rng),
               gfy = random_tensor(s, rng);
  auto l1 = [](const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(static_cast<double>(a[i]) - b[i]);
    return acc / static_cast<double>(a.size());
  };
  CHECK(cycle_consistency_loss(x, fgx, y, gfy) == doctest::Approx(l1(fgx, x) + l1(gfy, y)).epsilon(1e-6));
  CHECK(identity_loss(fgx, x, gfy, y) == doctest::Approx(l1(fgx, x) + l1(gfy, y)).epsilon(1e-6));
  CHECK(cycle_consistency_loss(x, x, y, y) == 0.0);
  Tensor shifted = x;
  for (float& v : shifted.data()) v += 0.1f;
  CHECK(cycle_consistency_loss(x, shifted, y, y) == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(identity_loss(x, x, y, y) == 0.0);
  CHECK(identity_loss(Tensor(s, -0.5f), Tensor(s, 0.5f), y, y) == doctest::Approx(1.0));
  CHECK(cyclegan_total_loss(0.7, 2.0, 3.0, 0.0, 0.0) == 0.7);
  CHECK(cyclegan_total_loss(0.0, 0.0, 0.0) == 0.0);
  CHECK(cyclegan_total_loss(1.0, 2.0, 3.0) == 36.0);
  CHECK(cyclegan_total_loss(1.0, 2.0, 3.0, 1.0, 0.0) == 3.0);
}
