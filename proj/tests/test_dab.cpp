#include <algorithm>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "tta/dab.hpp"
#include "tta/dataset.hpp"

using namespace tta;
using tta::testing::random_tensor;

namespace {

struct Fixture {
  TaskArch arch{7, 16, 1, 4};
  PairedDataset data;
  TaskModel task{arch, 1};
  ReconSuite suite{arch, 3};

  Fixture() {
    SyntheticTaskSpec spec;
    spec.image_size = 16;
    spec.n_train = 8;
    spec.n_calib = spec.n_id_test = spec.n_ood_test = 1;
    data = generate_dataset(spec).train;
    train_task(task, data, LrSchedule{5e-3f, 2, 2}, 2, {4, {}});
    train_recon_suite(suite, task, data, LrSchedule{1e-3f, 2, 2}, 4, {4, {}});
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("configuration helpers") {
  const std::vector<int> lv{1, 3};
  const Configuration c = make_configuration(lv);
  CHECK(c == 0b101u);
  CHECK(config_size(c) == 2);
  CHECK(config_levels(c) == lv);
  CHECK(config_to_string(c) == "{1,3}");
  CHECK(all_configurations(3).size() == 7);
  CHECK(all_configurations(4).size() == 15);
  CHECK(canonical_less(make_configuration(std::vector<int>{3}), c));
}

TEST_CASE("adaptor layout") {
  const Fixture& f = fixture();
  AdaptorSet a(f.task, 9);
  CHECK(a.num_levels() == 3);
  const int expected[8] = {0, 1, 2, 3, 3, 2, 1, 0};
  for (int d = 1; d <= 7; ++d) CHECK(a.level_at_depth(d) == expected[d]);
  for (int i = 1; i <= 3; ++i) {
    CHECK(a.level_shared(i));
    const int c = f.task.feature_shape(i)[0];
    CHECK(a.level_parameter_count(i) == static_cast<std::size_t>(c * c + c));
  }
  CHECK(a.input_parameters().size() == 4);
  CHECK(a.trainable(0b001).size() == 6);
  CHECK(a.trainable(0b111).size() == 10);
  CHECK_THROWS_AS(a.select(0), DomainError);
  CHECK_THROWS_AS(a.select(0b1000), DomainError);
  CHECK_THROWS_AS(AdaptorSet(f.task, 1, 0), DomainError);
  CHECK(AdaptorSet(f.task, 9).checksum() == a.checksum());
}

TEST_CASE("a fresh adaptor set is an exact identity") {
  const Fixture& f = fixture();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 4; ++trial) {
    const Tensor x = random_tensor(f.task.input_shape(), rng);
    const FeatureTrace plain = translate(f.task, x);
    for (Configuration omega : all_configurations(3)) {
      AdaptorSet a(f.task, 100 + static_cast<std::uint64_t>(trial));
      const auto [trace, errors] = adapted_forward(f.task, f.suite, a, omega, x);
      for (int d = 1; d <= 7; ++d) CHECK(bitwise_equal(trace.feature(d), plain.feature(d)));
      CHECK(errors.eps_y == unadapted_output_error(f.suite, f.task, x));
      CHECK(errors.eps_i.size() == static_cast<std::size_t>(config_size(omega)));
    }
  }
}

TEST_CASE("adapted pass loss is the weighted error sum") {
  const Fixture& f = fixture();
  AdaptorSet a(f.task, 4);
  const Tensor& x = f.data.inputs[1];
  const LossWeights w{0.5, 2.0, 3.0};
  Tape tape;
  const AdaptedPass p = build_adapted_pass(tape, f.task, f.suite, a, 0b011, x, w);
  const ShiftErrors e = p.errors();
  REQUIRE(e.eps_i.size() == 2);
  const double oracle = 0.5 * e.eps_x + 2.0 * (e.eps_i.at(1) + e.eps_i.at(2)) + 3.0 * e.eps_y;
  CHECK(p.loss.value().item() == doctest::Approx(oracle).epsilon(1e-6));
  CHECK(p.taps.size() == 7);
}

TEST_CASE("adapt_steps") {
  const Fixture& f = fixture();
  const Tensor& x = f.data.inputs[2];
  const std::uint64_t task_sum = f.task.checksum();
  const std::uint64_t suite_sum = f.suite.checksum();
  const double eps0 = unadapted_output_error(f.suite, f.task, x);

  AdaptorSet a(f.task, 4);
  const std::uint64_t level3 = a.level_checksum(3);
  const std::uint64_t level1 = a.level_checksum(1);
  AdaptOptions opt;
  opt.steps = 4;
  opt.lr = 1e-3f;
  const StepTrace t = adapt_steps(f.task, f.suite, a, 0b001, x, opt);

  REQUIRE(t.steps.size() == 4);
  CHECK_FALSE(t.failed);
  CHECK(t.steps[0].errors.eps_y == eps0);
  double best = t.steps[0].errors.eps_y;
  for (const StepRecord& s : t.steps) best = std::min(best, s.errors.eps_y);
  CHECK(t.best_eps_y == best);
  CHECK(t.best_eps_y <= eps0);
  CHECK(std::count_if(t.steps.begin(), t.steps.end(), [](const StepRecord& s) { return s.chosen; }) == 1);
  CHECK(t.steps[static_cast<std::size_t>(t.best_step - 1)].chosen);
  CHECK(reconstruction_error(f.suite.output(), t.best_output) == doctest::Approx(t.best_eps_y).epsilon(1e-6));

  CHECK(f.task.checksum() == task_sum);
  CHECK(f.suite.checksum() == suite_sum);
  CHECK(a.level_checksum(3) == level3);
  CHECK(a.level_checksum(1) != level1);

  AdaptorSet b(f.task, 4);
  const StepTrace again = adapt_steps(f.task, f.suite, b, 0b001, x, opt);
  CHECK(bitwise_equal(again.best_output, t.best_output));
  CHECK(b.checksum() == a.checksum());

  AdaptOptions none;
  none.steps = 0;
  CHECK_THROWS_AS(adapt_steps(f.task, f.suite, b, 0b001, x, none), DomainError);
  CHECK_THROWS_AS(adapt_steps(f.task, f.suite, b, 0, x, opt), DomainError);
}

TEST_CASE("default architecture level-2 adaptor size") {
  const TaskModel task(TaskArch{}, 1);
  CHECK(AdaptorSet(task, 1).level_parameter_count(2) == 1056);
}

TEST_CASE("inactive levels do not affect the output") {
  const Fixture& f = fixture();
  const Tensor& x = f.data.inputs[3];
  AdaptorSet a(f.task, 5);
  for (Parameter& p : a.level_parameters(2)) {
    for (float& v : p.value.data()) v += 0.25f;
  }
  for (Configuration omega : all_configurations(3)) {
    const auto [trace, errors] = adapted_forward(f.task, f.suite, a, omega, x);
    CHECK(trace.output().shape() == f.task.input_shape());
    for (int d = 1; d <= 7; ++d) CHECK(trace.feature(d).shape() == f.task.feature_shape(d));
    if (omega & make_configuration(std::vector<int>{2})) continue;
    CHECK(bitwise_equal(trace.output(), translate(f.task, x).output()));
  }
}

TEST_CASE("a single step returns the unadapted output") {
  const Fixture& f = fixture();
  const Tensor& x = f.data.inputs[4];
  AdaptorSet a(f.task, 6);
  AdaptOptions opt;
  opt.steps = 1;
  const StepTrace t = adapt_steps(f.task, f.suite, a, 0b010, x, opt);
  REQUIRE(t.steps.size() == 1);
  CHECK(bitwise_equal(t.best_output, translate(f.task, x).output()));
}

TEST_CASE("zero loss weights leave the output unadapted") {
  const Fixture& f = fixture();
  const Tensor& x = f.data.inputs[5];
  AdaptorSet a(f.task, 6);
  const std::uint64_t before = a.checksum();
  AdaptOptions opt;
  opt.steps = 4;
  opt.weights = {0.0, 0.0, 0.0};
  const StepTrace t = adapt_steps(f.task, f.suite, a, 0b111, x, opt);
  const Tensor plain = translate(f.task, x).output();
  CHECK(bitwise_equal(t.best_output, plain));
  for (const StepRecord& s : t.steps) CHECK(s.errors.eps_y == t.steps[0].errors.eps_y);
  CHECK(a.checksum() == before);
}
