#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"
#include "tta/autograd.hpp"
#include "tta/optim.hpp"
#include "tta/tensor_io.hpp"

using namespace tta;
using tta::testing::random_tensor;

TEST_CASE("tensor invariants") {
  Tensor t({2, 3, 4}, 1.5f);
  CHECK(t.size() == 24);
  CHECK(numel(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::scalar(3.0f).item() == 3.0f);
}

TEST_CASE("conv2d examples") {
  Tape tape;
  SUBCASE("scaling identity") {
    Var out = conv2d(tape.constant(Tensor({1, 3, 3}, 1.0f)), tape.constant(Tensor({1, 1, 1, 1}, 2.0f)), 1, 0);
    CHECK(out.shape() == Shape{1, 3, 3});
    for (float v : out.value().data()) CHECK(v == 2.0f);
  }
  SUBCASE("single pixel sum") {
    Var out = conv2d(tape.constant(Tensor({1, 1, 1}, 5.0f)), tape.constant(Tensor({1, 1, 3, 3}, 1.0f)), 1, 1);
    CHECK(out.shape() == Shape{1, 1, 1});
    CHECK(out.value().item() == 5.0f);
  }
  SUBCASE("matches the direct loop oracle") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor({2, 4, 4}, rng);
      Tensor k = random_tensor({3, 2, 3, 3}, rng);
      for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
          Tensor got = conv2d(x, k, stride, pad);
          Tensor want = tta::testing::naive_conv2d(x, k, stride, pad);
          REQUIRE(got.shape() == want.shape());
          CHECK(tta::testing::max_abs_diff(got, want) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("conv2d errors") {
  Tensor x({2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3}), 1, 1), ShapeError);  // channel mismatch
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 2, 2}), 1, 0), ShapeError);  // even kernel
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 5, 5}), 1, 0), ShapeError);  // empty output
  CHECK_THROWS_AS(conv2d(Tensor({4, 4}), Tensor({1, 1, 3, 3}), 1, 1), ShapeError);
}

TEST_CASE("conv2d_1x1 examples") {
  std::mt19937_64 rng(11);
  SUBCASE("identity kernel is bitwise identity") {
    Tensor x = random_tensor({4, 5, 5}, rng);
    Tensor k({4, 4, 1, 1}, 0.0f);
    for (int c = 0; c < 4; ++c) k[static_cast<std::size_t>(c * 4 + c)] = 1.0f;
    CHECK(bitwise_equal(conv2d_1x1(x, k, Tensor({4}, 0.0f)), x));
  }
  SUBCASE("sum and difference channels") {
    Tensor x({2, 2, 2});
    for (int i = 0; i < 4; ++i) {
      x[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
      x[static_cast<std::size_t>(4 + i)] = static_cast<float>(10 * (i + 1));
    }
    Tensor k({2, 2, 1, 1}, std::vector<float>{1, 1, 1, -1});
    Tensor out = conv2d_1x1(x, k, Tensor({2}, 0.0f));
    for (int i = 0; i < 4; ++i) {
      const float a = x[static_cast<std::size_t>(i)], b = x[static_cast<std::size_t>(4 + i)];
      CHECK(out[static_cast<std::size_t>(i)] == a + b);
      CHECK(out[static_cast<std::size_t>(4 + i)] == a - b);
    }
  }
  SUBCASE("matches the per-pixel matvec oracle") {
    Tensor x = random_tensor({3, 5, 5}, rng);
    Tensor k = random_tensor({4, 3, 1, 1}, rng);
    Tensor b = random_tensor({4}, rng);
    CHECK(tta::testing::max_abs_diff(conv2d_1x1(x, k, b), tta::testing::pixel_matvec(x, k, b)) < 1e-5);
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(conv2d_1x1(Tensor({3, 2, 2}), Tensor({2, 2, 1, 1}), Tensor({2})), ShapeError);
  }
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(3);
  SUBCASE("linear form") {
    Tensor xv = random_tensor({2, 3, 3}, rng);
    Parameter w("w", random_tensor({2, 3, 3}, rng));
    Tape tape;
    tape.backward(sum(mul(tape.parameter(w), tape.constant(xv))));
    CHECK(w.grad == xv);
  }
  SUBCASE("mse of a convolution matches finite differences") {
    for (int trial = 0; trial < 3; ++trial) {
      Tensor x = random_tensor({2, 5, 5}, rng);
      Tensor target = random_tensor({3, 5, 5}, rng);
      Tensor k = random_tensor({3, 2, 3, 3}, rng);
      auto g = tta::testing::gradcheck(
          [&](Tape& t, const std::vector<Var>& v) {
            return mse_loss(conv2d(t.constant(x), v[0], 1, 1), t.constant(target));
          },
          {k});
      CHECK_MESSAGE(g.ok, g.detail);
    }
  }
  SUBCASE("constant loss leaves zero gradients") {
    Parameter w("w", random_tensor({3}, rng));
    Tape tape;
    tape.parameter(w);
    tape.backward(sum(tape.constant(Tensor({3}, 2.0f))));
    for (float v : w.grad.data()) CHECK(v == 0.0f);
  }
  SUBCASE("loss must be scalar and on this tape") {
    Tape tape, other;
    Var v = tape.leaf(Tensor({2}, 1.0f));
    CHECK_THROWS_AS(tape.backward(v), ShapeError);
    Var s = sum(other.leaf(Tensor({2}, 1.0f)));
    CHECK_THROWS_AS(tape.backward(s), Error);
  }
  SUBCASE("repeated backward accumulates; zero_grad resets") {
    Parameter w("w", Tensor({2}, 1.0f));
    Tape tape;
    Var loss = sum(scale(tape.parameter(w), 3.0f));
    tape.backward(loss);
    tape.backward(loss);
    for (float v : w.grad.data()) CHECK(v == 6.0f);
    tape.zero_grad();
    for (float v : w.grad.data()) CHECK(v == 0.0f);
  }
  SUBCASE("shared parameter sums both uses") {
    Parameter w("w", Tensor({2}, 2.0f));
    Tape tape;
    Var a = tape.parameter(w);
    Var b = tape.parameter(w);
    CHECK(a.id() == b.id());
    tape.backward(sum(mul(a, b)));
    for (float v : w.grad.data()) CHECK(v == doctest::Approx(4.0f));
  }
}

TEST_CASE("non-finite values abort with NumericError") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 0.0f));
  CHECK_THROWS_AS(log_clamped(x, 0.0f, 1.0f), DomainError);
  Tensor bad({2}, 1.0f);
  bad[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(tape.constant(bad), NumericError);
  Var big = tape.leaf(Tensor({1}, 3e38f));
  CHECK_THROWS_AS(scale(big, 10.0f), NumericError);
}

TEST_CASE("gradient suite: every differentiable op matches finite differences") {
  for (const auto& r : tta::testing::run_gradient_suite(20, 2024)) {
    INFO(r.name << ": " << r.first_failure);
    CHECK(r.instances >= 20);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("determinism of forward and backward") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Parameter k("k", random_tensor({3, 2, 3, 3}, rng));
    Tape tape;
    Var out = leaky_relu(conv2d(tape.constant(x), tape.parameter(k), 2, 1));
    tape.backward(mean(out));
    return std::pair{out.value(), k.grad};
  };
  auto [o1, g1] = run();
  auto [o2, g2] = run();
  CHECK(bitwise_equal(o1, o2));
  CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("adam_step") {
  SUBCASE("first step moves by lr") {
    Parameter p("p", Tensor({1}, 0.0f));
    p.grad[0] = 1.0f;
    AdamState st;
    st.lr = 0.1f;
    std::vector<Parameter*> ps{&p};
    adam_step(ps, st);
    CHECK(std::fabs(p.value[0] - (-0.1)) < 1e-6);
    CHECK(st.step_count == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter p("p", Tensor({3}, 0.7f));
    AdamState st;
    std::vector<Parameter*> ps{&p};
    adam_step(ps, st);
    for (float v : p.value.data()) CHECK(v == 0.7f);
  }
  SUBCASE("two steps match a scalar reference") {
    Parameter p("p", Tensor({1}, 0.3f));
    AdamState st;
    st.lr = 0.05f;
    std::vector<Parameter*> ps{&p};
    double ref = 0.3, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      p.grad[0] = 0.5f;
      adam_step(ps, st);
      m = 0.9 * m + 0.1 * 0.5;
      v = 0.999 * v + 0.001 * 0.25;
      ref -= 0.05f * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8f);
    }
    CHECK(std::fabs(p.value[0] - ref) < 1e-7);
    CHECK(st.step_count == 2);
  }
  SUBCASE("missing gradient") {
    Parameter p("p", Tensor({2}, 1.0f));
    p.grad = Tensor();
    AdamState st;
    std::vector<Parameter*> ps{&p};
    CHECK_THROWS_AS(adam_step(ps, st), Error);
  }
}

TEST_CASE("LrSchedule is piecewise linear and non-negative") {
  LrSchedule s{2e-4f, 5, 10};
  for (int e = 0; e < 5; ++e) CHECK(s.at(e) == 2e-4f);
  CHECK(s.at(5) == doctest::Approx(2e-4f));
  CHECK(s.at(10) == doctest::Approx(1e-4f));
  CHECK(s.at(15) == 0.0f);
  CHECK(s.at(40) == 0.0f);
  for (int e = 0; e < 30; ++e) {
    CHECK(s.at(e) >= 0.0f);
    if (e > 0) CHECK(s.at(e) <= s.at(e - 1));
  }
  LrSchedule flat{1e-3f, 30, 0};
  for (int e = 0; e < flat.total_epochs(); ++e) CHECK(flat.at(e) == 1e-3f);
}

TEST_CASE("l1_distance and mse_loss") {
  Tensor a({2, 2, 2}, 1.0f), b({2, 2, 2}, 0.25f), c({2, 3});
  CHECK(l1_distance(a, a) == 0.0);
  CHECK(l1_distance(a, b) == doctest::Approx(0.75));
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, Tensor({2, 2, 2}, 0.5f)) == doctest::Approx(0.25));
  CHECK_THROWS_AS(l1_distance(a, c), ShapeError);
  CHECK_THROWS_AS(mse_loss(a, c), ShapeError);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    Tensor x = random_tensor({3, 4, 4}, rng), y = random_tensor({3, 4, 4}, rng);
    CHECK(std::fabs(l1_distance(x, y) - tta::testing::sum_abs_diff_mean(x, y)) < 1e-6);
    CHECK(std::fabs(mse_loss(x, y) - tta::testing::sum_sq_diff_mean(x, y)) < 1e-6);
    Tape t;
    CHECK(std::fabs(l1_distance(t.constant(x), t.constant(y)).value().item() -
                    tta::testing::sum_abs_diff_mean(x, y)) < 1e-6);
  }
}

TEST_CASE("TNSR encoding") {
  std::mt19937_64 rng(17);
  SUBCASE("round trip is lossless for random shapes") {
    for (int i = 0; i < 20; ++i) {
      Shape s;
      const int rank = std::uniform_int_distribution<int>(1, 4)(rng);
      for (int r = 0; r < rank; ++r) s.push_back(std::uniform_int_distribution<int>(1, 5)(rng));
      Tensor t = random_tensor(s, rng, -1e3f, 1e3f);
      CHECK(bitwise_equal(decode_tnsr(encode_tnsr(t)), t));
    }
  }
  SUBCASE("header layout") {
    auto bytes = encode_tnsr(Tensor({2, 3}, 1.0f));
    REQUIRE(bytes.size() == 4 + 1 + 1 + 8 + 24);
    CHECK(static_cast<char>(bytes[0]) == 'T');
    CHECK(static_cast<int>(bytes[4]) == 1);
    CHECK(static_cast<int>(bytes[5]) == 2);
    CHECK(static_cast<int>(bytes[6]) == 2);
    CHECK(static_cast<int>(bytes[10]) == 3);
  }
  SUBCASE("corruption is detected") {
    auto bytes = encode_tnsr(Tensor({4}, 1.0f));
    auto truncated = std::vector<std::byte>(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(decode_tnsr(truncated), FormatError);
    auto bad_magic = bytes;
    bad_magic[0] = std::byte{'X'};
    CHECK_THROWS_AS(decode_tnsr(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = std::byte{2};
    CHECK_THROWS_AS(decode_tnsr(bad_version), FormatError);
  }
  SUBCASE("file round trip") {
    auto path = std::filesystem::temp_directory_path() / "tta_tnsr_test.tnsr";
    Tensor t = random_tensor({1, 4, 4}, rng);
    write_tnsr(path, t);
    CHECK(bitwise_equal(read_tnsr(path), t));
    std::filesystem::remove(path);
  }
}
