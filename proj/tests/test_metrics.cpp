#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tta/metrics.hpp"

using namespace tta;
using tta::testing::random_tensor;

TEST_CASE("mae") {
  Tensor a({1, 4, 4}, 1.0f), b({1, 4, 4}, 0.25f);
  CHECK(mae(a, a) == 0.0);
  CHECK(mae(a, b) == doctest::Approx(0.75));
  CHECK_THROWS_AS(mae(a, Tensor({1, 4, 3})), ShapeError);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    Tensor x = random_tensor({1, 8, 8}, rng), y = random_tensor({1, 8, 8}, rng);
    CHECK(std::fabs(mae(x, y) - tta::testing::sum_abs_diff_mean(x, y)) < 1e-6);
  }
}

TEST_CASE("psnr") {
  Tensor one({1, 4, 4}, 1.0f), half({1, 4, 4}, 0.5f);
  CHECK(std::fabs(psnr(one, half) - 6.0206) < 1e-3);
  CHECK_THROWS_AS(psnr(one, one), DomainError);
  CHECK_THROWS_AS(psnr(Tensor({1, 2, 2}, -0.5f), Tensor({1, 2, 2}, 0.0f)), DomainError);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    Tensor x = random_tensor({1, 8, 8}, rng, 0.01f, 1.0f), y = random_tensor({1, 8, 8}, rng, 0.01f, 1.0f);
    double peak = 0, mse = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      peak = std::max(peak, static_cast<double>(x[j]));
      mse += (static_cast<double>(x[j]) - y[j]) * (static_cast<double>(x[j]) - y[j]);
    }
    mse /= static_cast<double>(x.size());
    CHECK(std::fabs(psnr(x, y) - 10 * std::log10(peak * peak / mse)) < 1e-6);
    CHECK(std::fabs(psnr(x, y, PsnrMax::Range) - 10 * std::log10(1.0 / mse)) < 1e-6);
  }
  SUBCASE("decreases with noise magnitude") {
    Tensor ramp({1, 8, 8});
    for (std::size_t j = 0; j < ramp.size(); ++j) ramp[j] = 0.2f + 0.6f * static_cast<float>(j) / 64.0f;
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor noise({1, 8, 8});
    for (float& v : noise.data()) v = n(rng);
    double prev = std::numeric_limits<double>::infinity();
    for (float s : {0.01f, 0.02f, 0.05f, 0.1f}) {
      Tensor noisy = ramp;
      for (std::size_t j = 0; j < ramp.size(); ++j) noisy[j] += s * noise[j];
      const double p = psnr(noisy, ramp, PsnrMax::Range);
      CHECK(p < prev);
      prev = p;
    }
  }
}

TEST_CASE("ssim") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({1, 8, 8}, rng, 0.0f, 1.0f);
  CHECK(std::fabs(ssim(x, x) - 1.0) < 1e-6);
  CHECK(std::fabs(ssim(Tensor({1, 4, 4}, 0.5f), Tensor({1, 4, 4}, 0.25f)) - 0.80006) < 1e-4);
  for (int i = 0; i < 20; ++i) {
    Tensor a = random_tensor({1, 8, 8}, rng, 0.0f, 1.0f), b = random_tensor({1, 8, 8}, rng, 0.0f, 1.0f);
    CHECK(std::fabs(ssim(a, b) - ssim(b, a)) < 1e-7);
  }
  Tensor neg = x;
  for (float& v : neg.data()) v = 1.0f - v;
  CHECK(ssim(x, neg) < 0.0);  // anti-correlated images: not clamped
  CHECK_THROWS_AS(ssim(x, x, 0.0, 1e-4), DomainError);
}

TEST_CASE("image_metrics rescales to [0,1]") {
  Tensor a({1, 4, 4}, 1.0f), b({1, 4, 4}, 0.0f);
  ImageMetrics m = image_metrics(a, b);
  CHECK(m.mae == doctest::Approx(0.5));
  CHECK(m.psnr == doctest::Approx(6.0206).epsilon(1e-4));
}

TEST_CASE("mean_std") {
  const std::vector<double> v{1, 2, 3, 4};
  MeanStd r = mean_std(v);
  CHECK(r.mean == 2.5);
  CHECK(r.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mean_std(std::vector<double>{3}).std == 0.0);
}

TEST_CASE("wilcoxon signed-rank") {
  SUBCASE("errors") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6};
    CHECK_THROWS_WITH_AS(wilcoxon_signed_rank(a, a), doctest::Contains("all differences zero"), DomainError);
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>{1, 2}), ShapeError);
  }
  SUBCASE("all positive differences, n=6") {
    const std::vector<double> a{2, 3, 4, 5, 6, 7}, b{1, 1, 1, 1, 1, 1};
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.p_value == doctest::Approx(0.03125).epsilon(1e-12));
  }
  SUBCASE("exact p matches sign enumeration for n <= 12") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> coarse(-4, 4);
    std::normal_distribution<double> fine(0.0, 1.0);
    for (int n = 5; n <= 12; ++n) {
      for (int t = 0; t < 25; ++t) {
        std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n), 0.0);
        // Alternate continuous and tie-heavy integer data.
        for (double& v : a) v = t % 2 ? fine(rng) : coarse(rng);
        std::size_t nonzero = 0;
        for (double v : a) nonzero += v != 0.0;
        if (nonzero < kWilcoxonMinPairs) continue;
        CHECK(std::fabs(wilcoxon_signed_rank(a, b).p_value - tta::testing::sign_enumeration_p(a, b)) < 1e-12);
      }
    }
  }
  SUBCASE("normal approximation within 0.01 of exact at n=20") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> d(0.2, 1.0);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> a(20), b(20, 0.0);
      for (double& v : a) v = d(rng);
      const double exact = wilcoxon_signed_rank(a, b, WilcoxonMethod::Exact).p_value;
      const double approx = wilcoxon_signed_rank(a, b, WilcoxonMethod::Normal).p_value;
      CHECK(std::fabs(exact - approx) < 0.01);
    }
  }
  SUBCASE("large samples use the approximation") {
    std::vector<double> a(40), b(40, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i) - 10.5;
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK_FALSE(r.exact);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value <= 1.0);
  }
}

TEST_CASE("bonferroni") {
  CHECK(bonferroni(std::vector<double>{0.04}, 0.05)[0].significant);
  std::vector<double> ten(10, 0.5);
  ten[0] = 0.006;
  ten[1] = 0.004;
  ten[2] = 0.005;
  auto r = bonferroni(ten, 0.05);
  CHECK_FALSE(r[0].significant);
  CHECK(r[1].significant);
  CHECK_FALSE(r[2].significant);
  CHECK_THROWS_AS(bonferroni(ten, 1.5), DomainError);
}
