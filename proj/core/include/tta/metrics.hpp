#pragma once

#include <span>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

/// Mean absolute error.
double mae(const Tensor& y_hat, const Tensor& y);

enum class PsnrMax {
  Generated,  // peak taken from the generated image
  Range,      // peak fixed to the data range
};

/// 10 log10(MAX^2 / MSE). Throws DomainError for identical images or a
/// non-positive peak.
double psnr(const Tensor& y_hat, const Tensor& y, PsnrMax mode = PsnrMax::Generated,
            double range_max = 1.0);

/// Single-window SSIM over the whole image.
double ssim(const Tensor& y_hat, const Tensor& y, double c1 = 1e-4, double c2 = 9e-4);

/// Maps [-1,1] to [0,1].
Tensor to_unit_range(const Tensor& t);

struct ImageMetrics {
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// All three metrics on images rescaled from [-1,1] to [0,1].
ImageMetrics image_metrics(const Tensor& y_hat, const Tensor& y, PsnrMax mode = PsnrMax::Generated);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for fewer than two values
  std::size_t n = 0;
};
MeanStd mean_std(std::span<const double> values);

enum class WilcoxonMethod { Auto, Exact, Normal };

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;  // sum of ranks of positive differences
  std::size_t n = 0;    // non-zero differences
  bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 25;
inline constexpr std::size_t kWilcoxonMinPairs = 5;

/// Two-sided paired signed-rank test on a - b. Zero differences are dropped
/// and tied magnitudes get average ranks. Auto uses the exact null
/// distribution up to 25 pairs and the tie- and continuity-corrected normal
/// approximation beyond.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    WilcoxonMethod method = WilcoxonMethod::Auto);

struct Significance {
  double p_value = 0.0;
  bool significant = false;
};

/// Flags p < alpha / m.
std::vector<Significance> bonferroni(std::span<const double> p_values, double alpha = 0.05);

}  // namespace tta
