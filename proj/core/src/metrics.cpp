#include "tta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tta {

double mae(const Tensor& y_hat, const Tensor& y) {
  require_same_shape(y_hat, y, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(static_cast<double>(y_hat[i]) - y[i]);
  return acc / static_cast<double>(y.size());
}

double psnr(const Tensor& y_hat, const Tensor& y, PsnrMax mode, double range_max) {
  require_same_shape(y_hat, y, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y_hat[i]) - y[i];
    mse += d * d;
  }
  mse /= static_cast<double>(y.size());
  if (mse == 0.0) throw DomainError("psnr: identical images");
  const double peak = mode == PsnrMax::Generated
                          ? static_cast<double>(*std::max_element(y_hat.data().begin(), y_hat.data().end()))
                          : range_max;
  if (!(peak > 0.0)) throw DomainError("psnr: peak intensity must be positive");
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& y_hat, const Tensor& y, double c1, double c2) {
  require_same_shape(y_hat, y, "ssim");
  if (!(c1 > 0.0 && c2 > 0.0)) throw DomainError("ssim: stabilizing constants must be positive");
  const double n = static_cast<double>(y.size());
  double mu_a = 0.0, mu_b = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mu_a += y_hat[i];
    mu_b += y[i];
  }
  mu_a /= n;
  mu_b /= n;
  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double da = y_hat[i] - mu_a, db = y[i] - mu_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  var_a /= n;
  var_b /= n;
  cov /= n;
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

Tensor to_unit_range(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = (t[i] + 1.0f) * 0.5f;
  return out;
}

ImageMetrics image_metrics(const Tensor& y_hat, const Tensor& y, PsnrMax mode) {
  const Tensor a = to_unit_range(y_hat), b = to_unit_range(y);
  return {mae(a, b), psnr(a, b, mode), ssim(a, b)};
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

namespace {

struct RankedDiffs {
  std::vector<double> ranks;  // average ranks of |d|
  std::vector<bool> positive;
  std::vector<std::size_t> tie_sizes;
};

RankedDiffs rank_differences(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  }
  if (d.empty()) throw DomainError("wilcoxon: all differences zero");
  if (d.size() < kWilcoxonMinPairs) {
    throw DomainError("wilcoxon: fewer than " + std::to_string(kWilcoxonMinPairs) +
                      " non-zero differences");
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return std::fabs(d[i]) < std::fabs(d[j]); });
  RankedDiffs r;
  r.ranks.resize(d.size());
  r.positive.resize(d.size());
  for (std::size_t s = 0; s < order.size();) {
    std::size_t e = s;
    while (e + 1 < order.size() && std::fabs(d[order[e + 1]]) == std::fabs(d[order[s]])) ++e;
    const double avg = (static_cast<double>(s + 1) + static_cast<double>(e + 1)) / 2.0;
    for (std::size_t t = s; t <= e; ++t) r.ranks[order[t]] = avg;
    r.tie_sizes.push_back(e - s + 1);
    s = e + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) r.positive[i] = d[i] > 0.0;
  return r;
}

double exact_p(const RankedDiffs& r, double w_plus) {
  // Distribution of the doubled statistic over all 2^n sign assignments.
  std::vector<int> doubled;
  int total = 0;
  for (double rank : r.ranks) {
    doubled.push_back(static_cast<int>(std::lround(2.0 * rank)));
    total += doubled.back();
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  int reach = 0;
  for (int v : doubled) {
    for (int s = reach; s >= 0; --s) {
      if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + v)] += count[static_cast<std::size_t>(s)];
    }
    reach += v;
  }
  const int w = static_cast<int>(std::lround(2.0 * w_plus));
  double lower = 0.0, upper = 0.0;
  for (int s = 0; s <= total; ++s) {
    if (s <= w) lower += count[static_cast<std::size_t>(s)];
    if (s >= w) upper += count[static_cast<std::size_t>(s)];
  }
  const double all = std::ldexp(1.0, static_cast<int>(r.ranks.size()));
  return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

double normal_p(const RankedDiffs& r, double w_plus) {
  const double n = static_cast<double>(r.ranks.size());
  const double mean = n * (n + 1) / 4.0;
  double var = n * (n + 1) * (2 * n + 1) / 24.0;
  for (std::size_t t : r.tie_sizes) {
    const double tt = static_cast<double>(t);
    var -= (tt * tt * tt - tt) / 48.0;
  }
  if (!(var > 0.0)) return 1.0;
  const double z = std::max(0.0, std::fabs(w_plus - mean) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    WilcoxonMethod method) {
  const RankedDiffs r = rank_differences(a, b);
  WilcoxonResult out;
  out.n = r.ranks.size();
  for (std::size_t i = 0; i < r.ranks.size(); ++i) {
    if (r.positive[i]) out.w_plus += r.ranks[i];
  }
  out.exact = method == WilcoxonMethod::Exact ||
              (method == WilcoxonMethod::Auto && out.n <= kWilcoxonExactMax);
  if (out.exact && out.n > 60) throw DomainError("wilcoxon: exact distribution limited to 60 pairs");
  out.p_value = out.exact ? exact_p(r, out.w_plus) : normal_p(r, out.w_plus);
  return out;
}

std::vector<Significance> bonferroni(std::span<const double> p_values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("bonferroni: alpha must lie in (0, 1)");
  if (p_values.empty()) throw DomainError("bonferroni: no p-values");
  const double threshold = alpha / static_cast<double>(p_values.size());
  std::vector<Significance> out;
  for (double p : p_values) out.push_back({p, p < threshold});
  return out;
}

}  // namespace tta
