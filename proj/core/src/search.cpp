#include "tta/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tta/rng.hpp"

namespace tta {

Evaluator::Evaluator(int num_levels, ConfigObjective objective)
    : k_(num_levels), objective_(std::move(objective)) {
  if (k_ < 1 || k_ > kMaxLevels) throw DomainError("level count out of range");
}

ConfigResult Evaluator::evaluate(Configuration omega) {
  validate_configuration(omega, k_);
  ConfigResult r = objective_(omega);
  budget_.configs_evaluated += 1;
  budget_.adapt_steps_total += r.steps;
  budget_.forwards_total += r.steps;
  history_.push_back({omega, r.eps_best, r.records});
  return r;
}

bool Evaluator::evaluated(Configuration omega) const {
  return std::any_of(history_.begin(), history_.end(),
                     [&](const EvaluatedConfig& e) { return e.omega == omega; });
}

ConfigObjective mock_objective(std::function<double(Configuration)> f, int steps) {
  return [f = std::move(f), steps](Configuration omega) {
    ConfigResult r;
    r.eps_best = f(omega);
    r.output = Tensor::scalar(static_cast<float>(r.eps_best));
    r.steps = steps;
    return r;
  };
}

namespace {

/// Running minimum with strict improvement, so the first optimum wins ties.
struct Best {
  std::optional<Configuration> omega;
  double eps = std::numeric_limits<double>::infinity();
  Tensor output;

  bool offer(Configuration c, ConfigResult&& r) {
    if (!(r.eps_best < eps)) return false;
    omega = c;
    eps = r.eps_best;
    output = std::move(r.output);
    return true;
  }
};

SearchOutcome finish(const Evaluator& eval, Best&& best) {
  SearchOutcome out;
  out.omega_star = best.omega;
  out.eps_best = best.eps;
  out.output = std::move(best.output);
  out.budget = eval.budget();
  out.triggered = true;
  out.history = eval.history();
  return out;
}

SearchOutcome scan(Evaluator& eval, std::vector<Configuration> configs) {
  std::sort(configs.begin(), configs.end(), canonical_less);
  Best best;
  for (Configuration c : configs) best.offer(c, eval.evaluate(c));
  return finish(eval, std::move(best));
}

}  // namespace

SearchOutcome grid_search(Evaluator& eval) { return scan(eval, all_configurations(eval.num_levels())); }

std::vector<Configuration> sample_configurations(int k, int count, std::uint64_t seed) {
  std::vector<Configuration> pool = all_configurations(k);
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(count, 0)), pool.size());
  Rng rng(seed);
  // Partial Fisher-Yates: the first n entries are a uniform draw without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

SearchOutcome random_search(Evaluator& eval, int n_config, std::uint64_t seed) {
  if (n_config < 1) throw DomainError("random search needs at least one configuration");
  return scan(eval, sample_configurations(eval.num_levels(), n_config, seed));
}

SearchOutcome forward_selection(Evaluator& eval, bool literal_pseudocode) {
  const int k = eval.num_levels();
  Best best;
  Configuration selected = 0;
  const Configuration full = (1u << k) - 1;
  if (literal_pseudocode) {
    bool stop = false;
    while (selected != full && !stop) {
      Configuration omega = 0;
      for (int r = 1; r <= k && !stop; ++r) {
        if (selected & (1u << (r - 1))) continue;
        omega |= 1u << (r - 1);
        if (best.offer(omega, eval.evaluate(omega))) {
          selected |= 1u << (r - 1);
        } else {
          stop = true;
        }
      }
    }
    return finish(eval, std::move(best));
  }
  while (selected != full) {
    Best round;
    int round_r = 0;
    for (int r = 1; r <= k; ++r) {
      if (selected & (1u << (r - 1))) continue;
      const Configuration c = selected | (1u << (r - 1));
      if (round.offer(c, eval.evaluate(c))) round_r = r;
    }
    if (!(round.eps < best.eps)) break;
    best = std::move(round);
    selected |= 1u << (round_r - 1);
  }
  return finish(eval, std::move(best));
}

SearchOutcome backward_elimination(Evaluator& eval) {
  const int k = eval.num_levels();
  Configuration current = (1u << k) - 1;
  Best best;
  best.offer(current, eval.evaluate(current));
  while (config_size(current) > 1) {
    std::vector<Configuration> candidates;
    for (int r : config_levels(current)) candidates.push_back(current & ~(1u << (r - 1)));
    std::sort(candidates.begin(), candidates.end(), canonical_less);
    Best round;
    for (Configuration c : candidates) round.offer(c, eval.evaluate(c));
    if (!(round.eps < best.eps)) break;
    current = *round.omega;
    best = std::move(round);
  }
  return finish(eval, std::move(best));
}

SearchOutcome bayesian_search(Evaluator& eval, const TpeOptions& options, std::uint64_t seed) {
  if (options.n_start < 1 || options.n_start > options.n_trials) {
    throw DomainError("TPE needs 1 <= n_start <= n_trials");
  }
  if (!(options.gamma > 0.0 && options.gamma < 1.0) || options.candidates < 1) {
    throw DomainError("TPE needs gamma in (0,1) and at least one candidate");
  }
  const int k = eval.num_levels();
  const std::size_t space = (std::size_t{1} << k) - 1;
  Best best;
  std::vector<Configuration> init = sample_configurations(k, options.n_start, seed);
  std::sort(init.begin(), init.end(), canonical_less);
  for (Configuration c : init) best.offer(c, eval.evaluate(c));
  Rng rng(derive_seed(seed, {1}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = options.n_start; t < options.n_trials && eval.history().size() < space; ++t) {
    std::vector<EvaluatedConfig> hist = eval.history();
    std::stable_sort(hist.begin(), hist.end(),
                     [](const EvaluatedConfig& a, const EvaluatedConfig& b) { return a.eps_best < b.eps_best; });
    const std::size_t n_good =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(options.gamma * hist.size())));
    std::vector<double> p_good(static_cast<std::size_t>(k)), p_bad(static_cast<std::size_t>(k));
    for (int b = 0; b < k; ++b) {
      double good = 0, bad = 0;
      for (std::size_t i = 0; i < hist.size(); ++i) {
        if (hist[i].omega & (1u << b)) (i < n_good ? good : bad) += 1.0;
      }
      p_good[static_cast<std::size_t>(b)] = (good + 1.0) / (static_cast<double>(n_good) + 2.0);
      p_bad[static_cast<std::size_t>(b)] = (bad + 1.0) / (static_cast<double>(hist.size() - n_good) + 2.0);
    }
    std::optional<Configuration> pick;
    double pick_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < options.candidates; ++c) {
      Configuration omega = 0;
      for (int b = 0; b < k; ++b) {
        if (unit(rng) < p_good[static_cast<std::size_t>(b)]) omega |= 1u << b;
      }
      if (omega == 0 || eval.evaluated(omega)) continue;
      double score = 0.0;
      for (int b = 0; b < k; ++b) {
        const auto i = static_cast<std::size_t>(b);
        score += (omega & (1u << b)) ? std::log(p_good[i] / p_bad[i])
                                     : std::log((1.0 - p_good[i]) / (1.0 - p_bad[i]));
      }
      if (score > pick_score) {
        pick = omega;
        pick_score = score;
      }
    }
    if (!pick) {
      std::vector<Configuration> rest;
      for (Configuration c : all_configurations(k)) {
        if (!eval.evaluated(c)) rest.push_back(c);
      }
      pick = rest[std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(rng)];
    }
    best.offer(*pick, eval.evaluate(*pick));
  }
  return finish(eval, std::move(best));
}

double calibrate_threshold(std::span<const double> errors, double percentile) {
  if (errors.empty()) throw DomainError("calibrate_threshold: empty error list");
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw DomainError("calibrate_threshold: percentile must lie in (0, 100)");
  }
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

namespace {

constexpr std::pair<Strategy, std::string_view> kStrategyNames[] = {
    {Strategy::Grid, "grid"},
    {Strategy::Rand10, "rand10"},
    {Strategy::Rand50, "rand50"},
    {Strategy::ForwardSelection, "fs"},
    {Strategy::BackwardElimination, "be"},
    {Strategy::Tpe, "tpe"},
    {Strategy::StaticAll, "static-all"},
};

}  // namespace

Strategy parse_strategy(std::string_view name) {
  for (const auto& [s, n] : kStrategyNames) {
    if (n == name) return s;
  }
  throw DomainError("unknown strategy '" + std::string(name) + "'");
}

std::string_view strategy_name(Strategy s) {
  for (const auto& [v, n] : kStrategyNames) {
    if (v == s) return n;
  }
  return "?";
}

std::vector<Strategy> all_strategies() {
  std::vector<Strategy> out;
  for (const auto& entry : kStrategyNames) out.push_back(entry.first);
  return out;
}

bool strategy_is_stochastic(Strategy s) {
  return s == Strategy::Rand10 || s == Strategy::Rand50 || s == Strategy::Tpe;
}

ConfigObjective adaptation_objective(const TtaContext& ctx, const Tensor& x, std::uint64_t sample_key) {
  return [&ctx, &x, sample_key](Configuration omega) {
    AdaptorSet adaptors(*ctx.task, derive_seed(ctx.seed, {sample_key, omega}));
    StepTrace trace = adapt_steps(*ctx.task, *ctx.suite, adaptors, omega, x, ctx.settings.adapt);
    ConfigResult r;
    r.eps_best = trace.best_eps_y;
    r.output = std::move(trace.best_output);
    r.steps = static_cast<int>(trace.steps.size());
    if (ctx.settings.record_steps) r.records = std::move(trace.steps);
    return r;
  };
}

std::pair<Tensor, double> unadapted(const TtaContext& ctx, const Tensor& x) {
  Tape tape;
  Var y = ctx.task->forward(tape, tape.constant_ref(x));
  const double eps = reconstruction_error(tape, ctx.suite->output(), y).value().item();
  return {y.value(), eps};
}

SearchOutcome run_sample(const TtaContext& ctx, const Tensor& x, std::uint64_t sample_key,
                         Strategy strategy, double tau, int run) {
  if (!std::isfinite(tau)) throw DomainError("threshold must be finite");
  auto [y0, eps0] = unadapted(ctx, x);
  if (strategy != Strategy::StaticAll && !trigger(eps0, tau)) {
    SearchOutcome out;
    out.output = std::move(y0);
    out.eps_best = eps0;
    out.eps_unadapted = eps0;
    return out;
  }
  return run_triggered(ctx, x, sample_key, strategy, y0, eps0, run);
}

SearchOutcome run_triggered(const TtaContext& ctx, const Tensor& x, std::uint64_t sample_key,
                            Strategy strategy, const Tensor& y0, double eps0, int run) {
  const int k = ctx.task->num_levels();
  const std::uint64_t search_seed =
      derive_seed(ctx.seed, {sample_key, static_cast<std::uint64_t>(strategy), static_cast<std::uint64_t>(run)});
  SearchOutcome out;
  if (strategy == Strategy::StaticAll) {
    const Configuration omega = (1u << k) - 1;
    AdaptorSet adaptors(*ctx.task, derive_seed(ctx.seed, {sample_key, omega}));
    StepTrace trace = adapt_steps(*ctx.task, *ctx.suite, adaptors, omega, x, ctx.settings.adapt);
    out.omega_star = omega;
    out.output = std::move(trace.last_output);
    out.eps_best = trace.steps.empty() ? trace.best_eps_y : trace.steps.back().errors.eps_y;
    out.budget.configs_evaluated = 1;
    out.budget.adapt_steps_total = out.budget.forwards_total = static_cast<long>(trace.steps.size());
    out.history.push_back({omega, out.eps_best, ctx.settings.record_steps ? trace.steps : std::vector<StepRecord>{}});
    out.triggered = true;
    out.eps_unadapted = eps0;
    return out;
  }
  Evaluator eval(k, adaptation_objective(ctx, x, sample_key));
  switch (strategy) {
    case Strategy::Grid:
      out = grid_search(eval);
      break;
    case Strategy::Rand10:
      out = random_search(eval, 10, search_seed);
      break;
    case Strategy::Rand50:
      out = random_search(eval, 50, search_seed);
      break;
    case Strategy::ForwardSelection:
      out = forward_selection(eval, ctx.settings.fs_literal_pseudocode);
      break;
    case Strategy::BackwardElimination:
      out = backward_elimination(eval);
      break;
    case Strategy::Tpe:
      out = bayesian_search(eval, ctx.settings.tpe, search_seed);
      break;
    case Strategy::StaticAll:
      break;
  }
  out.eps_unadapted = eps0;
  // Safety net; the identity first step already bounds eps_best by eps0.
  if (!(out.eps_best <= eps0)) {
    out.eps_best = eps0;
    out.output = y0;
  }
  return out;
}

}  // namespace tta
