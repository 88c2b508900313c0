#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tta/dab.hpp"

namespace tta {

struct SearchBudget {
  int configs_evaluated = 0;
  long adapt_steps_total = 0;
  long forwards_total = 0;

  bool empty() const { return configs_evaluated == 0 && adapt_steps_total == 0 && forwards_total == 0; }
  friend bool operator==(const SearchBudget&, const SearchBudget&) = default;
};

/// Result of adapting one sample under one configuration.
struct ConfigResult {
  double eps_best = 0.0;
  Tensor output;
  int steps = 0;
  std::vector<StepRecord> records;  // filled when step recording is on
};

using ConfigObjective = std::function<ConfigResult(Configuration)>;

struct EvaluatedConfig {
  Configuration omega = 0;
  double eps_best = 0.0;
  std::vector<StepRecord> records;
};

struct SearchOutcome {
  std::optional<Configuration> omega_star;
  double eps_best = 0.0;
  Tensor output;
  SearchBudget budget;
  bool triggered = false;
  double eps_unadapted = 0.0;
  std::vector<EvaluatedConfig> history;  // evaluation order
};

/// Wraps a per-configuration objective and keeps exact budget counters.
class Evaluator {
 public:
  Evaluator(int num_levels, ConfigObjective objective);

  int num_levels() const { return k_; }
  ConfigResult evaluate(Configuration omega);
  const SearchBudget& budget() const { return budget_; }
  const std::vector<EvaluatedConfig>& history() const { return history_; }
  bool evaluated(Configuration omega) const;

 private:
  int k_;
  ConfigObjective objective_;
  SearchBudget budget_;
  std::vector<EvaluatedConfig> history_;
};

/// Objective that returns f(omega) as both error and (scalar) output, charging
/// `steps` adaptation steps per evaluation.
ConfigObjective mock_objective(std::function<double(Configuration)> f, int steps);

SearchOutcome grid_search(Evaluator& eval);
/// Draws min(n_config, |Omega|) distinct configurations, then scans them in
/// canonical order.
SearchOutcome random_search(Evaluator& eval, int n_config, std::uint64_t seed);
/// Distinct uniform draw used by random search and the TPE warm-up.
std::vector<Configuration> sample_configurations(int k, int count, std::uint64_t seed);
/// Greedy growth. With `literal_pseudocode` the candidate set is grown
/// cumulatively within a round and the search stops at the first
/// non-improving candidate.
SearchOutcome forward_selection(Evaluator& eval, bool literal_pseudocode = false);
SearchOutcome backward_elimination(Evaluator& eval);

struct TpeOptions {
  int n_trials = 20;
  int n_start = 5;
  double gamma = 0.25;
  int candidates = 24;
};
SearchOutcome bayesian_search(Evaluator& eval, const TpeOptions& options, std::uint64_t seed);

/// Nearest-rank percentile: value at 1-based index ceil(p/100 * N) of the sorted list.
double calibrate_threshold(std::span<const double> errors, double percentile);
inline bool trigger(double eps_y, double tau) { return eps_y > tau; }

enum class Strategy { Grid, Rand10, Rand50, ForwardSelection, BackwardElimination, Tpe, StaticAll };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);
std::vector<Strategy> all_strategies();
/// Random and TPE searches depend on a seed; the harness averages them over runs.
bool strategy_is_stochastic(Strategy s);

struct SearchSettings {
  AdaptOptions adapt;
  TpeOptions tpe;
  bool fs_literal_pseudocode = false;
  bool record_steps = false;
};

struct TtaContext {
  const TaskModel* task = nullptr;
  const ReconSuite* suite = nullptr;
  SearchSettings settings;
  std::uint64_t seed = 0;
};

/// Fresh adaptors keyed by (seed, sample, omega), adapted for M steps.
ConfigObjective adaptation_objective(const TtaContext& ctx, const Tensor& x, std::uint64_t sample_key);

/// Unadapted output and its eps_y.
std::pair<Tensor, double> unadapted(const TtaContext& ctx, const Tensor& x);

/// Gate on tau, then search. `run` selects the seed stream of stochastic
/// strategies. StaticAll adapts every sample with all levels and returns
/// the last-step output.
SearchOutcome run_sample(const TtaContext& ctx, const Tensor& x, std::uint64_t sample_key,
                         Strategy strategy, double tau, int run = 0);

/// run_sample for a sample whose unadapted output is already known.
SearchOutcome run_triggered(const TtaContext& ctx, const Tensor& x, std::uint64_t sample_key,
                            Strategy strategy, const Tensor& y0, double eps0, int run = 0);

}  // namespace tta
