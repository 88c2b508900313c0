#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/metrics.hpp"
#include "tta/recon_suite.hpp"
#include "tta/search.hpp"
#include "tta/translate_net.hpp"

namespace tta {

/// Every knob of an end-to-end run. JSON keys mirror the field names.
struct PipelineConfig {
  SyntheticTaskSpec data;
  TaskArch arch;

  int task_epochs = 30;
  float task_lr = 5e-3f;
  int recon_epochs = 30;
  float recon_lr = 1e-3f;
  int batch_size = 8;

  std::uint64_t task_init_seed = 1;
  std::uint64_t task_train_seed = 2;
  std::uint64_t suite_init_seed = 3;
  std::uint64_t suite_train_seed = 4;
  std::uint64_t tta_seed = 11;

  Strategy strategy = Strategy::Grid;
  double percentile = 95.0;
  bool tau_transductive = false;
  SearchSettings search;
  PsnrMax psnr_max = PsnrMax::Generated;
  /// Runs averaged per sample for rand10, rand50 and tpe.
  int random_runs = 3;
  /// Loss weights of the CycleGAN objective; recorded, unused by supervised training.
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;

  /// Empty paths mean "generate / train into the output directory".
  std::string data_dir;
  std::string task_dir;
  std::string suite_dir;

  /// Equal hold and linear-decay halves.
  LrSchedule task_schedule() const;
  /// 20% hold, 80% decay.
  LrSchedule recon_schedule() const;
  void validate() const;
};

std::string pipeline_config_to_json(const PipelineConfig& config);
/// Keys absent from `text` keep the values already in `base`. Accepts a run
/// manifest as well, reading its "config" object.
PipelineConfig parse_pipeline_config(std::string_view text, PipelineConfig base = {});
PipelineConfig read_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {});

std::string_view psnr_max_name(PsnrMax mode);
PsnrMax parse_psnr_max(std::string_view name);

using ProgressLog = std::function<void(const std::string&)>;

TaskModel train_task_stage(const PipelineConfig& config, const SyntheticDataset& data,
                           const ProgressLog& log = {});
ReconSuite train_recon_stage(const PipelineConfig& config, const TaskModel& task,
                             const SyntheticDataset& data, const ProgressLog& log = {});

enum class Domain { Id, Ood };
std::string_view domain_name(Domain d);

/// ID test samples followed by OOD test samples.
struct TestSet {
  PairedDataset samples;
  std::vector<Domain> domains;

  static TestSet from(const SyntheticDataset& data);
  std::size_t size() const { return samples.size(); }
};

struct Calibration {
  double percentile = 95.0;
  double tau = 0.0;
  bool transductive = false;
  std::vector<double> errors;  // unadapted eps_y of the split tau was taken from
};

/// Unadapted eps_y of every input.
std::vector<double> unadapted_errors(const TaskModel& task, const ReconSuite& suite,
                                     const std::vector<Tensor>& inputs);
/// tau from the calibration split, or from `test_errors` when transductive.
Calibration calibrate(const PipelineConfig& config, const TaskModel& task, const ReconSuite& suite,
                      const SyntheticDataset& data, const std::vector<double>& test_errors);

struct SampleRecord {
  int sample_id = 0;
  Domain domain = Domain::Id;
  double eps_unadapted = 0.0;
  bool triggered = false;
  std::optional<Configuration> omega_star;
  double eps_best = 0.0;  // mean over runs for stochastic strategies
  SearchBudget budget;    // first run
  ImageMetrics unadapted;
  ImageMetrics adapted;  // mean over runs for stochastic strategies
  int runs = 0;
};

struct RunReport {
  Strategy strategy = Strategy::Grid;
  double percentile = 95.0;
  double tau = 0.0;
  bool transductive = false;
  std::vector<SampleRecord> samples;
  double seconds = 0.0;

  std::size_t triggered_count() const;
};

/// Runs strategies over a fixed test set. Unadapted outputs are computed
/// once; adapted outcomes do not depend on tau and are cached per
/// (strategy, sample), so percentile sweeps only adapt newly triggered samples.
class TtaEngine {
 public:
  TtaEngine(const TaskModel& task, const ReconSuite& suite, const PipelineConfig& config,
            const TestSet& test);

  const std::vector<double>& unadapted_errors() const { return eps0_; }
  const Tensor& unadapted_output(std::size_t i) const { return y0_[i]; }
  RunReport run(Strategy strategy, double tau, double percentile, bool transductive = false,
                const ProgressLog& log = {});
  /// Output reported for sample i under `strategy` (unadapted when untriggered).
  const Tensor& output(Strategy strategy, std::size_t i, double tau);
  /// Adaptation passes performed so far (cache misses).
  std::size_t adapted_samples() const { return adapted_; }

 private:
  struct Adapted {
    std::optional<Configuration> omega_star;
    double eps_best = 0.0;
    SearchBudget budget;
    ImageMetrics metrics;
    int runs = 0;
    Tensor output;  // first run
  };
  const Adapted& adapt(Strategy strategy, std::size_t i);

  const TaskModel& task_;
  const ReconSuite& suite_;
  PipelineConfig config_;
  const TestSet& test_;
  TtaContext ctx_;
  std::vector<Tensor> y0_;
  std::vector<double> eps0_;
  std::vector<ImageMetrics> metrics0_;
  std::map<std::pair<Strategy, std::size_t>, Adapted> cache_;
  std::size_t adapted_ = 0;
};

struct SetSummary {
  std::size_t n = 0;
  MeanStd mae, psnr, ssim;                       // reported outputs
  MeanStd mae_unadapted, psnr_unadapted, ssim_unadapted;
  std::size_t negative_ssim = 0;
};

SetSummary summarize(const RunReport& report, const std::function<bool(const SampleRecord&)>& keep);

inline constexpr int kReportSchemaVersion = 1;

std::string report_csv(const RunReport& report);
RunReport parse_report_csv(std::string_view text);
std::string budget_csv(const RunReport& report);
/// Sets A (all), B (triggered), their ID/OOD parts and the untriggered rest.
std::string summary_json(const RunReport& report);

struct MetricComparison {
  std::optional<double> p_value;  // empty when the test could not run
  std::string note;
  bool significant = false;
};

struct StrategyComparison {
  std::vector<std::string> names;
  std::size_t pairs = 0;  // m in alpha / m
  double alpha = 0.05;
  double alpha_corrected = 0.05;
  /// [i][j][metric] for i < j, metrics ordered ssim, mae, psnr.
  std::vector<std::vector<std::array<MetricComparison, 3>>> cells;
};

/// Paired Wilcoxon tests of per-sample metrics over set A between every pair
/// of reports, Bonferroni-corrected over the pairs. Reports must cover the
/// same sample ids in the same order.
StrategyComparison compare_strategies(const std::vector<RunReport>& reports, double alpha = 0.05);
std::string comparison_csv(const StrategyComparison& comparison);

/// Git blob object id: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_hash(std::string_view bytes);
/// Git blob id of every regular file below `dir`, keyed by relative path.
std::map<std::string, std::string> hash_directory(const std::filesystem::path& dir);

struct SweepPoint {
  double percentile = 0.0;
  double tau = 0.0;
  RunReport report;
};

/// One run per percentile; tau is recomputed from `calibration_errors`.
std::vector<SweepPoint> percentile_sweep(TtaEngine& engine, Strategy strategy,
                                         const std::vector<double>& calibration_errors,
                                         const std::vector<double>& percentiles, bool transductive = false);
std::string sweep_csv(const std::vector<SweepPoint>& sweep);

struct PipelineResult {
  RunReport report;
  /// Primary report first, then one per extra strategy.
  std::vector<RunReport> compared;
  std::optional<StrategyComparison> comparison;
  Calibration calibration;
  double seconds_training = 0.0;
  double seconds_calibration = 0.0;
};

/// gen-data / train / calibrate / run-tta in one go, writing data/, task/,
/// suite/, report.csv, summary.json, budget.csv and manifest.json into `out`.
/// Extra strategies reuse the trained models; their reports go to
/// strategies/<name>/ and the pairwise tests to wilcoxon.csv.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out,
                            const ProgressLog& log = {}, const std::vector<Strategy>& also = {});

/// Run manifest: configuration, checkpoint paths and their content hashes.
std::string run_manifest_json(const PipelineConfig& config, const std::filesystem::path& data_dir,
                              const std::filesystem::path& task_dir,
                              const std::filesystem::path& suite_dir, const Calibration& calibration);

}  // namespace tta
