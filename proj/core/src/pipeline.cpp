#include "tta/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>

#include "serialize.hpp"
#include "tta/checkpoint.hpp"
#include "tta/tensor_io.hpp"

namespace tta {

namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point start) {
  return std::chrono::duration<double>(clock_type::now() - start).count();
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json stat_json(const MeanStd& s) {
  if (s.n == 0) return nullptr;
  return {{"mean", s.mean}, {"std", s.std}};
}

void say(const ProgressLog& log, const std::string& line) {
  if (log) log(line);
}

}  // namespace

LrSchedule PipelineConfig::task_schedule() const {
  const int hold = task_epochs / 2;
  return {task_lr, hold, task_epochs - hold};
}

LrSchedule PipelineConfig::recon_schedule() const {
  const int hold = recon_epochs / 5;
  return {recon_lr, hold, recon_epochs - hold};
}

void PipelineConfig::validate() const {
  data.validate();
  if (arch.image_size != data.image_size) {
    throw DomainError("config conflict: arch.image_size " + std::to_string(arch.image_size) +
                      " differs from data.image_size " + std::to_string(data.image_size));
  }
  if (arch.io_channels != 1) throw DomainError("config conflict: synthetic data has one channel");
  if (task_epochs < 1 || recon_epochs < 1) throw DomainError("epoch counts must be positive");
  if (!(task_lr > 0) || !(recon_lr > 0) || !(search.adapt.lr > 0)) throw DomainError("learning rates must be positive");
  if (batch_size < 1) throw DomainError("batch size must be positive");
  if (!(percentile > 0 && percentile <= 100)) throw DomainError("percentile must lie in (0, 100]");
  if (search.adapt.steps < 1) throw DomainError("adaptation steps M must be at least 1");
  const LossWeights& w = search.adapt.weights;
  if (w.input < 0 || w.levels < 0 || w.output < 0) throw DomainError("loss weights must be non-negative");
  if (random_runs < 1) throw DomainError("random_runs must be at least 1");
  const TpeOptions& t = search.tpe;
  if (t.n_start < 1 || t.n_start > t.n_trials) throw DomainError("tpe needs 1 <= n_start <= n_trials");
  if (!(t.gamma > 0 && t.gamma < 1) || t.candidates < 1) throw DomainError("invalid tpe options");
  if (lambda_cycle < 0 || lambda_identity < 0) throw DomainError("lambda values must be non-negative");
}

std::string_view psnr_max_name(PsnrMax mode) { return mode == PsnrMax::Generated ? "generated" : "range"; }

PsnrMax parse_psnr_max(std::string_view name) {
  if (name == "generated") return PsnrMax::Generated;
  if (name == "range") return PsnrMax::Range;
  throw DomainError("unknown psnr peak mode '" + std::string(name) + "' (generated|range)");
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
  const AdaptOptions& a = c.search.adapt;
  const json j{
      {"data", c.data},
      {"arch", c.arch},
      {"task_epochs", c.task_epochs},
      {"task_lr", c.task_lr},
      {"recon_epochs", c.recon_epochs},
      {"recon_lr", c.recon_lr},
      {"batch_size", c.batch_size},
      {"seeds",
       {{"task_init", c.task_init_seed},
        {"task_train", c.task_train_seed},
        {"suite_init", c.suite_init_seed},
        {"suite_train", c.suite_train_seed},
        {"tta", c.tta_seed}}},
      {"strategy", std::string(strategy_name(c.strategy))},
      {"percentile", c.percentile},
      {"tau_transductive", c.tau_transductive},
      {"adapt",
       {{"steps", a.steps},
        {"lr", a.lr},
        {"weights", {{"input", a.weights.input}, {"levels", a.weights.levels}, {"output", a.weights.output}}}}},
      {"tpe",
       {{"n_trials", c.search.tpe.n_trials},
        {"n_start", c.search.tpe.n_start},
        {"gamma", c.search.tpe.gamma},
        {"candidates", c.search.tpe.candidates}}},
      {"fs_literal_pseudocode", c.search.fs_literal_pseudocode},
      {"psnr_max", std::string(psnr_max_name(c.psnr_max))},
      {"random_runs", c.random_runs},
      {"lambda_cycle", c.lambda_cycle},
      {"lambda_identity", c.lambda_identity},
      {"data_dir", c.data_dir},
      {"task_dir", c.task_dir},
      {"suite_dir", c.suite_dir}};
  return j.dump(2) + "\n";
}

PipelineConfig parse_pipeline_config(std::string_view text, PipelineConfig c) {
  json j = parse_json(text, "pipeline config");
  if (j.contains("config") && j.value("format", "") == "tta-run-manifest") j = j.at("config");
  try {
    if (j.contains("data")) {
      json merged = c.data;
      merged.merge_patch(j.at("data"));
      merged.get_to(c.data);
    }
    if (j.contains("arch")) {
      json merged = c.arch;
      merged.merge_patch(j.at("arch"));
      merged.get_to(c.arch);
    }
    c.task_epochs = j.value("task_epochs", c.task_epochs);
    c.task_lr = j.value("task_lr", c.task_lr);
    c.recon_epochs = j.value("recon_epochs", c.recon_epochs);
    c.recon_lr = j.value("recon_lr", c.recon_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("seeds")) {
      const json& s = j.at("seeds");
      c.task_init_seed = s.value("task_init", c.task_init_seed);
      c.task_train_seed = s.value("task_train", c.task_train_seed);
      c.suite_init_seed = s.value("suite_init", c.suite_init_seed);
      c.suite_train_seed = s.value("suite_train", c.suite_train_seed);
      c.tta_seed = s.value("tta", c.tta_seed);
    }
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.percentile = j.value("percentile", c.percentile);
    c.tau_transductive = j.value("tau_transductive", c.tau_transductive);
    if (j.contains("adapt")) {
      const json& a = j.at("adapt");
      AdaptOptions& o = c.search.adapt;
      o.steps = a.value("steps", o.steps);
      o.lr = a.value("lr", o.lr);
      if (a.contains("weights")) {
        const json& w = a.at("weights");
        o.weights.input = w.value("input", o.weights.input);
        o.weights.levels = w.value("levels", o.weights.levels);
        o.weights.output = w.value("output", o.weights.output);
      }
    }
    if (j.contains("tpe")) {
      const json& t = j.at("tpe");
      TpeOptions& o = c.search.tpe;
      o.n_trials = t.value("n_trials", o.n_trials);
      o.n_start = t.value("n_start", o.n_start);
      o.gamma = t.value("gamma", o.gamma);
      o.candidates = t.value("candidates", o.candidates);
    }
    c.search.fs_literal_pseudocode = j.value("fs_literal_pseudocode", c.search.fs_literal_pseudocode);
    if (j.contains("psnr_max")) c.psnr_max = parse_psnr_max(j.at("psnr_max").get<std::string>());
    c.random_runs = j.value("random_runs", c.random_runs);
    c.lambda_cycle = j.value("lambda_cycle", c.lambda_cycle);
    c.lambda_identity = j.value("lambda_identity", c.lambda_identity);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.task_dir = j.value("task_dir", c.task_dir);
    c.suite_dir = j.value("suite_dir", c.suite_dir);
  } catch (const json::exception& e) {
    throw FormatError(std::string("pipeline config: ") + e.what());
  }
  return c;
}

PipelineConfig read_pipeline_config(const fs::path& path, PipelineConfig base) {
  return parse_pipeline_config(read_text_file(path), std::move(base));
}

TaskModel train_task_stage(const PipelineConfig& config, const SyntheticDataset& data, const ProgressLog& log) {
  TaskModel task(config.arch, config.task_init_seed);
  TrainOptions opt;
  opt.batch_size = config.batch_size;
  if (log) {
    opt.on_epoch = [&](int epoch, double loss) {
      char line[96];
      std::snprintf(line, sizeof line, "task epoch %d/%d  L1 %.5f", epoch + 1, config.task_epochs, loss);
      log(line);
    };
  }
  train_task(task, data.train, config.task_schedule(), config.task_train_seed, opt);
  return task;
}

ReconSuite train_recon_stage(const PipelineConfig& config, const TaskModel& task, const SyntheticDataset& data,
                             const ProgressLog& log) {
  ReconSuite suite(task.arch(), config.suite_init_seed);
  TrainOptions opt;
  opt.batch_size = config.batch_size;
  const SuiteTrainReport report =
      train_recon_suite(suite, task, data.train, config.recon_schedule(), config.suite_train_seed, opt);
  if (log) {
    for (const auto& [name, r] : report.members) {
      char line[96];
      std::snprintf(line, sizeof line, "R_%s  MSE %.5f -> %.5f", name.c_str(), r.epoch_loss.front(),
                    r.epoch_loss.back());
      log(line);
    }
  }
  return suite;
}

std::string_view domain_name(Domain d) { return d == Domain::Id ? "id" : "ood"; }

TestSet TestSet::from(const SyntheticDataset& data) {
  TestSet t;
  for (const auto* split : {&data.id_test, &data.ood_test}) {
    const Domain d = split == &data.id_test ? Domain::Id : Domain::Ood;
    for (std::size_t i = 0; i < split->size(); ++i) {
      t.samples.inputs.push_back(split->inputs[i]);
      t.samples.targets.push_back(split->targets[i]);
      t.samples.ids.push_back(split->ids[i]);
      t.domains.push_back(d);
    }
  }
  return t;
}

std::vector<double> unadapted_errors(const TaskModel& task, const ReconSuite& suite,
                                     const std::vector<Tensor>& inputs) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (const Tensor& x : inputs) out.push_back(unadapted_output_error(suite, task, x));
  return out;
}

Calibration calibrate(const PipelineConfig& config, const TaskModel& task, const ReconSuite& suite,
                      const SyntheticDataset& data, const std::vector<double>& test_errors) {
  Calibration c;
  c.percentile = config.percentile;
  c.transductive = config.tau_transductive;
  if (c.transductive) {
    c.errors = test_errors;
  } else {
    if (data.calib.empty()) throw DomainError("calibration split is empty; use tau_transductive");
    c.errors = unadapted_errors(task, suite, data.calib.inputs);
  }
  c.tau = calibrate_threshold(c.errors, c.percentile);
  return c;
}

std::size_t RunReport::triggered_count() const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const SampleRecord& s) { return s.triggered; }));
}

TtaEngine::TtaEngine(const TaskModel& task, const ReconSuite& suite, const PipelineConfig& config,
                     const TestSet& test)
    : task_(task), suite_(suite), config_(config), test_(test) {
  ctx_.task = &task_;
  ctx_.suite = &suite_;
  ctx_.settings = config_.search;
  ctx_.seed = config_.tta_seed;
  for (std::size_t i = 0; i < test_.size(); ++i) {
    auto [y0, eps0] = unadapted(ctx_, test_.samples.inputs[i]);
    metrics0_.push_back(image_metrics(y0, test_.samples.targets[i], config_.psnr_max));
    y0_.push_back(std::move(y0));
    eps0_.push_back(eps0);
  }
}

const TtaEngine::Adapted& TtaEngine::adapt(Strategy strategy, std::size_t i) {
  const auto key = std::make_pair(strategy, i);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const int runs = strategy_is_stochastic(strategy) ? config_.random_runs : 1;
  const Tensor& x = test_.samples.inputs[i];
  const Tensor& y = test_.samples.targets[i];
  const auto sample_key = static_cast<std::uint64_t>(test_.samples.ids[i]);
  Adapted a;
  a.runs = runs;
  for (int r = 0; r < runs; ++r) {
    SearchOutcome o = run_triggered(ctx_, x, sample_key, strategy, y0_[i], eps0_[i], r);
    const ImageMetrics m = image_metrics(o.output, y, config_.psnr_max);
    a.metrics.mae += m.mae / runs;
    a.metrics.psnr += m.psnr / runs;
    a.metrics.ssim += m.ssim / runs;
    a.eps_best += o.eps_best / runs;
    if (r == 0) {
      a.omega_star = o.omega_star;
      a.budget = o.budget;
      a.output = std::move(o.output);
    }
  }
  ++adapted_;
  return cache_.emplace(key, std::move(a)).first->second;
}

const Tensor& TtaEngine::output(Strategy strategy, std::size_t i, double tau) {
  if (strategy != Strategy::StaticAll && !trigger(eps0_[i], tau)) return y0_[i];
  return adapt(strategy, i).output;
}

RunReport TtaEngine::run(Strategy strategy, double tau, double percentile, bool transductive,
                         const ProgressLog& log) {
  const auto start = clock_type::now();
  RunReport report;
  report.strategy = strategy;
  report.tau = tau;
  report.percentile = percentile;
  report.transductive = transductive;
  std::size_t done = 0;
  for (std::size_t i = 0; i < test_.size(); ++i) {
    SampleRecord rec;
    rec.sample_id = test_.samples.ids[i];
    rec.domain = test_.domains[i];
    rec.eps_unadapted = eps0_[i];
    rec.unadapted = metrics0_[i];
    rec.triggered = strategy == Strategy::StaticAll || trigger(eps0_[i], tau);
    if (rec.triggered) {
      const Adapted& a = adapt(strategy, i);
      rec.omega_star = a.omega_star;
      rec.eps_best = a.eps_best;
      rec.budget = a.budget;
      rec.adapted = a.metrics;
      rec.runs = a.runs;
      if (log && ++done % 25 == 0) {
        log(std::string(strategy_name(strategy)) + ": " + std::to_string(done) + " samples adapted");
      }
    } else {
      rec.eps_best = eps0_[i];
      rec.adapted = metrics0_[i];
    }
    report.samples.push_back(rec);
  }
  report.seconds = seconds_since(start);
  return report;
}

SetSummary summarize(const RunReport& report, const std::function<bool(const SampleRecord&)>& keep) {
  std::vector<double> v[6];
  SetSummary s;
  for (const SampleRecord& r : report.samples) {
    if (!keep(r)) continue;
    ++s.n;
    const double vals[6] = {r.adapted.mae,   r.adapted.psnr,   r.adapted.ssim,
                            r.unadapted.mae, r.unadapted.psnr, r.unadapted.ssim};
    for (int k = 0; k < 6; ++k) v[k].push_back(vals[k]);
    if (r.adapted.ssim < 0) ++s.negative_ssim;
  }
  MeanStd* out[6] = {&s.mae, &s.psnr, &s.ssim, &s.mae_unadapted, &s.psnr_unadapted, &s.ssim_unadapted};
  for (int k = 0; k < 6; ++k) *out[k] = mean_std(v[k]);
  return s;
}

namespace {

constexpr const char* kReportColumns[] = {
    "sample_id",      "domain",         "strategy", "tau",           "eps_unadapted", "triggered",
    "omega_star",     "eps_best",       "configs_evaluated", "adapt_steps", "forwards",  "runs",
    "mae_unadapted",  "psnr_unadapted", "ssim_unadapted",    "mae",         "psnr",      "ssim"};

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.emplace_back();
    } else {
      out.back().push_back(ch);
    }
  }
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

Configuration parse_omega(const std::string& s) {
  if (s.empty()) return 0;
  if (s.front() != '{' || s.back() != '}') throw FormatError("bad configuration '" + s + "'");
  std::vector<int> levels;
  std::stringstream in(s.substr(1, s.size() - 2));
  std::string item;
  while (std::getline(in, item, ',')) levels.push_back(std::stoi(item));
  return make_configuration(levels);
}

}  // namespace

std::string report_csv(const RunReport& report) {
  std::string out;
  for (std::size_t c = 0; c < std::size(kReportColumns); ++c) {
    out += (c ? "," : "");
    out += kReportColumns[c];
  }
  out += '\n';
  const std::string name(strategy_name(report.strategy));
  for (const SampleRecord& r : report.samples) {
    const std::string omega = r.omega_star ? "\"" + config_to_string(*r.omega_star) + "\"" : "";
    const std::string fields[] = {std::to_string(r.sample_id),
                                  std::string(domain_name(r.domain)),
                                  name,
                                  num(report.tau),
                                  num(r.eps_unadapted),
                                  r.triggered ? "1" : "0",
                                  omega,
                                  num(r.eps_best),
                                  std::to_string(r.budget.configs_evaluated),
                                  std::to_string(r.budget.adapt_steps_total),
                                  std::to_string(r.budget.forwards_total),
                                  std::to_string(r.runs),
                                  num(r.unadapted.mae),
                                  num(r.unadapted.psnr),
                                  num(r.unadapted.ssim),
                                  num(r.adapted.mae),
                                  num(r.adapted.psnr),
                                  num(r.adapted.ssim)};
    for (std::size_t c = 0; c < std::size(fields); ++c) {
      out += (c ? "," : "");
      out += fields[c];
    }
    out += '\n';
  }
  return out;
}

RunReport parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report: empty file");
  const auto header = split_csv_line(line);
  if (header.size() != std::size(kReportColumns) ||
      !std::equal(header.begin(), header.end(), std::begin(kReportColumns))) {
    throw FormatError("report: unexpected column set (schema version " + std::to_string(kReportSchemaVersion) +
                      " expected)");
  }
  RunReport report;
  bool first = true;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw FormatError("report: row " + std::to_string(row) + " has wrong arity");
    try {
      SampleRecord r;
      r.sample_id = std::stoi(f[0]);
      if (f[1] != "id" && f[1] != "ood") throw FormatError("bad domain '" + f[1] + "'");
      r.domain = f[1] == "id" ? Domain::Id : Domain::Ood;
      if (first) {
        report.strategy = parse_strategy(f[2]);
        report.tau = parse_double(f[3]);
        first = false;
      }
      r.eps_unadapted = parse_double(f[4]);
      r.triggered = f[5] == "1";
      if (!f[6].empty()) r.omega_star = parse_omega(f[6]);
      r.eps_best = parse_double(f[7]);
      r.budget.configs_evaluated = std::stoi(f[8]);
      r.budget.adapt_steps_total = std::stol(f[9]);
      r.budget.forwards_total = std::stol(f[10]);
      r.runs = std::stoi(f[11]);
      r.unadapted = {parse_double(f[12]), parse_double(f[13]), parse_double(f[14])};
      r.adapted = {parse_double(f[15]), parse_double(f[16]), parse_double(f[17])};
      report.samples.push_back(r);
    } catch (const std::logic_error& e) {
      throw FormatError("report: row " + std::to_string(row) + ": " + e.what());
    }
  }
  return report;
}

std::string budget_csv(const RunReport& report) {
  std::string out = "sample_id,domain,triggered,configs_evaluated,adapt_steps,forwards\n";
  SearchBudget total;
  for (const SampleRecord& r : report.samples) {
    out += std::to_string(r.sample_id) + "," + std::string(domain_name(r.domain)) + "," + (r.triggered ? "1" : "0") +
           "," + std::to_string(r.budget.configs_evaluated) + "," + std::to_string(r.budget.adapt_steps_total) + "," +
           std::to_string(r.budget.forwards_total) + "\n";
    total.configs_evaluated += r.budget.configs_evaluated;
    total.adapt_steps_total += r.budget.adapt_steps_total;
    total.forwards_total += r.budget.forwards_total;
  }
  out += "total,all," + std::to_string(report.triggered_count()) + "," + std::to_string(total.configs_evaluated) +
         "," + std::to_string(total.adapt_steps_total) + "," + std::to_string(total.forwards_total) + "\n";
  return out;
}

std::string summary_json(const RunReport& report) {
  auto set = [&](const std::function<bool(const SampleRecord&)>& keep) {
    const SetSummary s = summarize(report, keep);
    return json{{"n", s.n},
                {"mae", stat_json(s.mae)},
                {"psnr", stat_json(s.psnr)},
                {"ssim", stat_json(s.ssim)},
                {"unadapted",
                 {{"mae", stat_json(s.mae_unadapted)},
                  {"psnr", stat_json(s.psnr_unadapted)},
                  {"ssim", stat_json(s.ssim_unadapted)}}},
                {"negative_ssim", s.negative_ssim}};
  };
  auto in = [](Domain d) { return [d](const SampleRecord& r) { return r.domain == d; }; };
  auto trig_in = [](Domain d) { return [d](const SampleRecord& r) { return r.triggered && r.domain == d; }; };
  SearchBudget total;
  for (const SampleRecord& r : report.samples) {
    total.configs_evaluated += r.budget.configs_evaluated;
    total.adapt_steps_total += r.budget.adapt_steps_total;
    total.forwards_total += r.budget.forwards_total;
  }
  std::size_t nonzero_budgets = 0;
  for (const SampleRecord& r : report.samples) nonzero_budgets += r.budget.empty() ? 0 : 1;
  const json j{
      {"schema_version", kReportSchemaVersion},
      {"strategy", std::string(strategy_name(report.strategy))},
      {"percentile", report.percentile},
      {"tau", report.tau},
      {"tau_source", report.transductive ? "test" : "calibration"},
      {"counts",
       {{"test", report.samples.size()},
        {"triggered", report.triggered_count()},
        {"nonzero_budgets", nonzero_budgets}}},
      {"sets",
       {{"A", set([](const SampleRecord&) { return true; })},
        {"B", set([](const SampleRecord& r) { return r.triggered; })},
        {"A_id", set(in(Domain::Id))},
        {"A_ood", set(in(Domain::Ood))},
        {"B_id", set(trig_in(Domain::Id))},
        {"B_ood", set(trig_in(Domain::Ood))},
        {"untriggered", set([](const SampleRecord& r) { return !r.triggered; })}}},
      {"budget",
       {{"configs_evaluated", total.configs_evaluated},
        {"adapt_steps", total.adapt_steps_total},
        {"forwards", total.forwards_total}}},
      {"seconds", report.seconds}};
  return j.dump(2) + "\n";
}

StrategyComparison compare_strategies(const std::vector<RunReport>& reports, double alpha) {
  if (reports.size() < 2) throw DomainError("compare: need at least two reports");
  if (!(alpha > 0 && alpha < 1)) throw DomainError("compare: alpha must lie in (0,1)");
  for (const RunReport& r : reports) {
    if (r.samples.size() != reports[0].samples.size()) throw DomainError("compare: sample-id mismatch");
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      if (r.samples[i].sample_id != reports[0].samples[i].sample_id) {
        throw DomainError("compare: sample-id mismatch at row " + std::to_string(i));
      }
    }
  }
  StrategyComparison c;
  const std::size_t s = reports.size();
  for (const RunReport& r : reports) c.names.emplace_back(strategy_name(r.strategy));
  c.pairs = s * (s - 1) / 2;
  c.alpha = alpha;
  c.alpha_corrected = alpha / static_cast<double>(c.pairs);
  c.cells.assign(s, std::vector<std::array<MetricComparison, 3>>(s));
  auto metric = [](const SampleRecord& r, int m) {
    return m == 0 ? r.adapted.ssim : m == 1 ? r.adapted.mae : r.adapted.psnr;
  };
  for (int m = 0; m < 3; ++m) {
    std::vector<double> p_values;
    std::vector<MetricComparison*> tested;
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = i + 1; j < s; ++j) {
        std::vector<double> a, b;
        for (std::size_t n = 0; n < reports[i].samples.size(); ++n) {
          a.push_back(metric(reports[i].samples[n], m));
          b.push_back(metric(reports[j].samples[n], m));
        }
        MetricComparison& cell = c.cells[i][j][static_cast<std::size_t>(m)];
        try {
          cell.p_value = wilcoxon_signed_rank(a, b).p_value;
          p_values.push_back(*cell.p_value);
          tested.push_back(&cell);
        } catch (const DomainError& e) {
          cell.note = e.what();
        }
      }
    }
    // Untestable cells still count towards m.
    for (std::size_t t = 0; t < tested.size(); ++t) tested[t]->significant = p_values[t] < c.alpha_corrected;
  }
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < i; ++j) c.cells[i][j] = c.cells[j][i];
  }
  return c;
}

std::string comparison_csv(const StrategyComparison& c) {
  char head[160];
  std::snprintf(head, sizeof head, "# alpha=%.6g m=%zu alpha_corr=%.6g cells=ssim;mae;psnr (* = p < alpha_corr)\n",
                c.alpha, c.pairs, c.alpha_corrected);
  std::string out = head;
  out += "strategy";
  for (const std::string& n : c.names) out += "," + n;
  out += '\n';
  static constexpr const char* kMetric[] = {"ssim", "mae", "psnr"};
  for (std::size_t i = 0; i < c.names.size(); ++i) {
    out += c.names[i];
    for (std::size_t j = 0; j < c.names.size(); ++j) {
      out += ',';
      if (i == j) {
        out += '-';
        continue;
      }
      for (int m = 0; m < 3; ++m) {
        const MetricComparison& cell = c.cells[i][j][static_cast<std::size_t>(m)];
        out += (m ? ";" : "");
        out += kMetric[m];
        out += '=';
        if (cell.p_value) {
          out += num(*cell.p_value);
          if (cell.significant) out += '*';
        } else {
          std::string note = cell.note;
          std::replace(note.begin(), note.end(), ',', ' ');
          out += "n/a(" + note + ")";
        }
      }
    }
    out += '\n';
  }
  return out;
}

std::string git_blob_hash(std::string_view bytes) {
  std::string object = "blob " + std::to_string(bytes.size()) + '\0';
  object.append(bytes);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(object.data(), object.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw NumericError("sha1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : std::span(digest, len)) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 15]);
  }
  return out;
}

std::map<std::string, std::string> hash_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      out[fs::relative(entry.path(), dir).generic_string()] = git_blob_hash(read_text_file(entry.path()));
    }
  }
  return out;
}

std::vector<SweepPoint> percentile_sweep(TtaEngine& engine, Strategy strategy,
                                         const std::vector<double>& calibration_errors,
                                         const std::vector<double>& percentiles, bool transductive) {
  std::vector<SweepPoint> out;
  for (double p : percentiles) {
    SweepPoint point;
    point.percentile = p;
    point.tau = calibrate_threshold(calibration_errors, p);
    point.report = engine.run(strategy, point.tau, p, transductive);
    out.push_back(std::move(point));
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& sweep) {
  std::string out = "percentile,tau,triggered,triggered_id,triggered_ood,mae_A,mae_B,mae_B_unadapted\n";
  for (const SweepPoint& p : sweep) {
    std::size_t id = 0, ood = 0;
    for (const SampleRecord& r : p.report.samples) {
      if (r.triggered) ++(r.domain == Domain::Id ? id : ood);
    }
    const SetSummary a = summarize(p.report, [](const SampleRecord&) { return true; });
    const SetSummary b = summarize(p.report, [](const SampleRecord& r) { return r.triggered; });
    out += num(p.percentile) + "," + num(p.tau) + "," + std::to_string(id + ood) + "," + std::to_string(id) + "," +
           std::to_string(ood) + "," + num(a.mae.mean) + "," + (b.n ? num(b.mae.mean) : "") + "," +
           (b.n ? num(b.mae_unadapted.mean) : "") + "\n";
  }
  return out;
}

std::string run_manifest_json(const PipelineConfig& config, const fs::path& data_dir, const fs::path& task_dir,
                              const fs::path& suite_dir, const Calibration& calibration) {
  const json j{{"format", "tta-run-manifest"},
               {"version", 1},
               {"config", parse_json(pipeline_config_to_json(config), "config")},
               {"paths", {{"data", data_dir.string()}, {"task", task_dir.string()}, {"suite", suite_dir.string()}}},
               {"content_hashes",
                {{"data", hash_directory(data_dir)},
                 {"task", hash_directory(task_dir)},
                 {"suite", hash_directory(suite_dir)}}},
               {"tau", calibration.tau},
               {"tau_source", calibration.transductive ? "test" : "calibration"}};
  return j.dump(2) + "\n";
}

PipelineResult run_pipeline(const PipelineConfig& config_in, const fs::path& out, const ProgressLog& log,
                            const std::vector<Strategy>& also) {
  PipelineConfig config = config_in;
  config.validate();
  fs::create_directories(out);
  PipelineResult result;
  const auto t_train = clock_type::now();

  SyntheticDataset data;
  fs::path data_dir = config.data_dir;
  if (data_dir.empty()) {
    data_dir = out / "data";
    data = generate_dataset(config.data);
    write_dataset(data_dir, data, config.data);
    say(log, "dataset written to " + data_dir.string());
  } else {
    const SyntheticTaskSpec on_disk = read_dataset_spec(data_dir);
    if (json(on_disk) != json(config.data)) {
      throw DomainError("config conflict: dataset in " + data_dir.string() + " was generated from a different spec");
    }
    data = read_dataset(data_dir);
  }

  TaskModel task;
  fs::path task_dir = config.task_dir;
  if (task_dir.empty()) {
    task_dir = out / "task";
    task = train_task_stage(config, data, log);
    save_task_model(task, task_dir, {config.task_train_seed, config.task_epochs});
  } else {
    task = load_task_model(task_dir);
    if (!(task.arch() == config.arch)) throw ArchitectureError("task checkpoint architecture differs from config");
    if (!task.trained()) throw DomainError("task checkpoint in " + task_dir.string() + " is untrained");
  }

  ReconSuite suite;
  fs::path suite_dir = config.suite_dir;
  if (suite_dir.empty()) {
    suite_dir = out / "suite";
    suite = train_recon_stage(config, task, data, log);
    save_recon_suite(suite, suite_dir, {config.suite_train_seed, config.recon_epochs});
  } else {
    suite = load_recon_suite(suite_dir, task.arch());
  }
  result.seconds_training = seconds_since(t_train);

  const auto t_cal = clock_type::now();
  const TestSet test = TestSet::from(data);
  TtaEngine engine(task, suite, config, test);
  result.calibration = calibrate(config, task, suite, data, engine.unadapted_errors());
  result.seconds_calibration = seconds_since(t_cal);
  say(log, "tau(p" + num(config.percentile) + ") = " + num(result.calibration.tau));

  result.report = engine.run(config.strategy, result.calibration.tau, config.percentile, config.tau_transductive, log);
  write_text_file(out / "report.csv", report_csv(result.report));
  write_text_file(out / "budget.csv", budget_csv(result.report));
  write_text_file(out / "summary.json", summary_json(result.report));
  write_text_file(out / "manifest.json", run_manifest_json(config, data_dir, task_dir, suite_dir, result.calibration));

  if (!also.empty()) {
    result.compared.push_back(result.report);
    for (Strategy s : also) {
      if (s == config.strategy) continue;
      RunReport r = engine.run(s, result.calibration.tau, config.percentile, config.tau_transductive, log);
      const fs::path dir = out / "strategies" / std::string(strategy_name(s));
      fs::create_directories(dir);
      write_text_file(dir / "report.csv", report_csv(r));
      write_text_file(dir / "budget.csv", budget_csv(r));
      write_text_file(dir / "summary.json", summary_json(r));
      result.compared.push_back(std::move(r));
    }
    if (result.compared.size() >= 2) {
      result.comparison = compare_strategies(result.compared);
      write_text_file(out / "wilcoxon.csv", comparison_csv(*result.comparison));
    }
  }
  return result;
}

}  // namespace tta
