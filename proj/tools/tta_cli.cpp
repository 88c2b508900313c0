// tta: command-line front end for the sample-aware test-time adaptation engine.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tta/checkpoint.hpp"
#include "tta/dataset.hpp"
#include "tta/pipeline.hpp"
#include "tta/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace tta;

namespace {

/// Flags that override fields of the JSON configuration.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::uint64_t> data_seed;
  std::optional<int> image_size, n_train, n_calib, n_id_test, n_ood_test;
  std::optional<double> noise_sigma, shift_multiplier;
  std::optional<std::string> kind;
  std::optional<int> layers, task_epochs, recon_epochs, batch_size;
  std::optional<float> task_lr, recon_lr, adapt_lr;
  std::optional<std::uint64_t> task_seed, suite_seed, tta_seed;
  std::optional<std::string> strategy, psnr_max;
  std::optional<double> percentile;
  std::optional<int> steps, random_runs;
  std::optional<double> w_input, w_levels, w_output;
  bool tau_transductive = false;
  bool fs_literal = false;

  void add_data(CLI::App& app) {
    app.add_option("--config", config_file, "JSON configuration file (a run manifest also works)");
    app.add_option("--seed", data_seed, "Dataset seed");
    app.add_option("--image-size", image_size, "Image side length");
    app.add_option("--n-train", n_train);
    app.add_option("--n-calib", n_calib);
    app.add_option("--n-id-test", n_id_test);
    app.add_option("--n-ood-test", n_ood_test);
    app.add_option("--noise-sigma", noise_sigma, "In-distribution noise sigma");
    app.add_option("--shift-multiplier", shift_multiplier, "OOD noise sigma multiplier");
    app.add_option("--kind", kind, "denoise | style");
  }
  void add_training(CLI::App& app) {
    app.add_option("--layers", layers, "Task model depth n (5..9)");
    app.add_option("--task-epochs", task_epochs);
    app.add_option("--task-lr", task_lr);
    app.add_option("--recon-epochs", recon_epochs);
    app.add_option("--recon-lr", recon_lr);
    app.add_option("--batch-size", batch_size);
    app.add_option("--task-seed", task_seed, "Task init seed (train seed is seed+1)");
    app.add_option("--suite-seed", suite_seed, "Suite init seed (train seed is seed+1)");
  }
  void add_tta(CLI::App& app) {
    app.add_option("--strategy", strategy, "grid | rand10 | rand50 | fs | be | tpe | static-all");
    app.add_option("--percentile", percentile, "Trigger percentile, e.g. 85, 90, 95, 98");
    app.add_option("--steps", steps, "Adaptation steps M per configuration");
    app.add_option("--adapt-lr", adapt_lr, "Adaptor learning rate");
    app.add_option("--w-input", w_input, "Loss weight of eps_x");
    app.add_option("--w-levels", w_levels, "Loss weight of the eps_i sum");
    app.add_option("--w-output", w_output, "Loss weight of eps_y");
    app.add_option("--tta-seed", tta_seed);
    app.add_option("--random-runs", random_runs, "Runs averaged for rand10, rand50 and tpe");
    app.add_flag("--tau-transductive", tau_transductive, "Take tau from the test set instead of the calibration split");
    app.add_flag("--fs-literal-pseudocode", fs_literal, "Cumulative forward selection that stops at the first non-improving level");
    app.add_option("--psnr-max", psnr_max, "generated | range");
  }

  PipelineConfig resolve() const {
    PipelineConfig c;
    if (!config_file.empty()) c = read_pipeline_config(config_file);
    if (data_seed) c.data.seed = *data_seed;
    if (image_size) c.data.image_size = c.arch.image_size = *image_size;
    if (n_train) c.data.n_train = *n_train;
    if (n_calib) c.data.n_calib = *n_calib;
    if (n_id_test) c.data.n_id_test = *n_id_test;
    if (n_ood_test) c.data.n_ood_test = *n_ood_test;
    if (noise_sigma) c.data.acquisition.noise_sigma = *noise_sigma;
    if (shift_multiplier) c.data.shift_noise_multiplier = *shift_multiplier;
    if (kind) c.data.kind = parse_task_kind(*kind);
    if (layers) c.arch.n_layers = *layers;
    if (task_epochs) c.task_epochs = *task_epochs;
    if (task_lr) c.task_lr = *task_lr;
    if (recon_epochs) c.recon_epochs = *recon_epochs;
    if (recon_lr) c.recon_lr = *recon_lr;
    if (batch_size) c.batch_size = *batch_size;
    if (task_seed) c.task_init_seed = *task_seed, c.task_train_seed = *task_seed + 1;
    if (suite_seed) c.suite_init_seed = *suite_seed, c.suite_train_seed = *suite_seed + 1;
    if (tta_seed) c.tta_seed = *tta_seed;
    if (strategy) c.strategy = parse_strategy(*strategy);
    if (percentile) c.percentile = *percentile;
    if (steps) c.search.adapt.steps = *steps;
    if (adapt_lr) c.search.adapt.lr = *adapt_lr;
    if (w_input) c.search.adapt.weights.input = *w_input;
    if (w_levels) c.search.adapt.weights.levels = *w_levels;
    if (w_output) c.search.adapt.weights.output = *w_output;
    if (random_runs) c.random_runs = *random_runs;
    if (tau_transductive) c.tau_transductive = true;
    if (fs_literal) c.search.fs_literal_pseudocode = true;
    if (psnr_max) c.psnr_max = parse_psnr_max(*psnr_max);
    return c;
  }
};

void log_line(const std::string& line) { std::cerr << line << '\n'; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_set(const char* name, const SetSummary& s) {
  if (s.n == 0) {
    std::printf("  %-12s n=0\n", name);
    return;
  }
  std::printf("  %-12s n=%-4zu MAE %.5f±%.5f (%.5f)  PSNR %.3f±%.3f (%.3f)  SSIM %.4f±%.4f (%.4f)%s\n", name, s.n,
              s.mae.mean, s.mae.std, s.mae_unadapted.mean, s.psnr.mean, s.psnr.std, s.psnr_unadapted.mean,
              s.ssim.mean, s.ssim.std, s.ssim_unadapted.mean,
              s.negative_ssim ? ("  [" + std::to_string(s.negative_ssim) + " negative SSIM]").c_str() : "");
}

void print_summary(const RunReport& r) {
  std::printf("strategy %s  percentile %g  tau %.6f  triggered %zu/%zu  (adapted in parentheses: unadapted)\n",
              std::string(strategy_name(r.strategy)).c_str(), r.percentile, r.tau, r.triggered_count(),
              r.samples.size());
  auto dom = [](Domain d) { return [d](const SampleRecord& s) { return s.domain == d; }; };
  auto trig = [](Domain d) { return [d](const SampleRecord& s) { return s.triggered && s.domain == d; }; };
  print_set("A", summarize(r, [](const SampleRecord&) { return true; }));
  print_set("B", summarize(r, [](const SampleRecord& s) { return s.triggered; }));
  print_set("A (id)", summarize(r, dom(Domain::Id)));
  print_set("A (ood)", summarize(r, dom(Domain::Ood)));
  print_set("B (id)", summarize(r, trig(Domain::Id)));
  print_set("B (ood)", summarize(r, trig(Domain::Ood)));
}

struct Models {
  SyntheticDataset data;
  TaskModel task;
  ReconSuite suite;
};

Models load_models(const std::string& data_dir, const std::string& task_dir, const std::string& suite_dir) {
  Models m;
  m.data = read_dataset(data_dir);
  m.task = load_task_model(task_dir);
  m.suite = load_recon_suite(suite_dir, m.task.arch());
  return m;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample-aware test-time adaptation for image-to-image translation"};
  app.require_subcommand(1);

  std::string out, data_dir, task_dir, suite_dir, report_path, omega_text, sweep_text, also_text;
  std::vector<std::string> report_paths;
  double alpha = 0.05;
  int sample_id = -1;

  ConfigFlags gen_flags;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic ID/OOD dataset");
  gen_flags.add_data(*gen);
  gen->add_option("--out", out, "Output directory")->required();

  ConfigFlags task_flags;
  auto* train_task_cmd = app.add_subcommand("train-task", "Train the task model");
  task_flags.add_training(*train_task_cmd);
  task_flags.add_data(*train_task_cmd);
  train_task_cmd->add_option("--data", data_dir)->required();
  train_task_cmd->add_option("--out", out)->required();

  ConfigFlags recon_flags;
  auto* train_recon_cmd = app.add_subcommand("train-recon", "Train the reconstruction suite against a task model");
  recon_flags.add_training(*train_recon_cmd);
  recon_flags.add_data(*train_recon_cmd);
  train_recon_cmd->add_option("--data", data_dir)->required();
  train_recon_cmd->add_option("--task", task_dir)->required();
  train_recon_cmd->add_option("--out", out)->required();

  ConfigFlags cal_flags;
  auto* cal = app.add_subcommand("calibrate", "Compute the trigger threshold tau");
  cal_flags.add_tta(*cal);
  cal_flags.add_data(*cal);
  cal->add_option("--data", data_dir)->required();
  cal->add_option("--task", task_dir)->required();
  cal->add_option("--suite", suite_dir)->required();
  cal->add_option("--out", out, "Write calibration.json here");

  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run-tta", "Gate and adapt every test sample");
  run_flags.add_tta(*run);
  run_flags.add_data(*run);
  run->add_option("--data", data_dir)->required();
  run->add_option("--task", task_dir)->required();
  run->add_option("--suite", suite_dir)->required();
  run->add_option("--out", out)->required();
  run->add_option("--sweep", sweep_text, "Comma-separated percentiles; writes sweep.csv and p<value>/ reports");

  auto* eval = app.add_subcommand("evaluate", "Summarize a report.csv over sets A and B");
  eval->add_option("--report", report_path)->required();
  eval->add_option("--out", out, "Write summary.json here");

  auto* cmp = app.add_subcommand("compare", "Pairwise Wilcoxon tests between strategy reports");
  cmp->add_option("--reports", report_paths, "report.csv files over the same samples")->required()->expected(2, -1);
  cmp->add_option("--alpha", alpha);
  cmp->add_option("--out", out, "wilcoxon.csv path")->required();

  ConfigFlags dump_flags;
  auto* dump = app.add_subcommand("dump-traces", "Per-step adaptation trace and images for one sample");
  dump_flags.add_tta(*dump);
  dump_flags.add_data(*dump);
  dump->add_option("--data", data_dir)->required();
  dump->add_option("--task", task_dir)->required();
  dump->add_option("--suite", suite_dir)->required();
  dump->add_option("--sample", sample_id, "Sample id")->required();
  dump->add_option("--omega", omega_text, "Configuration such as 1,3 (default: run the strategy)");
  dump->add_option("--out", out)->required();

  ConfigFlags pipe_flags;
  auto* pipe = app.add_subcommand("pipeline", "gen-data, train, calibrate and run-tta end to end");
  pipe_flags.add_data(*pipe);
  pipe_flags.add_training(*pipe);
  pipe_flags.add_tta(*pipe);
  pipe->add_option("--out", out)->required();
  pipe->add_option("--data", data_dir, "Reuse a dataset directory");
  pipe->add_option("--task", task_dir, "Reuse a task checkpoint");
  pipe->add_option("--suite", suite_dir, "Reuse a suite checkpoint");
  pipe->add_option("--compare", also_text, "Extra strategies, comma separated, or 'all'");

  ConfigFlags show_flags;
  auto* show = app.add_subcommand("show-config", "Print the effective configuration as JSON");
  show_flags.add_data(*show);
  show_flags.add_training(*show);
  show_flags.add_tta(*show);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const PipelineConfig c = gen_flags.resolve();
      c.validate();
      write_dataset(out, generate_dataset(c.data), c.data);
      write_text_file(fs::path(out) / "config.json", pipeline_config_to_json(c));
      std::cout << "dataset written to " << out << '\n';
    } else if (*train_task_cmd) {
      PipelineConfig c = task_flags.resolve();
      const SyntheticDataset data = read_dataset(data_dir);
      c.data = read_dataset_spec(data_dir);
      c.arch.image_size = c.data.image_size;
      c.validate();
      const TaskModel task = train_task_stage(c, data, log_line);
      save_task_model(task, out, {c.task_train_seed, c.task_epochs});
      std::cout << "task model written to " << out << " (checksum " << hex64(task.checksum()) << ")\n";
    } else if (*train_recon_cmd) {
      PipelineConfig c = recon_flags.resolve();
      const SyntheticDataset data = read_dataset(data_dir);
      const TaskModel task = load_task_model(task_dir);
      c.arch = task.arch();
      const ReconSuite suite = train_recon_stage(c, task, data, log_line);
      save_recon_suite(suite, out, {c.suite_train_seed, c.recon_epochs});
      std::cout << "reconstruction suite written to " << out << " (checksum " << hex64(suite.checksum()) << ")\n";
    } else if (*cal) {
      const PipelineConfig c = cal_flags.resolve();
      const Models m = load_models(data_dir, task_dir, suite_dir);
      const std::vector<double> id = unadapted_errors(m.task, m.suite, m.data.id_test.inputs);
      const std::vector<double> ood = unadapted_errors(m.task, m.suite, m.data.ood_test.inputs);
      std::vector<double> test = id;
      test.insert(test.end(), ood.begin(), ood.end());
      const Calibration cb = calibrate(c, m.task, m.suite, m.data, test);
      auto frac = [&](const std::vector<double>& v) {
        std::size_t n = 0;
        for (double e : v) n += trigger(e, cb.tau) ? 1 : 0;
        return std::make_pair(n, v.size());
      };
      const auto [nid, tid] = frac(id);
      const auto [nood, tood] = frac(ood);
      std::printf("tau(p%g, %s) = %.6f\n", cb.percentile, cb.transductive ? "test" : "calibration", cb.tau);
      std::printf("mean eps_y  id %.6f  ood %.6f\n", mean_std(id).mean, mean_std(ood).mean);
      std::printf("triggered   id %zu/%zu  ood %zu/%zu\n", nid, tid, nood, tood);
      if (!out.empty()) {
        fs::create_directories(out);
        std::ostringstream j;
        j << "{\n  \"percentile\": " << cb.percentile << ",\n  \"tau\": " << fmt("%.17g", cb.tau)
          << ",\n  \"tau_source\": \"" << (cb.transductive ? "test" : "calibration") << "\",\n  \"triggered_id\": "
          << nid << ",\n  \"triggered_ood\": " << nood << "\n}\n";
        write_text_file(fs::path(out) / "calibration.json", j.str());
      }
    } else if (*run) {
      PipelineConfig c = run_flags.resolve();
      c.data_dir = data_dir, c.task_dir = task_dir, c.suite_dir = suite_dir;
      const Models m = load_models(data_dir, task_dir, suite_dir);
      c.data = read_dataset_spec(data_dir);
      c.arch = m.task.arch();
      c.validate();
      const TestSet test = TestSet::from(m.data);
      TtaEngine engine(m.task, m.suite, c, test);
      const Calibration cb = calibrate(c, m.task, m.suite, m.data, engine.unadapted_errors());
      fs::create_directories(out);
      auto write_report = [&](const fs::path& dir, const RunReport& r) {
        fs::create_directories(dir);
        write_text_file(dir / "report.csv", report_csv(r));
        write_text_file(dir / "budget.csv", budget_csv(r));
        write_text_file(dir / "summary.json", summary_json(r));
      };
      if (sweep_text.empty()) {
        const RunReport r = engine.run(c.strategy, cb.tau, c.percentile, c.tau_transductive, log_line);
        write_report(out, r);
        print_summary(r);
      } else {
        const auto sweep = percentile_sweep(engine, c.strategy, cb.errors, parse_list(sweep_text), c.tau_transductive);
        for (const SweepPoint& p : sweep) {
          write_report(fs::path(out) / ("p" + fmt("%g", p.percentile)), p.report);
          print_summary(p.report);
        }
        write_text_file(fs::path(out) / "sweep.csv", sweep_csv(sweep));
      }
      write_text_file(fs::path(out) / "manifest.json", run_manifest_json(c, data_dir, task_dir, suite_dir, cb));
    } else if (*eval) {
      const RunReport r = parse_report_csv(read_text_file(report_path));
      print_summary(r);
      if (!out.empty()) write_text_file(out, summary_json(r));
    } else if (*cmp) {
      std::vector<RunReport> reports;
      for (const std::string& p : report_paths) reports.push_back(parse_report_csv(read_text_file(p)));
      const StrategyComparison sc = compare_strategies(reports, alpha);
      write_text_file(out, comparison_csv(sc));
      std::cout << comparison_csv(sc);
    } else if (*dump) {
      PipelineConfig c = dump_flags.resolve();
      c.search.record_steps = true;
      const Models m = load_models(data_dir, task_dir, suite_dir);
      const TestSet test = TestSet::from(m.data);
      std::size_t idx = test.size();
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.samples.ids[i] == sample_id) idx = i;
      }
      if (idx == test.size()) {
        throw DomainError("sample " + std::to_string(sample_id) + " is not a test sample (test ids " +
                          std::to_string(test.samples.ids.front()) + ".." +
                          std::to_string(test.samples.ids.back()) + ")");
      }
      const Tensor& x = test.samples.inputs[idx];
      TtaContext ctx{&m.task, &m.suite, c.search, c.tta_seed};
      const auto [y0, eps0] = unadapted(ctx, x);
      SearchOutcome o;
      if (!omega_text.empty()) {
        std::vector<int> levels;
        for (double v : parse_list(omega_text)) levels.push_back(static_cast<int>(v));
        const Configuration omega = make_configuration(levels);
        validate_configuration(omega, m.task.num_levels());
        Evaluator ev(m.task.num_levels(), adaptation_objective(ctx, x, static_cast<std::uint64_t>(sample_id)));
        const ConfigResult res = ev.evaluate(omega);
        o.omega_star = omega;
        o.eps_best = res.eps_best;
        o.output = res.output;
        o.history = ev.history();
      } else {
        o = run_triggered(ctx, x, static_cast<std::uint64_t>(sample_id), c.strategy, y0, eps0);
      }
      fs::create_directories(out);
      write_pgm(fs::path(out) / "input.pgm", x);
      write_pgm(fs::path(out) / "target.pgm", test.samples.targets[idx]);
      write_pgm(fs::path(out) / "unadapted.pgm", y0);
      write_pgm(fs::path(out) / "adapted.pgm", o.output);
      write_tnsr(fs::path(out) / "adapted.tnsr", o.output);
      std::ostringstream csv;
      csv << "omega,step,loss,eps_x,eps_levels,eps_y,chosen\n";
      for (const EvaluatedConfig& e : o.history) {
        for (const StepRecord& s : e.records) {
          double levels = 0;
          for (const auto& [lvl, v] : s.errors.eps_i) levels += v;
          csv << '"' << config_to_string(e.omega) << "\"," << s.step << ',' << fmt("%.9g", s.loss) << ','
              << fmt("%.9g", s.errors.eps_x) << ',' << fmt("%.9g", levels) << ',' << fmt("%.9g", s.errors.eps_y)
              << ',' << (s.chosen ? 1 : 0) << '\n';
        }
      }
      write_text_file(fs::path(out) / "steps.csv", csv.str());
      std::printf("sample %d (%s): eps_y %.6f -> %.6f  omega* %s  MAE %.5f -> %.5f\n", sample_id,
                  std::string(domain_name(test.domains[idx])).c_str(), eps0, o.eps_best,
                  o.omega_star ? config_to_string(*o.omega_star).c_str() : "-", mae(y0, test.samples.targets[idx]),
                  mae(o.output, test.samples.targets[idx]));
    } else if (*pipe) {
      PipelineConfig c = pipe_flags.resolve();
      if (!data_dir.empty()) c.data_dir = data_dir;
      if (!task_dir.empty()) c.task_dir = task_dir;
      if (!suite_dir.empty()) c.suite_dir = suite_dir;
      std::vector<Strategy> also;
      if (also_text == "all") {
        also = all_strategies();
      } else if (!also_text.empty()) {
        std::stringstream in(also_text);
        std::string item;
        while (std::getline(in, item, ',')) also.push_back(parse_strategy(item));
      }
      const PipelineResult r = run_pipeline(c, out, log_line, also);
      std::printf("training %.1fs  calibration %.1fs  adaptation %.1fs\n", r.seconds_training, r.seconds_calibration,
                  r.report.seconds);
      print_summary(r.report);
      for (std::size_t i = 1; i < r.compared.size(); ++i) print_summary(r.compared[i]);
      if (r.comparison) std::cout << comparison_csv(*r.comparison);
    } else if (*show) {
      const PipelineConfig c = show_flags.resolve();
      c.validate();
      std::cout << pipeline_config_to_json(c);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
