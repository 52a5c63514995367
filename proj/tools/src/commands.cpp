#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "lossada/nets.hpp"

namespace lossada::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::size_t thread_count(const ExperimentSpec& spec, const CommandOptions& opt) {
  std::size_t n = opt.threads.value_or(spec.threads);
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// Runs fn(0..n-1) on up to `threads` workers. The first exception by task
// index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw ConfigError("out", "no output directory given (--out or [experiment] out)");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("out", dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError("out", dir.string() + " already exists; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

void resolve_options(ExperimentSpec& spec, const CommandOptions& opt) {
  if (!opt.out_dir.empty()) spec.out_dir = opt.out_dir;
  if (opt.seeds) {
    if (opt.seeds->empty()) throw ConfigError("seeds", "no seeds given");
    spec.seeds = *opt.seeds;
  }
  if (spec.seeds.empty()) throw ConfigError("experiment.seeds", "no seeds given");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void write_run_tables(const fs::path& dir, const std::vector<SeedRun>& runs) {
  fs::create_directories(dir);
  {
    std::ofstream out = open_out(dir / "metrics.csv");
    write_metrics_csv(out, runs);
  }
  {
    std::ofstream out = open_out(dir / "summary.csv");
    write_summary_csv(out, runs);
  }
  std::ofstream out = open_out(dir / "rounds.jsonl");
  write_round_logs_jsonl(out, runs);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out = open_out(p);
  out << text;
}

nlohmann::json config_json(const ExperimentSpec& spec, const RunConfig& r) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["seeds"] = spec.seeds;
  j["run"] = {{"budget_percent", r.budget_percent},
              {"rounds", r.rounds},
              {"per_round_quota", r.per_round_quota},
              {"margin", r.margin},
              {"xi", r.xi},
              {"gamma", r.gamma},
              {"learning_rate", r.learning_rate},
              {"momentum", r.momentum},
              {"batch_size", r.batch_size},
              {"pretrain_iters", r.pretrain_iters},
              {"s1_iters", r.s1_iters},
              {"s2_iters", r.s2_iters},
              {"strategy", to_string(r.strategy)},
              {"enable_s1", r.ablation.enable_s1},
              {"enable_s2", r.ablation.enable_s2},
              {"s2_labels", r.ablation.s2_labels == S2Labels::kPseudo ? "pseudo" : "ground_truth"},
              {"enable_im", r.ablation.enable_im},
              {"swap_stage_order", r.ablation.swap_stage_order},
              {"cold_start", r.ablation.cold_start},
              {"hidden", r.dims.hidden},
              {"feature_dim", r.dims.feature_dim},
              {"predictor_dim", r.dims.predictor_dim},
              {"discriminator_hidden", r.dims.discriminator_hidden},
              {"misprediction_quantile", r.misprediction_quantile}};
  const DatasetSpec& d = spec.dataset;
  switch (d.generator) {
    case Generator::kTwoMoons:
      j["dataset"] = {{"generator", "two_moons"},
                      {"n_per_domain", d.moons.n_per_domain},
                      {"rotation_deg", d.moons.rotation_deg},
                      {"translation_x", d.moons.translation_x},
                      {"translation_y", d.moons.translation_y},
                      {"noise_sd", d.moons.noise_sd}};
      break;
    case Generator::kBlobs:
      j["dataset"] = {{"generator", "blobs"},
                      {"num_classes", d.blobs.num_classes},
                      {"n_per_class", d.blobs.n_per_class},
                      {"class_spacing", d.blobs.class_spacing},
                      {"cluster_sd", d.blobs.cluster_sd},
                      {"shift_x", d.blobs.shift_x},
                      {"shift_y", d.blobs.shift_y},
                      {"target_weights", d.blobs.target_weights}};
      break;
    case Generator::kCsv:
      j["dataset"] = {{"generator", "csv"}, {"path", d.csv_path.string()}, {"num_features", d.csv_features}};
      break;
  }
  if (d.fixed_seed) j["dataset"]["seed"] = d.seed;
  return j;
}

void say(const CommandOptions& opt, const std::string& line) {
  static std::mutex mu;
  if (!opt.log) return;
  std::lock_guard<std::mutex> lock(mu);
  *opt.log << line << '\n';
}

struct Aggregate {
  double median = 0, mean = 0, sd = 0;
};

Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  a.median = median(v);
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  a.sd = sample_sd(v);
  return a;
}

std::string series_label(const fs::path& input, const std::vector<std::string>& labels, std::size_t i) {
  if (i < labels.size()) return labels[i];
  const fs::path parent = input.parent_path().filename();
  return parent.empty() ? input.stem().string() : parent.string();
}

void emit_run_plots(const fs::path& dir, const std::string& label) {
  const std::vector<fs::path> in = {dir / "metrics.csv"};
  for (PlotKind k : {PlotKind::kBudgetCurve, PlotKind::kPseudoAcc, PlotKind::kMisprediction}) {
    write_text(dir / (std::string(to_string(k)) + ".svg"), render_svg(build_chart(k, in, {label})));
  }
}

const char* flag(bool on) { return on ? "O" : "X"; }

}  // namespace

const std::vector<AblationSetting>& ablation_settings() {
  static const std::vector<AblationSetting> settings = {
      {"Ablation1", true, false, S2Labels::kGroundTruth, false, false},
      {"Ablation2", true, true, S2Labels::kGroundTruth, false, false},
      {"Ablation3", false, true, S2Labels::kGroundTruth, false, false},
      {"Ablation4", false, false, S2Labels::kPseudo, true, false},
      {"Ablation5", false, true, S2Labels::kPseudo, false, true},
      {"Ours", false, true, S2Labels::kPseudo, true, false},
  };
  return settings;
}

RunConfig apply_setting(const RunConfig& base, const AblationSetting& s) {
  RunConfig c = base;
  c.strategy = Strategy::kLossPrediction;
  c.ablation.enable_s1 = s.enable_s1;
  c.ablation.enable_s2 = true;
  c.ablation.s2_labels = s.s2_labels;
  c.ablation.enable_im = s.enable_im;
  c.ablation.swap_stage_order = s.swap_stage_order;
  c.ablation.cold_start = s.cold_start;
  return c;
}

std::vector<SweepCell> sweep_cells(const ExperimentSpec& spec) {
  const SweepSpec& sw = spec.sweep;
  std::vector<SweepCell> cells;
  auto integral = [](double v, const char* field) {
    if (!(v >= 0) || std::floor(v) != v) throw ConfigError(field, "expected a non-negative integer, got " + fmt(v));
    return static_cast<std::size_t>(v);
  };
  auto add = [&](std::string name, double value, RunConfig c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("sweep." + e.field(), e.message() + " (cell " + name + ")");
    }
    cells.push_back({std::move(name), value, std::move(c)});
  };
  if (sw.axis == SweepAxis::kBudgetGamma) {
    if (sw.budgets.empty()) throw ConfigError("sweep.budgets", "empty axis");
    if (sw.gammas.empty()) throw ConfigError("sweep.gammas", "empty axis");
    for (double g : sw.gammas) {
      for (double b : sw.budgets) {
        RunConfig c = spec.run;
        c.gamma = integral(g, "sweep.gammas");
        c.budget_percent = b;
        c.per_round_quota.clear();
        add("gamma" + fmt(g) + "_budget" + fmt(b), b, std::move(c));
      }
    }
    return cells;
  }
  if (sw.values.empty()) throw ConfigError("sweep.values", "empty axis");
  for (double v : sw.values) {
    RunConfig c = spec.run;
    switch (sw.axis) {
      case SweepAxis::kBatchSize: c.batch_size = integral(v, "sweep.values"); break;
      case SweepAxis::kXi: c.xi = v; break;
      case SweepAxis::kPredictorDim: c.dims.predictor_dim = integral(v, "sweep.values"); break;
      case SweepAxis::kGamma: c.gamma = integral(v, "sweep.values"); break;
      case SweepAxis::kBudget:
        c.budget_percent = v;
        c.per_round_quota.clear();
        break;
      case SweepAxis::kBudgetGamma: break;
    }
    add(std::string(to_string(sw.axis)) + fmt(v), v, std::move(c));
  }
  return cells;
}

std::vector<SeedRun> run_seeds(const ExperimentSpec& spec, const RunConfig& cfg,
                               const std::vector<std::uint64_t>& seeds, std::size_t threads,
                               const fs::path& checkpoint_dir) {
  std::vector<SeedRun> runs(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    RunConfig c = cfg;
    c.seed = seeds[i];
    const DomainPair data = make_dataset(spec.dataset, seeds[i]);
    RunHooks hooks;
    if (!checkpoint_dir.empty()) {
      const fs::path dir = checkpoint_dir / ("seed" + std::to_string(seeds[i]));
      fs::create_directories(dir);
      hooks.on_pretrained = [dir](const ModelBundle& m) { save_checkpoint(m, dir / "pretrain.ckpt"); };
      hooks.on_round_end = [dir](const RoundLog& log, const ModelBundle& m, const PoolState&) {
        save_checkpoint(m, dir / ("round" + std::to_string(log.round) + ".ckpt"));
      };
    }
    runs[i] = SeedRun{seeds[i], run_active_loop(c, data, hooks)};
  });
  return runs;
}

std::vector<double> final_accuracies(const std::vector<SeedRun>& runs) {
  std::vector<double> acc;
  for (const SeedRun& r : runs) {
    if (!r.result.rounds.empty()) acc.push_back(r.result.rounds.back().metrics.target_accuracy);
  }
  return acc;
}

ChartSpec build_chart(PlotKind kind, const std::vector<fs::path>& inputs, const std::vector<std::string>& labels) {
  if (inputs.empty()) throw ConfigError("plot.inputs", "no input files");
  ChartSpec chart;
  if (kind == PlotKind::kAblationBars) {
    chart.title = "Ablation: final target accuracy (median over seeds)";
    chart.x_label = "setting";
    chart.y_label = "target accuracy";
    chart.bars = true;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const CsvTable t = read_table_csv(inputs[i], {"setting", "median_acc"});
      Series s;
      s.name = series_label(inputs[i], labels, i);
      const std::size_t cs = t.column("setting"), ca = t.column("median_acc");
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (i == 0) chart.categories.push_back(t.text[r][cs]);
        s.x.push_back(static_cast<double>(r));
        s.y.push_back(t.rows[r][ca]);
      }
      chart.series.push_back(std::move(s));
    }
    return chart;
  }

  struct Line {
    std::string column;
    std::string suffix;
  };
  std::string x_col;
  std::vector<Line> lines;
  switch (kind) {
    case PlotKind::kBudgetCurve:
      chart.title = "Target accuracy vs annotation budget";
      chart.x_label = "budget spent (% of target)";
      chart.y_label = "target accuracy";
      x_col = "budget_pct";
      lines = {{"target_acc", ""}};
      break;
    case PlotKind::kPseudoAcc:
      chart.title = "Pseudo-label accuracy per round";
      chart.x_label = "round";
      chart.y_label = "pseudo-label accuracy";
      x_col = "round";
      lines = {{"pseudo_acc", ""}};
      break;
    case PlotKind::kMisprediction:
      chart.title = "Misprediction rate by predicted-loss group";
      chart.x_label = "round";
      chart.y_label = "misprediction rate";
      x_col = "round";
      lines = {{"high_mis", " high"}, {"low_mis", " low"}};
      break;
    case PlotKind::kAblationBars: break;
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::string> required = {"seed", x_col};
    for (const Line& l : lines) required.push_back(l.column);
    const CsvTable t = read_table_csv(inputs[i], required);
    const std::string label = series_label(inputs[i], labels, i);
    const std::size_t c_seed = t.column("seed"), c_x = t.column(x_col);
    std::vector<std::string> seeds;
    for (const auto& row : t.text) {
      if (std::find(seeds.begin(), seeds.end(), row[c_seed]) == seeds.end()) seeds.push_back(row[c_seed]);
    }
    for (const Line& l : lines) {
      const std::size_t c_y = t.column(l.column);
      for (const std::string& seed : seeds) {
        Series s;
        s.name = label + (seeds.size() > 1 ? " seed " + seed : "") + l.suffix;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          if (t.text[r][c_seed] != seed) continue;
          s.x.push_back(t.rows[r][c_x]);
          s.y.push_back(t.rows[r][c_y]);
        }
        chart.series.push_back(std::move(s));
      }
    }
  }
  return chart;
}

void cmd_run(ExperimentSpec spec, const CommandOptions& opt) {
  resolve_options(spec, opt);
  prepare_out_dir(spec.out_dir, opt.force);
  const std::size_t threads = thread_count(spec, opt);
  say(opt, "run '" + spec.name + "': " + std::to_string(spec.seeds.size()) + " seed(s)");
  const std::vector<SeedRun> runs =
      run_seeds(spec, spec.run, spec.seeds, threads, spec.checkpoints ? spec.out_dir / "checkpoints" : fs::path{});
  write_run_tables(spec.out_dir, runs);
  write_text(spec.out_dir / "resolved_config.json", config_json(spec, spec.run).dump(2) + "\n");
  emit_run_plots(spec.out_dir, spec.name);
  for (const SeedRun& r : runs) {
    say(opt, "  seed " + std::to_string(r.seed) + ": final target_acc " +
                 fmt(r.result.rounds.back().metrics.target_accuracy));
  }
}

void cmd_ablate(ExperimentSpec spec, const CommandOptions& opt) {
  resolve_options(spec, opt);
  prepare_out_dir(spec.out_dir, opt.force);
  const std::size_t threads = thread_count(spec, opt);
  const auto& settings = ablation_settings();
  const std::size_t n_seeds = spec.seeds.size();
  std::vector<SeedRun> all(settings.size() * n_seeds);
  say(opt, "ablate '" + spec.name + "': " + std::to_string(settings.size()) + " settings x " +
               std::to_string(n_seeds) + " seed(s)");
  parallel_for(all.size(), threads, [&](std::size_t i) {
    const AblationSetting& s = settings[i / n_seeds];
    const std::vector<SeedRun> one = run_seeds(spec, apply_setting(spec.run, s), {spec.seeds[i % n_seeds]}, 1);
    all[i] = one.front();
  });

  std::ofstream table = open_out(spec.out_dir / "ablation.csv");
  table << kMetricsSchemaLine << '\n'
        << "setting,selection,s1,s2_labels,im,swap,n_seeds,median_acc,mean_acc,sd_acc\n";
  for (std::size_t k = 0; k < settings.size(); ++k) {
    const AblationSetting& s = settings[k];
    const std::vector<SeedRun> runs(all.begin() + static_cast<std::ptrdiff_t>(k * n_seeds),
                                    all.begin() + static_cast<std::ptrdiff_t>((k + 1) * n_seeds));
    write_run_tables(spec.out_dir / s.name, runs);
    const Aggregate a = aggregate(final_accuracies(runs));
    table << s.name << ',' << (s.cold_start ? "RAN+L" : "L") << ',' << flag(s.enable_s1) << ','
          << (s.s2_labels == S2Labels::kPseudo ? "pseudo" : "G.T") << ',' << flag(s.enable_im) << ','
          << flag(s.swap_stage_order) << ',' << n_seeds << ',' << fmt(a.median) << ',' << fmt(a.mean) << ','
          << fmt(a.sd) << '\n';
    say(opt, "  " + s.name + ": median final target_acc " + fmt(a.median));
  }
  table.close();
  write_text(spec.out_dir / "resolved_config.json", config_json(spec, spec.run).dump(2) + "\n");
  write_text(spec.out_dir / "ablation_bars.svg",
             render_svg(build_chart(PlotKind::kAblationBars, {spec.out_dir / "ablation.csv"}, {spec.name})));
}

void cmd_sweep(ExperimentSpec spec, const CommandOptions& opt) {
  resolve_options(spec, opt);
  const std::vector<SweepCell> cells = sweep_cells(spec);
  prepare_out_dir(spec.out_dir, opt.force);
  const std::size_t threads = thread_count(spec, opt);
  const std::size_t n_seeds = spec.seeds.size();
  say(opt, "sweep '" + spec.name + "' over " + to_string(spec.sweep.axis) + ": " + std::to_string(cells.size()) +
               " cells x " + std::to_string(n_seeds) + " seed(s)");
  std::vector<SeedRun> all(cells.size() * n_seeds);
  parallel_for(all.size(), threads, [&](std::size_t i) {
    const SweepCell& cell = cells[i / n_seeds];
    all[i] = run_seeds(spec, cell.config, {spec.seeds[i % n_seeds]}, 1).front();
  });

  std::ofstream table = open_out(spec.out_dir / "sweep.csv");
  table << kMetricsSchemaLine << '\n' << "cell,axis,value,gamma,budget_pct,n_seeds,median_acc,mean_acc,sd_acc\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const SweepCell& cell = cells[k];
    const std::vector<SeedRun> runs(all.begin() + static_cast<std::ptrdiff_t>(k * n_seeds),
                                    all.begin() + static_cast<std::ptrdiff_t>((k + 1) * n_seeds));
    write_run_tables(spec.out_dir / "cells" / cell.name, runs);
    const Aggregate a = aggregate(final_accuracies(runs));
    table << cell.name << ',' << to_string(spec.sweep.axis) << ',' << fmt(cell.value) << ','
          << cell.config.gamma << ',' << fmt(cell.config.budget_percent) << ',' << n_seeds << ','
          << fmt(a.median) << ',' << fmt(a.mean) << ',' << fmt(a.sd) << '\n';
    say(opt, "  " + cell.name + ": median final target_acc " + fmt(a.median));
  }
  table.close();
  write_text(spec.out_dir / "resolved_config.json", config_json(spec, spec.run).dump(2) + "\n");
}

void cmd_plot(ExperimentSpec spec, const CommandOptions& opt) {
  if (!opt.out_dir.empty()) spec.out_dir = opt.out_dir;
  if (spec.out_dir.empty()) throw ConfigError("out", "no output directory given (--out or [experiment] out)");
  const ChartSpec chart = build_chart(spec.plot.kind, spec.plot.inputs, spec.plot.labels);
  fs::create_directories(spec.out_dir);
  const fs::path target = spec.out_dir / (std::string(to_string(spec.plot.kind)) + ".svg");
  if (fs::exists(target) && !opt.force) {
    throw ConfigError("out", target.string() + " already exists; pass --force to overwrite");
  }
  write_text(target, render_svg(chart));
  say(opt, "wrote " + target.string());
}

int dispatch(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace lossada::cli
