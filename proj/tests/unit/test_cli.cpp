#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "config.hpp"
#include "doctest.h"

using namespace lossada;
using namespace lossada::cli;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
[experiment]
name = tiny
seeds = 1,2
threads = 1
checkpoints = false

[dataset]
generator = two_moons
n_per_domain = 200
rotation_deg = 45

[run]
budget_percent = 5
rounds = 2
pretrain_iters = 200
s1_iters = 15
s2_iters = 15
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lossada_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t data_rows(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n - 1;  // header
}

std::string config_field(const std::string& text) {
  try {
    parse_spec(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "none";
}

CommandOptions quiet(const fs::path& out, bool force = false) {
  CommandOptions o;
  o.out_dir = out;
  o.force = force;
  o.threads = 1;
  return o;
}

}  // namespace

TEST_CASE("config: values land in the spec, errors name the field") {
  const ExperimentSpec s = parse_spec(kTiny);
  CHECK(s.name == "tiny");
  CHECK(s.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(s.dataset.moons.n_per_domain == 200);
  CHECK(s.run.rounds == 2);
  CHECK(s.run.budget_percent == 5.0);
  CHECK_FALSE(s.checkpoints);

  CHECK(config_field("[run]\nbogus = 1\n") == "run.bogus");
  CHECK(config_field("[nowhere]\nx = 1\n") == "nowhere");
  CHECK(config_field("[run]\ngamma = 0\n") == "run.gamma");
  CHECK(config_field("[run]\ngamma = abc\n") == "run.gamma");
  CHECK(config_field("[run]\nbatch_size = 7\n") == "run.batch_size");
  CHECK(config_field("[run]\nstrategy = qbc\n") == "run.strategy");
  CHECK(config_field("[dataset]\ngenerator = mnist\n") == "dataset.generator");
  CHECK(config_field("[experiment]\nseeds = 1,x\n") == "experiment.seeds");
  try {
    load_spec(scratch("missing.ini"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "config");
    CHECK(std::string(e.what()).find("cannot open config file") != std::string::npos);
  }
  CHECK(parse_seed_list("3, 1,2") == std::vector<std::uint64_t>{3, 1, 2});
}

TEST_CASE("run: two seeds give 2 x rounds rows, rerun is byte identical, output dir guarded") {
  const ExperimentSpec spec = parse_spec(kTiny);
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  cmd_run(spec, quiet(a));
  CHECK(data_rows(a / "metrics.csv") == 2 * spec.run.rounds);
  CHECK(data_rows(a / "summary.csv") == spec.run.rounds);
  for (const char* f : {"rounds.jsonl", "resolved_config.json", "budget_curve.svg", "pseudo_acc.svg", "misprediction.svg"})
    CHECK(fs::exists(a / f));
  CHECK_FALSE(fs::exists(a / "checkpoints"));

  ExperimentSpec threaded = spec;
  threaded.checkpoints = true;
  CommandOptions two = quiet(b);
  two.threads = 2;
  cmd_run(threaded, two);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(fs::exists(b / "checkpoints" / "seed2" / "round1.ckpt"));
  CHECK(load_checkpoint(b / "checkpoints" / "seed1" / "pretrain.ckpt").classifier_frozen);

  CHECK_THROWS_AS(cmd_run(spec, quiet(a)), ConfigError);
  CHECK_NOTHROW(cmd_run(spec, quiet(a, true)));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));

  CommandOptions one_seed = quiet(a, true);
  one_seed.seeds = std::vector<std::uint64_t>{7};
  cmd_run(spec, one_seed);
  CHECK(data_rows(a / "metrics.csv") == spec.run.rounds);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("ablate: six rows, Ours fully on, flags round trip") {
  const auto& settings = ablation_settings();
  REQUIRE(settings.size() == 6);
  CHECK(settings.back().name == "Ours");
  const RunConfig base = parse_spec(kTiny).run;
  for (const AblationSetting& s : settings) {
    const RunConfig c = apply_setting(base, s);
    CHECK(c.strategy == Strategy::kLossPrediction);
    CHECK(c.ablation.enable_s2);
    CHECK(c.ablation.cold_start == s.cold_start);
    CHECK(c.ablation.enable_s1 == s.enable_s1);
    CHECK(c.ablation.s2_labels == s.s2_labels);
    CHECK(c.ablation.enable_im == s.enable_im);
    CHECK(c.ablation.swap_stage_order == s.swap_stage_order);
  }
  const RunConfig ours = apply_setting(base, settings.back());
  CHECK(ours.ablation == AblationFlags{});  // the default flags are the full method

  ExperimentSpec spec = parse_spec(kTiny);
  spec.seeds = {1};
  const fs::path out = scratch("ablate");
  cmd_ablate(spec, quiet(out));
  const CsvTable t = read_table_csv(out / "ablation.csv", {"setting", "median_acc"});
  REQUIRE(t.rows.size() == 6);
  const std::size_t name = t.column("setting");
  for (std::size_t i = 0; i < 6; ++i) CHECK(t.text[i][name] == settings[i].name);
  CHECK(t.text[5][t.column("selection")] == "L");
  CHECK(t.text[5][t.column("s1")] == "O");
  CHECK(t.text[5][t.column("s2_labels")] == "pseudo");
  CHECK(t.text[5][t.column("im")] == "O");
  CHECK(t.text[0][t.column("selection")] == "RAN+L");
  CHECK(t.text[0][t.column("s2_labels")] == "G.T");
  CHECK(fs::exists(out / "ablation_bars.svg"));
  CHECK(data_rows(out / "Ours" / "metrics.csv") == spec.run.rounds);
  fs::remove_all(out);
}

TEST_CASE("sweep: 24-cell grid, empty axis, single value equals run, cells isolated") {
  ExperimentSpec spec = parse_spec(kTiny);
  const auto grid = sweep_cells(spec);
  REQUIRE(grid.size() == 24);
  CHECK(grid.front().name == "gamma2_budget0");
  CHECK(grid.back().name == "gamma30_budget5");
  CHECK(grid[7].config.gamma == 10);
  CHECK(grid[7].config.budget_percent == 1.0);

  ExperimentSpec empty = parse_spec(std::string(kTiny) + "\n[sweep]\naxis = xi\n");
  CHECK_THROWS_AS(sweep_cells(empty), ConfigError);
  ExperimentSpec bad = parse_spec(std::string(kTiny) + "\n[sweep]\naxis = batch_size\nvalues = 8, 9\n");
  CHECK_THROWS_AS(sweep_cells(bad), ConfigError);

  // Two gamma cells next to standalone runs with the same gamma.
  ExperimentSpec sw = parse_spec(std::string(kTiny) + "\n[sweep]\naxis = gamma\nvalues = 5, 20\n");
  sw.seeds = {3};
  const fs::path out = scratch("sweep");
  cmd_sweep(sw, quiet(out));
  CHECK(data_rows(out / "sweep.csv") == 2);
  for (std::size_t g : {5u, 20u}) {
    ExperimentSpec single = sw;
    single.run.gamma = g;
    const fs::path run_dir = scratch("sweep_ref");
    cmd_run(single, quiet(run_dir));
    CHECK(slurp(out / "cells" / ("gamma" + std::to_string(g)) / "metrics.csv") == slurp(run_dir / "metrics.csv"));
    fs::remove_all(run_dir);
  }
  fs::remove_all(out);
}

TEST_CASE("plot: schema errors, empty body, single point, determinism") {
  const fs::path dir = scratch("plot");
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name, std::ios::binary) << text;
    return dir / name;
  };
  const std::string header =
      "# lossada-metrics v1\nseed,round,budget_pct,target_acc,pseudo_acc,high_mis,low_mis,class_cov,mean_pair_dist,L_loss,L_im,L_dis,L_adv\n";
  const fs::path one = write("one.csv", header + "1,0,1,0.75,0.7,0.2,0.1,2,0.5,0.1,0.2,1.3,-1.3\n");
  const fs::path empty = write("empty.csv", header);
  const fs::path wrong = write("wrong.csv", "# lossada-metrics v1\nsetting,median_acc\nOurs,0.8\n");
  const fs::path v2 = write("v2.csv", "# lossada-metrics v2\nseed\n1\n");

  ExperimentSpec spec;
  spec.plot.kind = PlotKind::kBudgetCurve;
  auto code = [&](const std::vector<fs::path>& inputs, bool force = true) {
    spec.plot.inputs = inputs;
    std::ostringstream err;
    return dispatch([&] { cmd_plot(spec, quiet(dir / "out", force)); }, err);
  };
  CHECK(code({one}) == kExitOk);
  const std::string first = slurp(dir / "out" / "budget_curve.svg");
  CHECK(code({one}) == kExitOk);
  CHECK(slurp(dir / "out" / "budget_curve.svg") == first);
  CHECK(first.find("data-value=\"0.75\"") != std::string::npos);
  std::size_t markers = 0;
  for (std::size_t pos = 0; (pos = first.find("class=\"marker\"", pos)) != std::string::npos; ++pos) ++markers;
  CHECK(markers == 1);
  CHECK(code({one}, false) == kExitConfig);  // exists, no --force

  CHECK(code({empty}) == kExitRuntime);
  CHECK(code({v2}) == kExitRuntime);
  try {
    build_chart(PlotKind::kBudgetCurve, {wrong}, {});
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("missing column 'seed'") != std::string::npos);
  }
  CHECK(code({}) != kExitOk);
  fs::remove_all(dir);
}

#ifdef LOSSADA_TOOL_PATH
TEST_CASE("binary: exit codes") {
  const fs::path dir = scratch("bin");
  fs::create_directories(dir);
  const fs::path ini = dir / "tiny.ini";
  std::ofstream(ini) << kTiny;
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string("\"") + LOSSADA_TOOL_PATH + "\" " + args + " -q > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("run --config " + (dir / "nope.ini").string() + " --out " + (dir / "o1").string()) == 1);
  CHECK(run("run --config " + ini.string() + " --out " + (dir / "o1").string() + " --seeds 1") == 0);
  CHECK(run("run --config " + ini.string() + " --out " + (dir / "o1").string() + " --seeds 1") == 1);
  CHECK(run("run --config " + ini.string() + " --out " + (dir / "o1").string() + " --seeds 1 --force") == 0);
  CHECK(run("run --bogus") == 1);
  CHECK(run("plot --kind budget_curve --input " + (dir / "o1" / "summary.csv").string() + " --out " +
            (dir / "p").string()) == 2);
  CHECK(run("plot --kind budget_curve --input " + (dir / "o1" / "metrics.csv").string() + " --out " +
            (dir / "p").string()) == 0);
  fs::remove_all(dir);
}
#endif
