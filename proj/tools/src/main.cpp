#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

struct Args {
  std::string config;
  std::string out;
  std::string seeds;
  bool force = false;
  bool quiet = false;
  std::size_t threads = 0;
  std::string plot_kind;
  std::vector<std::string> plot_inputs;
  std::vector<std::string> plot_labels;
};

void common_flags(CLI::App* cmd, Args& a, bool config_required) {
  auto* c = cmd->add_option("--config", a.config, "experiment INI file");
  if (config_required) c->required();
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--seeds", a.seeds, "comma-separated seeds, overrides [experiment] seeds");
  cmd->add_flag("--force", a.force, "overwrite an existing output directory");
  cmd->add_option("--threads", a.threads, "worker threads (0 = hardware concurrency)");
  cmd->add_flag("-q,--quiet", a.quiet, "no progress output");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace lossada::cli;
  CLI::App app{"lossada: loss-prediction active domain adaptation experiments"};
  app.require_subcommand(1);
  Args a;
  CLI::App* run = app.add_subcommand("run", "run the active loop for every seed");
  CLI::App* ablate = app.add_subcommand("ablate", "run the six ablation settings");
  CLI::App* sweep = app.add_subcommand("sweep", "grid over one parameter or budget x gamma");
  CLI::App* plot = app.add_subcommand("plot", "render an SVG chart from CSV output");
  common_flags(run, a, true);
  common_flags(ablate, a, true);
  common_flags(sweep, a, true);
  common_flags(plot, a, false);
  plot->add_option("--kind", a.plot_kind, "budget_curve, pseudo_acc, misprediction or ablation_bars");
  plot->add_option("--input", a.plot_inputs, "CSV file (repeatable)");
  plot->add_option("--label", a.plot_labels, "series label per input (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  return dispatch(
      [&] {
        ExperimentSpec spec = a.config.empty() ? ExperimentSpec{} : load_spec(a.config);
        CommandOptions opt;
        opt.out_dir = a.out;
        opt.force = a.force;
        if (!a.seeds.empty()) opt.seeds = parse_seed_list(a.seeds);
        if (a.threads != 0) opt.threads = a.threads;
        if (!a.quiet) opt.log = &std::cerr;
        if (*run) {
          cmd_run(spec, opt);
        } else if (*ablate) {
          cmd_ablate(spec, opt);
        } else if (*sweep) {
          cmd_sweep(spec, opt);
        } else {
          if (!a.plot_kind.empty()) spec.plot.kind = plot_kind_from_string(a.plot_kind);
          if (!a.plot_inputs.empty()) spec.plot.inputs.assign(a.plot_inputs.begin(), a.plot_inputs.end());
          if (!a.plot_labels.empty()) spec.plot.labels = a.plot_labels;
          cmd_plot(spec, opt);
        }
      },
      std::cerr);
}
