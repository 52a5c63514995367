#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "lossada/report.hpp"

namespace lossada::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2 };

struct CommandOptions {
  std::filesystem::path out_dir;  // overrides [experiment] out when set
  std::optional<std::vector<std::uint64_t>> seeds;
  bool force = false;
  std::optional<std::size_t> threads;
  std::ostream* log = nullptr;  // progress lines; silent when null
};

/// One row of the ablation table.
struct AblationSetting {
  std::string name;
  bool cold_start = false;
  bool enable_s1 = true;
  S2Labels s2_labels = S2Labels::kPseudo;
  bool enable_im = true;
  bool swap_stage_order = false;
};

/// The six settings, Ablation1..5 then Ours.
const std::vector<AblationSetting>& ablation_settings();
/// `base` with the setting's flags and loss-based selection.
RunConfig apply_setting(const RunConfig& base, const AblationSetting& s);

/// One grid cell of a sweep.
struct SweepCell {
  std::string name;
  double value = 0.0;
  RunConfig config;
};
/// Expands the sweep section into cells; ConfigError for an empty axis or a
/// value the run config rejects.
std::vector<SweepCell> sweep_cells(const ExperimentSpec& spec);

/// Runs every seed of `cfg`, up to `threads` at a time. Results keep seed order.
std::vector<SeedRun> run_seeds(const ExperimentSpec& spec, const RunConfig& cfg,
                               const std::vector<std::uint64_t>& seeds, std::size_t threads,
                               const std::filesystem::path& checkpoint_dir = {});

/// Final-round target accuracy of each seed.
std::vector<double> final_accuracies(const std::vector<SeedRun>& runs);

/// Builds a chart from CSV files written by the other commands.
ChartSpec build_chart(PlotKind kind, const std::vector<std::filesystem::path>& inputs,
                      const std::vector<std::string>& labels);

// Commands. They throw on failure; `dispatch` maps errors to exit codes.
void cmd_run(ExperimentSpec spec, const CommandOptions& opt);
void cmd_ablate(ExperimentSpec spec, const CommandOptions& opt);
void cmd_sweep(ExperimentSpec spec, const CommandOptions& opt);
void cmd_plot(ExperimentSpec spec, const CommandOptions& opt);

/// Calls `body`, printing any error to `err`. Returns 0, 1 for configuration
/// errors and 2 for everything else.
int dispatch(const std::function<void()>& body, std::ostream& err);

}  // namespace lossada::cli
