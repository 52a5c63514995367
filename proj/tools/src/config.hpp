#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lossada/data.hpp"
#include "lossada/engine.hpp"

namespace lossada::cli {

enum class Generator { kTwoMoons, kBlobs, kCsv };

struct DatasetSpec {
  Generator generator = Generator::kTwoMoons;
  TwoMoonsParams moons;
  BlobsParams blobs;
  std::filesystem::path csv_path;
  std::size_t csv_features = 2;
  /// Unset: the dataset seed follows the run seed.
  bool fixed_seed = false;
  std::uint64_t seed = 0;
};

enum class SweepAxis { kBatchSize, kXi, kPredictorDim, kGamma, kBudget, kBudgetGamma };

struct SweepSpec {
  SweepAxis axis = SweepAxis::kBudgetGamma;
  std::vector<double> values;
  std::vector<double> budgets = {0, 1, 2, 3, 4, 5};
  std::vector<double> gammas = {2, 10, 20, 30};
};

enum class PlotKind { kBudgetCurve, kPseudoAcc, kMisprediction, kAblationBars };

struct PlotSpec {
  PlotKind kind = PlotKind::kBudgetCurve;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::string> labels;
};

struct ExperimentSpec {
  std::string name = "experiment";
  RunConfig run;
  DatasetSpec dataset;
  std::vector<std::uint64_t> seeds = {1};
  std::filesystem::path out_dir;
  /// 0 picks the hardware concurrency.
  std::size_t threads = 0;
  bool checkpoints = true;
  SweepSpec sweep;
  PlotSpec plot;
};

/// Reads an INI file with sections [experiment], [dataset], [run], [sweep]
/// and [plot]. Unknown sections or keys and malformed values raise
/// ConfigError naming "section.key". Relative paths resolve against the
/// file's directory.
ExperimentSpec load_spec(const std::filesystem::path& path);
/// Same, from text; relative paths resolve against `base_dir`.
ExperimentSpec parse_spec(const std::string& text, const std::filesystem::path& base_dir = {});

/// Builds the domain pair for one seed.
DomainPair make_dataset(const DatasetSpec& spec, std::uint64_t run_seed);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

const char* to_string(SweepAxis a);
const char* to_string(PlotKind k);
PlotKind plot_kind_from_string(const std::string& s);

}  // namespace lossada::cli
