#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lossada/engine.hpp"

namespace lossada {

/// First line of every CSV this library writes.
inline constexpr const char* kMetricsSchemaLine = "# lossada-metrics v1";

/// Column order of metrics.csv.
const std::vector<std::string>& metrics_columns();

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
};

/// One row per round per seed.
void write_metrics_csv(std::ostream& out, const std::vector<SeedRun>& runs);
/// Mean and sample standard deviation of every metric per round across seeds.
void write_summary_csv(std::ostream& out, const std::vector<SeedRun>& runs);
/// One JSON object per line per round, including per-iteration losses.
void write_round_logs_jsonl(std::ostream& out, const std::vector<SeedRun>& runs);

/// Numeric CSV table keyed by column name.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::string>> text;  // raw cells, same layout as rows

  std::size_t column(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Raised when a CSV does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Reads a table written by this library. Requires the schema line, rejects
/// other versions, and checks `required` columns are present (naming the
/// first missing one). Non-numeric cells are NaN in `rows`.
CsvTable read_table_csv(const std::filesystem::path& path, const std::vector<std::string>& required);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool bars = false;
  /// Category labels for bar charts, one per x position.
  std::vector<std::string> categories;
};

/// Deterministic SVG rendering; each data point is drawn and annotated with
/// its value as printed in the CSV.
std::string render_svg(const ChartSpec& spec);

/// Median of a non-empty vector (mean of the middle two for even sizes).
double median(std::vector<double> v);
/// Sample standard deviation; 0 for fewer than two values.
double sample_sd(const std::vector<double>& v);

}  // namespace lossada
