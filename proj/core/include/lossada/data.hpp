#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lossada/diffcore.hpp"
#include "lossada/error.hpp"

namespace lossada {

enum class Domain { kSource, kTargetLabeled, kTargetUnlabeled };

struct Sample {
  std::int64_t id = 0;
  std::vector<double> features;
  /// Absent for unlabeled target samples as seen by the trainer.
  std::optional<std::size_t> label;
  Domain domain = Domain::kSource;
};

using Dataset = std::vector<Sample>;

/// A generated (or loaded) source/target pair. Target samples carry their
/// ground-truth label here; PoolState hides it.
struct DomainPair {
  Dataset source;
  Dataset target;
  std::size_t num_classes = 0;
  std::size_t num_features = 0;
};

/// Two interleaved half circles. The target set is drawn from the same
/// generator, then rotated by `rotation_deg` about the data centre (0.5, 0.25)
/// and translated.
struct TwoMoonsParams {
  std::size_t n_per_domain = 1000;
  double rotation_deg = 45.0;
  double translation_x = 0.0;
  double translation_y = 0.0;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
};
DomainPair gen_two_moons_shift(const TwoMoonsParams& p);

/// Isotropic Gaussian clusters with centres evenly spaced on a circle of
/// radius `class_spacing`. Target clusters are displaced by the shift vector;
/// `target_weights`, when set, redistributes the target class counts.
struct BlobsParams {
  std::size_t num_classes = 6;
  std::size_t n_per_class = 200;
  double class_spacing = 4.0;
  double cluster_sd = 1.0;
  double shift_x = 2.0;
  double shift_y = 0.0;
  std::vector<double> target_weights;
  std::uint64_t seed = 0;
};
DomainPair gen_blobs_shift(const BlobsParams& p);

/// Per-class counts from weights by largest remainder; sums to `total`.
std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total);

/// Raised by load_csv. `kind()` distinguishes the failure.
class DataError : public Error {
 public:
  enum class Kind { kMissingFile, kBadColumnCount, kNonNumeric, kUnknownDomain, kBadLabel, kBadHeader };
  DataError(Kind kind, std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        kind_(kind),
        line_(line) {}
  Kind kind() const noexcept { return kind_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

struct CsvSchema {
  std::size_t num_features = 2;
};

/// CSV layout: header `f0,...,fk,label,domain`, then one row per sample with
/// domain `source` or `target`. Target rows become TargetUnlabeled samples
/// whose label is the oracle's ground truth. Ids follow row order.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
/// Writes samples with round-trip exact (17 significant digit) features.
void write_csv(const std::filesystem::path& path, std::span<const Sample> samples);
/// Splits a loaded dataset by domain into a DomainPair.
DomainPair split_domains(const Dataset& data);

/// Errors raised by PoolState::annotate.
class AnnotationError : public BudgetError {
 public:
  enum class Kind { kUnknownId, kDuplicateId, kBudgetExceeded };
  AnnotationError(Kind kind, const std::string& what) : BudgetError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// The three evolving sample pools plus the annotation budget. Labels of the
/// unlabeled target pool are held by a simulated oracle and only released
/// through annotate() or the evaluation accessors.
class PoolState {
 public:
  PoolState() = default;
  /// Assigns ids (source first, then target) and sets the total budget to
  /// floor(budget_percent / 100 * N_target).
  PoolState(const DomainPair& data, double budget_percent);

  const Dataset& source() const noexcept { return source_; }
  const Dataset& labeled_target() const noexcept { return labeled_; }
  const Dataset& unlabeled_target() const noexcept { return unlabeled_; }
  std::size_t total_budget() const noexcept { return budget_; }
  std::size_t spent() const noexcept { return spent_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_features() const noexcept { return num_features_; }
  std::size_t target_size() const noexcept { return labeled_.size() + unlabeled_.size(); }

  /// Moves the given unlabeled samples to the labeled pool with their true
  /// labels revealed. Validates all ids before changing anything.
  void annotate(std::span<const std::int64_t> ids);

  /// Ground truth for evaluation and metrics. Never used by selection.
  std::size_t oracle_label(std::int64_t id) const;
  /// Ground-truth labels of the current unlabeled pool, in pool order.
  std::vector<std::size_t> unlabeled_truth() const;
  /// Every target sample (labeled then unlabeled) with its true label.
  Dataset evaluation_set() const;

 private:
  Dataset source_;
  Dataset labeled_;
  Dataset unlabeled_;
  std::map<std::int64_t, std::size_t> oracle_;
  std::size_t budget_ = 0;
  std::size_t spent_ = 0;
  std::size_t num_classes_ = 0;
  std::size_t num_features_ = 0;
};

/// Stacks sample features into an [n x d] tensor.
Tensor feature_matrix(std::span<const Sample> samples);
Tensor feature_matrix(std::span<const Sample> samples, std::span<const std::size_t> rows);
/// Labels of samples that have one; throws ContractError otherwise.
std::vector<std::size_t> labels_of(std::span<const Sample> samples);

}  // namespace lossada
