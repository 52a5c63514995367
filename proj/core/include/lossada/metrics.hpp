#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lossada/data.hpp"
#include "lossada/losses.hpp"
#include "lossada/nets.hpp"

namespace lossada {

/// Per-round measurements of one run.
struct MetricsRecord {
  std::size_t round = 0;
  double budget_spent_percent = 0.0;
  double target_accuracy = 0.0;
  double pseudo_label_accuracy = 0.0;
  double high_loss_misprediction_rate = 0.0;
  double low_loss_misprediction_rate = 0.0;
  std::size_t selected_class_coverage = 0;
  double selected_mean_pairwise_feature_distance = 0.0;
  /// Entropy (nats) of the mean predicted class distribution over the
  /// unlabeled target pool.
  double mean_prediction_entropy = 0.0;
  LossComponents losses;
};

/// Fraction of positions where the two label vectors agree.
/// Throws ContractError on empty input or length mismatch.
double agreement(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

/// Fraction of samples whose argmax class equals their label.
double target_accuracy(ModelBundle& m, std::span<const Sample> labeled);

double pseudo_label_accuracy(std::span<const std::size_t> pseudo, std::span<const std::size_t> truth);

struct MispredictionSplit {
  double high_rate = 0.0;
  double low_rate = 0.0;
  /// Row indices into the pool, in descending predicted-loss order.
  std::vector<std::size_t> high_group;
  std::vector<std::size_t> low_group;
};

/// Orders the pool by predicted loss (descending, lower id first on ties) and
/// puts the top n - floor(q * n) samples, clamped to [1, n - 1], in the high
/// group. Each rate is that group's misclassification rate.
MispredictionSplit misprediction_split(std::span<const double> predicted_loss,
                                       std::span<const std::size_t> predicted_class,
                                       std::span<const std::size_t> truth,
                                       std::span<const std::int64_t> ids, double q);
MispredictionSplit misprediction_split(ModelBundle& m, std::span<const Sample> pool,
                                       std::span<const std::size_t> truth, double q);

struct DiversityProxies {
  std::size_t class_coverage = 0;
  double mean_pairwise_distance = 0.0;
};

/// Distinct classes among `labels` and the mean pairwise Euclidean distance
/// between the rows of `features` (0 for a single row).
DiversityProxies diversity_proxies(const Tensor& features, std::span<const std::size_t> labels);
DiversityProxies diversity_proxies(ModelBundle& m, std::span<const Sample> selected);

/// Shannon entropy in nats of a probability vector; 0 log 0 = 0.
double entropy(std::span<const double> p);

}  // namespace lossada
