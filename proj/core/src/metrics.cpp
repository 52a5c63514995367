#include "lossada/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace lossada {

double agreement(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) {
    throw ContractError("label vectors differ in length (" + std::to_string(predicted.size()) +
                        " vs " + std::to_string(truth.size()) + ")");
  }
  if (predicted.empty()) throw ContractError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double target_accuracy(ModelBundle& m, std::span<const Sample> labeled) {
  if (labeled.empty()) throw ContractError("target_accuracy: empty set");
  const Inference out = infer(m, feature_matrix(labeled));
  return agreement(argmax_rows(out.logits), labels_of(labeled));
}

double pseudo_label_accuracy(std::span<const std::size_t> pseudo, std::span<const std::size_t> truth) {
  return agreement(pseudo, truth);
}

MispredictionSplit misprediction_split(std::span<const double> predicted_loss,
                                       std::span<const std::size_t> predicted_class,
                                       std::span<const std::size_t> truth,
                                       std::span<const std::int64_t> ids, double q) {
  const std::size_t n = predicted_loss.size();
  if (!(q > 0.0 && q < 1.0)) throw ContractError("misprediction_split: q must lie in (0, 1)");
  if (n < 2) throw ContractError("misprediction_split: pool needs at least 2 samples");
  if (predicted_class.size() != n || truth.size() != n || ids.size() != n) {
    throw ContractError("misprediction_split: inputs differ in length");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (predicted_loss[a] != predicted_loss[b]) return predicted_loss[a] > predicted_loss[b];
    return ids[a] < ids[b];
  });
  const auto low_count = static_cast<std::size_t>(std::floor(q * static_cast<double>(n)));
  const std::size_t high_count = std::clamp<std::size_t>(n - low_count, 1, n - 1);

  MispredictionSplit out;
  out.high_group.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(high_count));
  out.low_group.assign(order.begin() + static_cast<std::ptrdiff_t>(high_count), order.end());
  auto error_rate = [&](const std::vector<std::size_t>& group) {
    std::size_t wrong = 0;
    for (std::size_t i : group) wrong += predicted_class[i] != truth[i] ? 1 : 0;
    return static_cast<double>(wrong) / static_cast<double>(group.size());
  };
  out.high_rate = error_rate(out.high_group);
  out.low_rate = error_rate(out.low_group);
  return out;
}

MispredictionSplit misprediction_split(ModelBundle& m, std::span<const Sample> pool,
                                       std::span<const std::size_t> truth, double q) {
  if (pool.size() < 2) throw ContractError("misprediction_split: pool needs at least 2 samples");
  const Inference out = infer(m, feature_matrix(pool));
  std::vector<std::int64_t> ids;
  ids.reserve(pool.size());
  for (const Sample& s : pool) ids.push_back(s.id);
  const std::vector<std::size_t> predicted = argmax_rows(out.logits);
  return misprediction_split(out.predicted_loss.values(), predicted, truth, ids, q);
}

DiversityProxies diversity_proxies(const Tensor& features, std::span<const std::size_t> labels) {
  if (features.rows() == 0) throw ContractError("diversity_proxies: empty selection");
  if (labels.size() != features.rows()) throw ContractError("diversity_proxies: label count mismatch");
  DiversityProxies out;
  out.class_coverage = std::set<std::size_t>(labels.begin(), labels.end()).size();
  const std::size_t n = features.rows();
  if (n < 2) return out;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < features.cols(); ++c) {
        const double d = features.at(i, c) - features.at(j, c);
        d2 += d * d;
      }
      total += std::sqrt(d2);
    }
  }
  out.mean_pairwise_distance = total / static_cast<double>(n * (n - 1) / 2);
  return out;
}

DiversityProxies diversity_proxies(ModelBundle& m, std::span<const Sample> selected) {
  if (selected.empty()) throw ContractError("diversity_proxies: empty selection");
  const Inference out = infer(m, feature_matrix(selected));
  return diversity_proxies(out.features, labels_of(selected));
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace lossada
