#include "lossada/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace lossada {

namespace {

void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw NumericDomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                               std::to_string(classes) + ")");
    }
  }
}

}  // namespace

CrossEntropy cross_entropy(Var logits, std::span<const std::size_t> labels) {
  check_labels(labels, logits.shape().rows, logits.shape().cols);
  const Var per_sample = neg(pick_rows(log_softmax_rows(logits), labels));
  return {mean(per_sample), per_sample};
}

CrossEntropy cross_entropy_from_probs(Var probs, std::span<const std::size_t> labels) {
  check_labels(labels, probs.shape().rows, probs.shape().cols);
  const Var per_sample = neg(log(pick_rows(probs, labels)));
  return {mean(per_sample), per_sample};
}

std::vector<RankingPair> make_ranking_pairs(std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ContractError("ranking pairs need an even batch of at least 2, got " +
                        std::to_string(batch_size));
  }
  std::vector<std::size_t> order(batch_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = batch_size / 2;
  std::vector<RankingPair> pairs(half);
  for (std::size_t i = 0; i < half; ++i) pairs[i] = {order[i], order[i + half]};
  return pairs;
}

Var margin_ranking_loss(Var predicted, std::span<const double> true_losses,
                        std::span<const RankingPair> pairs, double margin) {
  if (pairs.empty()) throw ContractError("margin_ranking_loss: no pairs");
  if (!(margin > 0.0)) throw ConfigError("margin", "must be positive");
  if (predicted.shape().cols != 1 || predicted.shape().rows != true_losses.size()) {
    throw DimensionError("margin_ranking_loss: predicted must be m x 1 matching true losses");
  }
  std::vector<std::size_t> n_idx, m_idx;
  std::vector<double> sign;
  n_idx.reserve(pairs.size());
  m_idx.reserve(pairs.size());
  sign.reserve(pairs.size());
  for (const RankingPair& p : pairs) {
    if (p.idx_n == p.idx_m) throw ContractError("margin_ranking_loss: pair compares a row with itself");
    n_idx.push_back(p.idx_n);
    m_idx.push_back(p.idx_m);
    sign.push_back(true_losses[p.idx_n] > true_losses[p.idx_m] ? 1.0 : -1.0);
  }
  Graph& g = predicted.graph();
  const Var diff = sub(gather_rows(predicted, n_idx), gather_rows(predicted, m_idx));
  const Var signed_diff = mul(g.constant(Tensor::column(std::move(sign))), diff);
  return mean(relu(add_scalar(neg(signed_diff), margin)));
}

Var class_diversity_term(Var mean_probs, double xi) {
  if (!(xi >= 0.0)) throw ConfigError("xi", "must be non-negative");
  const double classes = static_cast<double>(mean_probs.shape().cols);
  // KL(p || u) = sum p log p + log C, so the term is xi * sum p log p.
  const Var kl = add_scalar(sum(mul(mean_probs, log(mean_probs))), std::log(classes));
  return scale(add_scalar(kl, -std::log(classes)), xi);
}

Var info_max_loss(Var probs, std::span<const std::size_t> pseudo_labels, Var mean_probs, double xi) {
  if (!(xi >= 0.0)) throw ConfigError("xi", "must be non-negative");
  if (mean_probs.shape().rows != 1 || mean_probs.shape().cols != probs.shape().cols) {
    throw DimensionError("info_max_loss: mean_probs must be 1 x C");
  }
  const Var self_term = cross_entropy_from_probs(probs, pseudo_labels).mean;
  return add(self_term, class_diversity_term(mean_probs, xi));
}

Var discriminator_loss(Var d_src, Var d_tgt) {
  if (d_src.value().empty() || d_tgt.value().empty()) {
    throw ContractError("discriminator_loss: empty batch");
  }
  const Var src_term = mean(log(d_src));
  const Var tgt_term = mean(log(add_scalar(neg(d_tgt), 1.0)));
  return neg(add(src_term, tgt_term));
}

Var adversarial_loss(Var d_tgt, Var d_src) { return neg(discriminator_loss(d_src, d_tgt)); }

LossComponents total_loss_report(double ranking, double info_max, double discriminator,
                                 double adversarial) {
  LossComponents c;
  c.ranking = ranking;
  c.info_max = info_max;
  c.discriminator = discriminator;
  c.adversarial = adversarial;
  c.total = ranking + adversarial + info_max + discriminator;
  return c;
}

}  // namespace lossada
