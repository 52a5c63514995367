#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lossada/diffcore.hpp"

namespace lossada {

struct CrossEntropy {
  Var mean;        // 1x1, differentiable
  Var per_sample;  // m x 1, differentiable
};

/// Softmax cross-entropy of logits [m x C] against class indices.
/// Throws NumericDomainError for a label outside [0, C).
CrossEntropy cross_entropy(Var logits, std::span<const std::size_t> labels);

/// Same, but for probabilities that already went through softmax; they are
/// clamped to kLogFloor before the log.
CrossEntropy cross_entropy_from_probs(Var probs, std::span<const std::size_t> labels);

/// Two distinct rows of a mini-batch compared by the ranking loss.
struct RankingPair {
  std::size_t idx_n = 0;
  std::size_t idx_m = 0;
};

/// Disjoint pairs over a batch of `batch_size` rows: the rows are shuffled and
/// element i is paired with element i + batch_size / 2. batch_size must be even.
std::vector<RankingPair> make_ranking_pairs(std::size_t batch_size, std::mt19937_64& rng);

/// Mean over pairs of max(0, -sign(l_n, l_m) * (p_n - p_m) + margin), where
/// sign is +1 when l_n > l_m and -1 otherwise. `true_losses` are constants;
/// gradient flows only through `predicted` [m x 1].
Var margin_ranking_loss(Var predicted, std::span<const double> true_losses,
                        std::span<const RankingPair> pairs, double margin);

/// Information maximization: mean pseudo-label cross-entropy of `probs`
/// plus xi * (KL(mean_probs || uniform) - log C).
///
/// `mean_probs` is a 1 x C Var; pass a constant to hold it fixed, or a
/// differentiable estimate to let the diversity term produce gradient.
Var info_max_loss(Var probs, std::span<const std::size_t> pseudo_labels, Var mean_probs, double xi);

/// The class-diversity part alone: xi * (KL(mean_probs || uniform) - log C).
Var class_diversity_term(Var mean_probs, double xi);

/// -mean(log d_src) - mean(log(1 - d_tgt)); source is domain 1.
Var discriminator_loss(Var d_src, Var d_tgt);

/// Exactly -discriminator_loss(d_src, d_tgt).
Var adversarial_loss(Var d_tgt, Var d_src);

/// Logged values of the four adaptation losses of one iteration.
struct LossComponents {
  double ranking = 0.0;        // L_loss
  double info_max = 0.0;       // L_im
  double discriminator = 0.0;  // L_dis
  double adversarial = 0.0;    // L_adv
  double total = 0.0;          // componentwise sum
  /// Supervised cross-entropy of the labeled-target stage; not part of total.
  double cross_entropy = 0.0;
};

LossComponents total_loss_report(double ranking, double info_max, double discriminator,
                                 double adversarial);

}  // namespace lossada
