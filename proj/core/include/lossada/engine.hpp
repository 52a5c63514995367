#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lossada/data.hpp"
#include "lossada/losses.hpp"
#include "lossada/metrics.hpp"
#include "lossada/nets.hpp"

namespace lossada {

enum class Strategy { kLossPrediction, kRandom, kEntropy };

/// Where the second stage takes class labels from for its ranking and
/// self-training terms.
enum class S2Labels {
  kPseudo,       // argmax predictions on the unlabeled target pool
  kGroundTruth,  // annotated target samples only
};

struct AblationFlags {
  bool enable_s1 = true;
  bool enable_s2 = true;
  S2Labels s2_labels = S2Labels::kPseudo;
  /// Adds the class-diversity term to the second stage.
  bool enable_im = true;
  /// Runs the second stage before the first within each round.
  bool swap_stage_order = false;
  /// First round queries are random, later rounds use the strategy.
  bool cold_start = false;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Which second-stage losses contribute gradient. All on in normal runs;
/// switched off selectively to check update isolation.
struct S2LossMask {
  bool ranking = true;
  bool info_max = true;
  bool adversarial = true;
  bool discriminator = true;
};

struct RunConfig {
  double budget_percent = 5.0;
  std::size_t rounds = 5;
  /// Empty means an even split of the total budget over the rounds (earlier
  /// rounds take the remainder).
  std::vector<std::size_t> per_round_quota;
  double margin = 1.0;
  double xi = 1.0;
  std::size_t gamma = 20;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t pretrain_iters = 1000;
  std::size_t s1_iters = 100;
  std::size_t s2_iters = 200;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::kLossPrediction;
  AblationFlags ablation;
  S2LossMask loss_mask;
  NetDims dims;
  double misprediction_quantile = 0.5;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  /// Per-round annotation counts for a pool of `pool_size` unlabeled
  /// samples; they sum to floor(budget_percent / 100 * pool_size).
  std::vector<std::size_t> quotas(std::size_t pool_size) const;
};

/// Averages of the loss components over one stage.
struct StageTrace {
  std::vector<LossComponents> iterations;
  /// Iterations at which pseudo labels were refreshed (second stage only).
  std::vector<std::size_t> refreshes;
  LossComponents mean() const;
};

struct RoundLog {
  std::size_t round = 0;
  std::vector<std::int64_t> selected;
  StageTrace s1;
  StageTrace s2;
  MetricsRecord metrics;
};

/// Optimizer state for the trainable modules of a bundle. Holds pointers into
/// the bundle, which must not move while this is alive.
struct Optimizers {
  SgdMomentum feature;
  SgdMomentum predictor;
  SgdMomentum discriminator;
};
Optimizers make_optimizers(ModelBundle& m, const RunConfig& cfg);

/// Cross-entropy training of F and C on the labeled source set, then freezes C.
void pretrain(ModelBundle& m, const Dataset& source, const RunConfig& cfg, std::mt19937_64& rng);

/// Predicted loss P(F(x)) for every sample of the pool.
std::vector<double> predicted_losses(ModelBundle& m, std::span<const Sample> pool);

/// Ids of the K samples with the largest predicted loss, in descending order;
/// lower id first on ties. Reads features only.
std::vector<std::int64_t> select_queries(ModelBundle& m, std::span<const Sample> pool, std::size_t k);

/// Random: uniform without replacement. Entropy: top-K prediction entropy.
std::vector<std::int64_t> select_baseline(Strategy strategy, ModelBundle& m,
                                          std::span<const Sample> pool, std::size_t k,
                                          std::uint64_t seed);

/// Labeled-target stage: F minimizes CE + ranking loss, P the ranking loss.
/// No-op on an empty labeled set.
StageTrace stage_s1(ModelBundle& m, Optimizers& opt, const Dataset& labeled, const RunConfig& cfg,
                    std::mt19937_64& rng);

/// Pseudo labels and the mean prediction over the unlabeled pool.
struct PseudoLabels {
  std::vector<std::size_t> labels;
  std::vector<double> mean_probs;
};
PseudoLabels compute_pseudo_labels(ModelBundle& m, std::span<const Sample> unlabeled);

/// Called once per second-stage iteration, after the updates.
struct S2Observation {
  std::size_t iteration = 0;
  const PseudoLabels* pseudo = nullptr;
  LossComponents losses;
};
using S2Observer = std::function<void(const S2Observation&)>;

/// Sequential adaptation over the unlabeled pool. Pseudo labels are refreshed
/// before the first iteration and whenever the iteration index is a multiple
/// of gamma. Per iteration F steps on L_im + L_loss + L_adv, P on L_loss and D
/// on L_dis, all gradients taken at the same parameters.
StageTrace stage_s2(ModelBundle& m, Optimizers& opt, const PoolState& pool, const RunConfig& cfg,
                    std::mt19937_64& rng, const S2Observer& observer = {});

/// Supervised fine-tuning used by the Random and Entropy baselines: F trained
/// with CE on labeled target plus source batches, no adaptation.
StageTrace stage_finetune(ModelBundle& m, Optimizers& opt, const PoolState& pool,
                          const RunConfig& cfg, std::mt19937_64& rng);

/// Measures a bundle against the current pools.
MetricsRecord evaluate_round(ModelBundle& m, const PoolState& pool, std::span<const Sample> selected,
                             const RunConfig& cfg);

struct RunHooks {
  /// Invoked after the pretrained model is frozen.
  std::function<void(const ModelBundle&)> on_pretrained;
  /// Invoked at each round boundary after metrics are taken.
  std::function<void(const RoundLog&, const ModelBundle&, const PoolState&)> on_round_end;
};

struct RunResult {
  std::vector<RoundLog> rounds;
  std::uint64_t classifier_hash_after_pretrain = 0;
  std::uint64_t classifier_hash_final = 0;
  std::size_t total_budget = 0;
  std::size_t spent = 0;
};

/// Full pipeline: pretrain, one unsupervised second-stage pass, then per
/// round: select and annotate the round's quota, train (stage order per the
/// ablation flags), evaluate.
RunResult run_active_loop(const RunConfig& cfg, const DomainPair& data, const RunHooks& hooks = {});

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

}  // namespace lossada
