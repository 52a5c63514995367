#include "lossada/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace lossada {

namespace {

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    salt, 0x5eedu};
  return std::mt19937_64(seq);
}

/// Up to `batch` distinct row indices out of n, in random order.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t b = std::min(batch, n);
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(b);
  return idx;
}

std::size_t even_batch(std::size_t batch, std::size_t available) {
  const std::size_t b = std::min(batch, available);
  return b - b % 2;
}

std::vector<double> column_values(Var v) {
  const auto vals = v.value().values();
  return {vals.begin(), vals.end()};
}

void save_grads(const std::vector<Tensor*>& params, std::vector<std::vector<double>>& out) {
  out.resize(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = params[k]->grad();
    out[k].assign(g.begin(), g.end());
  }
}

void restore_grads(const std::vector<Tensor*>& params, const std::vector<std::vector<double>>& in) {
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(in[k].begin(), in[k].end(), params[k]->grad().begin());
}

std::vector<std::int64_t> top_k_ids(std::span<const double> score, std::span<const Sample> pool,
                                    std::size_t k) {
  if (k > pool.size()) {
    throw BudgetError("quota " + std::to_string(k) + " exceeds pool size " + std::to_string(pool.size()));
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (score[a] != score[b]) return score[a] > score[b];
                      return pool[a].id < pool[b].id;
                    });
  std::vector<std::int64_t> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) ids.push_back(pool[order[i]].id);
  return ids;
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kLossPrediction: return "loss";
    case Strategy::kRandom: return "random";
    case Strategy::kEntropy: return "entropy";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "loss" || s == "losspred") return Strategy::kLossPrediction;
  if (s == "random") return Strategy::kRandom;
  if (s == "entropy") return Strategy::kEntropy;
  throw ConfigError("strategy", "unknown strategy '" + s + "' (expected loss, random or entropy)");
}

void RunConfig::validate() const {
  if (!(budget_percent >= 0.0 && budget_percent <= 100.0)) {
    throw ConfigError("budget_percent", "must lie in [0, 100]");
  }
  if (rounds < 1) throw ConfigError("rounds", "must be at least 1");
  if (!per_round_quota.empty() && per_round_quota.size() != rounds) {
    throw ConfigError("per_round_quota", "needs one entry per round");
  }
  if (!(margin > 0.0)) throw ConfigError("margin", "must be positive");
  if (!(xi >= 0.0)) throw ConfigError("xi", "must be non-negative");
  if (gamma < 1) throw ConfigError("gamma", "must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate", "must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size", "must be even and at least 2");
  if (!(misprediction_quantile > 0.0 && misprediction_quantile < 1.0)) {
    throw ConfigError("misprediction_quantile", "must lie in (0, 1)");
  }
  dims.validate();
}

std::vector<std::size_t> RunConfig::quotas(std::size_t pool_size) const {
  const auto total = static_cast<std::size_t>(
      std::floor(budget_percent * static_cast<double>(pool_size) / 100.0 + 1e-9));
  if (!per_round_quota.empty()) {
    const std::size_t sum = std::accumulate(per_round_quota.begin(), per_round_quota.end(), std::size_t{0});
    if (sum != total) {
      throw ConfigError("per_round_quota", "sums to " + std::to_string(sum) + ", budget is " +
                                               std::to_string(total));
    }
    return per_round_quota;
  }
  std::vector<std::size_t> q(rounds, total / rounds);
  for (std::size_t r = 0; r < total % rounds; ++r) ++q[r];
  return q;
}

LossComponents StageTrace::mean() const {
  LossComponents m;
  if (iterations.empty()) return m;
  for (const LossComponents& c : iterations) {
    m.ranking += c.ranking;
    m.info_max += c.info_max;
    m.discriminator += c.discriminator;
    m.adversarial += c.adversarial;
    m.total += c.total;
    m.cross_entropy += c.cross_entropy;
  }
  const auto n = static_cast<double>(iterations.size());
  m.ranking /= n;
  m.info_max /= n;
  m.discriminator /= n;
  m.adversarial /= n;
  m.total /= n;
  m.cross_entropy /= n;
  return m;
}

Optimizers make_optimizers(ModelBundle& m, const RunConfig& cfg) {
  return Optimizers{SgdMomentum(m.feature_params(), cfg.learning_rate, cfg.momentum),
                    SgdMomentum(m.predictor_params(), cfg.learning_rate, cfg.momentum),
                    SgdMomentum(m.discriminator_params(), cfg.learning_rate, cfg.momentum)};
}

void pretrain(ModelBundle& m, const Dataset& source, const RunConfig& cfg, std::mt19937_64& rng) {
  if (source.empty()) throw ConfigError("source", "pretraining needs a non-empty source set");
  const std::vector<std::size_t> labels = labels_of(source);
  std::vector<Tensor*> params = m.feature_params();
  for (Tensor* t : m.classifier_params()) params.push_back(t);
  SgdMomentum opt(params, cfg.learning_rate, cfg.momentum);
  for (std::size_t it = 0; it < cfg.pretrain_iters; ++it) {
    const std::vector<std::size_t> rows = sample_rows(source.size(), cfg.batch_size, rng);
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
    Graph g;
    const Var logits = forward_classifier(m, g, forward_features(m, g, g.constant(feature_matrix(source, rows))));
    g.backward(cross_entropy(logits, y).mean);
    opt.step();
  }
  m.zero_grad();
  m.freeze_classifier();
}

std::vector<double> predicted_losses(ModelBundle& m, std::span<const Sample> pool) {
  if (pool.empty()) return {};
  const Inference out = infer(m, feature_matrix(pool));
  const auto v = out.predicted_loss.values();
  return {v.begin(), v.end()};
}

std::vector<std::int64_t> select_queries(ModelBundle& m, std::span<const Sample> pool, std::size_t k) {
  if (k > pool.size()) {
    throw BudgetError("quota " + std::to_string(k) + " exceeds pool size " + std::to_string(pool.size()));
  }
  if (k == 0) return {};
  const std::vector<double> losses = predicted_losses(m, pool);
  return top_k_ids(losses, pool, k);
}

std::vector<std::int64_t> select_baseline(Strategy strategy, ModelBundle& m,
                                          std::span<const Sample> pool, std::size_t k,
                                          std::uint64_t seed) {
  if (k > pool.size()) {
    throw BudgetError("quota " + std::to_string(k) + " exceeds pool size " + std::to_string(pool.size()));
  }
  if (k == 0) return {};
  switch (strategy) {
    case Strategy::kRandom: {
      std::mt19937_64 rng = derive_rng(seed, 7);
      std::vector<std::int64_t> ids;
      for (std::size_t r : sample_rows(pool.size(), k, rng)) ids.push_back(pool[r].id);
      return ids;
    }
    case Strategy::kEntropy: {
      const Inference out = infer(m, feature_matrix(pool));
      std::vector<double> h(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) h[i] = entropy(out.probs.row_span(i));
      return top_k_ids(h, pool, k);
    }
    case Strategy::kLossPrediction:
      return select_queries(m, pool, k);
  }
  return {};
}

StageTrace stage_s1(ModelBundle& m, Optimizers& opt, const Dataset& labeled, const RunConfig& cfg,
                    std::mt19937_64& rng) {
  StageTrace trace;
  if (labeled.empty()) return trace;
  const std::vector<std::size_t> labels = labels_of(labeled);
  const std::size_t batch = even_batch(cfg.batch_size, labeled.size());
  for (std::size_t it = 0; it < cfg.s1_iters; ++it) {
    const std::vector<std::size_t> rows = sample_rows(labeled.size(), batch == 0 ? 1 : batch, rng);
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];

    Graph g;
    const Var f = forward_features(m, g, g.constant(feature_matrix(labeled, rows)));
    const CrossEntropy ce = cross_entropy(forward_classifier(m, g, f), y);
    LossComponents c;
    c.cross_entropy = ce.mean.value().item();
    Var root = ce.mean;
    if (rows.size() >= 2) {
      const std::vector<RankingPair> pairs = make_ranking_pairs(rows.size(), rng);
      const Var ranking = margin_ranking_loss(forward_loss_predictor(m, g, f), column_values(ce.per_sample),
                                              pairs, cfg.margin);
      c.ranking = ranking.value().item();
      root = add(root, ranking);
    }
    m.zero_grad();
    g.backward(root);
    opt.feature.step();
    opt.predictor.step();
    opt.discriminator.zero_grad();
    c.total = c.ranking;
    trace.iterations.push_back(c);
  }
  return trace;
}

PseudoLabels compute_pseudo_labels(ModelBundle& m, std::span<const Sample> unlabeled) {
  PseudoLabels out;
  if (unlabeled.empty()) return out;
  const Inference inf = infer(m, feature_matrix(unlabeled));
  out.labels = argmax_rows(inf.probs);
  out.mean_probs.assign(inf.probs.cols(), 0.0);
  for (std::size_t r = 0; r < inf.probs.rows(); ++r)
    for (std::size_t c = 0; c < inf.probs.cols(); ++c) out.mean_probs[c] += inf.probs.at(r, c);
  for (double& v : out.mean_probs) v /= static_cast<double>(inf.probs.rows());
  return out;
}

StageTrace stage_s2(ModelBundle& m, Optimizers& opt, const PoolState& pool, const RunConfig& cfg,
                    std::mt19937_64& rng, const S2Observer& observer) {
  if (cfg.gamma < 1) throw ConfigError("gamma", "must be at least 1");
  const Dataset& unlabeled = pool.unlabeled_target();
  const Dataset& source = pool.source();
  const Dataset& labeled = pool.labeled_target();
  if (unlabeled.empty()) throw ContractError("stage_s2: unlabeled target pool is empty");
  if (source.empty()) throw ContractError("stage_s2: source pool is empty");

  const bool ground_truth = cfg.ablation.s2_labels == S2Labels::kGroundTruth;
  const std::vector<std::size_t> source_labels = labels_of(source);
  const std::vector<std::size_t> labeled_labels = labels_of(labeled);
  const std::vector<Tensor*> d_params = m.discriminator_params();
  std::vector<std::vector<double>> d_grads;

  StageTrace trace;
  PseudoLabels pseudo;
  for (std::size_t n = 1; n <= cfg.s2_iters; ++n) {
    if (n == 1 || n % cfg.gamma == 0) {
      pseudo = compute_pseudo_labels(m, unlabeled);
      trace.refreshes.push_back(n == 1 ? 0 : n);
    }

    Graph g;
    const std::vector<std::size_t> t_rows = sample_rows(unlabeled.size(), cfg.batch_size, rng);
    const Var f_t = forward_features(m, g, g.constant(feature_matrix(unlabeled, t_rows)));
    const Var probs_t = softmax_rows(forward_classifier(m, g, f_t));

    // Supervision for the ranking and self-training terms: pseudo labels on
    // the unlabeled batch, or true labels on an annotated batch.
    Var features_sup;
    Var probs_sup;
    std::vector<std::size_t> y_sup;
    if (!ground_truth) {
      features_sup = f_t;
      probs_sup = probs_t;
      for (std::size_t r : t_rows) y_sup.push_back(pseudo.labels[r]);
    } else if (!labeled.empty()) {
      const std::vector<std::size_t> l_rows = sample_rows(labeled.size(), cfg.batch_size, rng);
      features_sup = forward_features(m, g, g.constant(feature_matrix(labeled, l_rows)));
      probs_sup = softmax_rows(forward_classifier(m, g, features_sup));
      for (std::size_t r : l_rows) y_sup.push_back(labeled_labels[r]);
    }

    std::vector<Var> f_terms;
    LossComponents c;
    Var info_max;
    if (!y_sup.empty()) {
      const CrossEntropy ce = cross_entropy_from_probs(probs_sup, y_sup);
      const std::size_t pair_rows = y_sup.size() - y_sup.size() % 2;
      if (pair_rows >= 2) {
        // Pairs come from the leading even number of rows; the batch order is
        // already random.
        std::vector<RankingPair> pairs = make_ranking_pairs(pair_rows, rng);
        const Var predicted = forward_loss_predictor(m, g, features_sup);
        const Var ranking = margin_ranking_loss(predicted, column_values(ce.per_sample), pairs, cfg.margin);
        c.ranking = ranking.value().item();
        if (cfg.loss_mask.ranking) f_terms.push_back(ranking);
      }
      info_max = ce.mean;
    }
    if (cfg.ablation.enable_im) {
      // The diversity term's value uses the whole-pool mean from the last
      // refresh; its gradient flows through the current batch mean.
      const Var batch_mean = mean_rows(probs_t);
      Tensor offset = Tensor::row(pseudo.mean_probs);
      for (std::size_t k = 0; k < offset.size(); ++k) offset.values()[k] -= batch_mean.value().values()[k];
      const Var mean_probs = add(g.constant(std::move(offset)), batch_mean);
      const Var diversity = class_diversity_term(mean_probs, cfg.xi);
      info_max = info_max.valid() ? add(info_max, diversity) : diversity;
    }
    if (info_max.valid()) {
      c.info_max = info_max.value().item();
      if (cfg.loss_mask.info_max) f_terms.push_back(info_max);
    }

    const std::vector<std::size_t> s_rows = sample_rows(source.size(), cfg.batch_size, rng);
    const Var f_s = forward_features(m, g, g.constant(feature_matrix(source, s_rows)));
    const Var d_src = forward_discriminator(m, g, f_s);
    const Var d_tgt = forward_discriminator(m, g, f_t);
    const Var dis = discriminator_loss(d_src, d_tgt);
    const Var adv = adversarial_loss(d_tgt, d_src);
    c.discriminator = dis.value().item();
    c.adversarial = adv.value().item();
    if (cfg.loss_mask.adversarial) f_terms.push_back(adv);

    // D's gradient from L_dis, then F and P from their joint objective, all
    // at the current parameters before any update.
    m.zero_grad();
    if (cfg.loss_mask.discriminator) g.backward(dis);
    save_grads(d_params, d_grads);
    m.zero_grad();
    if (!f_terms.empty()) {
      Var f_root = f_terms.front();
      for (std::size_t i = 1; i < f_terms.size(); ++i) f_root = add(f_root, f_terms[i]);
      g.backward(f_root);
    }
    restore_grads(d_params, d_grads);
    opt.feature.step();
    opt.predictor.step();
    opt.discriminator.step();

    const LossComponents report = total_loss_report(c.ranking, c.info_max, c.discriminator, c.adversarial);
    trace.iterations.push_back(report);
    if (observer) observer(S2Observation{n, &pseudo, report});
  }
  return trace;
}

StageTrace stage_finetune(ModelBundle& m, Optimizers& opt, const PoolState& pool,
                          const RunConfig& cfg, std::mt19937_64& rng) {
  StageTrace trace;
  const Dataset& source = pool.source();
  const Dataset& labeled = pool.labeled_target();
  const std::vector<std::size_t> source_labels = labels_of(source);
  const std::vector<std::size_t> labeled_labels = labels_of(labeled);
  const std::size_t iters = cfg.s1_iters + cfg.s2_iters;
  auto ce_term = [&](const Dataset& d, const std::vector<std::size_t>& labels, Graph& g) {
    const std::vector<std::size_t> rows = sample_rows(d.size(), cfg.batch_size, rng);
    std::vector<std::size_t> y;
    for (std::size_t r : rows) y.push_back(labels[r]);
    const Var logits = forward_classifier(m, g, forward_features(m, g, g.constant(feature_matrix(d, rows))));
    return cross_entropy(logits, y).mean;
  };
  for (std::size_t it = 0; it < iters; ++it) {
    Graph g;
    std::vector<Var> terms;
    LossComponents c;
    if (!labeled.empty()) {
      terms.push_back(ce_term(labeled, labeled_labels, g));
      c.cross_entropy = terms.back().value().item();
    }
    if (!source.empty()) terms.push_back(ce_term(source, source_labels, g));
    if (terms.empty()) break;
    Var root = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) root = add(root, terms[i]);
    m.zero_grad();
    g.backward(root);
    opt.feature.step();
    trace.iterations.push_back(c);
  }
  m.zero_grad();
  return trace;
}

MetricsRecord evaluate_round(ModelBundle& m, const PoolState& pool, std::span<const Sample> selected,
                             const RunConfig& cfg) {
  MetricsRecord r;
  const std::size_t target_total = pool.target_size();
  r.budget_spent_percent =
      target_total == 0 ? 0.0 : 100.0 * static_cast<double>(pool.spent()) / static_cast<double>(target_total);
  const Dataset eval = pool.evaluation_set();
  if (!eval.empty()) r.target_accuracy = target_accuracy(m, eval);

  const Dataset& unlabeled = pool.unlabeled_target();
  if (!unlabeled.empty()) {
    const std::vector<std::size_t> truth = pool.unlabeled_truth();
    const PseudoLabels pseudo = compute_pseudo_labels(m, unlabeled);
    r.pseudo_label_accuracy = pseudo_label_accuracy(pseudo.labels, truth);
    r.mean_prediction_entropy = entropy(pseudo.mean_probs);
    if (unlabeled.size() >= 2) {
      const MispredictionSplit split = misprediction_split(m, unlabeled, truth, cfg.misprediction_quantile);
      r.high_loss_misprediction_rate = split.high_rate;
      r.low_loss_misprediction_rate = split.low_rate;
    }
  }
  if (!selected.empty()) {
    const DiversityProxies d = diversity_proxies(m, selected);
    r.selected_class_coverage = d.class_coverage;
    r.selected_mean_pairwise_feature_distance = d.mean_pairwise_distance;
  }
  return r;
}

RunResult run_active_loop(const RunConfig& cfg, const DomainPair& data, const RunHooks& hooks) {
  cfg.validate();
  RunConfig run_cfg = cfg;
  run_cfg.dims.input_dim = data.num_features;
  run_cfg.dims.num_classes = data.num_classes;
  run_cfg.dims.validate();

  PoolState pool(data, cfg.budget_percent);
  const std::vector<std::size_t> quotas = cfg.quotas(pool.unlabeled_target().size());

  ModelBundle m = init_bundle(run_cfg.dims, cfg.seed);
  std::mt19937_64 pretrain_rng = derive_rng(cfg.seed, 1);
  std::mt19937_64 train_rng = derive_rng(cfg.seed, 2);

  RunResult result;
  result.total_budget = pool.total_budget();
  pretrain(m, pool.source(), run_cfg, pretrain_rng);
  result.classifier_hash_after_pretrain = parameter_hash(m.classifier_params());
  if (hooks.on_pretrained) hooks.on_pretrained(m);

  Optimizers opt = make_optimizers(m, run_cfg);
  const bool adaptive = cfg.strategy == Strategy::kLossPrediction;
  const bool run_s2 = cfg.ablation.enable_s2 && adaptive;
  auto can_s2 = [&] { return pool.unlabeled_target().size() >= 2; };

  // One unsupervised pass so the loss predictor is trained before the first query.
  if (run_s2 && can_s2()) stage_s2(m, opt, pool, run_cfg, train_rng);

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    RoundLog log;
    log.round = round;
    const std::size_t k = quotas[round];
    const Dataset& unlabeled = pool.unlabeled_target();
    const std::uint64_t select_seed = cfg.seed * 1000003ULL + round;
    if (cfg.ablation.cold_start && round == 0) {
      log.selected = select_baseline(Strategy::kRandom, m, unlabeled, k, select_seed);
    } else {
      log.selected = select_baseline(cfg.strategy, m, unlabeled, k, select_seed);
    }
    pool.annotate(log.selected);

    if (!adaptive) {
      log.s1 = stage_finetune(m, opt, pool, run_cfg, train_rng);
    } else {
      auto s1 = [&] {
        if (cfg.ablation.enable_s1) log.s1 = stage_s1(m, opt, pool.labeled_target(), run_cfg, train_rng);
      };
      auto s2 = [&] {
        if (run_s2 && can_s2()) log.s2 = stage_s2(m, opt, pool, run_cfg, train_rng);
      };
      if (cfg.ablation.swap_stage_order) {
        s2();
        s1();
      } else {
        s1();
        s2();
      }
    }

    const Dataset& labeled = pool.labeled_target();
    const std::span<const Sample> selected(labeled.end() - static_cast<std::ptrdiff_t>(log.selected.size()),
                                           labeled.end());
    log.metrics = evaluate_round(m, pool, selected, run_cfg);
    log.metrics.round = round;
    log.metrics.losses = log.s2.mean();
    log.metrics.losses.cross_entropy = log.s1.mean().cross_entropy;
    if (hooks.on_round_end) hooks.on_round_end(log, m, pool);
    result.rounds.push_back(std::move(log));
  }
  result.classifier_hash_final = parameter_hash(m.classifier_params());
  result.spent = pool.spent();
  return result;
}

}  // namespace lossada
