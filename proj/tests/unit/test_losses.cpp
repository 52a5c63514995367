#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "lossada/losses.hpp"
#include "lossada/nets.hpp"
#include "support/gradcheck.hpp"

using namespace lossada;
using lossada::testing::check_gradients;
using lossada::testing::random_tensor;

namespace {

// Plain-double oracles, no graph involved.
double ce_oracle(const Tensor& logits, std::size_t r, std::size_t y) {
  double mx = logits.at(r, 0);
  for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(r, c));
  double z = 0.0;
  for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(r, c) - mx);
  return -(logits.at(r, y) - mx - std::log(z));
}

double shannon(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

std::vector<double> random_simplex(std::size_t c, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(c);
  double s = 0.0;
  for (double& v : p) s += (v = e(rng));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("cross_entropy: uniform logits, confident logits, scalar oracle") {
  Graph g;
  const std::vector<std::size_t> labels{0, 3, 2};
  const CrossEntropy u = cross_entropy(g.constant(Tensor({3, 4})), labels);
  for (double v : u.per_sample.value().values()) CHECK(std::abs(v - std::log(4.0)) < 1e-12);
  CHECK(std::abs(u.mean.value().item() - std::log(4.0)) < 1e-12);

  Tensor sharp({2, 3}, {50, -50, -50, -50, -50, 50});
  const std::vector<std::size_t> right{0, 2};
  CHECK(cross_entropy(g.constant(sharp), right).mean.value().item() < 1e-12);

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> cls(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor(7, 5, rng, -6, 6);
    std::vector<std::size_t> y(7);
    for (auto& v : y) v = cls(rng);
    const CrossEntropy ce = cross_entropy(g.constant(logits), y);
    double total = 0.0;
    for (std::size_t r = 0; r < 7; ++r) {
      const double o = ce_oracle(logits, r, y[r]);
      total += o;
      CHECK(std::abs(ce.per_sample.value().at(r, 0) - o) <= 1e-9);
      CHECK(ce.per_sample.value().at(r, 0) >= 0.0);
    }
    CHECK(std::abs(ce.mean.value().item() - total / 7) <= 1e-9);

    // From probabilities: same numbers.
    const CrossEntropy cp = cross_entropy_from_probs(softmax_rows(g.constant(logits)), y);
    CHECK(std::abs(cp.mean.value().item() - total / 7) <= 1e-9);
  }

  const std::vector<std::size_t> bad{4};
  CHECK_THROWS_AS(cross_entropy(g.constant(Tensor({1, 4})), bad), NumericDomainError);
}

TEST_CASE("cross_entropy gradient matches finite differences") {
  std::mt19937_64 rng(2);
  const std::vector<std::size_t> y{1, 0, 2, 2};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> params{random_tensor(4, 3, rng, -3, 3)};
    auto f = [&](Graph&, const std::vector<Var>& v) { return cross_entropy(v[0], y).mean; };
    const auto r = check_gradients(f, params);
    CHECK_MESSAGE(r.max_rel_err <= 1e-4, r.worst);
  }
}

TEST_CASE("margin_ranking_loss: worked examples") {
  Graph g;
  // l_n=2 > l_m=1 but predicted in the wrong order: -(0.5 - 0.9) + 1 = 1.4
  const std::vector<double> l{2.0, 1.0};
  const std::vector<RankingPair> pair{{0, 1}};
  const Var wrong = g.constant(Tensor::column({0.5, 0.9}));
  CHECK(std::abs(margin_ranking_loss(wrong, l, pair, 1.0).value().item() - 1.4) < 1e-12);

  const Var right = g.constant(Tensor::column({2.5, 1.0}));
  CHECK(margin_ranking_loss(right, l, pair, 1.0).value().item() == 0.0);

  // Swapping n and m flips both the indicator and the difference.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> tl{u(rng), u(rng)};
    const Var p = g.constant(Tensor::column({u(rng), u(rng)}));
    const std::vector<RankingPair> fwd{{0, 1}}, rev{{1, 0}};
    const double a = margin_ranking_loss(p, tl, fwd, 1.0).value().item();
    const double b = margin_ranking_loss(p, tl, rev, 1.0).value().item();
    if (tl[0] != tl[1]) CHECK(a == doctest::Approx(b).epsilon(1e-15));
    CHECK(a >= 0.0);
  }

  CHECK_THROWS_AS(margin_ranking_loss(wrong, l, std::vector<RankingPair>{}, 1.0), ContractError);
  CHECK_THROWS_AS(margin_ranking_loss(wrong, l, pair, 0.0), ConfigError);
}

TEST_CASE("margin_ranking_loss gradient: finite differences away from the kink, none into true losses") {
  std::mt19937_64 rng(4);
  std::mt19937_64 pair_rng(5);
  std::uniform_real_distribution<double> u(0, 2);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> tl(8);
    for (double& v : tl) v = u(rng);
    const std::vector<RankingPair> pairs = make_ranking_pairs(8, pair_rng);
    std::vector<Tensor> params{random_tensor(8, 1, rng, -2, 2)};
    // Skip instances within 1e-3 of a hinge kink.
    bool near_kink = false;
    for (const RankingPair& p : pairs) {
      const double s = tl[p.idx_n] > tl[p.idx_m] ? 1.0 : -1.0;
      const double arg = -s * (params[0].values()[p.idx_n] - params[0].values()[p.idx_m]) + 1.0;
      near_kink |= std::abs(arg) < 1e-3;
    }
    if (near_kink) continue;
    auto f = [&](Graph&, const std::vector<Var>& v) { return margin_ranking_loss(v[0], tl, pairs, 1.0); };
    const auto r = check_gradients(f, params);
    CHECK_MESSAGE(r.max_rel_err <= 1e-4, r.worst);
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("make_ranking_pairs: disjoint, distinct, odd batch rejected") {
  std::mt19937_64 rng(6);
  for (std::size_t b : {2u, 8u, 32u}) {
    const auto pairs = make_ranking_pairs(b, rng);
    CHECK(pairs.size() == b / 2);
    std::set<std::size_t> used;
    for (const RankingPair& p : pairs) {
      CHECK(p.idx_n != p.idx_m);
      CHECK(used.insert(p.idx_n).second);
      CHECK(used.insert(p.idx_m).second);
    }
    CHECK(used.size() == b);
  }
  CHECK_THROWS_AS(make_ranking_pairs(7, rng), ContractError);
}

TEST_CASE("class_diversity_term: uniform, one-hot, entropy identity") {
  Graph g;
  for (std::size_t c : {2u, 6u}) {
    for (double xi : {0.0, 0.5, 1.0}) {
      const Var uni = g.constant(Tensor::row(std::vector<double>(c, 1.0 / c)));
      CHECK(std::abs(class_diversity_term(uni, xi).value().item() + xi * std::log(double(c))) < 1e-12);
      std::vector<double> oh(c, 0.0);
      oh[1] = 1.0;
      CHECK(std::abs(class_diversity_term(g.constant(Tensor::row(oh)), xi).value().item()) < 1e-12);
    }
  }
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> p = random_simplex(6, rng);
    const double t = class_diversity_term(g.constant(Tensor::row(p)), 0.7).value().item();
    CHECK(std::abs(t + 0.7 * shannon(p)) <= 1e-9);
  }
  CHECK_THROWS_AS(class_diversity_term(g.constant(Tensor::row({0.5, 0.5})), -0.1), ConfigError);
}

TEST_CASE("class_diversity_term: minimal at uniform, rising toward one-hot") {
  Graph g;
  const std::size_t c = 5;
  double prev = -1e9;
  for (int k = 0; k <= 20; ++k) {
    const double a = k / 20.0;  // mix of uniform and one-hot
    std::vector<double> p(c, (1 - a) / c);
    p[2] += a;
    const double t = class_diversity_term(g.constant(Tensor::row(p)), 1.0).value().item();
    if (k > 0) CHECK(t > prev);
    prev = t;
  }
}

TEST_CASE("info_max_loss: pseudo-label CE plus diversity, gradients") {
  std::mt19937_64 rng(8);
  const std::vector<std::size_t> pseudo{0, 2, 1, 2, 0};
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor logits = random_tensor(5, 3, rng, -2, 2);
    Graph g;
    const Var probs = softmax_rows(g.constant(logits));
    const Var mp = mean_rows(probs);
    const double got = info_max_loss(probs, pseudo, mp, 0.8).value().item();
    double ce = 0.0;
    for (std::size_t r = 0; r < 5; ++r) ce += ce_oracle(logits, r, pseudo[r]);
    const auto mv = mp.value().values();
    const double expected = ce / 5 - 0.8 * shannon({mv.begin(), mv.end()});
    CHECK(std::abs(got - expected) <= 1e-9);
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> params{random_tensor(5, 3, rng, -2, 2)};
    auto f = [&](Graph&, const std::vector<Var>& v) {
      const Var probs = softmax_rows(v[0]);
      return info_max_loss(probs, pseudo, mean_rows(probs), 1.0);
    };
    const auto r = check_gradients(f, params);
    CHECK_MESSAGE(r.max_rel_err <= 1e-4, r.worst);
  }
}

TEST_CASE("discriminator and adversarial losses: values and negation") {
  Graph g;
  const Var half = g.constant(Tensor::column({0.5, 0.5, 0.5}));
  CHECK(std::abs(discriminator_loss(half, half).value().item() - 2 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(adversarial_loss(half, half).value().item() + 2 * std::log(2.0)) < 1e-12);

  const Var src_hi = g.constant(Tensor::column({1 - 1e-12, 1 - 1e-12}));
  const Var tgt_lo = g.constant(Tensor::column({1e-12, 1e-12}));
  CHECK(discriminator_loss(src_hi, tgt_lo).value().item() < 1e-10);

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor ds = random_tensor(6, 1, rng, 0.01, 0.99);
    const Tensor dt = random_tensor(4, 1, rng, 0.01, 0.99);
    double s = 0.0, t = 0.0;
    for (double v : ds.values()) s += std::log(v);
    for (double v : dt.values()) t += std::log(1 - v);
    const double oracle = -s / 6 - t / 4;
    const Var vs = g.constant(ds), vt = g.constant(dt);
    const double dis = discriminator_loss(vs, vt).value().item();
    const double adv = adversarial_loss(vt, vs).value().item();
    CHECK(std::abs(dis - oracle) <= 1e-9);
    CHECK(dis + adv == 0.0);
  }
  CHECK_THROWS_AS(discriminator_loss(g.constant(Tensor({0, 1})), half), ContractError);
}

TEST_CASE("adversarial gradient into F is the negated discriminator gradient") {
  NetDims d;
  d.input_dim = 2;
  d.hidden = 6;
  d.feature_dim = 4;
  d.discriminator_hidden = 5;
  d.predictor_dim = 3;
  ModelBundle m = init_bundle(d, 10);
  std::mt19937_64 rng(11);
  const Tensor xs = random_tensor(5, 2, rng), xt = random_tensor(5, 2, rng);
  auto grads = [&](bool adversarial) {
    m.zero_grad();
    Graph g;
    const Var ds = forward_discriminator(m, g, forward_features(m, g, g.constant(xs)));
    const Var dt = forward_discriminator(m, g, forward_features(m, g, g.constant(xt)));
    g.backward(adversarial ? adversarial_loss(dt, ds) : discriminator_loss(ds, dt));
    std::vector<double> out;
    for (Tensor* t : m.feature_params()) out.insert(out.end(), t->grad().begin(), t->grad().end());
    return out;
  };
  const auto gd = grads(false), ga = grads(true);
  double norm = 0.0;
  for (std::size_t i = 0; i < gd.size(); ++i) {
    CHECK(ga[i] == -gd[i]);
    norm += gd[i] * gd[i];
  }
  CHECK(norm > 0.0);

  // Finite differences of both losses through D.
  std::vector<Tensor> params{random_tensor(5, 1, rng, -2, 2), random_tensor(4, 1, rng, -2, 2)};
  auto f = [&](Graph&, const std::vector<Var>& v) {
    return adversarial_loss(sigmoid(v[1]), sigmoid(v[0]));
  };
  const auto r = check_gradients(f, params);
  CHECK_MESSAGE(r.max_rel_err <= 1e-4, r.worst);
}

TEST_CASE("total_loss_report: componentwise sum and cancellation") {
  const LossComponents c = total_loss_report(0.3, -1.2, 1.1, -1.1);
  CHECK(c.ranking == 0.3);
  CHECK(c.info_max == -1.2);
  CHECK(c.discriminator == 1.1);
  CHECK(c.adversarial == -1.1);
  CHECK(c.total == 0.3 + -1.2 + 1.1 + -1.1);
  CHECK(std::abs(c.total - (0.3 - 1.2)) < 1e-15);
  const LossComponents again = total_loss_report(0.3, -1.2, 1.1, -1.1);
  CHECK(again.total == c.total);
}
