#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "lossada/losses.hpp"
#include "lossada/nets.hpp"
#include "support/gradcheck.hpp"

using namespace lossada;
using lossada::testing::check_gradients;
using lossada::testing::random_tensor;

namespace {

NetDims small_dims() {
  NetDims d;
  d.input_dim = 3;
  d.hidden = 5;
  d.feature_dim = 4;
  d.predictor_dim = 3;
  d.discriminator_hidden = 4;
  d.num_classes = 3;
  return d;
}

void zero_all(ModelBundle& m) {
  for (Tensor* t : m.all_params()) std::fill(t->values().begin(), t->values().end(), 0.0);
}

}  // namespace

TEST_CASE("init_bundle: determinism and config errors") {
  const ModelBundle a = init_bundle(small_dims(), 7);
  const ModelBundle b = init_bundle(small_dims(), 7);
  const ModelBundle c = init_bundle(small_dims(), 8);
  CHECK(parameter_hash(a.all_params()) == parameter_hash(b.all_params()));
  CHECK(parameter_hash(a.all_params()) != parameter_hash(c.all_params()));

  NetDims bad = small_dims();
  bad.hidden = 0;
  CHECK_THROWS_AS(init_bundle(bad, 1), ConfigError);
  try {
    init_bundle(bad, 1);
  } catch (const ConfigError& e) {
    CHECK(e.field() == "hidden");
  }
}

TEST_CASE("init_bundle: weight variance near 2/fan_in, zero biases") {
  NetDims d = small_dims();
  d.input_dim = 100;
  d.hidden = 100;  // F.0.weight is 100 x 100: 10k draws
  ModelBundle m = init_bundle(d, 3);
  const auto w = m.feature.layers[0].weight.values();
  REQUIRE(w.size() == 10000);
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / w.size();
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  const double expected = 2.0 / 100.0;
  CHECK(std::abs(var - expected) / expected < 0.2);
  for (Tensor* t : m.all_params()) {
    if (t->rows() == 1) {
      for (double v : t->values()) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("forward_features: zero parameters give zero features; rows independent") {
  ModelBundle m = init_bundle(small_dims(), 1);
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(8, 3, rng);
  const Inference full = infer(m, x);
  for (std::size_t r = 0; r < 8; ++r) {
    Tensor row({1, 3}, {x.at(r, 0), x.at(r, 1), x.at(r, 2)});
    const Inference one = infer(m, row);
    for (std::size_t c = 0; c < 4; ++c) CHECK(one.features.at(0, c) == full.features.at(r, c));
  }
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += full.probs.at(r, c);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  zero_all(m);
  const Inference z = infer(m, x);
  for (double v : z.features.values()) CHECK(v == 0.0);

  Graph g;
  CHECK_THROWS_AS(forward_features(m, g, g.constant(Tensor({2, 5}))), DimensionError);
}

TEST_CASE("forward_classifier: identity weights pass features through") {
  NetDims d = small_dims();
  d.feature_dim = 3;
  d.num_classes = 3;
  ModelBundle m = init_bundle(d, 1);
  Tensor& w = m.classifier.weight;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
  Graph g;
  const Var f = g.constant(Tensor({2, 3}, {0.5, -1.0, 2.0, 3.0, 0.0, 1.5}));
  const Var logits = forward_classifier(m, g, f);
  for (std::size_t i = 0; i < 6; ++i) CHECK(logits.value().values()[i] == f.value().values()[i]);
}

TEST_CASE("forward_loss_predictor and discriminator: zero weights") {
  ModelBundle m = init_bundle(small_dims(), 4);
  for (Tensor* t : m.predictor_params()) std::fill(t->values().begin(), t->values().end(), 0.0);
  m.loss_predictor.layers.back().bias.values()[0] = 0.37;
  for (Tensor* t : m.discriminator_params()) std::fill(t->values().begin(), t->values().end(), 0.0);
  std::mt19937_64 rng(5);
  for (std::size_t batch : {1u, 4u, 9u}) {
    Graph g;
    const Var f = g.constant(random_tensor(batch, 4, rng));
    const Var p = forward_loss_predictor(m, g, f);
    CHECK(p.shape() == Shape{batch, 1});
    for (double v : p.value().values()) CHECK(v == 0.37);
    const Var dz = forward_discriminator(m, g, f);
    for (double v : dz.value().values()) CHECK(v == 0.5);
    // Balanced discriminator loss at 0.5 is 2 log 2.
    CHECK(std::abs(discriminator_loss(dz, dz).value().item() - 2 * std::log(2.0)) < 1e-12);
  }
}

TEST_CASE("forward_discriminator: outputs inside (0, 1)") {
  ModelBundle m = init_bundle(small_dims(), 9);
  for (Tensor* t : m.discriminator_params())
    for (double& v : t->values()) v *= 200.0;  // push the logits far into saturation
  std::mt19937_64 rng(6);
  Graph g;
  const Var d = forward_discriminator(m, g, g.constant(random_tensor(50, 4, rng, -5, 5)));
  for (double v : d.value().values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("SgdMomentum: lr 0, plain step, two-step recurrence") {
  Tensor p({1, 3}, {1.0, -2.0, 0.5}, true);
  const std::vector<double> g1{0.3, -0.1, 2.0};
  const std::vector<double> g2{-0.7, 0.4, 1.0};
  auto set_grad = [&](const std::vector<double>& g) {
    for (std::size_t i = 0; i < 3; ++i) p.grad()[i] = g[i];
  };

  {
    SgdMomentum opt({&p}, 0.0, 0.9);
    set_grad(g1);
    opt.step();
    CHECK(p.values()[0] == 1.0);
    CHECK(p.values()[1] == -2.0);
    CHECK(p.values()[2] == 0.5);
    for (double v : p.grad()) CHECK(v == 0.0);
  }
  {
    Tensor q({1, 3}, {1.0, -2.0, 0.5}, true);
    SgdMomentum opt({&q}, 0.1, 0.0);
    for (std::size_t i = 0; i < 3; ++i) q.grad()[i] = g1[i];
    opt.step(false);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(q.values()[i] == p.values()[i] - 0.1 * g1[i]);
      CHECK(q.grad()[i] == g1[i]);  // not zeroed
    }
  }
  {
    const double lr = 0.05, mu = 0.9;
    const std::vector<double> theta0(p.values().begin(), p.values().end());
    SgdMomentum opt({&p}, lr, mu);
    set_grad(g1);
    opt.step();
    set_grad(g2);
    opt.step();
    for (std::size_t i = 0; i < 3; ++i) {
      const double v1 = g1[i];
      const double t1 = theta0[i] - lr * v1;
      const double v2 = mu * v1 + g2[i];
      const double t2 = t1 - lr * v2;
      CHECK(p.values()[i] == t2);
    }
  }
  CHECK_THROWS_AS(SgdMomentum({&p}, 0.1, 1.0), ConfigError);
}

TEST_CASE("freeze_classifier: optimizer never moves C") {
  ModelBundle m = init_bundle(small_dims(), 10);
  m.freeze_classifier();
  const std::uint64_t before = parameter_hash(m.classifier_params());
  SgdMomentum opt(m.all_params(), 0.1, 0.9);
  std::mt19937_64 rng(11);
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  for (int it = 0; it < 5; ++it) {
    Graph g;
    const Var logits = forward_classifier(m, g, forward_features(m, g, g.constant(random_tensor(4, 3, rng))));
    g.backward(cross_entropy(logits, labels).mean);
    opt.step();
  }
  CHECK(parameter_hash(m.classifier_params()) == before);
}

TEST_CASE("F -> C -> cross-entropy chain matches finite differences") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    ModelBundle m = init_bundle(small_dims(), 100 + trial);
    const Tensor x = random_tensor(6, 3, rng);
    const std::vector<std::size_t> labels{0, 1, 2, 2, 1, 0};
    std::vector<Tensor*> ptrs = m.feature_params();
    for (Tensor* t : m.classifier_params()) ptrs.push_back(t);
    std::vector<Tensor> params;
    for (Tensor* t : ptrs) params.push_back(*t);
    auto f = [&](Graph& g, const std::vector<Var>& v) {
      Var h = g.constant(x);
      h = relu(add_row_broadcast(matmul(h, v[0]), v[1]));
      h = relu(add_row_broadcast(matmul(h, v[2]), v[3]));
      const Var logits = add_row_broadcast(matmul(h, v[4]), v[5]);
      return cross_entropy(logits, labels).mean;
    };
    const auto res = check_gradients(f, params);
    CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);

    // The bundle's own forward gives the same analytic gradient.
    m.zero_grad();
    Graph g;
    g.backward(cross_entropy(forward_classifier(m, g, forward_features(m, g, g.constant(x))), labels).mean);
    for (std::size_t k = 0; k < ptrs.size(); ++k)
      for (std::size_t i = 0; i < ptrs[k]->size(); ++i) CHECK(ptrs[k]->grad()[i] == params[k].grad()[i]);
  }
}

TEST_CASE("ranking loss gradient reaches F through the predictor") {
  ModelBundle m = init_bundle(small_dims(), 21);
  std::mt19937_64 rng(22);
  const Tensor x = random_tensor(4, 3, rng);
  const std::vector<double> true_losses{2.0, 0.1, 0.4, 1.5};
  const std::vector<RankingPair> pairs{{0, 1}, {2, 3}};
  // Zero biases put dead-feature rows exactly on the ReLU kink of P.
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (Tensor* t : m.all_params())
    if (t->rows() == 1) for (double& v : t->values()) v = u(rng);
  std::vector<Tensor*> ptrs = m.feature_params();
  for (Tensor* t : m.predictor_params()) ptrs.push_back(t);
  std::vector<Tensor> params;
  for (Tensor* t : ptrs) params.push_back(*t);
  auto f = [&](Graph& g, const std::vector<Var>& v) {
    Var h = g.constant(x);
    h = relu(add_row_broadcast(matmul(h, v[0]), v[1]));
    h = relu(add_row_broadcast(matmul(h, v[2]), v[3]));
    Var p = relu(add_row_broadcast(matmul(h, v[4]), v[5]));
    p = add_row_broadcast(matmul(p, v[6]), v[7]);
    return margin_ranking_loss(p, true_losses, pairs, 1.0);
  };
  const auto res = check_gradients(f, params);
  CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
  double f_norm = 0.0;
  for (std::size_t k = 0; k < 4; ++k)
    for (double v : params[k].grad()) f_norm += v * v;
  CHECK(f_norm > 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelBundle m = init_bundle(small_dims(), 30);
  m.freeze_classifier();
  const auto path = std::filesystem::temp_directory_path() / "lossada_test_nets.ckpt";
  save_checkpoint(m, path);
  const ModelBundle back = load_checkpoint(path);
  CHECK(back.dims.hidden == m.dims.hidden);
  CHECK(back.classifier_frozen);
  CHECK(parameter_hash(back.all_params()) == parameter_hash(m.all_params()));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}
