#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "lossada/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace lossada;
using lossada::testing::random_tensor;

namespace {

// F and C wired as identities on a 2-D positive input: argmax of the input is
// the prediction.
ModelBundle identity_model(std::size_t classes) {
  NetDims d;
  d.input_dim = classes;
  d.hidden = classes;
  d.feature_dim = classes;
  d.num_classes = classes;
  ModelBundle m = init_bundle(d, 1);
  auto eye = [&](Tensor& w) {
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
  };
  for (Linear& l : m.feature.layers) eye(l.weight);
  eye(m.classifier.weight);
  return m;
}

Dataset argmax_labeled(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = static_cast<std::int64_t>(i);
    s.features.resize(classes);
    for (double& v : s.features) v = u(rng);
    s.label = static_cast<std::size_t>(std::max_element(s.features.begin(), s.features.end()) - s.features.begin());
    s.domain = Domain::kTargetLabeled;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("target_accuracy: perfect model, coin flip labels, recount") {
  std::mt19937_64 rng(1);
  ModelBundle m = identity_model(3);
  Dataset data = argmax_labeled(500, 3, rng);
  CHECK(target_accuracy(m, data) == 1.0);

  // Binary labels drawn independently of the model: about one half.
  ModelBundle bin = identity_model(2);
  Dataset coin = argmax_labeled(20000, 2, rng);
  std::bernoulli_distribution flip(0.5);
  for (Sample& s : coin) s.label = flip(rng) ? 1 : 0;
  CHECK(std::abs(target_accuracy(bin, coin) - 0.5) < 0.02);

  // Recount against a generic model.
  ModelBundle g = init_bundle(NetDims{3, 8, 4, 4, 4, 3}, 5);
  std::uniform_int_distribution<std::size_t> cls(0, 2);
  for (Sample& s : data) s.label = cls(rng);
  const Inference inf = infer(g, feature_matrix(data));
  std::size_t hits = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c)
      if (inf.logits.at(r, c) > inf.logits.at(r, best)) best = c;
    hits += best == *data[r].label;
  }
  CHECK(target_accuracy(g, data) == static_cast<double>(hits) / data.size());
  CHECK_THROWS_AS(target_accuracy(g, Dataset{}), ContractError);
}

TEST_CASE("pseudo_label_accuracy: identical, disjoint, recount, length mismatch") {
  const std::vector<std::size_t> a{0, 1, 2, 1}, b{1, 2, 0, 0};
  CHECK(pseudo_label_accuracy(a, a) == 1.0);
  CHECK(pseudo_label_accuracy(a, b) == 0.0);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> cls(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> p(97), t(97);
    std::size_t same = 0;
    for (std::size_t i = 0; i < 97; ++i) {
      p[i] = cls(rng);
      t[i] = cls(rng);
      same += p[i] == t[i];
    }
    CHECK(pseudo_label_accuracy(p, t) == static_cast<double>(same) / 97);
  }
  const std::vector<std::size_t> shorter{0, 1};
  CHECK_THROWS_AS(pseudo_label_accuracy(a, shorter), ContractError);
}

TEST_CASE("misprediction_split: perfect case, group sizes, brute force") {
  const std::vector<double> loss{0.9, 0.1, 0.5, 0.3};
  const std::vector<std::size_t> cls{0, 1, 1, 0};
  const std::vector<std::int64_t> ids{10, 11, 12, 13};
  const auto perfect = misprediction_split(loss, cls, cls, ids, 0.5);
  CHECK(perfect.high_rate == 0.0);
  CHECK(perfect.low_rate == 0.0);
  CHECK(perfect.high_group == std::vector<std::size_t>{0, 2});
  CHECK(perfect.low_group == std::vector<std::size_t>{3, 1});

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::size_t> c3(0, 2);
  for (std::size_t n : {2u, 3u, 10u, 51u, 200u}) {
    std::vector<double> l(n);
    std::vector<std::size_t> pred(n), truth(n);
    std::vector<std::int64_t> id(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = std::round(u(rng) * 20) / 20;  // force ties
      pred[i] = c3(rng);
      truth[i] = c3(rng);
      id[i] = static_cast<std::int64_t>(1000 - i);
    }
    const auto s = misprediction_split(l, pred, truth, id, 0.5);
    const std::size_t hs = s.high_group.size(), ls = s.low_group.size();
    CHECK(hs + ls == n);
    CHECK((hs > ls ? hs - ls : ls - hs) <= 1);
    std::set<std::size_t> all(s.high_group.begin(), s.high_group.end());
    all.insert(s.low_group.begin(), s.low_group.end());
    CHECK(all.size() == n);

    // Brute force: rank of each sample = count of samples strictly ahead of it.
    std::size_t wrong_hi = 0, wrong_lo = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (l[j] > l[i] || (l[j] == l[i] && id[j] < id[i])) ++ahead;
      const bool high = ahead < hs;
      CHECK(high == (std::find(s.high_group.begin(), s.high_group.end(), i) != s.high_group.end()));
      if (pred[i] != truth[i]) (high ? wrong_hi : wrong_lo)++;
    }
    CHECK(s.high_rate == static_cast<double>(wrong_hi) / hs);
    CHECK(s.low_rate == static_cast<double>(wrong_lo) / ls);
    CHECK(s.high_rate >= 0.0);
    CHECK(s.high_rate <= 1.0);
  }
  const std::vector<double> one{0.1};
  const std::vector<std::size_t> c1{0};
  const std::vector<std::int64_t> i1{0};
  CHECK_THROWS_AS(misprediction_split(one, c1, c1, i1, 0.5), ContractError);
  CHECK_THROWS_AS(misprediction_split(loss, cls, cls, ids, 1.0), ContractError);
}

TEST_CASE("diversity_proxies: degenerate cases and pairwise oracle") {
  const std::vector<std::size_t> l1{4};
  const auto single = diversity_proxies(Tensor({1, 3}, {1, 2, 3}), l1);
  CHECK(single.class_coverage == 1);
  CHECK(single.mean_pairwise_distance == 0.0);

  const std::vector<std::size_t> l2{0, 1};
  const auto same = diversity_proxies(Tensor({2, 2}, {0.3, 0.7, 0.3, 0.7}), l2);
  CHECK(same.mean_pairwise_distance == 0.0);
  CHECK(same.class_coverage == 2);

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> cls(0, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 5 + trial * 3;
    const Tensor f = random_tensor(n, 4, rng, -3, 3);
    std::vector<std::size_t> labels(n);
    for (auto& v : labels) v = cls(rng);
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double d2 = 0.0;
        for (std::size_t c = 0; c < 4; ++c) d2 += std::pow(f.at(i, c) - f.at(j, c), 2);
        sum += std::sqrt(d2);
        ++pairs;
      }
    const auto dp = diversity_proxies(f, labels);
    CHECK(std::abs(dp.mean_pairwise_distance - sum / pairs) <= 1e-9);
    CHECK(dp.class_coverage == std::set<std::size_t>(labels.begin(), labels.end()).size());

    // Coverage of nested prefixes never shrinks.
    std::size_t prev = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      const std::vector<std::size_t> prefix(labels.begin(), labels.begin() + k);
      std::vector<std::size_t> rows(k);
      std::iota(rows.begin(), rows.end(), 0);
      Tensor sub({k, 4});
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < 4; ++c) sub.at(r, c) = f.at(r, c);
      const std::size_t cov = diversity_proxies(sub, prefix).class_coverage;
      CHECK(cov >= prev);
      CHECK(cov <= 6);
      prev = cov;
    }
  }
  CHECK_THROWS_AS(diversity_proxies(Tensor({0, 3}), std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("entropy: nats, zero-safe") {
  const std::vector<double> u{0.25, 0.25, 0.25, 0.25};
  CHECK(std::abs(entropy(u) - std::log(4.0)) < 1e-15);
  const std::vector<double> oh{0, 1, 0};
  CHECK(entropy(oh) == 0.0);
}
