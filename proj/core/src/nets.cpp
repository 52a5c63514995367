#include "lossada/nets.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace lossada {

namespace {

constexpr double kProbClamp = 1e-12;

void init_linear(Linear& l, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(l.in_dim()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : l.weight.values()) w = dist(rng);
  for (double& b : l.bias.values()) b = 0.0;
}

Mlp make_mlp(std::initializer_list<std::size_t> widths, bool relu_output) {
  Mlp m;
  m.relu_output = relu_output;
  const std::vector<std::size_t> w(widths);
  for (std::size_t i = 0; i + 1 < w.size(); ++i) m.layers.emplace_back(w[i], w[i + 1]);
  return m;
}

void append(std::vector<Tensor*>& out, Linear& l) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}

void append(std::vector<Tensor*>& out, Mlp& m) {
  for (Linear& l : m.layers) append(out, l);
}

void append_names(std::vector<std::string>& out, const std::string& prefix, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(prefix + "." + std::to_string(i) + ".weight");
    out.push_back(prefix + "." + std::to_string(i) + ".bias");
  }
}

}  // namespace

void NetDims::validate() const {
  const std::pair<const char*, std::size_t> fields[] = {
      {"input_dim", input_dim},         {"hidden", hidden},
      {"feature_dim", feature_dim},     {"predictor_dim", predictor_dim},
      {"discriminator_hidden", discriminator_hidden}, {"num_classes", num_classes}};
  for (const auto& [name, value] : fields) {
    if (value == 0) throw ConfigError(name, "must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes", "must be at least 2");
}

Linear::Linear(std::size_t in, std::size_t out)
    : weight({in, out}, /*requires_grad=*/true), bias({1, out}, /*requires_grad=*/true) {}

Var Linear::forward(Graph& g, Var x) {
  if (x.shape().cols != in_dim()) {
    throw DimensionError("linear layer expects " + std::to_string(in_dim()) + " inputs, got " +
                         std::to_string(x.shape().cols));
  }
  return add_row_broadcast(matmul(x, g.leaf(weight)), g.leaf(bias));
}

Var Mlp::forward(Graph& g, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(g, x);
    if (i + 1 < layers.size() || relu_output) x = relu(x);
  }
  return x;
}

std::vector<Tensor*> ModelBundle::feature_params() {
  std::vector<Tensor*> out;
  append(out, feature);
  return out;
}

std::vector<Tensor*> ModelBundle::classifier_params() {
  std::vector<Tensor*> out;
  append(out, classifier);
  return out;
}

std::vector<Tensor*> ModelBundle::predictor_params() {
  std::vector<Tensor*> out;
  append(out, loss_predictor);
  return out;
}

std::vector<Tensor*> ModelBundle::discriminator_params() {
  std::vector<Tensor*> out;
  append(out, discriminator);
  return out;
}

std::vector<Tensor*> ModelBundle::all_params() {
  std::vector<Tensor*> out;
  append(out, feature);
  append(out, classifier);
  append(out, loss_predictor);
  append(out, discriminator);
  return out;
}

std::vector<const Tensor*> ModelBundle::all_params() const {
  std::vector<Tensor*> mut = const_cast<ModelBundle*>(this)->all_params();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> ModelBundle::param_names() const {
  std::vector<std::string> out;
  append_names(out, "F", feature.layers.size());
  append_names(out, "C", 1);
  append_names(out, "P", loss_predictor.layers.size());
  append_names(out, "D", discriminator.layers.size());
  return out;
}

void ModelBundle::freeze_classifier() {
  classifier.weight.set_requires_grad(false);
  classifier.bias.set_requires_grad(false);
  classifier_frozen = true;
}

void ModelBundle::zero_grad() {
  for (Tensor* t : all_params()) t->zero_grad();
}

ModelBundle init_bundle(const NetDims& dims, std::uint64_t seed) {
  dims.validate();
  ModelBundle m;
  m.dims = dims;
  m.feature = make_mlp({dims.input_dim, dims.hidden, dims.feature_dim}, /*relu_output=*/true);
  m.classifier = Linear(dims.feature_dim, dims.num_classes);
  m.loss_predictor = make_mlp({dims.feature_dim, dims.predictor_dim, 1}, false);
  m.discriminator = make_mlp({dims.feature_dim, dims.discriminator_hidden, 1}, false);

  std::mt19937_64 rng(seed);
  for (Linear& l : m.feature.layers) init_linear(l, rng);
  init_linear(m.classifier, rng);
  for (Linear& l : m.loss_predictor.layers) init_linear(l, rng);
  for (Linear& l : m.discriminator.layers) init_linear(l, rng);
  return m;
}

Var forward_features(ModelBundle& m, Graph& g, Var x) { return m.feature.forward(g, x); }

Var forward_classifier(ModelBundle& m, Graph& g, Var features) {
  return m.classifier.forward(g, features);
}

Var forward_loss_predictor(ModelBundle& m, Graph& g, Var features) {
  return m.loss_predictor.forward(g, features);
}

Var forward_discriminator(ModelBundle& m, Graph& g, Var features) {
  return clamp(sigmoid(m.discriminator.forward(g, features)), kProbClamp, 1.0 - kProbClamp);
}

Inference infer(ModelBundle& m, const Tensor& x) {
  Graph g;
  const Var f = forward_features(m, g, g.constant(x));
  const Var logits = forward_classifier(m, g, f);
  const Var loss = forward_loss_predictor(m, g, f);
  Inference out;
  out.features = f.value();
  out.logits = logits.value();
  out.probs = softmax_rows(out.logits);
  out.predicted_loss = loss.value();
  for (Tensor* t : {&out.features, &out.logits, &out.predicted_loss}) t->set_requires_grad(false);
  return out;
}

SgdMomentum::SgdMomentum(std::vector<Tensor*> params, double learning_rate, double momentum)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate", "must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  velocity_.reserve(params_.size());
  for (const Tensor* p : params_) velocity_.emplace_back(p->size(), 0.0);
}

void SgdMomentum::step(bool zero_after) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    if (!p.requires_grad()) continue;
    std::vector<double>& v = velocity_[k];
    std::span<double> theta = p.values();
    std::span<const double> grad = p.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i];
      theta[i] -= lr_ * v[i];
    }
    if (zero_after) p.zero_grad();
  }
}

void SgdMomentum::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

std::uint64_t parameter_hash(const std::vector<Tensor*>& params) {
  return parameter_hash(std::vector<const Tensor*>(params.begin(), params.end()));
}

std::uint64_t parameter_hash(const std::vector<const Tensor*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor* p : params) {
    for (double v : p->values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

void save_checkpoint(const ModelBundle& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  const NetDims& d = m.dims;
  out << "lossada-checkpoint 1\n";
  out << "dims " << d.input_dim << ' ' << d.hidden << ' ' << d.feature_dim << ' '
      << d.predictor_dim << ' ' << d.discriminator_hidden << ' ' << d.num_classes << '\n';
  out << "frozen " << (m.classifier_frozen ? 1 : 0) << '\n';
  const std::vector<const Tensor*> params = m.all_params();
  const std::vector<std::string> names = m.param_names();
  char buf[64];
  for (std::size_t k = 0; k < params.size(); ++k) {
    out << "param " << names[k] << ' ' << params[k]->rows() << ' ' << params[k]->cols() << '\n';
    for (double v : params[k]->values()) {
      std::snprintf(buf, sizeof(buf), "%a\n", v);
      out << buf;
    }
  }
  out << "end\n";
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != "lossada-checkpoint") throw Error("not a checkpoint file: " + path.string());
  if (version != 1) throw Error("unsupported checkpoint version " + std::to_string(version));

  NetDims d;
  in >> tag;
  if (tag != "dims") throw Error("checkpoint: expected dims line");
  in >> d.input_dim >> d.hidden >> d.feature_dim >> d.predictor_dim >> d.discriminator_hidden >>
      d.num_classes;
  int frozen = 0;
  in >> tag >> frozen;
  if (tag != "frozen") throw Error("checkpoint: expected frozen line");

  ModelBundle m = init_bundle(d, 0);
  const std::vector<Tensor*> params = m.all_params();
  const std::vector<std::string> names = m.param_names();
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    in >> tag >> name >> rows >> cols;
    if (tag != "param" || name != names[k]) {
      throw Error("checkpoint: expected parameter " + names[k] + ", found " + name);
    }
    if (rows != params[k]->rows() || cols != params[k]->cols()) {
      throw Error("checkpoint: shape mismatch for " + name);
    }
    for (double& v : params[k]->values()) {
      std::string token;
      in >> token;
      v = std::strtod(token.c_str(), nullptr);
    }
  }
  in >> tag;
  if (tag != "end" || !in) throw Error("checkpoint truncated: " + path.string());
  if (frozen != 0) m.freeze_classifier();
  return m;
}

}  // namespace lossada
