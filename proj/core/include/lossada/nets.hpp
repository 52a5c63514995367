#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lossada/diffcore.hpp"

namespace lossada {

/// Layer widths of the four sub-networks.
struct NetDims {
  std::size_t input_dim = 2;
  std::size_t hidden = 64;
  std::size_t feature_dim = 32;
  std::size_t predictor_dim = 32;
  std::size_t discriminator_hidden = 64;
  std::size_t num_classes = 2;

  /// Throws ConfigError naming the first non-positive width.
  void validate() const;
};

/// Affine map x W + b with W [in x out] and b [1 x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  Var forward(Graph& g, Var x);
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// Stack of Linear layers with ReLU between them. `relu_output` also applies
/// ReLU after the last layer.
struct Mlp {
  std::vector<Linear> layers;
  bool relu_output = false;

  Var forward(Graph& g, Var x);
};

/// The four sub-networks: feature extractor F, classifier C, loss predictor P,
/// domain discriminator D.
struct ModelBundle {
  NetDims dims;
  Mlp feature;         // input -> hidden -> feature, ReLU throughout
  Linear classifier;   // feature -> class logits
  Mlp loss_predictor;  // feature -> predictor_dim -> 1
  Mlp discriminator;   // feature -> hidden -> 1, sigmoid applied in forward
  bool classifier_frozen = false;

  std::vector<Tensor*> feature_params();
  std::vector<Tensor*> classifier_params();
  std::vector<Tensor*> predictor_params();
  std::vector<Tensor*> discriminator_params();
  std::vector<Tensor*> all_params();
  std::vector<const Tensor*> all_params() const;
  /// Parameter names in all_params() order, e.g. "F.0.weight".
  std::vector<std::string> param_names() const;

  /// Stops gradient flow into C and marks it frozen. Irreversible for the run.
  void freeze_classifier();
  void zero_grad();
};

/// Builds a bundle with He-uniform weights (variance 2 / fan_in) and zero
/// biases. Same seed, same parameters.
ModelBundle init_bundle(const NetDims& dims, std::uint64_t seed);

Var forward_features(ModelBundle& m, Graph& g, Var x);
/// Class logits.
Var forward_classifier(ModelBundle& m, Graph& g, Var features);
/// Predicted loss per sample, [m x 1]. Gradient reaches F through `features`.
Var forward_loss_predictor(ModelBundle& m, Graph& g, Var features);
/// Probability of the source domain, clamped into [1e-12, 1 - 1e-12].
Var forward_discriminator(ModelBundle& m, Graph& g, Var features);

/// Forward outputs of every head for a batch, without gradient bookkeeping.
struct Inference {
  Tensor features;        // n x feature_dim
  Tensor logits;          // n x num_classes
  Tensor probs;           // softmax of logits
  Tensor predicted_loss;  // n x 1
};
Inference infer(ModelBundle& m, const Tensor& x);

/// Plain SGD with momentum over a fixed parameter group:
///   v <- momentum * v + grad;  theta <- theta - lr * v
class SgdMomentum {
 public:
  SgdMomentum() = default;
  SgdMomentum(std::vector<Tensor*> params, double learning_rate, double momentum);

  void step(bool zero_after = true);
  void zero_grad();
  double learning_rate() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_ = 0.01;
  double momentum_ = 0.9;
};

/// FNV-1a over the raw bytes of the given tensors' values.
std::uint64_t parameter_hash(const std::vector<Tensor*>& params);
std::uint64_t parameter_hash(const std::vector<const Tensor*>& params);

// Checkpoint format, text, version 1:
//   lossada-checkpoint 1
//   dims <input> <hidden> <feature> <predictor> <disc_hidden> <classes>
//   frozen <0|1>
//   param <name> <rows> <cols>
//   <rows*cols hex-float values, one per line>
//   ...
//   end
void save_checkpoint(const ModelBundle& m, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace lossada
