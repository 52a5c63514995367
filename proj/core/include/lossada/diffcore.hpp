#pragma once

// Define-by-run reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Graph records every operation applied to its Vars in construction order.
// Parameters live outside the graph as Tensors and enter it through
// Graph::leaf(); backward() accumulates into their grad buffers. A new Graph is
// built for every forward pass.

#include <cstddef>
#include <span>
#include <vector>

#include "lossada/error.hpp"

namespace lossada {

/// Values below this are clamped before taking a logarithm.
inline constexpr double kLogFloor = 1e-12;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t numel() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major matrix with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values);
  static Tensor column(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * shape_.cols, shape_.cols);
  }

  /// Value of a 1x1 tensor.
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);
  void zero_grad();

 private:
  Shape shape_{};
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,
  kAddScalar,
  kRelu,
  kSigmoid,
  kLog,
  kExp,
  kClamp,
  kAddRowBroadcast,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kPickRows,
  kGatherRows,
  kMeanRows,
  kSum,
  kMean,
  kMax,
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
class Var {
 public:
  Var() = default;
  std::size_t id() const noexcept { return id_; }
  Graph& graph() const { return *graph_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Enters an externally owned tensor. If it requires grad, backward()
  /// accumulates into its grad buffer. The tensor must outlive the graph.
  Var leaf(Tensor& t);
  /// Enters a value that never receives gradient.
  Var constant(Tensor t);

  /// Accumulates d(root)/d(leaf) into every grad-requiring leaf. Node visits
  /// follow exact reverse construction order. Intermediate gradients are reset
  /// on entry, so repeated calls add the same amount to leaves each time.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  /// Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& last_backward_order() const noexcept { return visit_order_; }

  const Tensor& value(std::size_t id) const;
  /// Gradient of the last backward root with respect to node `id`.
  std::span<const double> node_grad(std::size_t id) const;

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<std::size_t> inputs;
    Tensor owned;
    Tensor* external = nullptr;
    std::vector<double> grad;
    std::vector<std::size_t> indices;
    double param = 0.0;
    double param2 = 0.0;
    bool requires_grad = false;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor out,
           std::vector<std::size_t> indices = {}, double param = 0.0, double param2 = 0.0);
  Tensor& node_value(std::size_t id);
  std::span<double> grad_of(std::size_t id);
  void backprop_node(std::size_t id);

  friend struct GraphAccess;

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

/// Matrix product [m x k] * [k x n].
Var matmul(Var a, Var b);

// Elementwise arithmetic. Shapes must match, or one operand must be 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);

Var relu(Var a);
/// Logistic function, evaluated without overflow for any finite input.
Var sigmoid(Var a);
/// Natural log of max(x, kLogFloor); zero gradient inside the clamped region.
/// Throws NumericDomainError on NaN input.
Var log(Var a);
Var exp(Var a);
/// Clamps into [lo, hi]; gradient passes only where the input is inside.
Var clamp(Var a, double lo, double hi);

/// x[m x n] + row[1 x n] added to every row.
Var add_row_broadcast(Var x, Var row);

/// Row-wise softmax with max subtraction.
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);

/// out[i] = x[i, cols[i]]; result is m x 1.
Var pick_rows(Var x, std::span<const std::size_t> cols);
/// Selects rows in the given order; result is k x n.
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// Column means: [m x n] -> [1 x n].
Var mean_rows(Var x);

// Reductions to a 1x1 tensor. Empty input throws NumericDomainError.
Var sum(Var a);
Var mean(Var a);
Var max(Var a);

/// Index of the largest entry per row, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& x);

/// Row-wise softmax on plain values (no graph).
Tensor softmax_rows(const Tensor& x);

}  // namespace lossada
