#include "lossada/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace lossada {

namespace {

std::string shape_str(const Shape& s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

bool is_scalar(const Shape& s) { return s.rows == 1 && s.cols == 1; }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(shape), values_(shape.numel(), 0.0), requires_grad_(requires_grad) {
  if (requires_grad_) grad_.assign(values_.size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(shape), values_(std::move(values)), requires_grad_(requires_grad) {
  if (values_.size() != shape_.numel()) {
    throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                         std::to_string(values_.size()) + " values");
  }
  if (requires_grad_) grad_.assign(values_.size(), 0.0);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1, 1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n, 1}, std::move(values));
}

double Tensor::item() const {
  if (!is_scalar(shape_)) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
  return values_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on && grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  if (!on) grad_.clear();
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::leaf(Tensor& t) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.external = &t;
  n.requires_grad = t.requires_grad();
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor t) {
  t.set_requires_grad(false);
  Node n;
  n.kind = OpKind::kConstant;
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::push(OpKind kind, std::vector<std::size_t> inputs, Tensor out,
                std::vector<std::size_t> indices, double param, double param2) {
  Node n;
  n.kind = kind;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  n.owned = std::move(out);
  n.indices = std::move(indices);
  n.param = param;
  n.param2 = param2;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external != nullptr ? *n.external : n.owned;
}

Tensor& Graph::node_value(std::size_t id) {
  Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.owned;
}

std::span<double> Graph::grad_of(std::size_t id) { return nodes_[id].grad; }

std::span<const double> Graph::node_grad(std::size_t id) const { return nodes_.at(id).grad; }

void Graph::backward(Var root) {
  if (root.graph_ != this) throw ContractError("backward root belongs to another graph");
  if (!is_scalar(value(root.id_).shape())) {
    throw ContractError("backward root must be 1x1, got " + shape_str(value(root.id_).shape()));
  }
  visit_order_.clear();
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    nodes_[id].grad.assign(nodes_[id].requires_grad ? value(id).size() : 0, 0.0);
  }
  if (!nodes_[root.id_].requires_grad) return;
  grad_of(root.id_)[0] += 1.0;
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    visit_order_.push_back(id);
    if (nodes_[id].requires_grad) backprop_node(id);
  }
  // Leaves receive their total in one addition, so repeated passes add
  // exactly the same amount.
  for (Node& n : nodes_) {
    if (n.external == nullptr || !n.requires_grad) continue;
    std::span<double> dst = n.external->grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

void Graph::backprop_node(std::size_t id) {
  Node& node = nodes_[id];
  if (node.inputs.empty()) return;
  const std::span<const double> g = node.grad;
  const Tensor& out = node.owned;

  auto input_grad = [&](std::size_t k) -> std::span<double> {
    const std::size_t in = node.inputs[k];
    if (!nodes_[in].requires_grad) return {};
    return grad_of(in);
  };
  // Accumulates `value` into input k at flat index i, reducing when the input
  // was broadcast from a 1x1 scalar.
  auto acc = [&](std::size_t k, std::size_t i, double value) {
    std::span<double> ig = input_grad(k);
    if (ig.empty()) return;
    if (ig.size() == 1) {
      ig[0] += value;
    } else {
      ig[i] += value;
    }
  };

  switch (node.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      return;
    case OpKind::kMatMul: {
      const Tensor& a = value(node.inputs[0]);
      const Tensor& b = value(node.inputs[1]);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      std::span<double> ga = input_grad(0);
      std::span<double> gb = input_grad(1);
      const double* ap = a.values().data();
      const double* bp = b.values().data();
      const double* gp = g.data();
      if (!ga.empty()) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double* grow = gp + i * n;
            const double* brow = bp + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
      }
      if (!gb.empty()) {
        double* gbp = gb.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ap[i * k + p];
            if (av == 0.0) continue;
            const double* grow = gp + i * n;
            double* gbrow = gbp + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
      }
      return;
    }
    case OpKind::kAdd:
      for (std::size_t i = 0; i < g.size(); ++i) {
        acc(0, i, g[i]);
        acc(1, i, g[i]);
      }
      return;
    case OpKind::kSub:
      for (std::size_t i = 0; i < g.size(); ++i) {
        acc(0, i, g[i]);
        acc(1, i, -g[i]);
      }
      return;
    case OpKind::kMul: {
      const Tensor& a = value(node.inputs[0]);
      const Tensor& b = value(node.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double av = a.size() == 1 ? a.values()[0] : a.values()[i];
        const double bv = b.size() == 1 ? b.values()[0] : b.values()[i];
        acc(0, i, g[i] * bv);
        acc(1, i, g[i] * av);
      }
      return;
    }
    case OpKind::kNeg:
      for (std::size_t i = 0; i < g.size(); ++i) acc(0, i, -g[i]);
      return;
    case OpKind::kScale:
      for (std::size_t i = 0; i < g.size(); ++i) acc(0, i, g[i] * node.param);
      return;
    case OpKind::kAddScalar:
      for (std::size_t i = 0; i < g.size(); ++i) acc(0, i, g[i]);
      return;
    case OpKind::kRelu: {
      const Tensor& a = value(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.values()[i] > 0.0) acc(0, i, g[i]);
      return;
    }
    case OpKind::kSigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = out.values()[i];
        acc(0, i, g[i] * s * (1.0 - s));
      }
      return;
    case OpKind::kLog: {
      const Tensor& a = value(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.values()[i] >= kLogFloor) acc(0, i, g[i] / a.values()[i]);
      return;
    }
    case OpKind::kExp:
      for (std::size_t i = 0; i < g.size(); ++i) acc(0, i, g[i] * out.values()[i]);
      return;
    case OpKind::kClamp: {
      const Tensor& a = value(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = a.values()[i];
        if (v >= node.param && v <= node.param2) acc(0, i, g[i]);
      }
      return;
    }
    case OpKind::kAddRowBroadcast: {
      const std::size_t n = out.cols();
      std::span<double> gx = input_grad(0);
      std::span<double> gr = input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!gx.empty()) gx[i] += g[i];
        if (!gr.empty()) gr[i % n] += g[i];
      }
      return;
    }
    case OpKind::kSoftmaxRows: {
      std::span<double> gx = input_grad(0);
      if (gx.empty()) return;
      const std::size_t m = out.rows(), n = out.cols();
      for (std::size_t r = 0; r < m; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * out.values()[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          const double s = out.values()[r * n + c];
          gx[r * n + c] += s * (g[r * n + c] - dot);
        }
      }
      return;
    }
    case OpKind::kLogSoftmaxRows: {
      std::span<double> gx = input_grad(0);
      if (gx.empty()) return;
      const std::size_t m = out.rows(), n = out.cols();
      for (std::size_t r = 0; r < m; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < n; ++c) gsum += g[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          gx[r * n + c] += g[r * n + c] - std::exp(out.values()[r * n + c]) * gsum;
        }
      }
      return;
    }
    case OpKind::kPickRows: {
      std::span<double> gx = input_grad(0);
      if (gx.empty()) return;
      const std::size_t n = value(node.inputs[0]).cols();
      for (std::size_t r = 0; r < node.indices.size(); ++r) gx[r * n + node.indices[r]] += g[r];
      return;
    }
    case OpKind::kGatherRows: {
      std::span<double> gx = input_grad(0);
      if (gx.empty()) return;
      const std::size_t n = out.cols();
      for (std::size_t r = 0; r < node.indices.size(); ++r)
        for (std::size_t c = 0; c < n; ++c) gx[node.indices[r] * n + c] += g[r * n + c];
      return;
    }
    case OpKind::kMeanRows: {
      std::span<double> gx = input_grad(0);
      if (gx.empty()) return;
      const Tensor& x = value(node.inputs[0]);
      const std::size_t m = x.rows(), n = x.cols();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c] * inv;
      return;
    }
    case OpKind::kSum: {
      std::span<double> gx = input_grad(0);
      for (double& v : gx) v += g[0];
      return;
    }
    case OpKind::kMean: {
      std::span<double> gx = input_grad(0);
      const double inv = 1.0 / static_cast<double>(gx.size() == 0 ? 1 : gx.size());
      for (double& v : gx) v += g[0] * inv;
      return;
    }
    case OpKind::kMax: {
      std::span<double> gx = input_grad(0);
      if (!gx.empty()) gx[node.indices[0]] += g[0];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Operations

struct GraphAccess {
  static Graph& graph_of(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
    return a.graph();
  }
  static Var push(Graph& g, OpKind kind, std::vector<std::size_t> inputs, Tensor out,
                  std::vector<std::size_t> indices = {}, double p = 0.0, double p2 = 0.0) {
    return g.push(kind, std::move(inputs), std::move(out), std::move(indices), p, p2);
  }
};

namespace {

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_scalar(a)) return b;
  if (is_scalar(b)) return a;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not compatible");
}

template <typename F>
Var binary(const char* name, OpKind kind, Var a, Var b, F f) {
  Graph& g = GraphAccess::graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape s = broadcast_shape(name, av.shape(), bv.shape());
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av.size() == 1 ? av.values()[0] : av.values()[i];
    const double y = bv.size() == 1 ? bv.values()[0] : bv.values()[i];
    out.values()[i] = f(x, y);
  }
  return GraphAccess::push(g, kind, {a.id(), b.id()}, std::move(out));
}

template <typename F>
Var unary(OpKind kind, Var a, F f, double p = 0.0, double p2 = 0.0) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = f(av.values()[i]);
  return GraphAccess::push(a.graph(), kind, {a.id()}, std::move(out), {}, p, p2);
}

void require_nonempty(const char* op, const Tensor& t) {
  if (t.empty()) throw NumericDomainError(std::string(op) + " of an empty tensor");
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = GraphAccess::graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + shape_str(av.shape()) + " * " +
                         shape_str(bv.shape()) + ")");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  const double* ap = av.values().data();
  const double* bp = bv.values().data();
  double* op = out.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = ap[i * k + p];
      if (x == 0.0) continue;  // ReLU inputs are often sparse
      const double* brow = bp + p * n;
      double* orow = op + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  return GraphAccess::push(g, OpKind::kMatMul, {a.id(), b.id()}, std::move(out));
}

Var add(Var a, Var b) {
  return binary("add", OpKind::kAdd, a, b, [](double x, double y) { return x + y; });
}
Var sub(Var a, Var b) {
  return binary("sub", OpKind::kSub, a, b, [](double x, double y) { return x - y; });
}
Var mul(Var a, Var b) {
  return binary("mul", OpKind::kMul, a, b, [](double x, double y) { return x * y; });
}
Var neg(Var a) {
  return unary(OpKind::kNeg, a, [](double x) { return -x; });
}
Var scale(Var a, double factor) {
  return unary(OpKind::kScale, a, [factor](double x) { return factor * x; }, factor);
}
Var add_scalar(Var a, double c) {
  return unary(OpKind::kAddScalar, a, [c](double x) { return x + c; }, c);
}
Var relu(Var a) {
  return unary(OpKind::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}
Var sigmoid(Var a) { return unary(OpKind::kSigmoid, a, stable_sigmoid); }

Var log(Var a) {
  for (double v : a.value().values()) {
    if (std::isnan(v)) throw NumericDomainError("log of NaN");
  }
  return unary(OpKind::kLog, a, [](double x) { return std::log(std::max(x, kLogFloor)); });
}

Var exp(Var a) {
  return unary(OpKind::kExp, a, [](double x) { return std::exp(x); });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary(OpKind::kClamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); }, lo, hi);
}

Var add_row_broadcast(Var x, Var row) {
  Graph& g = GraphAccess::graph_of(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("add_row_broadcast: row " + shape_str(rv.shape()) + " vs " +
                         shape_str(xv.shape()));
  }
  Tensor out(xv.shape());
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = xv.values()[i] + rv.values()[i % n];
  return GraphAccess::push(g, OpKind::kAddRowBroadcast, {x.id(), row.id()}, std::move(out));
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = x.values().data() + r * n;
    double* o = out.values().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= z;
  }
  return out;
}

Var softmax_rows(Var x) {
  require_nonempty("softmax_rows", x.value());
  return GraphAccess::push(x.graph(), OpKind::kSoftmaxRows, {x.id()}, softmax_rows(x.value()));
}

Var log_softmax_rows(Var x) {
  const Tensor& xv = x.value();
  require_nonempty("log_softmax_rows", xv);
  Tensor out(xv.shape());
  const std::size_t m = xv.rows(), n = xv.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = xv.values().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out.values()[r * n + c] = in[c] - lse;
  }
  return GraphAccess::push(x.graph(), OpKind::kLogSoftmaxRows, {x.id()}, std::move(out));
}

Var pick_rows(Var x, std::span<const std::size_t> cols) {
  const Tensor& xv = x.value();
  if (cols.size() != xv.rows()) {
    throw DimensionError("pick_rows: " + std::to_string(cols.size()) + " indices for " +
                         std::to_string(xv.rows()) + " rows");
  }
  Tensor out({xv.rows(), 1});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= xv.cols()) throw NumericDomainError("pick_rows: column index out of range");
    out.values()[r] = xv.at(r, cols[r]);
  }
  return GraphAccess::push(x.graph(), OpKind::kPickRows, {x.id()}, std::move(out),
                           std::vector<std::size_t>(cols.begin(), cols.end()));
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(xv.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n,
                out.values().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return GraphAccess::push(x.graph(), OpKind::kGatherRows, {x.id()}, std::move(out),
                           std::vector<std::size_t>(rows.begin(), rows.end()));
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  require_nonempty("mean_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({1, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.values()[c] += xv.values()[r * n + c];
  for (double& v : out.values()) v /= static_cast<double>(m);
  return GraphAccess::push(x.graph(), OpKind::kMeanRows, {x.id()}, std::move(out));
}

Var sum(Var a) {
  require_nonempty("sum", a.value());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return GraphAccess::push(a.graph(), OpKind::kSum, {a.id()}, Tensor::scalar(s));
}

Var mean(Var a) {
  require_nonempty("mean", a.value());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  s /= static_cast<double>(a.value().size());
  return GraphAccess::push(a.graph(), OpKind::kMean, {a.id()}, Tensor::scalar(s));
}

Var max(Var a) {
  const Tensor& av = a.value();
  require_nonempty("max", av);
  const auto it = std::max_element(av.values().begin(), av.values().end());
  const auto idx = static_cast<std::size_t>(it - av.values().begin());
  return GraphAccess::push(a.graph(), OpKind::kMax, {a.id()}, Tensor::scalar(*it), {idx});
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  require_nonempty("argmax_rows", x);
  std::vector<std::size_t> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < x.cols(); ++c)
      if (x.at(r, c) > x.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

}  // namespace lossada
