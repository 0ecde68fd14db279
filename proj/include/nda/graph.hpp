#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nda/errors.hpp"
#include "nda/tensor.hpp"

namespace nda {

using NodeId = int;

enum class Op {
  Param,
  Constant,
  Matmul,
  Add,
  AddBias,
  Relu,
  SoftmaxRows,
  Log,
  Sub,
  Mul,
  Square,
  Sum,
  Mean,
  Scale,
  Sqrt,
  ConcatRows,
  RowSelect,
};

/// Reverse-mode differentiation tape over dense tensors.
///
/// Operations evaluate eagerly as they are recorded, so node values are
/// available immediately; backward() replays the tape in reverse. A graph and
/// its tensors belong to one worker at a time; independent graphs are safe to
/// run concurrently.
class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    std::vector<double> grad;          // same length as value.data once backward ran
    double scalar = 0.0;               // Scale factor
    std::vector<std::size_t> rows;     // RowSelect indices
    const Tensor* source = nullptr;    // Param backing storage
  };

  /// Registers external storage as a trainable leaf. Registering the same
  /// tensor twice yields the same node, which is what gives a Siamese forward
  /// its shared weights.
  NodeId param(const Tensor& t) {
    auto it = param_ids_.find(&t);
    if (it != param_ids_.end()) return it->second;
    NodeId id = push(Op::Param, {}, t);
    nodes_[static_cast<std::size_t>(id)].source = &t;
    param_ids_.emplace(&t, id);
    return id;
  }

  /// Leaf that takes no gradient (inputs, detached class means, one-hot targets).
  NodeId constant(Tensor t) { return push(Op::Constant, {}, std::move(t)); }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows())
      throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " vs " +
                       shape_str(tb.shape));
    Tensor out({ta.rows(), tb.cols()});
    const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta.data[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += av * tb.data[p * n + j];
      }
    return push(Op::Matmul, {a, b}, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += tb.data[i];
    return push(Op::Add, {a, b}, std::move(out));
  }

  /// Adds a length-n bias vector to every row of an m-by-n matrix.
  NodeId add_bias(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 1 || tb.shape[0] != ta.cols())
      throw ShapeError("add_bias: shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (std::size_t i = 0; i < ta.rows(); ++i)
      for (std::size_t j = 0; j < ta.cols(); ++j) out.data[i * ta.cols() + j] += tb.data[j];
    return push(Op::AddBias, {a, b}, std::move(out));
  }

  NodeId relu(NodeId a) {
    const Tensor& ta = value(a);
    Tensor out = ta;
    for (double v : ta.data) min_abs_relu_input_ = std::min(min_abs_relu_input_, std::fabs(v));
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(Op::Relu, {a}, std::move(out));
  }

  NodeId softmax_rows(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.ndim() != 2) throw ShapeError("softmax_rows: input must be 2-D, got " + shape_str(ta.shape));
    Tensor out = ta;
    const std::size_t n = ta.cols();
    for (std::size_t i = 0; i < ta.rows(); ++i) {
      double* row = out.data.data() + i * n;
      double mx = row[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::size_t j = 0; j < n; ++j) row[j] /= z;
    }
    return push(Op::SoftmaxRows, {a}, std::move(out));
  }

  NodeId log(NodeId a) {
    const Tensor& ta = value(a);
    Tensor out = ta;
    for (double& v : out.data) {
      if (v <= 0.0) throw DomainError("log: non-positive input " + std::to_string(v));
      v = std::log(v);
    }
    return push(Op::Log, {a}, std::move(out));
  }

  NodeId sub(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= tb.data[i];
    return push(Op::Sub, {a, b}, std::move(out));
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= tb.data[i];
    return push(Op::Mul, {a, b}, std::move(out));
  }

  NodeId square(NodeId a) {
    const Tensor& ta = value(a);
    Tensor out = ta;
    for (double& v : out.data) v *= v;
    return push(Op::Square, {a}, std::move(out));
  }

  NodeId sum(NodeId a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (double v : ta.data) s += v;
    return push(Op::Sum, {a}, Tensor::scalar(s));
  }

  NodeId mean(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.size() == 0) throw ContractError("mean: empty tensor");
    double s = 0.0;
    for (double v : ta.data) s += v;
    return push(Op::Mean, {a}, Tensor::scalar(s / static_cast<double>(ta.size())));
  }

  NodeId scale(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v *= c;
    NodeId id = push(Op::Scale, {a}, std::move(out));
    nodes_[static_cast<std::size_t>(id)].scalar = c;
    return id;
  }

  NodeId sqrt(NodeId a) {
    const Tensor& ta = value(a);
    Tensor out = ta;
    for (double& v : out.data) {
      if (v < 0.0) throw DomainError("sqrt: negative input " + std::to_string(v));
      min_sqrt_input_ = std::min(min_sqrt_input_, v);
      v = std::sqrt(v);
    }
    return push(Op::Sqrt, {a}, std::move(out));
  }

  NodeId concat_rows(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.cols())
      throw ShapeError("concat_rows: shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out({ta.rows() + tb.rows(), ta.cols()});
    std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(ta.size()));
    return push(Op::ConcatRows, {a, b}, std::move(out));
  }

  NodeId row_select(NodeId a, std::vector<std::size_t> rows) {
    const Tensor& ta = value(a);
    if (ta.ndim() != 2) throw ShapeError("row_select: input must be 2-D, got " + shape_str(ta.shape));
    if (rows.empty()) throw ContractError("row_select: empty index list");
    for (std::size_t r : rows)
      if (r >= ta.rows())
        throw ContractError("row_select: index " + std::to_string(r) + " out of range for " +
                            std::to_string(ta.rows()) + " rows");
    Tensor out({rows.size(), ta.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(ta.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * ta.cols()), ta.cols(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * ta.cols()));
    NodeId id = push(Op::RowSelect, {a}, std::move(out));
    nodes_[static_cast<std::size_t>(id)].rows = std::move(rows);
    return id;
  }

  const Tensor& value(NodeId id) const { return node(id).value; }

  /// Gradient buffer of a node; valid after backward().
  const std::vector<double>& grad(NodeId id) const { return node(id).grad; }

  /// Gradient for a registered parameter tensor; zeros if the parameter never
  /// entered this graph (unreachable parameters take no update).
  Tensor grad_for(const Tensor& t) const {
    auto it = param_ids_.find(&t);
    Tensor g(t.shape);
    if (it == param_ids_.end()) return g;
    const Node& n = node(it->second);
    if (!n.grad.empty()) g.data = n.grad;
    return g;
  }

  /// Propagates d(loss)/d(node) to every node. Gradients are reset first, so
  /// calling backward twice on the same tape yields identical results.
  void backward(NodeId loss) {
    const Node& ln = node(loss);
    if (ln.value.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape));
    for (Node& n : nodes_) {
      n.grad.assign(n.value.size(), 0.0);
    }
    nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
      accumulate_inputs(static_cast<std::size_t>(id));
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  /// Smallest |x| seen by any relu in this graph; gradient checks use it to
  /// detect kink proximity.
  double min_abs_relu_input() const { return min_abs_relu_input_; }
  /// Smallest value fed to any sqrt (whose derivative blows up near zero).
  double min_sqrt_input() const { return min_sqrt_input_; }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, NodeId> param_ids_;
  double min_abs_relu_input_ = std::numeric_limits<double>::infinity();
  double min_sqrt_input_ = std::numeric_limits<double>::infinity();

  const Node& node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ContractError("graph: bad node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }

  NodeId push(Op op, std::vector<NodeId> inputs, Tensor value) {
    if (!value.finite())
      throw NumericError("graph: non-finite value produced by node " + std::to_string(nodes_.size()));
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void accumulate_inputs(std::size_t id) {
    Node& n = nodes_[id];
    bool all_zero = true;
    for (double g : n.grad)
      if (g != 0.0) {
        all_zero = false;
        break;
      }
    if (all_zero) return;
    switch (n.op) {
      case Op::Param:
      case Op::Constant:
        break;
      case Op::Matmul: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        const std::size_t m = a.value.rows(), k = a.value.cols(), c = b.value.cols();
        // dA = dC * B^T, dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += n.grad[i * c + j] * b.value.data[p * c + j];
            a.grad[i * k + p] += s;
          }
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += a.value.data[i * k + p] * n.grad[i * c + j];
            b.grad[p * c + j] += s;
          }
        break;
      }
      case Op::Add: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          a.grad[i] += n.grad[i];
          b.grad[i] += n.grad[i];
        }
        break;
      }
      case Op::AddBias: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        const std::size_t cols = a.value.cols();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          a.grad[i] += n.grad[i];
          b.grad[i % cols] += n.grad[i];
        }
        break;
      }
      case Op::Relu: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        // subgradient at the kink is 0
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          if (a.value.data[i] > 0.0) a.grad[i] += n.grad[i];
        break;
      }
      case Op::SoftmaxRows: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        const std::size_t cols = n.value.cols();
        for (std::size_t i = 0; i < n.value.rows(); ++i) {
          const double* y = n.value.data.data() + i * cols;
          const double* dy = n.grad.data() + i * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
          for (std::size_t j = 0; j < cols; ++j) a.grad[i * cols + j] += y[j] * (dy[j] - dot);
        }
        break;
      }
      case Op::Log: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] / a.value.data[i];
        break;
      }
      case Op::Sub: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          a.grad[i] += n.grad[i];
          b.grad[i] -= n.grad[i];
        }
        break;
      }
      case Op::Mul: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          a.grad[i] += n.grad[i] * b.value.data[i];
          b.grad[i] += n.grad[i] * a.value.data[i];
        }
        break;
      }
      case Op::Square: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          a.grad[i] += n.grad[i] * 2.0 * a.value.data[i];
        break;
      }
      case Op::Sum: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (double& g : a.grad) g += n.grad[0];
        break;
      }
      case Op::Mean: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        const double d = n.grad[0] / static_cast<double>(a.value.size());
        for (double& g : a.grad) g += d;
        break;
      }
      case Op::Scale: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * n.scalar;
        break;
      }
      case Op::Sqrt: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        // d sqrt(x) = g / (2 sqrt(x)); subgradient 0 at x == 0
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          if (n.value.data[i] > 0.0) a.grad[i] += n.grad[i] / (2.0 * n.value.data[i]);
        break;
      }
      case Op::ConcatRows: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += n.grad[i];
        for (std::size_t i = 0; i < b.grad.size(); ++i) b.grad[i] += n.grad[a.grad.size() + i];
        break;
      }
      case Op::RowSelect: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        const std::size_t cols = a.value.cols();
        for (std::size_t i = 0; i < n.rows.size(); ++i)
          for (std::size_t j = 0; j < cols; ++j)
            a.grad[n.rows[i] * cols + j] += n.grad[i * cols + j];
        break;
      }
    }
  }
};

}  // namespace nda
