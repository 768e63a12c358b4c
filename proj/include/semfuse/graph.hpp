#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "semfuse/rng.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation tape.
//
// Every primitive appends one node holding its forward value and a closure
// that pushes the node's gradient to its inputs. Nodes are appended in
// evaluation order, so walking the tape backwards is a reverse topological
// order and each node is visited once. Gradients accumulate additively.
// Parameter leaves add their gradient into Parameter::grad during backward().
//
// Broadcasting: for add/mul the second operand may have the shape of the
// trailing dimensions of the first (a bias row, a per-feature scale, ...).
template <typename Real>
class Graph {
 public:
  using Mask = std::vector<std::uint8_t>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<Real> value);
  Var param(Parameter<Real>& p);

  const Tensor<Real>& value(Var v) const { return node(v).value; }
  // Gradient of the last backward() target w.r.t. v; empty if unreached.
  const Tensor<Real>& grad(Var v) const { return node(v).grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // a: [..., K] (flattened to rows), b: [K, N], or [N, K] with transpose_b.
  Var matmul(Var a, Var b, bool transpose_b = false);
  // a: [G, M, K], b: [G, K, N], or [G, N, K] with transpose_b.
  Var bmm(Var a, Var b, bool transpose_b = false);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Real factor);
  Var affine(Var a, Real factor, Real shift);  // factor * a + shift
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var clamp(Var a, Real lo, Real hi);
  Var softmax(Var a);      // over the last dimension
  Var log_softmax(Var a);  // over the last dimension
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = Real(1e-5));
  // Inverted dropout: kept entries scaled by 1/(1-p). Only used in training.
  Var dropout(Var a, Real p, Rng& rng);
  // Entries with mask != 0 are replaced by `fill` (and receive no gradient).
  Var masked_fill(Var a, const Mask& mask, Real fill);
  // table: [V, d]; returns [ids.size(), d].
  Var gather_rows(Var table, const std::vector<int>& ids);
  // out.flat[i] = a.flat[index[i]], reshaped to `shape`.
  Var gather(Var a, std::vector<int> index, Shape shape);
  Var concat_last(Var a, Var b);
  Var reshape(Var a, Shape shape);
  // General axis permutation (rank <= 4).
  Var permute(Var a, const std::vector<int>& axes);
  Var sum(Var a);  // scalar
  // Scalar sum_i weights[i] * a[i]; masked means are weights = mask / count.
  Var weighted_sum(Var a, const std::vector<Real>& weights);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a scalar.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::function<void()> backward;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
  };

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  Tensor<Real>& grad_buffer(int id);
  bool needs(Var v) const { return node(v).requires_grad; }
  Var push(Tensor<Real> value, bool requires_grad);

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace semfuse
