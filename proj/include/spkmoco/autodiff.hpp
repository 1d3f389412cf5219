#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "spkmoco/rng.hpp"
#include "spkmoco/tensor.hpp"

namespace spkmoco {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient after Graph::backward; empty if the node received none.
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape of operations in creation order, which is a topological order since
// every node is recorded after its inputs. backward() walks it in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is kept on the node (used by grad_check).
  Var input(Tensor value);
  // Leaf bound to a parameter; backward() adds its gradient into p.grad
  // when p is trainable.
  Var parameter(Parameter& p);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Lazily zero-initialised gradient buffer of a node.
  Tensor& grad_buffer(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

struct BatchNormOptions {
  bool train = true;
  // Rows are split into this many contiguous equal blocks, each normalized
  // with its own statistics (shuffled-key batch norm).
  std::size_t groups = 1;
  double eps = 1e-5;
  double momentum = 0.1;
};

namespace ops {

// x: N×in, W: out×in, b: out -> N×out.
Var affine(Var x, Var W, Var b);
// x Wᵀ without bias.
Var matmul_nt(Var x, Var W);
Var relu(Var x);
// Inverted dropout; identity when !train or p == 0.
Var dropout(Var x, double p, bool train, Rng& rng);
// Eval mode normalizes with the running statistics. In train mode, when
// update_mean/update_var are given, they receive the exponential moving
// average of the (group-averaged) batch statistics.
Var batch_norm(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
               const BatchNormOptions& opt, Tensor* update_mean = nullptr,
               Tensor* update_var = nullptr);
// Row-wise x / max(||x||, eps).
Var l2_normalize(Var x, double eps = 1e-12);
Var log_softmax(Var x);

// Temporal context splicing over `batch` sequences stacked row-wise, each of
// equal length T. Output row t of a sequence concatenates input rows
// t - min(offsets) + offsets[k]; output length is T - (max - min).
Var splice(Var x, std::size_t batch, std::span<const int> offsets);
// Per-sequence concat(mean, stddev) over frames; stddev uses the clamped
// variance sqrt(max(var, floor)).
Var stats_pooling(Var x, std::size_t batch, double variance_floor);

Var scale(Var x, double c);
Var add(Var a, Var b);
Var sum(Var x);
Var sum_squares(Var x);
// Σ x ⊙ w with w constant.
Var weighted_sum(Var x, const Tensor& w);
// Row-wise inner products of two N×k matrices -> N×1.
Var row_dot(Var a, Var b);
// Column concatenation of two matrices with equal row counts.
Var concat_cols(Var a, Var b);

}  // namespace ops

// Dense kernels shared with oracles and value-only paths.
namespace kernels {
// out (N×out) = x (N×in) · Wᵀ (W: out×in), each entry accumulated in
// increasing input index order.
void gemm_nt(const double* x, const double* W, double* out, std::size_t n, std::size_t in,
             std::size_t outd);
}  // namespace kernels

}  // namespace spkmoco
