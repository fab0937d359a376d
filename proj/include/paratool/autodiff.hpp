#pragma once

#include <functional>
#include <vector>

#include "paratool/tensor.hpp"

namespace paratool {

class Tape;

// Handle to a tensor recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

// Reverse-mode tape. Ops append nodes in forward order; backward() replays the
// recorded closures in exact reverse order. Gradients are allocated lazily and
// zero-initialized, so untouched inputs read back as zero. Subgraphs with no
// trainable ancestor are skipped during backward. Single-threaded; one
// backward per tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Tensor value, bool trainable = true);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const;
  // reading a never-written gradient yields zeros of the value shape
  const Tensor& grad(Var v);
  Tensor& grad_mut(Var v);
  bool needs_grad(int idx) const { return nodes_[static_cast<size_t>(idx)].needs_grad; }

  // loss must be a one-element tensor reachable from the tape
  void backward(Var loss);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  bool consumed() const { return consumed_; }

  // used by the op implementations; needs_grad is inherited from the parents
  Var emit(Tensor value, std::initializer_list<int> parents, std::function<void(Tape&)> back);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until first written
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;

  void check(Var v) const;
};

// ---- primitives -------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double c);
Var neg(Var a);
Var vabs(Var a);
Var relu(Var a);
Var matmul(Var a, Var b);     // [m,k]x[k,n]
Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T
Var softmax(Var a);           // rowwise
// softmax of row i over columns 0..i only; later columns are exactly zero
Var causal_softmax(Var a);
Var log_softmax(Var a);       // rowwise
Var layer_norm(Var a, double eps = 1e-5);  // rowwise, no affine terms
Var embedding(Var table, const std::vector<int>& ids);
Var cross_entropy(Var probs, const std::vector<int>& targets);  // mean over rows of -ln p[target]
// mean over i of -logp[rows[i], targets[i]]
Var nll_rows(Var logp, const std::vector<int>& rows, const std::vector<int>& targets);
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_rows(Var a, int start, int len);
Var slice_cols(Var a, int start, int len);
Var dot(Var a, Var b);  // flattened inner product -> scalar
Var sum(Var a);         // -> scalar
Var transpose(Var a);
Var add_rowwise(Var a, Var bias);  // bias broadcast over rows

// Max over coordinates of |analytic - numeric| / max(1, |analytic|), with
// central differences of the given step. f must build a scalar from x on the
// supplied tape.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step = 1e-5);

}  // namespace paratool
