#pragma once

#include <functional>
#include <vector>

#include "cqsched/nncore/param.hpp"
#include "cqsched/nncore/tensor.hpp"

namespace cqsched::nn {

// Eager reverse-mode autodiff graph.  Every operation computes its value
// immediately and records a closure that scatters the output gradient onto
// its parents; creation order is therefore a topological order and backward
// is a single reverse sweep.  One Tape instance per forward/backward pass.
class Tape {
 public:
  using Id = int;

  Id constant(Tensor t);
  Id param(Param& p);

  const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  // Gradient of the last backward root w.r.t. this node (zeros if untouched).
  Tensor grad(Id id) const;

  // root must be a scalar; accumulates into bound Param::grad.
  void backward(Id root);

  size_t size() const { return nodes_.size(); }

  // --- elementwise / arithmetic ------------------------------------------
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, double c);

  // --- linear algebra -----------------------------------------------------
  Id matmul(Id a, Id b);
  Id transpose(Id a);
  // x [r,in] or [in]; W [in,out]; b [out]; returns xW + b (row broadcast).
  Id linear(Id x, Id W, Id b);

  // --- shaping ------------------------------------------------------------
  Id concat(const std::vector<Id>& parts);       // rank-1 pieces -> rank-1
  Id concat_rows(const std::vector<Id>& parts);  // rows (rank-1 or 2) -> rank-2
  Id concat_cols(const std::vector<Id>& parts);  // rank-2 blocks -> rank-2
  Id slice_cols(Id a, int start, int len);
  Id slice_rows(Id a, int start, int len);
  Id tile_rows(Id a, int copies);  // rank-1 vector stacked into `copies` rows
  Id row(Id a, int i);
  Id gather(Id a, std::vector<int> idx);
  Id pick(Id a, int i);  // scalar element of a rank-1 tensor

  Id flatten(Id a);  // rank-2 -> rank-1 view of the same coordinates

  // --- nonlinearities / reductions ----------------------------------------
  Id tanh_(Id a);
  Id exp_(Id a);
  // Elementwise clamp; gradient passes only strictly inside (lo, hi).
  Id clamp(Id a, double lo, double hi);
  // Elementwise minimum; the gradient follows the smaller side (ties -> a).
  Id min2(Id a, Id b);
  Id softmax(Id a);       // rank-1, max-shifted
  Id softmax_rows(Id a);  // rank-2, per row
  Id log_sum_exp(Id a);   // rank-1 -> scalar, max-shifted
  Id dot(Id a, Id b);
  Id sum(Id a);
  Id mean(Id a);

  // Normalization across the row dimension (one state's query set): each
  // column is standardized over rows, then scaled/shifted by gain/bias.
  Id set_norm(Id x, Id gain, Id bias, double eps = 1e-5);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&)> back;
    Param* bound = nullptr;
  };

  Id push(Tensor value, std::function<void(Tape&)> back);
  Tensor& grad_buf(Id id);
  bool has_grad(Id id) const { return !nodes_[static_cast<size_t>(id)].grad.v.empty(); }

  std::vector<Node> nodes_;
};

}  // namespace cqsched::nn
