#pragma once

#include <string>
#include <vector>

#include "cqsched/errors.hpp"

namespace cqsched::nn {

// Dense 64-bit float tensor of rank 1 or 2.  Rank-1 tensors are vectors;
// rank-2 tensors are row-major matrices.  Scalars are rank-1 of size 1.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor vec(std::vector<double> values);
  static Tensor scalar(double value);

  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;
  size_t numel() const { return v.size(); }

  double& at(int i) { return v[static_cast<size_t>(i)]; }
  double at(int i) const { return v[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return v[static_cast<size_t>(i) * static_cast<size_t>(cols()) + static_cast<size_t>(j)]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * static_cast<size_t>(cols()) + static_cast<size_t>(j)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what);

// out += a * b for row-major matrices; the workhorse behind every layer.
void matmul_accumulate(const double* a, int ar, int ac, const double* b, int bc, double* out);

}  // namespace cqsched::nn
