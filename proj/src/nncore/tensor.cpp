#include "cqsched/nncore/tensor.hpp"

#include <sstream>

namespace cqsched::nn {

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  if (shape.empty() || shape.size() > 2) throw ShapeError("only rank-1/2 tensors are supported");
  t.shape = std::move(shape);
  t.v.assign(n, 0.0);
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t;
  t.shape = {static_cast<int>(values.size())};
  t.v = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return vec({value}); }

int Tensor::rows() const { return rank() == 2 ? shape[0] : 1; }
int Tensor::cols() const { return rank() == 2 ? shape[1] : shape[0]; }

std::string Tensor::shape_str() const {
  std::ostringstream s;
  s << '[';
  for (size_t i = 0; i < shape.size(); ++i) s << (i ? "x" : "") << shape[i];
  s << ']';
  return s.str();
}

void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
  if (t.shape != shape) {
    Tensor want;
    want.shape = shape;
    throw ShapeError(std::string(what) + ": expected " + want.shape_str() + ", got " +
                     t.shape_str());
  }
}

void matmul_accumulate(const double* a, int ar, int ac, const double* b, int bc, double* out) {
  // i-k-j order: the inner loop runs over contiguous memory in b and out,
  // which lets the compiler vectorize it.
  for (int i = 0; i < ar; ++i) {
    double* orow = out + static_cast<size_t>(i) * static_cast<size_t>(bc);
    const double* arow = a + static_cast<size_t>(i) * static_cast<size_t>(ac);
    for (int k = 0; k < ac; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b + static_cast<size_t>(k) * static_cast<size_t>(bc);
      for (int j = 0; j < bc; ++j) orow[j] += aik * brow[j];
    }
  }
}

}  // namespace cqsched::nn
