#include "cqsched/nncore/adam.hpp"

#include <cmath>

namespace cqsched::nn {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (size_t k = 0; k < p.value.v.size(); ++k) {
      const double g = p.grad.v[k];
      m.v[k] = cfg_.beta1 * m.v[k] + (1.0 - cfg_.beta1) * g;
      v.v[k] = cfg_.beta2 * v.v[k] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.v[k] / bc1;
      const double vhat = v.v[k] / bc2;
      p.value.v[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace cqsched::nn
