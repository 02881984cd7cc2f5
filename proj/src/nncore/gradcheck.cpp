#include "cqsched/nncore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cqsched::nn {

double grad_check(std::vector<Param*> params, const std::function<Tape::Id(Tape&)>& build,
                  double eps) {
  for (Param* p : params) std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
  {
    Tape t;
    t.backward(build(t));
  }

  const auto eval = [&]() {
    Tape t;
    return t.val(build(t)).v[0];
  };

  double worst = 0.0;
  for (Param* p : params) {
    for (size_t k = 0; k < p->value.v.size(); ++k) {
      const double saved = p->value.v[k];
      p->value.v[k] = saved + eps;
      const double f_plus = eval();
      p->value.v[k] = saved - eps;
      const double f_minus = eval();
      p->value.v[k] = saved;
      const double g_fd = (f_plus - f_minus) / (2.0 * eps);
      const double g_ad = p->grad.v[k];
      // The 1e-6 floor keeps coordinates whose true gradient is exactly zero
      // (bias directions cancelled by normalization or softmax shifts) from
      // amplifying finite-difference rounding noise into a spurious error.
      const double rel =
          std::abs(g_ad - g_fd) / std::max(1e-6, std::abs(g_ad) + std::abs(g_fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace cqsched::nn
