#pragma once

#include <functional>
#include <vector>

#include "cqsched/nncore/param.hpp"
#include "cqsched/nncore/tape.hpp"

namespace cqsched::nn {

// Compares reverse-mode gradients against central finite differences for
// every coordinate of the given parameters.  `build` must construct the
// scalar loss on a fresh tape from the parameters' current values.  Returns
// the maximum over coordinates of |g_ad - g_fd| / max(1e-6, |g_ad| + |g_fd|).
double grad_check(std::vector<Param*> params, const std::function<Tape::Id(Tape&)>& build,
                  double eps = 1e-5);

}  // namespace cqsched::nn
