#pragma once

#include <iosfwd>
#include <string>

#include "cqsched/nncore/param.hpp"

namespace cqsched::nn {

// Versioned structured-text checkpoint of named tensors.  Values are printed
// with 17 significant digits, so save/load round-trips doubles exactly.
void save_checkpoint(const StateDict& sd, std::ostream& out);
void save_checkpoint(const StateDict& sd, const std::string& path);
StateDict load_checkpoint(std::istream& in);
StateDict load_checkpoint_file(const std::string& path);

}  // namespace cqsched::nn
