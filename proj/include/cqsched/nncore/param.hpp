#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cqsched/nncore/tensor.hpp"

namespace cqsched::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape; accumulated by Tape::backward
};

enum class InitKind { xavier, zeros, ones };

// Named-parameter container with stable addresses.  Creation order is the
// deterministic iteration order; checkpoints are keyed by name.
using StateDict = std::map<std::string, Tensor>;

class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param& create(const std::string& name, std::vector<int> shape, InitKind kind,
                std::mt19937_64& rng);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  std::vector<Param*> all();
  std::vector<Param*> with_prefix(const std::string& prefix);
  size_t size() const { return params_.size(); }
  size_t coordinate_count() const;

  void zero_grads();

  StateDict state_dict() const;
  // Shape- and name-validated restore.
  void load_state_dict(const StateDict& sd);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, Param*> by_name_;
};

// Uniform in +/- sqrt(6 / (fan_in + fan_out)); rank-1 tensors use fan_in 1.
void xavier_fill(Tensor& t, std::mt19937_64& rng);

}  // namespace cqsched::nn
