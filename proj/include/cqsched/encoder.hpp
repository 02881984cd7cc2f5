#pragma once

#include <cstdint>
#include <vector>

#include "cqsched/envsim.hpp"
#include "cqsched/nncore/net.hpp"
#include "cqsched/workload.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Plan embedding
// ---------------------------------------------------------------------------
//
// Deterministic recursive embedding of an operator tree.  The weights are
// drawn once from the given seed and never trained: plan structure is a
// fixed, reproducible signature, and learning happens downstream in the
// state encoder.  Scan leaves mix operator, table and selectivity terms;
// inner nodes fold the mean of their children through a square mixing
// matrix.  All activations are tanh, so embeddings stay in [-1, 1].

class PlanEmbedder {
 public:
  PlanEmbedder(int dim, uint64_t seed);

  int dim() const { return dim_; }
  nn::Tensor encode(const PlanNode& plan) const;
  std::vector<nn::Tensor> encode_batch(const BatchSet& batch) const;

 private:
  nn::Tensor embed_node(const PlanNode& node) const;

  int dim_;
  std::vector<nn::Tensor> op_term_;     // one vector per operator kind
  std::vector<nn::Tensor> table_term_;  // one vector per table id
  nn::Tensor sel_term_;
  nn::Tensor child_mix_;  // dim x dim
  nn::Tensor bias_;
};

// ---------------------------------------------------------------------------
// Decision-point snapshot
// ---------------------------------------------------------------------------
//
// Network-independent description of one scheduling state: the dynamic state
// of every decision unit (a query, or a cluster of queries) in batch order,
// plus which unit occupies each connection.  Snapshots are cheap to copy and
// are what rollout buffers store; encodings are recomputed from them.

struct StateSnapshot {
  std::vector<RunState> units;
  std::vector<int> conn_unit;  // connection -> unit index, or -1 when idle
};

// Static context the featurizer needs: the config menu, the time scale, the
// padded unit capacity of the global head, and the connection count.
struct FeatureContext {
  ConfigMenu menu;
  TimeNormalizer norm{1.0};
  int max_units = 0;
  int connections = 0;

  void validate() const;
};

// Snapshot of a live environment at query granularity.  Average times come
// from the calibration table: pending queries use the mean over all observed
// configs, running/finished ones the mean under their chosen config.
StateSnapshot make_snapshot(const Environment& env, const AvgTimeTable& table);

// ---------------------------------------------------------------------------
// State encoder
// ---------------------------------------------------------------------------
//
// Turns a snapshot into per-unit and whole-state representations:
//   1. each unit's plan embedding and dynamic features pass through a shared
//      representation MLP,
//   2. the unit set plus one learnable summary row runs through the
//      self-attention stack,
//   3. the summary row, concatenated with every unit's raw features (padded
//      to max_units), yields the global representation, and
//   4. each attended unit row, concatenated with the summary row and the
//      features of whatever runs on each connection, yields the final
//      per-unit representation.

struct Encoding {
  nn::Tape::Id per_unit = -1;  // [n, hidden]
  nn::Tape::Id global = -1;    // [hidden]
  nn::Tape::Id attended = -1;  // [n + 1, hidden], summary row last
};

class StateEncoder {
 public:
  StateEncoder(nn::ParamStore& store, const nn::NetConfig& net, const FeatureContext& ctx,
               int embed_dim, std::mt19937_64& rng);

  Encoding encode(nn::Tape& t, const StateSnapshot& snap,
                  const std::vector<nn::Tensor>& unit_embeds) const;

  const FeatureContext& context() const { return ctx_; }
  int hidden_dim() const { return net_.hidden_dim; }

 private:
  nn::NetConfig net_;
  FeatureContext ctx_;
  int embed_dim_;
  nn::Mlp repr_;
  nn::Param* summary_seed_;  // learnable summary-row input
  std::vector<nn::AttentionLayer> attn_;
  nn::Mlp global_;
  nn::Mlp unit_;
};

}  // namespace cqsched
