#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <utility>
#include <vector>

#include "cqsched/encoder.hpp"
#include "cqsched/envsim.hpp"
#include "cqsched/knowledge.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Execution backends
// ---------------------------------------------------------------------------
//
// The agent never talks to a concrete executor: the same decision loop runs
// against the ground-truth environment and against the learned incremental
// simulator.  A backend executes individual queries; decision granularity
// (flat queries or clusters) is layered on top.

class ExecBackend {
 public:
  virtual ~ExecBackend() = default;

  virtual void reset(uint64_t round_seed) = 0;
  virtual void submit(int query_id, int workers) = 0;
  // Runs to the next completion; returns (query_id, clock).
  virtual std::pair<int, double> advance() = 0;

  virtual double clock() const = 0;
  virtual const QueryRun& run(int query_id) const = 0;
  virtual const std::vector<int>& connection_map() const = 0;
  virtual int free_connections() const = 0;
  virtual bool any_running() const = 0;
  virtual bool any_pending() const = 0;
  virtual bool all_finished() const = 0;
  virtual double makespan() const = 0;
  virtual uint64_t event_count() const = 0;
  virtual RoundRecord round_record(int round_id) const = 0;
  virtual const BatchSet& batch() const = 0;
};

// Ground-truth executor; non-owning wrapper.
class TrueBackend : public ExecBackend {
 public:
  explicit TrueBackend(Environment& env) : env_(env) {}

  void reset(uint64_t round_seed) override { env_.reset(round_seed); }
  void submit(int query_id, int workers) override { env_.submit(query_id, workers); }
  std::pair<int, double> advance() override { return env_.advance_to_next_completion(); }
  double clock() const override { return env_.clock(); }
  const QueryRun& run(int query_id) const override { return env_.run(query_id); }
  const std::vector<int>& connection_map() const override { return env_.connection_map(); }
  int free_connections() const override { return env_.free_connections(); }
  bool any_running() const override { return env_.any_running(); }
  bool any_pending() const override { return env_.any_pending(); }
  bool all_finished() const override { return env_.all_finished(); }
  double makespan() const override { return env_.makespan(); }
  uint64_t event_count() const override { return env_.event_count(); }
  RoundRecord round_record(int round_id) const override { return env_.round_record(round_id); }
  const BatchSet& batch() const override { return env_.batch(); }

 private:
  Environment& env_;
};

// Snapshot of any backend at query granularity (see encoder.hpp for the
// environment-specific variant used before backends existed).
StateSnapshot snapshot_backend(const ExecBackend& exec, const AvgTimeTable& table);

// ---------------------------------------------------------------------------
// Decision environments
// ---------------------------------------------------------------------------
//
// A decision environment exposes schedulable units.  In flat mode units are
// the queries themselves.  In clustered mode units are query clusters: the
// policy picks a cluster and a cluster-level config, members are submitted
// longest-first onto idle connections (each with its own allowed config
// nearest the cluster choice), and a new decision is only requested once the
// active cluster has no unsubmitted members left.

class DecisionEnv {
 public:
  DecisionEnv(ExecBackend& exec, const AvgTimeTable& table, FeatureContext ctx)
      : exec_(exec), table_(table), ctx_(std::move(ctx)) {}
  virtual ~DecisionEnv() = default;

  virtual int unit_count() const = 0;
  virtual std::vector<char> unit_pending() const = 0;
  virtual bool decision_ready() const = 0;
  virtual void act(int unit, int workers) = 0;
  // Advances to the next query completion; returns (unit index, clock).
  virtual std::pair<int, double> advance() = 0;
  virtual void reset(uint64_t round_seed) = 0;

  virtual StateSnapshot snapshot() const = 0;
  // [unit][config] mean times for mask derivation.
  virtual std::vector<std::vector<double>> unit_avg_matrix() const = 0;
  virtual const std::vector<nn::Tensor>& unit_embeds() const = 0;

  ExecBackend& exec() { return exec_; }
  const ExecBackend& exec() const { return exec_; }
  const FeatureContext& context() const { return ctx_; }
  const AvgTimeTable& table() const { return table_; }

 protected:
  ExecBackend& exec_;
  const AvgTimeTable& table_;
  FeatureContext ctx_;
};

class FlatDecisionEnv : public DecisionEnv {
 public:
  FlatDecisionEnv(ExecBackend& exec, const AvgTimeTable& table, FeatureContext ctx,
                  std::vector<nn::Tensor> query_embeds);

  int unit_count() const override;
  std::vector<char> unit_pending() const override;
  bool decision_ready() const override;
  void act(int unit, int workers) override;
  std::pair<int, double> advance() override;
  void reset(uint64_t round_seed) override;
  StateSnapshot snapshot() const override;
  std::vector<std::vector<double>> unit_avg_matrix() const override;
  const std::vector<nn::Tensor>& unit_embeds() const override { return embeds_; }

 private:
  std::vector<nn::Tensor> embeds_;
};

class ClusteredDecisionEnv : public DecisionEnv {
 public:
  ClusteredDecisionEnv(ExecBackend& exec, const AvgTimeTable& table, FeatureContext ctx,
                       const std::vector<nn::Tensor>& query_embeds, const Clustering& clustering,
                       MaskConfig member_mask);

  int unit_count() const override;
  std::vector<char> unit_pending() const override;
  bool decision_ready() const override;
  void act(int unit, int workers) override;
  std::pair<int, double> advance() override;
  void reset(uint64_t round_seed) override;
  StateSnapshot snapshot() const override;
  std::vector<std::vector<double>> unit_avg_matrix() const override;
  const std::vector<nn::Tensor>& unit_embeds() const override { return embeds_; }

  int unit_of_query(int batch_idx) const { return unit_of_[static_cast<size_t>(batch_idx)]; }
  const std::vector<std::vector<int>>& members() const { return members_; }

 private:
  void fill_connections();
  RunState cluster_state(int unit) const;

  std::vector<std::vector<int>> members_;  // unit -> batch indices
  std::vector<int> unit_of_;               // batch index -> unit
  std::vector<nn::Tensor> embeds_;         // sum-pooled member embeddings
  MaskConfig member_mask_;

  std::vector<int> chosen_workers_;  // per unit, -1 until selected
  std::deque<int> queue_;            // unsubmitted members of the active unit
  int active_unit_ = -1;
};

// Shared decision loop: consult the policy whenever a decision is ready,
// otherwise advance to the next completion.  Returns the final makespan.
using UnitPolicy = std::function<std::pair<int, int>(DecisionEnv&)>;  // (unit, workers)
double run_decision_round(DecisionEnv& env, uint64_t round_seed, const UnitPolicy& policy);

}  // namespace cqsched
