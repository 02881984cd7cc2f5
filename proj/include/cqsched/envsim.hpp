#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "cqsched/workload.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Environment configuration
// ---------------------------------------------------------------------------

struct EnvConfig {
  int connections = 4;        // concurrent query slots |C|
  double cpu_capacity = 6.0;  // worker-equivalents the host can serve at once
  double io_capacity = 4.0;   // IO streams served at full rate
  int buffer_tables = 8;      // LRU shared-buffer capacity, in tables
  double share_bonus = 0.5;   // max fraction of IO work saved by buffered tables
  double noise_sigma = 0.05;  // lognormal work perturbation per (round, query)
  uint64_t seed = 0;
  ConfigMenu menu;            // worker counts the host accepts

  void validate() const;
};

// ---------------------------------------------------------------------------
// Per-query dynamic state
// ---------------------------------------------------------------------------

struct QueryRun {
  QueryStatus status = QueryStatus::pending;
  int workers = 0;            // 0 while pending
  int conn_id = -1;
  double remaining_cpu = 0.0;
  double remaining_io = 0.0;
  double submit_time = 0.0;
  double start_time = 0.0;
  double finish_time = 0.0;
};

// ---------------------------------------------------------------------------
// The simulator
// ---------------------------------------------------------------------------
//
// Continuous-time, event-driven model of one host running a batch over a
// fixed set of connections.  CPU service follows Amdahl scaling per query,
// throttled by the ratio of cpu_capacity to the total workers in flight; IO
// streams degrade when more queries run than io_capacity covers.  A query
// finishes once both its CPU and IO works are drained; the next completion is
// always the minimal completion horizon (ties resolved toward the lower
// query id).  A shared LRU buffer grants a one-time IO discount at submit
// time proportional to how much of the query's table set is resident.

class Environment {
 public:
  Environment(const BatchSet& batch, EnvConfig cfg);

  void reset(uint64_t round_seed);
  void submit(int query_id, int workers);
  // Advances the clock to the next completion; returns (query_id, clock).
  std::pair<int, double> advance_to_next_completion();

  bool all_finished() const;
  bool any_running() const;
  bool any_pending() const;
  int free_connections() const;
  double clock() const { return clock_; }
  uint64_t round_seed() const { return round_seed_; }
  double makespan() const;  // max finish time; requires all finished

  int num_queries() const { return static_cast<int>(runs_.size()); }
  const QueryRun& run(int query_id) const;
  const std::vector<int>& connection_map() const { return conn_query_; }
  const std::deque<int>& buffer_lru() const { return buffer_; }
  const BatchSet& batch() const { return batch_; }
  const EnvConfig& config() const { return cfg_; }

  // Instantaneous service rates for a running query under the current mix.
  double cpu_rate(int query_id) const;
  double io_rate(int query_id) const;

  // Submissions plus completions since construction (all rounds).
  uint64_t event_count() const { return events_; }

  RoundRecord round_record(int round_id) const;

 private:
  int index_of(int query_id) const;
  double completion_horizon(int idx) const;

  BatchSet batch_;
  EnvConfig cfg_;
  std::vector<QueryRun> runs_;        // by batch index
  std::vector<int> conn_query_;       // connection -> query_id or -1
  std::deque<int> buffer_;            // front = most recently used table
  double clock_ = 0.0;
  uint64_t round_seed_ = 0;
  uint64_t events_ = 0;
  int total_workers_running_ = 0;
  int running_count_ = 0;
};

// Scheduling decision: which pending query to place next and with how many
// workers.
struct Action {
  int query_id = -1;
  int workers = 1;
};

// One full round: submit whenever a connection is idle and a pending query
// exists (the policy is consulted once per free slot, seeing the refreshed
// state), otherwise advance to the next completion.  Returns the log record.
using EnvPolicy = std::function<Action(const Environment&)>;
RoundRecord run_episode(Environment& env, uint64_t round_seed, const EnvPolicy& policy,
                        int round_id);

// Amdahl speedup for a parallel fraction alpha at r workers.
double amdahl_speedup(double alpha, int r);

}  // namespace cqsched
