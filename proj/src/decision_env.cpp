#include "cqsched/decision_env.hpp"

#include <algorithm>

namespace cqsched {

StateSnapshot snapshot_backend(const ExecBackend& exec, const AvgTimeTable& table) {
  StateSnapshot snap;
  const BatchSet& batch = exec.batch();
  snap.units.reserve(batch.queries.size());
  for (const QuerySpec& q : batch.queries) {
    const QueryRun& r = exec.run(q.query_id);
    RunState rs;
    rs.status = r.status;
    if (r.status == QueryStatus::pending) {
      rs.avg_time = table.avg_any(q.query_id);
    } else {
      rs.workers = r.workers;
      rs.elapsed =
          (r.status == QueryStatus::running ? exec.clock() : r.finish_time) - r.start_time;
      rs.avg_time = table.avg(q.query_id, r.workers);
    }
    snap.units.push_back(rs);
  }
  snap.conn_unit.reserve(exec.connection_map().size());
  for (int qid : exec.connection_map())
    snap.conn_unit.push_back(qid < 0 ? -1 : batch.index_of(qid));
  return snap;
}

// ---------------------------------------------------------------------------
// Flat units
// ---------------------------------------------------------------------------

FlatDecisionEnv::FlatDecisionEnv(ExecBackend& exec, const AvgTimeTable& table, FeatureContext ctx,
                                 std::vector<nn::Tensor> query_embeds)
    : DecisionEnv(exec, table, std::move(ctx)), embeds_(std::move(query_embeds)) {
  if (embeds_.size() != exec.batch().queries.size())
    throw ShapeError("flat decision env: one embedding per query required");
}

int FlatDecisionEnv::unit_count() const {
  return static_cast<int>(exec_.batch().queries.size());
}

std::vector<char> FlatDecisionEnv::unit_pending() const {
  std::vector<char> p;
  p.reserve(exec_.batch().queries.size());
  for (const QuerySpec& q : exec_.batch().queries)
    p.push_back(exec_.run(q.query_id).status == QueryStatus::pending ? 1 : 0);
  return p;
}

bool FlatDecisionEnv::decision_ready() const {
  return exec_.free_connections() > 0 && exec_.any_pending();
}

void FlatDecisionEnv::act(int unit, int workers) {
  const BatchSet& batch = exec_.batch();
  if (unit < 0 || unit >= static_cast<int>(batch.queries.size()))
    throw InvalidArgumentError("act: unit out of range");
  exec_.submit(batch.queries[static_cast<size_t>(unit)].query_id, workers);
}

std::pair<int, double> FlatDecisionEnv::advance() {
  const auto [qid, clock] = exec_.advance();
  return {exec_.batch().index_of(qid), clock};
}

void FlatDecisionEnv::reset(uint64_t round_seed) { exec_.reset(round_seed); }

StateSnapshot FlatDecisionEnv::snapshot() const { return snapshot_backend(exec_, table_); }

std::vector<std::vector<double>> FlatDecisionEnv::unit_avg_matrix() const {
  const BatchSet& batch = exec_.batch();
  std::vector<std::vector<double>> avg(batch.queries.size());
  for (size_t i = 0; i < batch.queries.size(); ++i) {
    avg[i].reserve(static_cast<size_t>(ctx_.menu.size()));
    for (int w : ctx_.menu.workers) avg[i].push_back(table_.avg(batch.queries[i].query_id, w));
  }
  return avg;
}

// ---------------------------------------------------------------------------
// Clustered units
// ---------------------------------------------------------------------------

ClusteredDecisionEnv::ClusteredDecisionEnv(ExecBackend& exec, const AvgTimeTable& table,
                                           FeatureContext ctx,
                                           const std::vector<nn::Tensor>& query_embeds,
                                           const Clustering& clustering, MaskConfig member_mask)
    : DecisionEnv(exec, table, std::move(ctx)),
      members_(clustering.members()),
      member_mask_(member_mask) {
  const size_t n = exec.batch().queries.size();
  if (clustering.assignment.size() != n)
    throw ShapeError("clustered decision env: assignment does not match the batch");
  if (query_embeds.size() != n)
    throw ShapeError("clustered decision env: one embedding per query required");

  unit_of_.assign(n, -1);
  for (size_t u = 0; u < members_.size(); ++u)
    for (int q : members_[u]) unit_of_[static_cast<size_t>(q)] = static_cast<int>(u);

  // Cluster embedding: sum over members keeps the representation size-aware.
  embeds_.reserve(members_.size());
  for (const std::vector<int>& m : members_) {
    nn::Tensor e = nn::Tensor::zeros(query_embeds[0].shape);
    for (int q : m)
      for (size_t k = 0; k < e.v.size(); ++k) e.v[k] += query_embeds[static_cast<size_t>(q)].v[k];
    embeds_.push_back(std::move(e));
  }
  chosen_workers_.assign(members_.size(), -1);
}

int ClusteredDecisionEnv::unit_count() const { return static_cast<int>(members_.size()); }

RunState ClusteredDecisionEnv::cluster_state(int unit) const {
  const BatchSet& batch = exec_.batch();
  RunState rs;
  int running_or_finished = 0, finished = 0;
  double first_start = 0.0, last_finish = 0.0;
  bool have_start = false;
  double avg_sum = 0.0;
  for (int q : members_[static_cast<size_t>(unit)]) {
    const QuerySpec& spec = batch.queries[static_cast<size_t>(q)];
    const QueryRun& r = exec_.run(spec.query_id);
    if (r.status != QueryStatus::pending) {
      ++running_or_finished;
      if (!have_start || r.start_time < first_start) first_start = r.start_time;
      have_start = true;
      avg_sum += table_.avg(spec.query_id, r.workers);
    } else {
      avg_sum += table_.avg_any(spec.query_id);
    }
    if (r.status == QueryStatus::finished) {
      ++finished;
      last_finish = std::max(last_finish, r.finish_time);
    }
  }
  const int total = static_cast<int>(members_[static_cast<size_t>(unit)].size());
  rs.avg_time = avg_sum;
  if (running_or_finished == 0) {
    rs.status = QueryStatus::pending;
    return rs;
  }
  // A cluster whose submitted members all finished still counts as running
  // while it has members waiting for a connection.
  const bool streaming = active_unit_ == unit && !queue_.empty();
  rs.workers = chosen_workers_[static_cast<size_t>(unit)];
  if (finished == total && !streaming) {
    rs.status = QueryStatus::finished;
    rs.elapsed = last_finish - first_start;
  } else {
    rs.status = QueryStatus::running;
    rs.elapsed = exec_.clock() - first_start;
  }
  return rs;
}

std::vector<char> ClusteredDecisionEnv::unit_pending() const {
  std::vector<char> p;
  p.reserve(members_.size());
  for (size_t u = 0; u < members_.size(); ++u)
    p.push_back(chosen_workers_[u] < 0 ? 1 : 0);
  return p;
}

bool ClusteredDecisionEnv::decision_ready() const {
  if (!queue_.empty()) return false;  // active cluster still streams members
  if (exec_.free_connections() == 0) return false;
  for (size_t u = 0; u < members_.size(); ++u)
    if (chosen_workers_[u] < 0) return true;
  return false;
}

void ClusteredDecisionEnv::act(int unit, int workers) {
  if (unit < 0 || unit >= unit_count()) throw InvalidArgumentError("act: unit out of range");
  if (!queue_.empty()) throw ProtocolError("previous cluster still has unsubmitted members");
  if (chosen_workers_[static_cast<size_t>(unit)] >= 0)
    throw ProtocolError("cluster was already scheduled");
  (void)ctx_.menu.index_of(workers);
  chosen_workers_[static_cast<size_t>(unit)] = workers;
  active_unit_ = unit;
  for (int q : mcf_order(members_[static_cast<size_t>(unit)], exec_.batch(), table_))
    queue_.push_back(q);
  fill_connections();
}

void ClusteredDecisionEnv::fill_connections() {
  const BatchSet& batch = exec_.batch();
  while (!queue_.empty() && exec_.free_connections() > 0) {
    const int q = queue_.front();
    queue_.pop_front();
    const QuerySpec& spec = batch.queries[static_cast<size_t>(q)];
    // member-level masking may veto the cluster config; fall back to the
    // nearest allowed one
    std::vector<double> avg_row;
    avg_row.reserve(static_cast<size_t>(ctx_.menu.size()));
    for (int w : ctx_.menu.workers) avg_row.push_back(table_.avg(spec.query_id, w));
    const std::vector<char> allowed =
        derive_masks({avg_row}, {1}, ctx_.menu, member_mask_);
    const int w = resolve_member_config(chosen_workers_[static_cast<size_t>(active_unit_)],
                                        allowed, ctx_.menu);
    exec_.submit(spec.query_id, w);
  }
}

std::pair<int, double> ClusteredDecisionEnv::advance() {
  const auto [qid, clock] = exec_.advance();
  fill_connections();
  return {unit_of_[static_cast<size_t>(exec_.batch().index_of(qid))], clock};
}

void ClusteredDecisionEnv::reset(uint64_t round_seed) {
  exec_.reset(round_seed);
  chosen_workers_.assign(members_.size(), -1);
  queue_.clear();
  active_unit_ = -1;
}

StateSnapshot ClusteredDecisionEnv::snapshot() const {
  StateSnapshot snap;
  snap.units.reserve(members_.size());
  for (size_t u = 0; u < members_.size(); ++u)
    snap.units.push_back(cluster_state(static_cast<int>(u)));
  const BatchSet& batch = exec_.batch();
  snap.conn_unit.reserve(exec_.connection_map().size());
  for (int qid : exec_.connection_map())
    snap.conn_unit.push_back(qid < 0 ? -1
                                     : unit_of_[static_cast<size_t>(batch.index_of(qid))]);
  return snap;
}

std::vector<std::vector<double>> ClusteredDecisionEnv::unit_avg_matrix() const {
  const BatchSet& batch = exec_.batch();
  std::vector<std::vector<double>> avg(members_.size());
  for (size_t u = 0; u < members_.size(); ++u) {
    avg[u].assign(static_cast<size_t>(ctx_.menu.size()), 0.0);
    for (int q : members_[u]) {
      const int qid = batch.queries[static_cast<size_t>(q)].query_id;
      for (int k = 0; k < ctx_.menu.size(); ++k)
        avg[u][static_cast<size_t>(k)] +=
            table_.avg(qid, ctx_.menu.workers[static_cast<size_t>(k)]);
    }
  }
  return avg;
}

// ---------------------------------------------------------------------------
// Decision loop
// ---------------------------------------------------------------------------

double run_decision_round(DecisionEnv& env, uint64_t round_seed, const UnitPolicy& policy) {
  env.reset(round_seed);
  while (!env.exec().all_finished()) {
    while (env.decision_ready()) {
      const auto [unit, workers] = policy(env);
      env.act(unit, workers);
    }
    if (!env.exec().any_running())
      throw ProtocolError("decision round stalled with no runnable unit");
    env.advance();
  }
  return env.exec().makespan();
}

}  // namespace cqsched
