#include "cqsched/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "cqsched/rng.hpp"

namespace cqsched {

void EnvConfig::validate() const {
  if (connections < 1) throw InvalidArgumentError("env needs at least one connection");
  if (!(cpu_capacity > 0.0)) throw InvalidArgumentError("cpu_capacity must be positive");
  if (!(io_capacity > 0.0)) throw InvalidArgumentError("io_capacity must be positive");
  if (buffer_tables < 0) throw InvalidArgumentError("buffer_tables must be non-negative");
  if (share_bonus < 0.0 || share_bonus > 1.0)
    throw InvalidArgumentError("share_bonus must lie in [0, 1]");
  if (noise_sigma < 0.0) throw InvalidArgumentError("noise_sigma must be non-negative");
  if (menu.workers.empty()) throw InvalidArgumentError("config menu must not be empty");
}

double amdahl_speedup(double alpha, int r) {
  return 1.0 / ((1.0 - alpha) + alpha / static_cast<double>(r));
}

Environment::Environment(const BatchSet& batch, EnvConfig cfg)
    : batch_(batch), cfg_(cfg) {
  cfg_.validate();
  batch_.validate();
  if (batch_.queries.empty()) throw InvalidArgumentError("environment needs a non-empty batch");
  reset(0);
}

int Environment::index_of(int query_id) const {
  for (size_t i = 0; i < batch_.queries.size(); ++i)
    if (batch_.queries[i].query_id == query_id) return static_cast<int>(i);
  throw ProtocolError("query " + std::to_string(query_id) + " is not part of this batch");
}

void Environment::reset(uint64_t round_seed) {
  round_seed_ = round_seed;
  clock_ = 0.0;
  total_workers_running_ = 0;
  running_count_ = 0;
  conn_query_.assign(static_cast<size_t>(cfg_.connections), -1);
  buffer_.clear();
  runs_.assign(batch_.queries.size(), QueryRun{});
  for (size_t i = 0; i < batch_.queries.size(); ++i) {
    const QuerySpec& q = batch_.queries[i];
    // Lognormal work perturbation keyed by (env seed, round seed, query id):
    // independent of submission order, reproducible across runs.
    std::mt19937_64 rng(mix64(cfg_.seed, round_seed, static_cast<uint64_t>(q.query_id)));
    const double cpu_noise = std::exp(cfg_.noise_sigma * standard_normal(rng));
    const double io_noise = std::exp(cfg_.noise_sigma * standard_normal(rng));
    runs_[i].remaining_cpu = q.cpu_work * cpu_noise;
    runs_[i].remaining_io = q.io_work * io_noise;
  }
}

const QueryRun& Environment::run(int query_id) const {
  return runs_[static_cast<size_t>(index_of(query_id))];
}

bool Environment::all_finished() const {
  for (const QueryRun& r : runs_)
    if (r.status != QueryStatus::finished) return false;
  return true;
}

bool Environment::any_running() const { return running_count_ > 0; }

bool Environment::any_pending() const {
  for (const QueryRun& r : runs_)
    if (r.status == QueryStatus::pending) return true;
  return false;
}

int Environment::free_connections() const {
  int free_count = 0;
  for (int q : conn_query_)
    if (q < 0) ++free_count;
  return free_count;
}

double Environment::makespan() const {
  if (!all_finished()) throw ProtocolError("makespan undefined before the round completes");
  double m = 0.0;
  for (const QueryRun& r : runs_) m = std::max(m, r.finish_time);
  return m;
}

void Environment::submit(int query_id, int workers) {
  const int idx = index_of(query_id);
  QueryRun& r = runs_[static_cast<size_t>(idx)];
  if (r.status != QueryStatus::pending)
    throw ProtocolError("query " + std::to_string(query_id) + " was already submitted");
  (void)cfg_.menu.index_of(workers);  // rejects configs outside the menu

  int conn = -1;
  for (int c = 0; c < cfg_.connections; ++c)
    if (conn_query_[static_cast<size_t>(c)] < 0) { conn = c; break; }
  if (conn < 0) throw ProtocolError("no free connection to submit on");

  // One-time shared-buffer discount: the resident fraction of the query's
  // table set shaves off up to share_bonus of the IO work, then the query's
  // tables become the most recently used buffer content.
  const QuerySpec& spec = batch_.queries[static_cast<size_t>(idx)];
  if (!spec.table_set.empty() && cfg_.buffer_tables > 0) {
    int hits = 0;
    for (int t : spec.table_set)
      if (std::find(buffer_.begin(), buffer_.end(), t) != buffer_.end()) ++hits;
    const double overlap = static_cast<double>(hits) / static_cast<double>(spec.table_set.size());
    r.remaining_io *= (1.0 - cfg_.share_bonus * overlap);
    // Reverse iteration keeps the table set's own order at the buffer front.
    for (auto it = spec.table_set.rbegin(); it != spec.table_set.rend(); ++it) {
      auto pos = std::find(buffer_.begin(), buffer_.end(), *it);
      if (pos != buffer_.end()) buffer_.erase(pos);
      buffer_.push_front(*it);
    }
    while (static_cast<int>(buffer_.size()) > cfg_.buffer_tables) buffer_.pop_back();
  }

  r.status = QueryStatus::running;
  r.workers = workers;
  r.conn_id = conn;
  r.submit_time = clock_;
  r.start_time = clock_;
  conn_query_[static_cast<size_t>(conn)] = query_id;
  total_workers_running_ += workers;
  running_count_ += 1;
  ++events_;
}

double Environment::cpu_rate(int query_id) const {
  const int idx = index_of(query_id);
  const QueryRun& r = runs_[static_cast<size_t>(idx)];
  if (r.status != QueryStatus::running) throw ProtocolError("cpu_rate needs a running query");
  const double share =
      std::min(1.0, cfg_.cpu_capacity / static_cast<double>(total_workers_running_));
  return amdahl_speedup(batch_.queries[static_cast<size_t>(idx)].parallel_fraction, r.workers) *
         share;
}

double Environment::io_rate(int query_id) const {
  const QueryRun& r = runs_[static_cast<size_t>(index_of(query_id))];
  if (r.status != QueryStatus::running) throw ProtocolError("io_rate needs a running query");
  return std::min(1.0, cfg_.io_capacity / static_cast<double>(running_count_));
}

double Environment::completion_horizon(int idx) const {
  const QueryRun& r = runs_[static_cast<size_t>(idx)];
  const QuerySpec& q = batch_.queries[static_cast<size_t>(idx)];
  const double share =
      std::min(1.0, cfg_.cpu_capacity / static_cast<double>(total_workers_running_));
  const double cr = amdahl_speedup(q.parallel_fraction, r.workers) * share;
  const double ir = std::min(1.0, cfg_.io_capacity / static_cast<double>(running_count_));
  return std::max(r.remaining_cpu / cr, r.remaining_io / ir);
}

std::pair<int, double> Environment::advance_to_next_completion() {
  if (running_count_ == 0) throw ProtocolError("advance needs at least one running query");

  int best_idx = -1;
  double best_h = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < runs_.size(); ++i) {
    if (runs_[i].status != QueryStatus::running) continue;
    const double h = completion_horizon(static_cast<int>(i));
    // Ties resolve toward the lower query id; batch order is id-sorted per
    // index scan, so strictly-less keeps the first (lowest) index.
    if (h < best_h) {
      best_h = h;
      best_idx = static_cast<int>(i);
    }
  }

  const double elapsed = best_h;
  for (size_t i = 0; i < runs_.size(); ++i) {
    QueryRun& r = runs_[i];
    if (r.status != QueryStatus::running) continue;
    const double cr = amdahl_speedup(batch_.queries[i].parallel_fraction, r.workers) *
                      std::min(1.0, cfg_.cpu_capacity / static_cast<double>(total_workers_running_));
    const double ir = std::min(1.0, cfg_.io_capacity / static_cast<double>(running_count_));
    r.remaining_cpu = std::max(0.0, r.remaining_cpu - elapsed * cr);
    r.remaining_io = std::max(0.0, r.remaining_io - elapsed * ir);
  }
  clock_ += elapsed;

  QueryRun& done = runs_[static_cast<size_t>(best_idx)];
  done.remaining_cpu = 0.0;
  done.remaining_io = 0.0;
  done.status = QueryStatus::finished;
  done.finish_time = clock_;
  conn_query_[static_cast<size_t>(done.conn_id)] = -1;
  total_workers_running_ -= done.workers;
  running_count_ -= 1;
  ++events_;
  return {batch_.queries[static_cast<size_t>(best_idx)].query_id, clock_};
}

RoundRecord Environment::round_record(int round_id) const {
  RoundRecord rec;
  rec.round_id = round_id;
  for (size_t i = 0; i < runs_.size(); ++i) {
    const QueryRun& r = runs_[i];
    if (r.status != QueryStatus::finished) continue;
    LogEntry e;
    e.query_id = batch_.queries[i].query_id;
    e.workers = r.workers;
    e.conn_id = r.conn_id;
    e.submit = r.submit_time;
    e.start = r.start_time;
    e.finish = r.finish_time;
    rec.entries.push_back(e);
  }
  // Chronological by start, then by query id, for stable serialization.
  std::sort(rec.entries.begin(), rec.entries.end(), [](const LogEntry& a, const LogEntry& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.query_id < b.query_id;
  });
  return rec;
}

RoundRecord run_episode(Environment& env, uint64_t round_seed, const EnvPolicy& policy,
                        int round_id) {
  env.reset(round_seed);
  while (!env.all_finished()) {
    while (env.free_connections() > 0 && env.any_pending()) {
      const Action a = policy(env);
      env.submit(a.query_id, a.workers);
    }
    if (env.any_running()) env.advance_to_next_completion();
  }
  return env.round_record(round_id);
}

}  // namespace cqsched
