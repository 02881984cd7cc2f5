#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cqsched/errors.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Query descriptions
// ---------------------------------------------------------------------------

enum class OperatorKind { scan, filter, join, aggregate, sort };
inline constexpr int kOperatorKindCount = 5;

const char* operator_kind_name(OperatorKind k);
OperatorKind operator_kind_from_name(const std::string& name);

struct PlanNode {
  OperatorKind op = OperatorKind::scan;
  std::vector<int> table_ids;       // non-empty only for scans
  double selectivity = 1.0;         // in (0, 1]
  std::vector<PlanNode> children;   // joins have exactly 2, unary ops 1, scans 0

  void validate() const;            // throws InvalidArgumentError on bad shape
};

struct QuerySpec {
  int query_id = 0;
  PlanNode plan;
  double cpu_work = 1.0;            // seconds of single-worker CPU service
  double io_work = 1.0;             // seconds of unit-rate IO service
  std::vector<int> table_set;       // sorted union of scan leaves
  double parallel_fraction = 0.5;   // Amdahl fraction in [0, 1]

  void validate() const;
};

struct BatchSet {
  std::vector<QuerySpec> queries;

  int index_of(int query_id) const;  // throws MissingDataError when absent
  void validate() const;
};

// The per-query parameter menu: the number of parallel workers a query may be
// submitted with.  Index order is ascending resource amount.
struct ConfigMenu {
  std::vector<int> workers{1, 2, 4};

  int size() const { return static_cast<int>(workers.size()); }
  int index_of(int w) const;         // throws InvalidArgumentError when absent
  int minimal() const { return workers.front(); }
};

// ---------------------------------------------------------------------------
// Workload generation
// ---------------------------------------------------------------------------

enum class WorkloadProfile { plain, planted };

inline constexpr int kTableVocabulary = 16;  // table ids live in [0, 16)

// Deterministic synthetic batch.  The planted profile additionally guarantees
// structure a scheduler can exploit: at least one long-tail query (total work
// at least 3x the median), at least two disjoint CPU-heavy/IO-heavy pairs and
// at least two pairs sharing at least half of their table sets.  The planted
// profile requires n >= 9 so all guarantees fit.
BatchSet generate_workload(int n, uint64_t seed, WorkloadProfile profile);

// ---------------------------------------------------------------------------
// Run-time status features
// ---------------------------------------------------------------------------

enum class QueryStatus { pending, running, finished };

struct RunState {
  QueryStatus status = QueryStatus::pending;
  std::optional<int> workers;        // engaged/used config; empty iff pending
  double elapsed = 0.0;              // seconds since start; 0 iff pending
  double avg_time = 1.0;             // historical average execution time
};

struct TimeNormalizer {
  double scale = 1.0;                // > 0; divides every time feature
};

inline constexpr int kStatusOneHot = 3;

// Fixed-layout numeric description of one query's run state:
//   [status one-hot (3)] ++ [workers one-hot (|menu|), zeros when pending]
//   ++ [elapsed / scale] ++ [avg_time / scale]
std::vector<double> feature_vector(const RunState& rs, const ConfigMenu& menu,
                                   const TimeNormalizer& norm);

inline int feature_dim(const ConfigMenu& menu) { return kStatusOneHot + menu.size() + 2; }

// ---------------------------------------------------------------------------
// Execution logs
// ---------------------------------------------------------------------------

struct LogEntry {
  int query_id = 0;
  int workers = 1;
  int conn_id = 0;
  double submit = 0.0;
  double start = 0.0;
  double finish = 0.0;
};

struct RoundRecord {
  int round_id = 0;
  std::vector<LogEntry> entries;
};

struct ExecLog {
  std::vector<RoundRecord> rounds;

  void append(RoundRecord r) { rounds.push_back(std::move(r)); }
  size_t entry_count() const;
};

// Tab-separated text representation; times keep 15 significant digits so a
// round trip is lossless well below the nanosecond level.
void write_exec_log(const ExecLog& log, std::ostream& out);
void write_exec_log(const ExecLog& log, const std::string& path);
ExecLog read_exec_log(std::istream& in);
ExecLog read_exec_log_file(const std::string& path);
std::string exec_log_to_string(const ExecLog& log);

// JSON round trip for batches.
std::string batch_to_json(const BatchSet& batch);
BatchSet batch_from_json(const std::string& text);
void write_batch(const BatchSet& batch, const std::string& path);
BatchSet read_batch(const std::string& path);

// ---------------------------------------------------------------------------
// Averages from logs
// ---------------------------------------------------------------------------

// Mean (finish - start) per (query, workers) with a documented fallback: if a
// query never ran under the requested config, the mean over all of its
// entries is used; a query absent from the log raises MissingDataError.
class AvgTimeTable {
 public:
  static AvgTimeTable from_log(const ExecLog& log);

  double avg(int query_id, int workers) const;
  double avg_any(int query_id) const;
  bool covers(int query_id, int workers) const;
  bool has_query(int query_id) const;
  double max_avg() const;  // max over all (query, workers) cells; >= 0
  TimeNormalizer normalizer() const;

 private:
  std::map<std::pair<int, int>, std::pair<double, int>> cells_;  // sum, count
  std::map<int, std::pair<double, int>> totals_;
};

double avg_exec_time(const ExecLog& log, int query_id, int workers);

// ---------------------------------------------------------------------------
// Simple statistics
// ---------------------------------------------------------------------------

// Mean and population standard deviation (divide by m, not m - 1).
std::pair<double, double> summarize(const std::vector<double>& xs);

}  // namespace cqsched
