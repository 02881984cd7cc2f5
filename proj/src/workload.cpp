#include "cqsched/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cqsched/rng.hpp"

namespace cqsched {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Plan / spec validation
// ---------------------------------------------------------------------------

const char* operator_kind_name(OperatorKind k) {
  switch (k) {
    case OperatorKind::scan: return "scan";
    case OperatorKind::filter: return "filter";
    case OperatorKind::join: return "join";
    case OperatorKind::aggregate: return "aggregate";
    case OperatorKind::sort: return "sort";
  }
  throw InvalidArgumentError("unknown operator kind");
}

OperatorKind operator_kind_from_name(const std::string& name) {
  if (name == "scan") return OperatorKind::scan;
  if (name == "filter") return OperatorKind::filter;
  if (name == "join") return OperatorKind::join;
  if (name == "aggregate") return OperatorKind::aggregate;
  if (name == "sort") return OperatorKind::sort;
  throw DataFormatError("unknown operator kind: " + name);
}

void PlanNode::validate() const {
  if (!(selectivity > 0.0) || selectivity > 1.0)
    throw InvalidArgumentError("plan node selectivity must lie in (0, 1]");
  switch (op) {
    case OperatorKind::scan:
      if (!children.empty()) throw InvalidArgumentError("scan nodes must be leaves");
      if (table_ids.empty()) throw InvalidArgumentError("scan nodes need at least one table");
      break;
    case OperatorKind::join:
      if (children.size() != 2) throw InvalidArgumentError("join nodes need exactly two children");
      break;
    default:
      if (children.size() != 1)
        throw InvalidArgumentError("unary plan nodes need exactly one child");
      break;
  }
  if (op != OperatorKind::scan && !table_ids.empty())
    throw InvalidArgumentError("only scan nodes may carry table ids");
  for (const PlanNode& c : children) c.validate();
}

namespace {

void collect_scan_tables(const PlanNode& node, std::set<int>& out) {
  if (node.op == OperatorKind::scan)
    out.insert(node.table_ids.begin(), node.table_ids.end());
  for (const PlanNode& c : node.children) collect_scan_tables(c, out);
}

}  // namespace

void QuerySpec::validate() const {
  plan.validate();
  if (!(cpu_work > 0.0)) throw InvalidArgumentError("cpu_work must be positive");
  if (!(io_work > 0.0)) throw InvalidArgumentError("io_work must be positive");
  if (parallel_fraction < 0.0 || parallel_fraction > 1.0)
    throw InvalidArgumentError("parallel_fraction must lie in [0, 1]");
  std::set<int> scans;
  collect_scan_tables(plan, scans);
  std::vector<int> want(scans.begin(), scans.end());
  if (want != table_set)
    throw InvalidArgumentError("table_set must equal the union of scan leaf tables");
}

void BatchSet::validate() const {
  std::set<int> ids;
  for (const QuerySpec& q : queries) {
    q.validate();
    if (!ids.insert(q.query_id).second)
      throw InvalidArgumentError("duplicate query_id in batch");
  }
}

int BatchSet::index_of(int query_id) const {
  for (size_t i = 0; i < queries.size(); ++i)
    if (queries[i].query_id == query_id) return static_cast<int>(i);
  throw MissingDataError("query_id " + std::to_string(query_id) + " not in batch");
}

int ConfigMenu::index_of(int w) const {
  for (int i = 0; i < size(); ++i)
    if (workers[i] == w) return i;
  throw InvalidArgumentError("workers value " + std::to_string(w) + " not in config menu");
}

// ---------------------------------------------------------------------------
// Workload generation
// ---------------------------------------------------------------------------

namespace {

enum class Role { base, cpu_heavy, io_heavy, shared, long_tail };

PlanNode make_scan(int table, double sel) {
  PlanNode n;
  n.op = OperatorKind::scan;
  n.table_ids = {table};
  n.selectivity = sel;
  return n;
}

PlanNode make_unary(OperatorKind op, PlanNode child, double sel) {
  PlanNode n;
  n.op = op;
  n.selectivity = sel;
  n.children.push_back(std::move(child));
  return n;
}

PlanNode make_join(PlanNode l, PlanNode r, double sel) {
  PlanNode n;
  n.op = OperatorKind::join;
  n.selectivity = sel;
  n.children.push_back(std::move(l));
  n.children.push_back(std::move(r));
  return n;
}

// Left-deep join chain over the scan tables followed by a stack of unary
// operators; CPU-flavoured queries get sort/aggregate stages, IO-flavoured
// ones at most a filter.
PlanNode build_plan(const std::vector<int>& tables, int unary_ops, bool cpu_flavor,
                    std::mt19937_64& rng) {
  PlanNode node = make_scan(tables[0], uniform(rng, 0.05, 1.0));
  for (size_t i = 1; i < tables.size(); ++i)
    node = make_join(std::move(node), make_scan(tables[i], uniform(rng, 0.05, 1.0)),
                     uniform(rng, 0.2, 1.0));
  for (int u = 0; u < unary_ops; ++u) {
    OperatorKind op = OperatorKind::filter;
    if (cpu_flavor) op = (u % 2 == 0) ? OperatorKind::sort : OperatorKind::aggregate;
    node = make_unary(op, std::move(node), uniform(rng, 0.2, 1.0));
  }
  return node;
}

std::vector<int> draw_tables(int count, std::mt19937_64& rng) {
  std::set<int> t;
  while (static_cast<int>(t.size()) < count)
    t.insert(uniform_int(rng, 0, kTableVocabulary - 1));
  return {t.begin(), t.end()};
}

}  // namespace

BatchSet generate_workload(int n, uint64_t seed, WorkloadProfile profile) {
  if (n <= 0) throw InvalidArgumentError("workload size must be positive");
  if (profile == WorkloadProfile::planted && n < 9)
    throw InvalidArgumentError("planted workloads need at least 9 queries");

  std::mt19937_64 rng(mix64(seed, profile == WorkloadProfile::planted ? 2 : 1));
  std::vector<Role> roles(static_cast<size_t>(n), Role::base);
  std::vector<int> partner(static_cast<size_t>(n), -1);
  std::vector<int> shared_group(static_cast<size_t>(n), -1);

  if (profile == WorkloadProfile::planted) {
    const int long_tails = std::max(1, n / 25);
    const int comp_pairs = std::max(2, n / 10);
    const int shared_pairs = std::max(2, n / 12);

    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    seeded_shuffle(pool, rng);

    auto take_at = [&pool](size_t k) {
      const int v = pool[k];
      pool.erase(pool.begin() + static_cast<long>(k));
      return v;
    };
    // Long-tail queries sit in the last third of the submission order, which
    // is exactly where arrival-order scheduling pays the highest price.
    for (int t = 0; t < long_tails; ++t) {
      size_t pick = 0;
      for (size_t k = 0; k < pool.size(); ++k)
        if (pool[k] >= (2 * n) / 3) { pick = k; break; }
      roles[static_cast<size_t>(take_at(pick))] = Role::long_tail;
    }
    // Paired structure is planted far apart in the order so that plain
    // arrival order does not co-locate it by accident.
    auto take_pair = [&](Role a, Role b, int group) {
      const int first = take_at(0);
      size_t pick = 0;
      bool found = false;
      for (size_t k = 0; k < pool.size(); ++k)
        if (std::abs(pool[k] - first) >= n / 4) { pick = k; found = true; break; }
      const int second = found ? take_at(pick) : take_at(0);
      roles[static_cast<size_t>(first)] = a;
      roles[static_cast<size_t>(second)] = b;
      partner[static_cast<size_t>(first)] = second;
      partner[static_cast<size_t>(second)] = first;
      if (group >= 0) {
        shared_group[static_cast<size_t>(first)] = group;
        shared_group[static_cast<size_t>(second)] = group;
      }
    };
    for (int p = 0; p < comp_pairs; ++p) take_pair(Role::cpu_heavy, Role::io_heavy, -1);
    for (int p = 0; p < shared_pairs; ++p) take_pair(Role::shared, Role::shared, p);
  }

  BatchSet batch;
  batch.queries.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    QuerySpec& q = batch.queries[static_cast<size_t>(i)];
    q.query_id = i;
    std::vector<int> tables;
    int unary = 1;
    bool cpu_flavor = false;
    if (profile == WorkloadProfile::plain) {
      q.cpu_work = uniform(rng, 1.5, 6.0);
      q.io_work = uniform(rng, 1.5, 6.0);
      q.parallel_fraction = uniform(rng, 0.2, 0.9);
      tables = draw_tables(uniform_int(rng, 1, 4), rng);
      unary = uniform_int(rng, 0, 2);
      cpu_flavor = q.cpu_work > q.io_work;
    } else {
      switch (roles[static_cast<size_t>(i)]) {
        case Role::base:
          q.cpu_work = uniform(rng, 2.5, 4.5);
          q.io_work = uniform(rng, 2.5, 4.5);
          q.parallel_fraction = uniform(rng, 0.35, 0.65);
          tables = draw_tables(uniform_int(rng, 1, 3), rng);
          unary = uniform_int(rng, 1, 2);
          cpu_flavor = q.cpu_work > q.io_work;
          break;
        case Role::cpu_heavy:
          q.cpu_work = uniform(rng, 5.5, 7.0);
          q.io_work = uniform(rng, 1.0, 1.8);
          q.parallel_fraction = uniform(rng, 0.75, 0.9);
          tables = draw_tables(uniform_int(rng, 1, 2), rng);
          unary = 2;
          cpu_flavor = true;
          break;
        case Role::io_heavy:
          q.cpu_work = uniform(rng, 0.8, 1.5);
          q.io_work = uniform(rng, 5.5, 7.0);
          q.parallel_fraction = uniform(rng, 0.2, 0.35);
          tables = draw_tables(uniform_int(rng, 3, 4), rng);
          unary = uniform_int(rng, 0, 1);
          cpu_flavor = false;
          break;
        case Role::shared: {
          q.cpu_work = uniform(rng, 1.5, 2.5);
          q.io_work = uniform(rng, 5.0, 6.5);
          q.parallel_fraction = uniform(rng, 0.3, 0.5);
          const int g = shared_group[static_cast<size_t>(i)] % (kTableVocabulary / 4);
          tables = {4 * g, 4 * g + 1, 4 * g + 2, 4 * g + 3};
          unary = uniform_int(rng, 0, 1);
          cpu_flavor = false;
          break;
        }
        case Role::long_tail:
          q.cpu_work = uniform(rng, 21.0, 24.0);
          q.io_work = uniform(rng, 2.5, 3.5);
          q.parallel_fraction = uniform(rng, 0.85, 0.95);
          tables = draw_tables(uniform_int(rng, 2, 3), rng);
          unary = 2;
          cpu_flavor = true;
          break;
      }
    }
    q.plan = build_plan(tables, unary, cpu_flavor, rng);
    q.table_set = tables;
  }

  if (profile == WorkloadProfile::planted) {
    // Guarantee the long-tail margin even after the random draws above.
    std::vector<double> totals;
    totals.reserve(batch.queries.size());
    for (const QuerySpec& q : batch.queries) totals.push_back(q.cpu_work + q.io_work);
    std::vector<double> sorted = totals;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    for (int i = 0; i < n; ++i)
      if (roles[static_cast<size_t>(i)] == Role::long_tail) {
        QuerySpec& q = batch.queries[static_cast<size_t>(i)];
        q.cpu_work = std::max(q.cpu_work, 3.05 * median - q.io_work);
      }
  }

  batch.validate();
  return batch;
}

// ---------------------------------------------------------------------------
// Feature vectors
// ---------------------------------------------------------------------------

std::vector<double> feature_vector(const RunState& rs, const ConfigMenu& menu,
                                   const TimeNormalizer& norm) {
  if (!(norm.scale > 0.0)) throw InvalidArgumentError("time normalizer scale must be positive");
  if (!(rs.avg_time > 0.0)) throw InvalidArgumentError("run state avg_time must be positive");
  if (rs.elapsed < 0.0) throw InvalidArgumentError("run state elapsed must be non-negative");
  const bool pending = rs.status == QueryStatus::pending;
  if (pending && (rs.workers.has_value() || rs.elapsed != 0.0))
    throw InvalidArgumentError("pending queries carry no config and no elapsed time");
  if (!pending && !rs.workers.has_value())
    throw InvalidArgumentError("running/finished queries need a config");

  std::vector<double> f(static_cast<size_t>(feature_dim(menu)), 0.0);
  f[static_cast<size_t>(rs.status)] = 1.0;
  if (rs.workers.has_value())
    f[static_cast<size_t>(kStatusOneHot + menu.index_of(*rs.workers))] = 1.0;
  f[f.size() - 2] = rs.elapsed / norm.scale;
  f[f.size() - 1] = rs.avg_time / norm.scale;
  return f;
}

// ---------------------------------------------------------------------------
// Execution logs
// ---------------------------------------------------------------------------

size_t ExecLog::entry_count() const {
  size_t c = 0;
  for (const RoundRecord& r : rounds) c += r.entries.size();
  return c;
}

namespace {

std::string format_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", t);
  return buf;
}

}  // namespace

void write_exec_log(const ExecLog& log, std::ostream& out) {
  for (const RoundRecord& r : log.rounds)
    for (const LogEntry& e : r.entries)
      out << r.round_id << '\t' << e.query_id << '\t' << e.workers << '\t' << e.conn_id
          << '\t' << format_time(e.submit) << '\t' << format_time(e.start) << '\t'
          << format_time(e.finish) << '\n';
}

void write_exec_log(const ExecLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot open " + path + " for writing");
  write_exec_log(log, out);
}

std::string exec_log_to_string(const ExecLog& log) {
  std::ostringstream s;
  write_exec_log(log, s);
  return s.str();
}

ExecLog read_exec_log(std::istream& in) {
  ExecLog log;
  std::map<int, size_t> round_pos;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t from = 0;
    while (true) {
      const size_t tab = line.find('\t', from);
      fields.push_back(line.substr(from, tab == std::string::npos ? tab : tab - from));
      if (tab == std::string::npos) break;
      from = tab + 1;
    }
    if (fields.size() != 7)
      throw DataFormatError("exec log line " + std::to_string(line_no) +
                            ": expected 7 tab-separated fields");
    try {
      const int round_id = std::stoi(fields[0]);
      LogEntry e;
      e.query_id = std::stoi(fields[1]);
      e.workers = std::stoi(fields[2]);
      e.conn_id = std::stoi(fields[3]);
      e.submit = std::stod(fields[4]);
      e.start = std::stod(fields[5]);
      e.finish = std::stod(fields[6]);
      auto it = round_pos.find(round_id);
      if (it == round_pos.end()) {
        round_pos[round_id] = log.rounds.size();
        log.rounds.push_back(RoundRecord{round_id, {e}});
      } else {
        log.rounds[it->second].entries.push_back(e);
      }
    } catch (const std::invalid_argument&) {
      throw DataFormatError("exec log line " + std::to_string(line_no) + ": bad number");
    } catch (const std::out_of_range&) {
      throw DataFormatError("exec log line " + std::to_string(line_no) + ": number out of range");
    }
  }
  return log;
}

ExecLog read_exec_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open exec log " + path);
  return read_exec_log(in);
}

// ---------------------------------------------------------------------------
// Batch JSON
// ---------------------------------------------------------------------------

namespace {

json plan_to_json(const PlanNode& n) {
  json j;
  j["op"] = operator_kind_name(n.op);
  j["selectivity"] = n.selectivity;
  if (!n.table_ids.empty()) j["tables"] = n.table_ids;
  if (!n.children.empty()) {
    json kids = json::array();
    for (const PlanNode& c : n.children) kids.push_back(plan_to_json(c));
    j["children"] = std::move(kids);
  }
  return j;
}

PlanNode plan_from_json(const json& j) {
  PlanNode n;
  n.op = operator_kind_from_name(j.at("op").get<std::string>());
  n.selectivity = j.at("selectivity").get<double>();
  if (j.contains("tables")) n.table_ids = j.at("tables").get<std::vector<int>>();
  if (j.contains("children"))
    for (const json& c : j.at("children")) n.children.push_back(plan_from_json(c));
  return n;
}

}  // namespace

std::string batch_to_json(const BatchSet& batch) {
  json j;
  j["queries"] = json::array();
  for (const QuerySpec& q : batch.queries) {
    json jq;
    jq["query_id"] = q.query_id;
    jq["cpu_work"] = q.cpu_work;
    jq["io_work"] = q.io_work;
    jq["parallel_fraction"] = q.parallel_fraction;
    jq["table_set"] = q.table_set;
    jq["plan"] = plan_to_json(q.plan);
    j["queries"].push_back(std::move(jq));
  }
  return j.dump(2);
}

BatchSet batch_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataFormatError(std::string("batch json: ") + e.what());
  }
  BatchSet batch;
  try {
    for (const json& jq : j.at("queries")) {
      QuerySpec q;
      q.query_id = jq.at("query_id").get<int>();
      q.cpu_work = jq.at("cpu_work").get<double>();
      q.io_work = jq.at("io_work").get<double>();
      q.parallel_fraction = jq.at("parallel_fraction").get<double>();
      q.table_set = jq.at("table_set").get<std::vector<int>>();
      q.plan = plan_from_json(jq.at("plan"));
      batch.queries.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw DataFormatError(std::string("batch json: ") + e.what());
  }
  batch.validate();
  return batch;
}

void write_batch(const BatchSet& batch, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot open " + path + " for writing");
  out << batch_to_json(batch) << '\n';
}

BatchSet read_batch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open batch file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return batch_from_json(s.str());
}

// ---------------------------------------------------------------------------
// Averages
// ---------------------------------------------------------------------------

AvgTimeTable AvgTimeTable::from_log(const ExecLog& log) {
  AvgTimeTable t;
  for (const RoundRecord& r : log.rounds)
    for (const LogEntry& e : r.entries) {
      const double d = e.finish - e.start;
      auto& cell = t.cells_[{e.query_id, e.workers}];
      cell.first += d;
      cell.second += 1;
      auto& tot = t.totals_[e.query_id];
      tot.first += d;
      tot.second += 1;
    }
  return t;
}

bool AvgTimeTable::covers(int query_id, int workers) const {
  return cells_.count({query_id, workers}) > 0;
}

bool AvgTimeTable::has_query(int query_id) const { return totals_.count(query_id) > 0; }

double AvgTimeTable::avg(int query_id, int workers) const {
  auto it = cells_.find({query_id, workers});
  if (it != cells_.end()) return it->second.first / it->second.second;
  return avg_any(query_id);
}

double AvgTimeTable::avg_any(int query_id) const {
  auto it = totals_.find(query_id);
  if (it == totals_.end())
    throw MissingDataError("no log entries for query " + std::to_string(query_id));
  return it->second.first / it->second.second;
}

double AvgTimeTable::max_avg() const {
  double m = 0.0;
  for (const auto& [key, cell] : cells_) m = std::max(m, cell.first / cell.second);
  return m;
}

TimeNormalizer AvgTimeTable::normalizer() const {
  const double m = max_avg();
  return TimeNormalizer{m > 0.0 ? m : 1.0};
}

double avg_exec_time(const ExecLog& log, int query_id, int workers) {
  return AvgTimeTable::from_log(log).avg(query_id, workers);
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

std::pair<double, double> summarize(const std::vector<double>& xs) {
  if (xs.empty()) throw InvalidArgumentError("summarize needs at least one value");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());  // population variance
  return {mean, std::sqrt(var)};
}

}  // namespace cqsched
