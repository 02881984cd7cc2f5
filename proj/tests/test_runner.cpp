#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqsched/errors.hpp"
#include "cqsched/runner.hpp"

using namespace cqsched;
namespace fs = std::filesystem;

namespace {

size_t count_of(const std::string& hay, const std::string& needle) {
  size_t count = 0;
  for (size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size()))
    ++count;
  return count;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cqsched_test_" + tag);
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Calibration and contexts
// ---------------------------------------------------------------------------

TEST_CASE("calibration measures every query under every config") {
  const BatchSet batch = generate_workload(5, 61, WorkloadProfile::plain);
  EnvConfig env;
  env.connections = 3;
  const int repeats = 2;
  const ExecLog log = calibrate(batch, env, 7, repeats);

  CHECK(log.rounds.size() ==
        static_cast<size_t>(repeats * env.menu.size()) * batch.queries.size());
  for (size_t i = 0; i < log.rounds.size(); ++i) {
    CHECK(log.rounds[i].round_id == static_cast<int>(i));
    REQUIRE(log.rounds[i].entries.size() == 1);  // solo runs only
  }

  const AvgTimeTable table = AvgTimeTable::from_log(log);
  for (const QuerySpec& q : batch.queries)
    for (const int w : env.menu.workers) {
      CHECK(table.covers(q.query_id, w));
      CHECK(table.avg(q.query_id, w) > 0.0);
    }

  CHECK_THROWS_AS((void)calibrate(batch, env, 7, 0), InvalidArgumentError);
}

TEST_CASE("feature contexts are assembled from environment and table") {
  const BatchSet batch = generate_workload(4, 62, WorkloadProfile::plain);
  EnvConfig env;
  env.connections = 3;
  const AvgTimeTable table = AvgTimeTable::from_log(calibrate(batch, env, 8));

  const FeatureContext ctx = make_feature_context(env, table, 4);
  CHECK(ctx.connections == 3);
  CHECK(ctx.max_units == 4);
  CHECK(ctx.menu.workers == env.menu.workers);
  CHECK(ctx.norm.scale == table.normalizer().scale);
  CHECK(ctx.norm.scale > 0.0);

  CHECK_THROWS_AS((void)make_feature_context(env, table, 0), InvalidArgumentError);
}

// ---------------------------------------------------------------------------
// Experiments over heuristic strategies
// ---------------------------------------------------------------------------

namespace {

ExperimentConfig heuristics_experiment(int n, int connections, int rounds, uint64_t seed) {
  ExperimentConfig cfg;
  cfg.batch = generate_workload(n, seed, WorkloadProfile::plain);
  cfg.env.connections = connections;
  cfg.rounds = rounds;
  cfg.seed = seed;
  Strategy fifo;
  fifo.kind = StrategyKind::fifo;
  Strategy random;
  random.kind = StrategyKind::random;
  random.seed = 99;
  Strategy mcf;
  mcf.kind = StrategyKind::mcf;
  cfg.strategies = {fifo, random, mcf};
  return cfg;
}

AvgTimeTable experiment_table(const ExperimentConfig& cfg) {
  return AvgTimeTable::from_log(calibrate(cfg.batch, cfg.env, cfg.seed + 1000));
}

}  // namespace

TEST_CASE("a single connection serializes fifo into a gap-free chain") {
  ExperimentConfig cfg = heuristics_experiment(5, 1, 3, 63);
  cfg.strategies.resize(1);  // fifo only
  const std::vector<StrategyOutcome> out = run_experiment(cfg, nullptr);
  REQUIRE(out.size() == 1);

  for (size_t r = 0; r < out[0].log.rounds.size(); ++r) {
    const RoundRecord& round = out[0].log.rounds[r];
    REQUIRE(round.entries.size() == cfg.batch.queries.size());
    double serial_sum = 0.0;
    double max_finish = 0.0;
    for (const LogEntry& e : round.entries) {
      serial_sum += e.finish - e.start;
      max_finish = std::max(max_finish, e.finish);
      CHECK(e.workers == cfg.env.menu.minimal());
      CHECK(e.conn_id == 0);
    }
    CHECK(out[0].round_makespans[r] == doctest::Approx(serial_sum).epsilon(1e-9));
    CHECK(out[0].round_makespans[r] == doctest::Approx(max_finish).epsilon(1e-12));

    // fifo preserves batch order on the single connection
    for (size_t i = 0; i < round.entries.size(); ++i)
      CHECK(round.entries[i].query_id == cfg.batch.queries[i].query_id);
    for (size_t i = 1; i < round.entries.size(); ++i)
      CHECK(round.entries[i].start >= round.entries[i - 1].finish - 1e-12);
  }
}

TEST_CASE("strategy logs satisfy the executor invariants") {
  const ExperimentConfig cfg = heuristics_experiment(7, 3, 4, 64);
  const AvgTimeTable table = experiment_table(cfg);
  const std::vector<StrategyOutcome> out = run_experiment(cfg, &table);
  REQUIRE(out.size() == 3);

  for (const StrategyOutcome& oc : out) {
    REQUIRE(oc.round_makespans.size() == static_cast<size_t>(cfg.rounds));
    REQUIRE(oc.log.rounds.size() == static_cast<size_t>(cfg.rounds));

    // reported statistics recompute from the per-round makespans
    double mean = 0.0;
    for (const double m : oc.round_makespans) mean += m;
    mean /= static_cast<double>(oc.round_makespans.size());
    double var = 0.0;
    for (const double m : oc.round_makespans) var += (m - mean) * (m - mean);
    var /= static_cast<double>(oc.round_makespans.size());
    CHECK(oc.mean_makespan == doctest::Approx(mean).epsilon(1e-12));
    CHECK(oc.std_makespan == doctest::Approx(std::sqrt(var)).epsilon(1e-9));

    for (size_t r = 0; r < oc.log.rounds.size(); ++r) {
      const RoundRecord& round = oc.log.rounds[r];
      REQUIRE(round.entries.size() == cfg.batch.queries.size());

      // makespan is the maximum finish, recomputed from the log
      double max_finish = 0.0;
      for (const LogEntry& e : round.entries) max_finish = std::max(max_finish, e.finish);
      CHECK(oc.round_makespans[r] == doctest::Approx(max_finish).epsilon(1e-12));

      // whenever a query is still unstarted, every connection must be busy
      std::set<double> instants;
      for (const LogEntry& e : round.entries) {
        CHECK(e.start == doctest::Approx(e.submit).epsilon(1e-12));  // admission is immediate
        instants.insert(e.start);
        instants.insert(e.finish);
      }
      std::vector<double> ticks(instants.begin(), instants.end());
      for (size_t i = 0; i + 1 < ticks.size(); ++i) {
        const double t = 0.5 * (ticks[i] + ticks[i + 1]);
        int running = 0, unstarted = 0;
        for (const LogEntry& e : round.entries) {
          if (e.start <= t && t < e.finish) ++running;
          if (e.start > t) ++unstarted;
        }
        if (unstarted > 0) CHECK(running == cfg.env.connections);
      }
    }
  }
}

TEST_CASE("the random strategy redraws its permutation from each round seed") {
  ExperimentConfig cfg = heuristics_experiment(8, 2, 4, 65);
  cfg.strategies = {cfg.strategies[1]};  // random only
  const std::vector<StrategyOutcome> out = run_experiment(cfg, nullptr);
  REQUIRE(out.size() == 1);

  const auto submit_order = [](const RoundRecord& round) {
    std::vector<std::pair<double, int>> order;
    for (const LogEntry& e : round.entries) order.push_back({e.submit, e.query_id});
    std::sort(order.begin(), order.end());
    std::vector<int> ids;
    for (const auto& [t, id] : order) ids.push_back(id);
    return ids;
  };

  // across rounds the permutation changes (n = 8: a repeat would be a fluke)
  bool any_differ = false;
  for (size_t r = 1; r < out[0].log.rounds.size(); ++r)
    if (submit_order(out[0].log.rounds[r]) != submit_order(out[0].log.rounds[0]))
      any_differ = true;
  CHECK(any_differ);

  // identical experiment -> identical logs, bit for bit
  const std::vector<StrategyOutcome> again = run_experiment(cfg, nullptr);
  REQUIRE(again.size() == 1);
  CHECK(again[0].mean_makespan == out[0].mean_makespan);
  for (size_t r = 0; r < out[0].log.rounds.size(); ++r)
    CHECK(submit_order(again[0].log.rounds[r]) == submit_order(out[0].log.rounds[r]));

  // a different strategy stream draws different permutations
  cfg.strategies[0].seed = 100;
  const std::vector<StrategyOutcome> other = run_experiment(cfg, nullptr);
  bool stream_differs = false;
  for (size_t r = 0; r < out[0].log.rounds.size(); ++r)
    if (submit_order(other[0].log.rounds[r]) != submit_order(out[0].log.rounds[r]))
      stream_differs = true;
  CHECK(stream_differs);
}

TEST_CASE("experiments reject inconsistent requests") {
  ExperimentConfig cfg = heuristics_experiment(4, 2, 2, 66);
  SUBCASE("mcf needs the calibration table") {
    CHECK_THROWS_AS((void)run_experiment(cfg, nullptr), MissingDataError);
  }
  SUBCASE("rl strategies need a checkpoint") {
    Strategy rl;
    rl.kind = StrategyKind::rl;
    cfg.strategies = {rl};
    const AvgTimeTable table = experiment_table(cfg);
    CHECK_THROWS_AS((void)run_experiment(cfg, &table), InvalidArgumentError);
  }
  SUBCASE("at least one round and one strategy") {
    cfg.rounds = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
    cfg.rounds = 2;
    cfg.strategies.clear();
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
  }
}

TEST_CASE("experiments persist logs, metrics and the run record") {
  const TempDir dir("persist");
  ExperimentConfig cfg = heuristics_experiment(5, 2, 3, 67);
  cfg.out_dir = dir.path.string();
  const AvgTimeTable table = experiment_table(cfg);
  const std::vector<StrategyOutcome> out = run_experiment(cfg, &table);

  for (const StrategyOutcome& oc : out) {
    const fs::path log_path = dir.path / (oc.name + "_log.tsv");
    REQUIRE(fs::exists(log_path));
    const ExecLog log = read_exec_log_file(log_path.string());
    CHECK(log.rounds.size() == static_cast<size_t>(cfg.rounds));
  }

  std::ifstream metrics_in(dir.path / "metrics.json");
  REQUIRE(metrics_in.good());
  const nlohmann::json metrics = nlohmann::json::parse(metrics_in);
  REQUIRE(metrics.contains("strategies"));
  REQUIRE(metrics["strategies"].size() == out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const nlohmann::json& s = metrics["strategies"][i];
    CHECK(s["name"] == out[i].name);
    CHECK(s["mean_makespan"] == doctest::Approx(out[i].mean_makespan));
    CHECK(s["std_makespan"] == doctest::Approx(out[i].std_makespan));
    REQUIRE(s["round_makespans"].size() == out[i].round_makespans.size());
  }

  std::ifstream record_in(dir.path / "experiment.json");
  REQUIRE(record_in.good());
  const nlohmann::json record = nlohmann::json::parse(record_in);
  CHECK(record["seed"] == cfg.seed);
  CHECK(record["rounds"] == cfg.rounds);
  CHECK(record["queries"] == cfg.batch.queries.size());
  REQUIRE(record["strategies"].size() == cfg.strategies.size());
  CHECK(record["strategies"][0]["kind"] == "fifo");
  CHECK(record["strategies"][1]["kind"] == "random");
  CHECK(record["strategies"][2]["kind"] == "mcf");
}

TEST_CASE("strategy kinds round-trip by name") {
  for (const StrategyKind kind : {StrategyKind::random, StrategyKind::fifo, StrategyKind::mcf,
                                  StrategyKind::rl, StrategyKind::rl_clustered})
    CHECK(strategy_kind_from_name(strategy_kind_name(kind)) == kind);
  CHECK_THROWS_AS((void)strategy_kind_from_name("greedy"), InvalidArgumentError);
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

TEST_CASE("learning curves are csv with a pinned header") {
  TrainResult res;
  for (int i = 0; i < 3; ++i) {
    EvalPoint pt;
    pt.rounds_done = i * 50;
    pt.mean_makespan = 20.0 - i;
    pt.std_makespan = 0.5 * i;
    res.curve.push_back(pt);
  }
  std::ostringstream os;
  write_learning_curve_csv(res, os);
  std::istringstream in(os.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "round,eval_mean_makespan,eval_std");
  int rows = 0;
  while (std::getline(in, line)) {
    int round = -1;
    double mean = 0.0, sd = -1.0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &round, &mean, &sd) == 3);
    CHECK(round == rows * 50);
    CHECK(mean == doctest::Approx(20.0 - rows));
    CHECK(sd == doctest::Approx(0.5 * rows));
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("predictor curves are csv with a pinned header") {
  FitReport rep;
  for (int i = 0; i < 2; ++i) {
    EpochStat st;
    st.epoch = i;
    st.holdout_acc = 0.5 + 0.1 * i;
    st.holdout_mse = 0.2 - 0.05 * i;
    rep.epochs.push_back(st);
  }
  std::ostringstream os;
  write_predictor_curve_csv(rep, 0.25, os);
  std::istringstream in(os.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "acc,mse,gamma,epoch");
  int rows = 0;
  while (std::getline(in, line)) {
    double acc = -1.0, mse = -1.0, gamma = -1.0;
    int epoch = -1;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%d", &acc, &mse, &gamma, &epoch) == 4);
    CHECK(acc == doctest::Approx(0.5 + 0.1 * rows));
    CHECK(mse == doctest::Approx(0.2 - 0.05 * rows));
    CHECK(gamma == doctest::Approx(0.25));
    CHECK(epoch == rows);
    ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("gantt charts draw one labeled bar per query on connection lanes") {
  RoundRecord round;
  round.round_id = 4;
  LogEntry a;
  a.query_id = 0;
  a.workers = 2;
  a.conn_id = 0;
  a.submit = a.start = 0.0;
  a.finish = 2.0;
  LogEntry b;
  b.query_id = 1;
  b.workers = 1;
  b.conn_id = 1;
  b.submit = b.start = 0.5;
  b.finish = 3.0;
  round.entries = {a, b};

  std::ostringstream os;
  gantt_export(round, 3, os);
  const std::string svg = os.str();
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("round 4, horizon 3 s") != std::string::npos);
  CHECK(count_of(svg, "conn ") == 3);  // one lane label per connection
  CHECK(svg.find("conn 0") != std::string::npos);
  CHECK(svg.find("conn 2") != std::string::npos);
  CHECK(svg.find("q0 w2") != std::string::npos);
  CHECK(svg.find("q1 w1") != std::string::npos);

  std::ostringstream os2;
  gantt_export(round, 3, os2);
  CHECK(os2.str() == svg);  // deterministic markup

  CHECK_THROWS_AS(gantt_export(round, 0, os), InvalidArgumentError);
  CHECK_THROWS_AS(gantt_export(round, 1, os), InvalidArgumentError);  // conn 1 out of range

  const TempDir dir("gantt");
  fs::create_directories(dir.path);
  const std::string path = (dir.path / "round.svg").string();
  gantt_export_file(round, 3, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str() == svg);
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

TEST_CASE("workload, environment, agent and simulator configs round-trip") {
  SUBCASE("workload") {
    WorkloadSpec spec;
    spec.n = 17;
    spec.seed = 99;
    spec.profile = WorkloadProfile::plain;
    const WorkloadSpec back = workload_from_json(workload_to_json(spec));
    CHECK(back.n == 17);
    CHECK(back.seed == 99);
    CHECK(back.profile == WorkloadProfile::plain);
    const BatchSet batch = make_batch(spec);
    CHECK(batch.queries.size() == 17);
  }
  SUBCASE("environment") {
    EnvConfig env;
    env.connections = 6;
    env.cpu_capacity = 9.5;
    env.io_capacity = 3.25;
    env.buffer_tables = 5;
    env.share_bonus = 0.75;
    env.noise_sigma = 0.01;
    env.seed = 23;
    const EnvConfig back = env_from_json(env_to_json(env));
    CHECK(back.connections == 6);
    CHECK(back.cpu_capacity == 9.5);
    CHECK(back.io_capacity == 3.25);
    CHECK(back.buffer_tables == 5);
    CHECK(back.share_bonus == 0.75);
    CHECK(back.noise_sigma == 0.01);
    CHECK(back.seed == 23);
    CHECK(back.menu.workers == env.menu.workers);
  }
  SUBCASE("agent") {
    AgentConfig cfg;
    cfg.net.hidden_dim = 24;
    cfg.net.attn_layers = 2;
    cfg.mask.tau_abs = 0.75;
    cfg.mask.tau_rel = 0.125;
    cfg.use_mask = false;
    cfg.use_aux = false;
    cfg.embed_dim = 12;
    cfg.cycles = 7;
    cfg.ppo_epochs = 3;
    cfg.clip_eps = 0.15;
    cfg.clone_coef = 0.5;
    cfg.lr = 1e-3;
    cfg.eval_every_rounds = 13;
    cfg.seed = 88;
    const AgentConfig back = agent_from_json(agent_to_json(cfg));
    CHECK(back.net.hidden_dim == 24);
    CHECK(back.net.attn_layers == 2);
    CHECK(back.mask.tau_abs == 0.75);
    CHECK(back.mask.tau_rel == 0.125);
    CHECK(back.use_mask == false);
    CHECK(back.use_aux == false);
    CHECK(back.embed_dim == 12);
    CHECK(back.cycles == 7);
    CHECK(back.ppo_epochs == 3);
    CHECK(back.clip_eps == 0.15);
    CHECK(back.clone_coef == 0.5);
    CHECK(back.lr == 1e-3);
    CHECK(back.eval_every_rounds == 13);
    CHECK(back.seed == 88);
  }
  SUBCASE("simulator, whose regression weight travels as gamma") {
    SimConfig cfg;
    cfg.embed_dim = 10;
    cfg.reg_weight = 0.35;
    cfg.epochs = 11;
    cfg.holdout_fraction = 0.2;
    cfg.regress_tolerance = 0.07;
    cfg.seed = 44;
    const nlohmann::json j = sim_to_json(cfg);
    CHECK(j.contains("gamma"));
    CHECK(j["gamma"] == doctest::Approx(0.35));
    const SimConfig back = sim_from_json(j);
    CHECK(back.embed_dim == 10);
    CHECK(back.reg_weight == 0.35);
    CHECK(back.epochs == 11);
    CHECK(back.holdout_fraction == 0.2);
    CHECK(back.regress_tolerance == 0.07);
    CHECK(back.seed == 44);
  }
}

TEST_CASE("config parsing falls back to defaults and rejects bad values") {
  const WorkloadSpec defaults = workload_from_json(nlohmann::json::object());
  CHECK(defaults.n == 12);
  CHECK(defaults.profile == WorkloadProfile::planted);

  nlohmann::json bad_profile{{"profile", "mystery"}};
  CHECK_THROWS_AS((void)workload_from_json(bad_profile), InvalidArgumentError);
  nlohmann::json bad_type{{"n", "many"}};
  CHECK_THROWS_AS((void)workload_from_json(bad_type), InvalidArgumentError);

  const EnvConfig env = env_from_json(nlohmann::json::object());
  CHECK(env.connections == 4);
  nlohmann::json bad_env{{"connections", "lots"}};
  CHECK_THROWS_AS((void)env_from_json(bad_env), InvalidArgumentError);

  nlohmann::json bad_norm{{"norm", "layer"}};
  CHECK_THROWS_AS((void)agent_from_json(bad_norm), InvalidArgumentError);
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

namespace {

AgentConfig pipeline_agent(uint64_t seed) {
  AgentConfig cfg;
  cfg.net.hidden_dim = 8;
  cfg.net.attn_layers = 1;
  cfg.net.attn_heads = 2;
  cfg.net.ff_dim = 8;
  cfg.embed_dim = 4;
  cfg.cycles = 1;
  cfg.ppo_iters_per_cycle = 1;
  cfg.rounds_per_iter = 2;
  cfg.ppo_epochs = 2;
  cfg.aux_epochs = 1;
  cfg.eval_every_rounds = 2;
  cfg.eval_rounds = 2;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("the from-scratch training pipeline calibrates, references and trains") {
  TrainRunSpec spec;
  spec.batch = generate_workload(4, 71, WorkloadProfile::plain);
  spec.env.connections = 2;
  spec.agent = pipeline_agent(72);
  spec.experiment_seed = 5;
  spec.calib_repeats = 2;

  const TrainRunResult res = run_training(spec);
  // calibration spends one submission and one completion per solo round
  const uint64_t calib_rounds = 2ULL * 3ULL * 4ULL;  // repeats x |menu| x n
  CHECK(res.calib_events == 2 * calib_rounds);
  CHECK(res.fifo_mean > 0.0);
  CHECK(res.fifo_std >= 0.0);
  CHECK(res.baseline_events > 0);
  CHECK(!res.train.curve.empty());
  CHECK(res.train.best_mean > 0.0);
  for (const QuerySpec& q : spec.batch.queries)
    for (const int w : spec.env.menu.workers) CHECK(res.table.covers(q.query_id, w));

  const TrainRunResult again = run_training(spec);
  CHECK(again.fifo_mean == res.fifo_mean);
  CHECK(again.train.best_mean == res.train.best_mean);
  REQUIRE(again.train.curve.size() == res.train.curve.size());
  for (size_t i = 0; i < res.train.curve.size(); ++i)
    CHECK(again.train.curve[i].mean_makespan == res.train.curve[i].mean_makespan);
}

TEST_CASE("the clustering pipeline turns mixture logs into cluster assignments") {
  const BatchSet batch = generate_workload(6, 73, WorkloadProfile::plain);
  EnvConfig env;
  env.connections = 2;
  const AvgTimeTable table = AvgTimeTable::from_log(calibrate(batch, env, 74));

  ClusterPipelineSpec spec;
  spec.seed = 75;
  spec.mixture_rounds = 6;
  spec.n_clusters = 2;
  spec.embed_dim = 4;
  spec.predictor.epochs = 20;

  const ClusterPipeline pipe = build_clustering(batch, env, table, spec);
  CHECK(pipe.mixture_log.rounds.size() == 6);
  CHECK(pipe.log_events > 0);
  CHECK(pipe.gains.n == 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      if (i == j) continue;
      CHECK(pipe.gains.at(i, j) == pipe.gains.at(j, i));
      CHECK(std::isfinite(pipe.gains.at(i, j)));
    }
  CHECK(pipe.clustering.cluster_count() == 2);
  CHECK(pipe.clustering.assignment.size() == 6);
  CHECK(pipe.clustering.history.size() == 4);  // six singletons merged down to two
  CHECK(pipe.predictor_mse >= 0.0);

  const ClusterPipeline again = build_clustering(batch, env, table, spec);
  CHECK(again.clustering.assignment == pipe.clustering.assignment);
}

TEST_CASE("the simulator pipeline fits a predictor on heuristic mixture data") {
  SimTrainSpec spec;
  spec.batch = generate_workload(4, 76, WorkloadProfile::plain);
  spec.env.connections = 2;
  spec.sim.net.hidden_dim = 8;
  spec.sim.net.attn_layers = 1;
  spec.sim.net.attn_heads = 2;
  spec.sim.net.ff_dim = 8;
  spec.sim.embed_dim = 4;
  spec.sim.epochs = 8;
  spec.sim.minibatch = 16;
  spec.sim.seed = 77;
  spec.experiment_seed = 78;
  spec.mixture_rounds = 6;

  const SimTrainRunResult res = run_sim_training(spec);
  CHECK(res.calib_events > 0);
  CHECK(res.mixture_log.rounds.size() == 6);
  CHECK(res.log_events > 0);
  CHECK(res.dataset_size > 0);
  REQUIRE(res.predictor != nullptr);
  CHECK(res.predictor->fitted());
  CHECK(res.fit.train_count + res.fit.holdout_count == res.dataset_size);
  CHECK(res.embeds.size() == spec.batch.queries.size());
}

TEST_CASE("the transfer pipeline pretrains on the simulator and fine-tunes on truth") {
  PretrainRunSpec spec;
  spec.sim.batch = generate_workload(4, 79, WorkloadProfile::plain);
  spec.sim.env.connections = 2;
  spec.sim.sim.net.hidden_dim = 8;
  spec.sim.sim.net.attn_layers = 1;
  spec.sim.sim.net.attn_heads = 2;
  spec.sim.sim.net.ff_dim = 8;
  spec.sim.sim.embed_dim = 4;
  spec.sim.sim.epochs = 8;
  spec.sim.sim.minibatch = 16;
  spec.sim.sim.seed = 80;
  spec.sim.experiment_seed = 81;
  spec.sim.mixture_rounds = 6;
  spec.plan.pretrain = pipeline_agent(82);
  spec.plan.finetune = pipeline_agent(83);

  const PretrainRunResult res = run_pretrain_finetune(spec);
  CHECK(res.fifo_mean > 0.0);
  CHECK(res.baseline_events > 0);
  CHECK(res.sim.predictor != nullptr);
  CHECK(res.report.selected_index >= 0);
  CHECK(res.report.checkpoint_true_means.size() == res.report.pretrain.curve.size());
  CHECK(res.report.select_events > 0);
  CHECK(!res.report.finetune.curve.empty());
  CHECK(res.report.finetune.train_events > 0);
}
