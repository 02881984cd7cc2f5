#include "cqsched/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <utility>

#include "cqsched/errors.hpp"
#include "cqsched/rng.hpp"

namespace cqsched {

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw MissingDataError("cannot open " + path + " for writing");
  out << text;
}

template <typename F>
auto json_guard(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgumentError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

FeatureContext make_feature_context(const EnvConfig& env, const AvgTimeTable& table,
                                    int unit_count) {
  FeatureContext ctx;
  ctx.menu = env.menu;
  ctx.norm = table.normalizer();
  ctx.max_units = unit_count;
  ctx.connections = env.connections;
  ctx.validate();
  return ctx;
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

ExecLog calibrate(const BatchSet& batch, const EnvConfig& cfg, uint64_t seed, int repeats) {
  if (repeats < 1) throw InvalidArgumentError("calibration needs at least one repeat");
  batch.validate();
  Environment env(batch, cfg);
  ExecLog log;
  int round_id = 0;
  for (int rep = 0; rep < repeats; ++rep)
    for (const int workers : cfg.menu.workers)
      for (const QuerySpec& q : batch.queries) {
        env.reset(mix64(seed, static_cast<uint64_t>(round_id)));
        env.submit(q.query_id, workers);
        env.advance_to_next_completion();
        log.rounds.push_back(env.round_record(round_id));
        ++round_id;
      }
  return log;
}

// ---------------------------------------------------------------------------
// Heuristic policies
// ---------------------------------------------------------------------------

EnvPolicy fifo_policy(const ConfigMenu& menu) {
  const int w = menu.minimal();
  return [w](const Environment& env) -> Action {
    for (const QuerySpec& q : env.batch().queries)
      if (env.run(q.query_id).status == QueryStatus::pending) return {q.query_id, w};
    throw ProtocolError("policy consulted with no pending query");
  };
}

EnvPolicy random_policy(const ConfigMenu& menu, uint64_t strategy_seed) {
  const int w = menu.minimal();
  return [w, strategy_seed](const Environment& env) -> Action {
    std::vector<int> perm(static_cast<size_t>(env.num_queries()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix64(strategy_seed, env.round_seed()));
    seeded_shuffle(perm, rng);
    for (const int idx : perm) {
      const int qid = env.batch().queries[static_cast<size_t>(idx)].query_id;
      if (env.run(qid).status == QueryStatus::pending) return {qid, w};
    }
    throw ProtocolError("policy consulted with no pending query");
  };
}

EnvPolicy mcf_policy(const ConfigMenu& menu, const AvgTimeTable& table) {
  const int w = menu.minimal();
  return [w, table](const Environment& env) -> Action {
    std::vector<int> members(static_cast<size_t>(env.num_queries()));
    std::iota(members.begin(), members.end(), 0);
    for (const int idx : mcf_order(members, env.batch(), table)) {
      const int qid = env.batch().queries[static_cast<size_t>(idx)].query_id;
      if (env.run(qid).status == QueryStatus::pending) return {qid, w};
    }
    throw ProtocolError("policy consulted with no pending query");
  };
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

std::string strategy_kind_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::random: return "random";
    case StrategyKind::fifo: return "fifo";
    case StrategyKind::mcf: return "mcf";
    case StrategyKind::rl: return "rl";
    case StrategyKind::rl_clustered: return "rl_clustered";
  }
  throw InvalidArgumentError("unknown strategy kind");
}

StrategyKind strategy_kind_from_name(const std::string& name) {
  if (name == "random") return StrategyKind::random;
  if (name == "fifo") return StrategyKind::fifo;
  if (name == "mcf") return StrategyKind::mcf;
  if (name == "rl") return StrategyKind::rl;
  if (name == "rl_clustered") return StrategyKind::rl_clustered;
  throw InvalidArgumentError("unknown strategy '" + name + "'");
}

void ExperimentConfig::validate() const {
  batch.validate();
  env.validate();
  if (rounds < 1) throw InvalidArgumentError("an experiment needs at least one round");
  if (strategies.empty()) throw InvalidArgumentError("an experiment needs at least one strategy");
  for (const Strategy& s : strategies) {
    if ((s.kind == StrategyKind::rl || s.kind == StrategyKind::rl_clustered) && s.params.empty())
      throw InvalidArgumentError("strategy '" + s.label() + "' needs loaded agent parameters");
    if (s.kind == StrategyKind::rl_clustered && s.clustering.assignment.empty())
      throw InvalidArgumentError("strategy '" + s.label() + "' needs a clustering");
  }
}

namespace {

StrategyOutcome run_heuristic_strategy(const ExperimentConfig& cfg, const Strategy& s) {
  StrategyOutcome oc;
  oc.name = s.label();
  Environment env(cfg.batch, cfg.env);
  EnvPolicy policy;
  switch (s.kind) {
    case StrategyKind::fifo: policy = fifo_policy(cfg.env.menu); break;
    case StrategyKind::random: policy = random_policy(cfg.env.menu, s.seed); break;
    default: throw InvalidArgumentError("not a heuristic strategy");
  }
  for (int r = 0; r < cfg.rounds; ++r) {
    oc.log.rounds.push_back(run_episode(env, cfg.seed + static_cast<uint64_t>(r), policy, r));
    oc.round_makespans.push_back(env.makespan());
  }
  return oc;
}

StrategyOutcome run_mcf_strategy(const ExperimentConfig& cfg, const Strategy& s,
                                 const AvgTimeTable& table) {
  StrategyOutcome oc;
  oc.name = s.label();
  Environment env(cfg.batch, cfg.env);
  const EnvPolicy policy = mcf_policy(cfg.env.menu, table);
  for (int r = 0; r < cfg.rounds; ++r) {
    oc.log.rounds.push_back(run_episode(env, cfg.seed + static_cast<uint64_t>(r), policy, r));
    oc.round_makespans.push_back(env.makespan());
  }
  return oc;
}

StrategyOutcome run_rl_strategy(const ExperimentConfig& cfg, const Strategy& s,
                                const AvgTimeTable& table) {
  StrategyOutcome oc;
  oc.name = s.label();
  Environment env(cfg.batch, cfg.env);
  TrueBackend backend(env);
  const PlanEmbedder embedder(s.agent.embed_dim, kPlanEmbedSeed);
  const std::vector<nn::Tensor> embeds = embedder.encode_batch(cfg.batch);
  const int units = s.kind == StrategyKind::rl ? static_cast<int>(cfg.batch.queries.size())
                                               : s.clustering.cluster_count();
  const FeatureContext ctx = make_feature_context(cfg.env, table, units);
  std::unique_ptr<DecisionEnv> denv;
  if (s.kind == StrategyKind::rl)
    denv = std::make_unique<FlatDecisionEnv>(backend, table, ctx, embeds);
  else
    denv = std::make_unique<ClusteredDecisionEnv>(backend, table, ctx, embeds, s.clustering,
                                                  s.member_mask);
  SchedulerAgent agent(s.agent, ctx);
  agent.load_checkpoint(s.params);
  const UnitPolicy policy = agent.greedy_policy();
  for (int r = 0; r < cfg.rounds; ++r) {
    oc.round_makespans.push_back(
        run_decision_round(*denv, cfg.seed + static_cast<uint64_t>(r), policy));
    oc.log.rounds.push_back(backend.round_record(r));
  }
  return oc;
}

void persist_experiment(const ExperimentConfig& cfg, const std::vector<StrategyOutcome>& out) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  for (const StrategyOutcome& oc : out)
    write_exec_log(oc.log, (fs::path(cfg.out_dir) / (oc.name + "_log.tsv")).string());
  write_text_file((fs::path(cfg.out_dir) / "metrics.json").string(),
                  metrics_to_json(out).dump(2) + "\n");

  nlohmann::json rec;
  rec["seed"] = cfg.seed;
  rec["rounds"] = cfg.rounds;
  rec["queries"] = cfg.batch.queries.size();
  rec["env"] = env_to_json(cfg.env);
  nlohmann::json strategies = nlohmann::json::array();
  for (const Strategy& s : cfg.strategies)
    strategies.push_back({{"name", s.label()}, {"kind", strategy_kind_name(s.kind)}});
  rec["strategies"] = strategies;
  write_text_file((fs::path(cfg.out_dir) / "experiment.json").string(), rec.dump(2) + "\n");
}

}  // namespace

std::vector<StrategyOutcome> run_experiment(const ExperimentConfig& cfg,
                                            const AvgTimeTable* table) {
  cfg.validate();
  const bool needs_table = std::any_of(
      cfg.strategies.begin(), cfg.strategies.end(), [](const Strategy& s) {
        return s.kind == StrategyKind::mcf || s.kind == StrategyKind::rl ||
               s.kind == StrategyKind::rl_clustered;
      });
  if (needs_table && table == nullptr)
    throw MissingDataError("mcf and rl strategies need a calibration table");

  std::vector<StrategyOutcome> out;
  out.reserve(cfg.strategies.size());
  for (const Strategy& s : cfg.strategies) {
    StrategyOutcome oc;
    switch (s.kind) {
      case StrategyKind::fifo:
      case StrategyKind::random: oc = run_heuristic_strategy(cfg, s); break;
      case StrategyKind::mcf: oc = run_mcf_strategy(cfg, s, *table); break;
      case StrategyKind::rl:
      case StrategyKind::rl_clustered: oc = run_rl_strategy(cfg, s, *table); break;
    }
    std::tie(oc.mean_makespan, oc.std_makespan) = summarize(oc.round_makespans);
    out.push_back(std::move(oc));
  }
  if (!cfg.out_dir.empty()) persist_experiment(cfg, out);
  return out;
}

// ---------------------------------------------------------------------------
// Training pipelines
// ---------------------------------------------------------------------------

namespace {

std::vector<uint64_t> eval_seed_list(uint64_t seed, int count) {
  std::vector<uint64_t> seeds(static_cast<size_t>(count));
  std::iota(seeds.begin(), seeds.end(), seed);
  return seeds;
}

struct FifoReference {
  double mean = 0.0;
  double std_dev = 0.0;
  uint64_t events = 0;
};

FifoReference fifo_reference(const BatchSet& batch, const EnvConfig& cfg,
                             const std::vector<uint64_t>& seeds) {
  Environment env(batch, cfg);
  const EnvPolicy policy = fifo_policy(cfg.menu);
  std::vector<double> makespans;
  makespans.reserve(seeds.size());
  int round_id = 0;
  for (const uint64_t s : seeds) {
    run_episode(env, s, policy, round_id++);
    makespans.push_back(env.makespan());
  }
  FifoReference ref;
  std::tie(ref.mean, ref.std_dev) = summarize(makespans);
  ref.events = env.event_count();
  return ref;
}

ExecLog heuristic_mixture_log(const BatchSet& batch, const EnvConfig& cfg,
                              const AvgTimeTable& table, uint64_t seed, int rounds,
                              uint64_t* events) {
  Environment env(batch, cfg);
  const EnvPolicy policies[3] = {fifo_policy(cfg.menu), random_policy(cfg.menu, seed),
                                 mcf_policy(cfg.menu, table)};
  ExecLog log;
  for (int r = 0; r < rounds; ++r)
    log.rounds.push_back(
        run_episode(env, seed + static_cast<uint64_t>(r), policies[r % 3], r));
  if (events != nullptr) *events = env.event_count();
  return log;
}

}  // namespace

TrainRunResult run_training(const TrainRunSpec& spec) {
  spec.batch.validate();
  spec.env.validate();
  spec.agent.validate();

  TrainRunResult res;
  const ExecLog calib_log = calibrate(spec.batch, spec.env, spec.experiment_seed,
                                      spec.calib_repeats);
  res.calib_events = 2 * calib_log.entry_count();
  res.table = AvgTimeTable::from_log(calib_log);

  const std::vector<uint64_t> eval_seeds =
      eval_seed_list(spec.experiment_seed, spec.agent.eval_rounds);
  const FifoReference ref = fifo_reference(spec.batch, spec.env, eval_seeds);
  res.fifo_mean = ref.mean;
  res.fifo_std = ref.std_dev;
  res.baseline_events = ref.events;

  Environment env(spec.batch, spec.env);
  TrueBackend backend(env);
  const FeatureContext ctx =
      make_feature_context(spec.env, res.table, static_cast<int>(spec.batch.queries.size()));
  const PlanEmbedder embedder(spec.agent.embed_dim, kPlanEmbedSeed);
  const std::vector<nn::Tensor> embeds = embedder.encode_batch(spec.batch);
  FlatDecisionEnv denv(backend, res.table, ctx, embeds);
  SchedulerAgent agent(spec.agent, ctx);
  res.train = agent.train(denv, eval_seeds, res.fifo_mean);
  return res;
}

ClusterPipeline build_clustering(const BatchSet& batch, const EnvConfig& env,
                                 const AvgTimeTable& table, const ClusterPipelineSpec& spec) {
  if (spec.mixture_rounds < 1)
    throw InvalidArgumentError("the gain log needs at least one round");
  ClusterPipeline res;
  res.mixture_log = heuristic_mixture_log(batch, env, table, spec.seed, spec.mixture_rounds,
                                          &res.log_events);
  res.gains = compute_gains(res.mixture_log, batch);

  const int n = res.gains.n;
  bool any_empty = false;
  for (int i = 0; i < n && !any_empty; ++i)
    for (int j = 0; j < n && !any_empty; ++j)
      if (i != j && res.gains.source_at(i, j) == CellSource::empty) any_empty = true;
  if (any_empty) {
    const PlanEmbedder embedder(spec.embed_dim, kPlanEmbedSeed);
    const std::vector<nn::Tensor> embeds = embedder.encode_batch(batch);
    GainPredictor predictor(spec.embed_dim, spec.predictor);
    res.predictor_mse = predictor.fit(embeds, res.gains);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (res.gains.source_at(i, j) != CellSource::empty) continue;
        const double g = predictor.predict(embeds[static_cast<size_t>(i)],
                                           embeds[static_cast<size_t>(j)]);
        res.gains.value[res.gains.index(i, j)] = g;
        res.gains.value[res.gains.index(j, i)] = g;
        res.gains.source[res.gains.index(i, j)] = CellSource::predicted;
        res.gains.source[res.gains.index(j, i)] = CellSource::predicted;
      }
  }

  const int target = spec.n_clusters > 0 ? spec.n_clusters : default_cluster_count(n);
  res.clustering = agglomerate(res.gains, target);
  return res;
}

ClusteredTrainRunResult run_clustered_training(const TrainRunSpec& spec,
                                               const ClusterPipelineSpec& cluster) {
  spec.batch.validate();
  spec.env.validate();
  spec.agent.validate();

  ClusteredTrainRunResult res;
  const ExecLog calib_log = calibrate(spec.batch, spec.env, spec.experiment_seed,
                                      spec.calib_repeats);
  res.calib_events = 2 * calib_log.entry_count();
  res.table = AvgTimeTable::from_log(calib_log);

  const std::vector<uint64_t> eval_seeds =
      eval_seed_list(spec.experiment_seed, spec.agent.eval_rounds);
  const FifoReference ref = fifo_reference(spec.batch, spec.env, eval_seeds);
  res.fifo_mean = ref.mean;
  res.fifo_std = ref.std_dev;
  res.baseline_events = ref.events;

  res.pipeline = build_clustering(spec.batch, spec.env, res.table, cluster);

  Environment env(spec.batch, spec.env);
  TrueBackend backend(env);
  const FeatureContext ctx =
      make_feature_context(spec.env, res.table, res.pipeline.clustering.cluster_count());
  const PlanEmbedder embedder(spec.agent.embed_dim, kPlanEmbedSeed);
  const std::vector<nn::Tensor> embeds = embedder.encode_batch(spec.batch);
  ClusteredDecisionEnv denv(backend, res.table, ctx, embeds, res.pipeline.clustering,
                            spec.agent.mask);
  SchedulerAgent agent(spec.agent, ctx);
  res.train = agent.train(denv, eval_seeds, res.fifo_mean);
  return res;
}

SimTrainRunResult run_sim_training(const SimTrainSpec& spec) {
  spec.batch.validate();
  spec.env.validate();
  spec.sim.validate();
  if (spec.mixture_rounds < 1)
    throw InvalidArgumentError("the predictor log needs at least one round");

  SimTrainRunResult res;
  const ExecLog calib_log = calibrate(spec.batch, spec.env, spec.experiment_seed,
                                      spec.calib_repeats);
  res.calib_events = 2 * calib_log.entry_count();
  res.table = AvgTimeTable::from_log(calib_log);

  res.mixture_log = heuristic_mixture_log(spec.batch, spec.env, res.table, spec.experiment_seed,
                                          spec.mixture_rounds, &res.log_events);

  const FeatureContext ctx =
      make_feature_context(spec.env, res.table, static_cast<int>(spec.batch.queries.size()));
  const std::vector<CompletionSample> dataset =
      build_dataset(res.mixture_log, spec.batch, res.table, ctx);
  res.dataset_size = static_cast<int>(dataset.size());

  const PlanEmbedder embedder(spec.sim.embed_dim, kPlanEmbedSeed);
  res.embeds = embedder.encode_batch(spec.batch);
  res.predictor = std::make_unique<SimPredictor>(spec.sim, ctx);
  res.fit = res.predictor->fit(dataset, res.embeds);
  return res;
}

PretrainRunResult run_pretrain_finetune(const PretrainRunSpec& spec) {
  PretrainRunResult res;
  res.sim = run_sim_training(spec.sim);

  const std::vector<uint64_t> eval_seeds =
      eval_seed_list(spec.sim.experiment_seed, spec.plan.pretrain.eval_rounds);
  const FifoReference ref = fifo_reference(spec.sim.batch, spec.sim.env, eval_seeds);
  res.fifo_mean = ref.mean;
  res.fifo_std = ref.std_dev;
  res.baseline_events = ref.events;

  const FeatureContext ctx = make_feature_context(
      spec.sim.env, res.sim.table, static_cast<int>(spec.sim.batch.queries.size()));
  SimBackend sim_backend(spec.sim.batch, res.sim.table, *res.sim.predictor, res.sim.embeds);
  FlatDecisionEnv sim_env(sim_backend, res.sim.table, ctx, res.sim.embeds);
  Environment env(spec.sim.batch, spec.sim.env);
  TrueBackend true_backend(env);
  FlatDecisionEnv true_env(true_backend, res.sim.table, ctx, res.sim.embeds);
  res.report = pretrain_finetune(spec.plan, ctx, sim_env, true_env, eval_seeds, res.fifo_mean);
  return res;
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

nlohmann::json metrics_to_json(const std::vector<StrategyOutcome>& outcomes) {
  nlohmann::json strategies = nlohmann::json::array();
  for (const StrategyOutcome& oc : outcomes)
    strategies.push_back({{"name", oc.name},
                          {"mean_makespan", oc.mean_makespan},
                          {"std_makespan", oc.std_makespan},
                          {"round_makespans", oc.round_makespans}});
  return nlohmann::json{{"strategies", strategies}};
}

void write_learning_curve_csv(const TrainResult& result, std::ostream& os) {
  os << "round,eval_mean_makespan,eval_std\n";
  char line[160];
  for (const EvalPoint& pt : result.curve) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.10g\n", pt.rounds_done, pt.mean_makespan,
                  pt.std_makespan);
    os << line;
  }
}

void write_predictor_curve_csv(const FitReport& report, double gamma, std::ostream& os) {
  os << "acc,mse,gamma,epoch\n";
  char line[160];
  for (const EpochStat& st : report.epochs) {
    std::snprintf(line, sizeof(line), "%.10g,%.10g,%.10g,%d\n", st.holdout_acc, st.holdout_mse,
                  gamma, st.epoch);
    os << line;
  }
}

void gantt_export(const RoundRecord& round, int connections, std::ostream& os) {
  if (connections < 1) throw InvalidArgumentError("a chart needs at least one lane");
  double horizon = 0.0;
  for (const LogEntry& e : round.entries) {
    if (e.conn_id < 0 || e.conn_id >= connections)
      throw InvalidArgumentError("log entry uses a connection outside the chart");
    horizon = std::max(horizon, e.finish);
  }
  if (horizon <= 0.0) horizon = 1.0;

  const double margin_left = 70.0, margin_top = 30.0, margin_bottom = 30.0;
  const double lane_h = 26.0, lane_gap = 8.0, plot_w = 820.0;
  const double width = margin_left + plot_w + 20.0;
  const double height = margin_top + connections * (lane_h + lane_gap) + margin_bottom;
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                                  "#76b7b2", "#edc948", "#b07aa1", "#9c755f"};
  char buf[512];

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.6g\" y=\"18\">round %d, horizon %.6g s</text>\n", margin_left,
                round.round_id, horizon);
  os << buf;
  for (int c = 0; c < connections; ++c) {
    const double y = margin_top + c * (lane_h + lane_gap);
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"8\" y=\"%.6g\">conn %d</text>\n"
                  "<rect x=\"%.6g\" y=\"%.6g\" width=\"%.6g\" height=\"%.6g\" fill=\"#f2f2f2\"/>\n",
                  y + lane_h * 0.65, c, margin_left, y, plot_w, lane_h);
    os << buf;
  }
  for (const LogEntry& e : round.entries) {
    const double y = margin_top + e.conn_id * (lane_h + lane_gap);
    const double x = margin_left + e.start / horizon * plot_w;
    const double w = std::max((e.finish - e.start) / horizon * plot_w, 1.0);
    const char* fill = palette[static_cast<size_t>(e.query_id) % 8];
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.6g\" y=\"%.6g\" width=\"%.6g\" height=\"%.6g\" fill=\"%s\" "
                  "stroke=\"#333\" stroke-width=\"0.5\"/>\n"
                  "<text x=\"%.6g\" y=\"%.6g\">q%d w%d</text>\n",
                  x, y + 2.0, w, lane_h - 4.0, fill, x + 3.0, y + lane_h * 0.65, e.query_id,
                  e.workers);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.6g\" y=\"%.6g\">0</text>"
                "<text x=\"%.6g\" y=\"%.6g\" text-anchor=\"end\">%.6g s</text>\n",
                margin_left, height - 10.0, margin_left + plot_w, height - 10.0, horizon);
  os << buf;
  os << "</svg>\n";
}

void gantt_export_file(const RoundRecord& round, int connections, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MissingDataError("cannot open " + path + " for writing");
  gantt_export(round, connections, out);
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

WorkloadSpec workload_from_json(const nlohmann::json& j) {
  return json_guard("workload section", [&] {
    WorkloadSpec spec;
    spec.n = j.value("n", spec.n);
    spec.seed = j.value("seed", spec.seed);
    const std::string profile = j.value("profile", std::string("planted"));
    if (profile == "plain")
      spec.profile = WorkloadProfile::plain;
    else if (profile == "planted")
      spec.profile = WorkloadProfile::planted;
    else
      throw InvalidArgumentError("unknown workload profile '" + profile + "'");
    return spec;
  });
}

nlohmann::json workload_to_json(const WorkloadSpec& spec) {
  return {{"n", spec.n},
          {"seed", spec.seed},
          {"profile", spec.profile == WorkloadProfile::plain ? "plain" : "planted"}};
}

BatchSet make_batch(const WorkloadSpec& spec) {
  return generate_workload(spec.n, spec.seed, spec.profile);
}

EnvConfig env_from_json(const nlohmann::json& j) {
  return json_guard("env section", [&] {
    EnvConfig cfg;
    cfg.connections = j.value("connections", cfg.connections);
    cfg.cpu_capacity = j.value("cpu_capacity", cfg.cpu_capacity);
    cfg.io_capacity = j.value("io_capacity", cfg.io_capacity);
    cfg.buffer_tables = j.value("buffer_tables", cfg.buffer_tables);
    cfg.share_bonus = j.value("share_bonus", cfg.share_bonus);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("workers_menu")) cfg.menu.workers = j.at("workers_menu").get<std::vector<int>>();
    return cfg;
  });
}

nlohmann::json env_to_json(const EnvConfig& cfg) {
  return {{"connections", cfg.connections}, {"cpu_capacity", cfg.cpu_capacity},
          {"io_capacity", cfg.io_capacity}, {"buffer_tables", cfg.buffer_tables},
          {"share_bonus", cfg.share_bonus}, {"noise_sigma", cfg.noise_sigma},
          {"seed", cfg.seed},               {"workers_menu", cfg.menu.workers}};
}

namespace {

nn::NetConfig net_from_json(const nlohmann::json& j) {
  nn::NetConfig net;
  net.hidden_dim = j.value("hidden_dim", net.hidden_dim);
  net.attn_layers = j.value("attn_layers", net.attn_layers);
  net.attn_heads = j.value("attn_heads", net.attn_heads);
  net.ff_dim = j.value("ff_dim", net.ff_dim);
  net.repr_depth = j.value("repr_depth", net.repr_depth);
  net.global_depth = j.value("global_depth", net.global_depth);
  net.query_depth = j.value("query_depth", net.query_depth);
  net.policy_depth = j.value("policy_depth", net.policy_depth);
  net.value_depth = j.value("value_depth", net.value_depth);
  net.aux_depth = j.value("aux_depth", net.aux_depth);
  net.gain_depth = j.value("gain_depth", net.gain_depth);
  net.clf_depth = j.value("clf_depth", net.clf_depth);
  net.reg_depth = j.value("reg_depth", net.reg_depth);
  const std::string norm = j.value("norm", std::string("set_level"));
  if (norm == "set_level")
    net.norm = nn::NormKind::set_level;
  else if (norm == "none")
    net.norm = nn::NormKind::none;
  else
    throw InvalidArgumentError("unknown norm '" + norm + "'");
  return net;
}

void net_to_json(const nn::NetConfig& net, nlohmann::json& j) {
  j["hidden_dim"] = net.hidden_dim;
  j["attn_layers"] = net.attn_layers;
  j["attn_heads"] = net.attn_heads;
  j["ff_dim"] = net.ff_dim;
  j["repr_depth"] = net.repr_depth;
  j["global_depth"] = net.global_depth;
  j["query_depth"] = net.query_depth;
  j["policy_depth"] = net.policy_depth;
  j["value_depth"] = net.value_depth;
  j["aux_depth"] = net.aux_depth;
  j["gain_depth"] = net.gain_depth;
  j["clf_depth"] = net.clf_depth;
  j["reg_depth"] = net.reg_depth;
  j["norm"] = net.norm == nn::NormKind::set_level ? "set_level" : "none";
}

}  // namespace

AgentConfig agent_from_json(const nlohmann::json& j) {
  return json_guard("training section", [&] {
    AgentConfig cfg;
    cfg.net = net_from_json(j);
    cfg.mask.tau_abs = j.value("tau_abs", cfg.mask.tau_abs);
    cfg.mask.tau_rel = j.value("tau_rel", cfg.mask.tau_rel);
    cfg.use_mask = j.value("use_mask", cfg.use_mask);
    cfg.use_aux = j.value("use_aux", cfg.use_aux);
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    cfg.cycles = j.value("cycles", cfg.cycles);
    cfg.ppo_iters_per_cycle = j.value("ppo_iters_per_cycle", cfg.ppo_iters_per_cycle);
    cfg.rounds_per_iter = j.value("rounds_per_iter", cfg.rounds_per_iter);
    cfg.ppo_epochs = j.value("ppo_epochs", cfg.ppo_epochs);
    cfg.minibatch = j.value("minibatch", cfg.minibatch);
    cfg.clip_eps = j.value("clip_eps", cfg.clip_eps);
    cfg.value_coef = j.value("value_coef", cfg.value_coef);
    cfg.entropy_coef = j.value("entropy_coef", cfg.entropy_coef);
    cfg.gae_lambda = j.value("gae_lambda", cfg.gae_lambda);
    cfg.discount = j.value("discount", cfg.discount);
    cfg.aux_epochs = j.value("aux_epochs", cfg.aux_epochs);
    cfg.aux_minibatch = j.value("aux_minibatch", cfg.aux_minibatch);
    cfg.clone_coef = j.value("clone_coef", cfg.clone_coef);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.eval_every_rounds = j.value("eval_every_rounds", cfg.eval_every_rounds);
    cfg.eval_rounds = j.value("eval_rounds", cfg.eval_rounds);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
  });
}

nlohmann::json agent_to_json(const AgentConfig& cfg) {
  nlohmann::json j;
  net_to_json(cfg.net, j);
  j["tau_abs"] = cfg.mask.tau_abs;
  j["tau_rel"] = cfg.mask.tau_rel;
  j["use_mask"] = cfg.use_mask;
  j["use_aux"] = cfg.use_aux;
  j["embed_dim"] = cfg.embed_dim;
  j["cycles"] = cfg.cycles;
  j["ppo_iters_per_cycle"] = cfg.ppo_iters_per_cycle;
  j["rounds_per_iter"] = cfg.rounds_per_iter;
  j["ppo_epochs"] = cfg.ppo_epochs;
  j["minibatch"] = cfg.minibatch;
  j["clip_eps"] = cfg.clip_eps;
  j["value_coef"] = cfg.value_coef;
  j["entropy_coef"] = cfg.entropy_coef;
  j["gae_lambda"] = cfg.gae_lambda;
  j["discount"] = cfg.discount;
  j["aux_epochs"] = cfg.aux_epochs;
  j["aux_minibatch"] = cfg.aux_minibatch;
  j["clone_coef"] = cfg.clone_coef;
  j["lr"] = cfg.lr;
  j["eval_every_rounds"] = cfg.eval_every_rounds;
  j["eval_rounds"] = cfg.eval_rounds;
  j["seed"] = cfg.seed;
  return j;
}

SimConfig sim_from_json(const nlohmann::json& j) {
  return json_guard("simulator section", [&] {
    SimConfig cfg;
    cfg.net = net_from_json(j);
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    cfg.reg_weight = j.value("gamma", cfg.reg_weight);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.minibatch = j.value("minibatch", cfg.minibatch);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.holdout_fraction = j.value("holdout_fraction", cfg.holdout_fraction);
    cfg.incremental_epochs = j.value("incremental_epochs", cfg.incremental_epochs);
    cfg.regress_tolerance = j.value("regress_tolerance", cfg.regress_tolerance);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
  });
}

nlohmann::json sim_to_json(const SimConfig& cfg) {
  nlohmann::json j;
  net_to_json(cfg.net, j);
  j["embed_dim"] = cfg.embed_dim;
  j["gamma"] = cfg.reg_weight;
  j["epochs"] = cfg.epochs;
  j["minibatch"] = cfg.minibatch;
  j["lr"] = cfg.lr;
  j["holdout_fraction"] = cfg.holdout_fraction;
  j["incremental_epochs"] = cfg.incremental_epochs;
  j["regress_tolerance"] = cfg.regress_tolerance;
  j["seed"] = cfg.seed;
  return j;
}

}  // namespace cqsched
