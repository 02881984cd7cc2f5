// Command-line front end: file-based workflows over the scheduling library.
// Exit codes: 0 success, 2 configuration error, 3 missing data, 1 otherwise.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "cqsched/errors.hpp"
#include "cqsched/nncore/checkpoint.hpp"
#include "cqsched/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cqsched;

namespace {

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgumentError(std::string("config ") + path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw MissingDataError("cannot open " + path + " for writing");
  out << text;
}

uint64_t experiment_seed(const json& cfg) { return cfg.value("seed", uint64_t{1}); }

WorkloadSpec workload_section(const json& cfg) {
  return workload_from_json(cfg.value("workload", json::object()));
}

EnvConfig env_section(const json& cfg) {
  EnvConfig env = env_from_json(cfg.value("env", json::object()));
  env.validate();
  return env;
}

AgentConfig agent_section(const json& cfg, const char* key, uint64_t seed) {
  json sect = cfg.value("training", json::object());
  if (key != nullptr && cfg.contains(key)) sect.update(cfg.at(key));
  AgentConfig agent = agent_from_json(sect);
  if (!sect.contains("seed")) agent.seed = seed;
  return agent;
}

SimConfig sim_section(const json& cfg, uint64_t seed) {
  const json sect = cfg.value("simulator", json::object());
  SimConfig sim = sim_from_json(sect);
  if (!sect.contains("seed")) sim.seed = seed;
  return sim;
}

BatchSet resolve_batch(const std::string& batch_path, const json& cfg) {
  if (!batch_path.empty()) return read_batch(batch_path);
  return make_batch(workload_section(cfg));
}

Clustering clustering_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open clustering " + path);
  try {
    const json j = json::parse(in);
    Clustering c;
    c.assignment = j.at("assignment").get<std::vector<int>>();
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgumentError(std::string("clustering ") + path + ": " + e.what());
  }
}

json clustering_to_json(const Clustering& c) {
  json hist = json::array();
  for (const MergeStep& step : c.history)
    hist.push_back({{"a", step.a}, {"b", step.b}, {"score", step.score}});
  return {{"assignment", c.assignment},
          {"clusters", c.cluster_count()},
          {"members", c.members()},
          {"history", hist}};
}

Strategy strategy_from_json(const json& js, const json& cfg, uint64_t seed) {
  Strategy s;
  if (js.is_string()) {
    s.kind = strategy_kind_from_name(js.get<std::string>());
    s.seed = seed;
    return s;
  }
  try {
    s.kind = strategy_kind_from_name(js.at("kind").get<std::string>());
    s.name = js.value("name", std::string());
    s.seed = js.value("seed", seed);
    if (s.kind == StrategyKind::rl || s.kind == StrategyKind::rl_clustered) {
      s.agent = agent_section(cfg, nullptr, seed);
      if (!js.contains("checkpoint"))
        throw InvalidArgumentError("strategy '" + s.label() + "' needs a checkpoint path");
      s.params = nn::load_checkpoint_file(js.at("checkpoint").get<std::string>());
      s.member_mask = s.agent.mask;
      if (s.kind == StrategyKind::rl_clustered) {
        if (!js.contains("clustering"))
          throw InvalidArgumentError("strategy '" + s.label() + "' needs a clustering path");
        s.clustering = clustering_from_file(js.at("clustering").get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgumentError(std::string("strategy entry: ") + e.what());
  }
  return s;
}

std::vector<Strategy> strategy_section(const json& cfg, uint64_t seed) {
  std::vector<Strategy> out;
  if (!cfg.contains("strategies")) {
    for (const char* name : {"fifo", "random", "mcf"}) {
      Strategy s;
      s.kind = strategy_kind_from_name(name);
      s.seed = seed;
      out.push_back(std::move(s));
    }
    return out;
  }
  if (!cfg.at("strategies").is_array())
    throw InvalidArgumentError("the strategies section must be a list");
  for (const json& js : cfg.at("strategies")) out.push_back(strategy_from_json(js, cfg, seed));
  return out;
}

ClusterPipelineSpec cluster_section(const json& cfg, uint64_t seed, int clusters_flag) {
  const json sect = cfg.value("cluster", json::object());
  ClusterPipelineSpec spec;
  spec.seed = sect.value("seed", seed);
  spec.mixture_rounds = sect.value("mixture_rounds", spec.mixture_rounds);
  spec.n_clusters = clusters_flag > 0 ? clusters_flag : sect.value("n_clusters", 0);
  spec.embed_dim = sect.value("embed_dim", spec.embed_dim);
  return spec;
}

json curve_to_json(const TrainResult& result) {
  json curve = json::array();
  for (const EvalPoint& pt : result.curve)
    curve.push_back({{"round", pt.rounds_done},
                     {"eval_mean_makespan", pt.mean_makespan},
                     {"eval_std", pt.std_makespan},
                     {"train_events", pt.train_events},
                     {"eval_events", pt.eval_events}});
  return curve;
}

void write_curve_csv(const TrainResult& result, const std::string& path) {
  std::ostringstream os;
  write_learning_curve_csv(result, os);
  write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_workload(const std::string& config, std::string out, int n, int64_t seed,
                     const std::string& profile) {
  WorkloadSpec spec;
  if (!config.empty()) spec = workload_section(load_config(config));
  if (n > 0) spec.n = n;
  if (seed >= 0) spec.seed = static_cast<uint64_t>(seed);
  if (!profile.empty()) spec = workload_from_json({{"n", spec.n}, {"seed", spec.seed},
                                                   {"profile", profile}});
  const BatchSet batch = make_batch(spec);
  write_batch(batch, out);
  std::cout << "wrote " << batch.queries.size() << " queries to " << out << "\n";
  return 0;
}

int cmd_calibrate(const std::string& config, const std::string& batch_path,
                  const std::string& out, int repeats) {
  const json cfg = load_config(config);
  const BatchSet batch = resolve_batch(batch_path, cfg);
  const ExecLog log = calibrate(batch, env_section(cfg), experiment_seed(cfg), repeats);
  write_exec_log(log, out);
  std::cout << "wrote " << log.rounds.size() << " calibration rounds (" << log.entry_count()
            << " entries) to " << out << "\n";
  return 0;
}

int run_strategies(const std::string& config, const std::string& batch_path,
                   const std::string& calib, const std::string& out_dir) {
  const json cfg = load_config(config);
  ExperimentConfig ec;
  ec.batch = resolve_batch(batch_path, cfg);
  ec.env = env_section(cfg);
  ec.seed = experiment_seed(cfg);
  ec.rounds = cfg.value("rounds", ec.rounds);
  ec.strategies = strategy_section(cfg, ec.seed);
  ec.out_dir = out_dir;

  AvgTimeTable table;
  const AvgTimeTable* table_ptr = nullptr;
  if (!calib.empty()) {
    table = AvgTimeTable::from_log(read_exec_log_file(calib));
    table_ptr = &table;
  }
  const std::vector<StrategyOutcome> outcomes = run_experiment(ec, table_ptr);
  for (const StrategyOutcome& oc : outcomes)
    std::cout << oc.name << ": mean " << oc.mean_makespan << " s, std " << oc.std_makespan
              << " s over " << ec.rounds << " rounds\n";
  std::cout << "outputs in " << out_dir << "\n";
  return 0;
}

int cmd_derive_masks(const std::string& config, const std::string& batch_path,
                     const std::string& calib, const std::string& out) {
  const json cfg = load_config(config);
  const BatchSet batch = resolve_batch(batch_path, cfg);
  const EnvConfig env = env_section(cfg);
  const AvgTimeTable table = AvgTimeTable::from_log(read_exec_log_file(calib));
  const AgentConfig agent = agent_section(cfg, nullptr, experiment_seed(cfg));

  const int n = static_cast<int>(batch.queries.size());
  const int k = env.menu.size();
  std::vector<std::vector<double>> avg(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(k)));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c)
      avg[i][c] = table.avg(batch.queries[static_cast<size_t>(i)].query_id,
                            env.menu.workers[static_cast<size_t>(c)]);
  const std::vector<char> flags =
      derive_masks(avg, std::vector<char>(static_cast<size_t>(n), 1), env.menu, agent.mask);

  json rows = json::array();
  json ids = json::array();
  for (int i = 0; i < n; ++i) {
    json row = json::array();
    for (int c = 0; c < k; ++c) row.push_back(flags[static_cast<size_t>(i * k + c)] ? 1 : 0);
    rows.push_back(row);
    ids.push_back(batch.queries[static_cast<size_t>(i)].query_id);
  }
  const json doc = {{"workers_menu", env.menu.workers}, {"tau_abs", agent.mask.tau_abs},
                    {"tau_rel", agent.mask.tau_rel},    {"query_ids", ids},
                    {"allowed", rows},                  {"seed", experiment_seed(cfg)}};
  write_file(out, doc.dump(2) + "\n");
  std::cout << "wrote config masks for " << n << " queries to " << out << "\n";
  return 0;
}

const char* source_name(CellSource s) {
  switch (s) {
    case CellSource::empty: return "empty";
    case CellSource::observed: return "observed";
    case CellSource::predicted: return "predicted";
  }
  return "empty";
}

int cmd_compute_gains(const std::string& config, const std::string& batch_path,
                      const std::string& log_path, const std::string& out, bool complete) {
  const json cfg = load_config(config);
  const BatchSet batch = resolve_batch(batch_path, cfg);
  GainMatrix gains = compute_gains(read_exec_log_file(log_path), batch);
  if (complete) {
    const PlanEmbedder embedder(32, kPlanEmbedSeed);
    gains = complete_gains(gains, embedder.encode_batch(batch), GainPredictorConfig{});
  }
  json value = json::array();
  json source = json::array();
  for (int i = 0; i < gains.n; ++i) {
    json vrow = json::array();
    json srow = json::array();
    for (int j = 0; j < gains.n; ++j) {
      vrow.push_back(gains.at(i, j));
      srow.push_back(source_name(gains.source_at(i, j)));
    }
    value.push_back(vrow);
    source.push_back(srow);
  }
  const json doc = {{"n", gains.n}, {"value", value}, {"source", source},
                    {"seed", experiment_seed(cfg)}};
  write_file(out, doc.dump(2) + "\n");
  std::cout << "wrote " << gains.n << "x" << gains.n << " gain matrix to " << out << "\n";
  return 0;
}

int cmd_cluster(const std::string& config, const std::string& batch_path,
                const std::string& calib, const std::string& out, int clusters) {
  const json cfg = load_config(config);
  const BatchSet batch = resolve_batch(batch_path, cfg);
  const EnvConfig env = env_section(cfg);
  const AvgTimeTable table = AvgTimeTable::from_log(read_exec_log_file(calib));
  const ClusterPipelineSpec spec = cluster_section(cfg, experiment_seed(cfg), clusters);
  const ClusterPipeline pipe = build_clustering(batch, env, table, spec);

  json doc = clustering_to_json(pipe.clustering);
  doc["predictor_mse"] = pipe.predictor_mse;
  doc["mixture_rounds"] = spec.mixture_rounds;
  doc["seed"] = spec.seed;
  write_file(out, doc.dump(2) + "\n");
  std::cout << "clustered " << batch.queries.size() << " queries into "
            << pipe.clustering.cluster_count() << " groups; wrote " << out << "\n";
  return 0;
}

json train_summary(const json& cfg, const AgentConfig& agent, const TrainResult& train,
                   double fifo_mean, double fifo_std, uint64_t calib_events,
                   uint64_t baseline_events) {
  return {{"seed", experiment_seed(cfg)},
          {"algo", agent.use_aux ? "iqppo" : "ppo"},
          {"mask", agent.use_mask},
          {"fifo_mean", fifo_mean},
          {"fifo_std", fifo_std},
          {"best_mean", train.best_mean},
          {"best_rounds", train.best_rounds},
          {"train_events", train.train_events},
          {"eval_events", train.eval_events},
          {"calib_events", calib_events},
          {"baseline_events", baseline_events},
          {"curve", curve_to_json(train)},
          {"training", agent_to_json(agent)}};
}

int cmd_train(const std::string& config, const std::string& out_dir, const std::string& algo,
              bool mask, int clusters) {
  const json cfg = load_config(config);
  TrainRunSpec spec;
  spec.batch = make_batch(workload_section(cfg));
  spec.env = env_section(cfg);
  spec.experiment_seed = experiment_seed(cfg);
  spec.agent = agent_section(cfg, nullptr, spec.experiment_seed);
  if (algo == "ppo")
    spec.agent.use_aux = false;
  else if (algo != "iqppo")
    throw InvalidArgumentError("unknown algorithm '" + algo + "'");
  spec.agent.use_mask = mask;

  fs::create_directories(out_dir);
  json summary;
  if (clusters > 0 || (clusters == 0 && cfg.value("cluster", json::object())
                                            .value("n_clusters", 0) > 0)) {
    const ClusterPipelineSpec cspec = cluster_section(cfg, spec.experiment_seed, clusters);
    const ClusteredTrainRunResult res = run_clustered_training(spec, cspec);
    nn::save_checkpoint(res.train.best, (fs::path(out_dir) / "checkpoint.txt").string());
    write_curve_csv(res.train, (fs::path(out_dir) / "curve.csv").string());
    write_file((fs::path(out_dir) / "clusters.json").string(),
               clustering_to_json(res.pipeline.clustering).dump(2) + "\n");
    summary = train_summary(cfg, spec.agent, res.train, res.fifo_mean, res.fifo_std,
                            res.calib_events, res.baseline_events);
    summary["clusters"] = res.pipeline.clustering.cluster_count();
    summary["cluster_log_events"] = res.pipeline.log_events;
    std::cout << "clustered training: best mean " << res.train.best_mean << " s vs fifo "
              << res.fifo_mean << " s\n";
  } else {
    const TrainRunResult res = run_training(spec);
    nn::save_checkpoint(res.train.best, (fs::path(out_dir) / "checkpoint.txt").string());
    write_curve_csv(res.train, (fs::path(out_dir) / "curve.csv").string());
    summary = train_summary(cfg, spec.agent, res.train, res.fifo_mean, res.fifo_std,
                            res.calib_events, res.baseline_events);
    std::cout << "training: best mean " << res.train.best_mean << " s vs fifo " << res.fifo_mean
              << " s\n";
  }
  write_file((fs::path(out_dir) / "train.json").string(), summary.dump(2) + "\n");
  std::cout << "outputs in " << out_dir << "\n";
  return 0;
}

int cmd_train_sim(const std::string& config, const std::string& out_dir) {
  const json cfg = load_config(config);
  SimTrainSpec spec;
  spec.batch = make_batch(workload_section(cfg));
  spec.env = env_section(cfg);
  spec.experiment_seed = experiment_seed(cfg);
  spec.sim = sim_section(cfg, spec.experiment_seed);
  spec.mixture_rounds = cfg.value("simulator", json::object())
                            .value("mixture_rounds", spec.mixture_rounds);
  const SimTrainRunResult res = run_sim_training(spec);

  fs::create_directories(out_dir);
  std::ostringstream os;
  write_predictor_curve_csv(res.fit, spec.sim.reg_weight, os);
  write_file((fs::path(out_dir) / "predictor.csv").string(), os.str());
  nn::save_checkpoint(res.predictor->params().state_dict(),
                      (fs::path(out_dir) / "sim_checkpoint.txt").string());
  const json summary = {{"seed", spec.experiment_seed},
                        {"dataset_size", res.dataset_size},
                        {"train_count", res.fit.train_count},
                        {"holdout_count", res.fit.holdout_count},
                        {"accuracy", res.fit.accuracy},
                        {"mse", res.fit.mse},
                        {"majority_baseline", res.fit.majority_baseline},
                        {"variance_baseline", res.fit.variance_baseline},
                        {"simulator", sim_to_json(spec.sim)}};
  write_file((fs::path(out_dir) / "train_sim.json").string(), summary.dump(2) + "\n");
  std::cout << "predictor holdout accuracy " << res.fit.accuracy << " (majority "
            << res.fit.majority_baseline << "), mse " << res.fit.mse << " (variance "
            << res.fit.variance_baseline << ")\noutputs in " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config, const std::string& out_dir) {
  const json cfg = load_config(config);
  SimTrainSpec spec;
  spec.batch = make_batch(workload_section(cfg));
  spec.env = env_section(cfg);
  spec.experiment_seed = experiment_seed(cfg);
  spec.sim = sim_section(cfg, spec.experiment_seed);
  spec.mixture_rounds = cfg.value("simulator", json::object())
                            .value("mixture_rounds", spec.mixture_rounds);
  const SimTrainRunResult sim = run_sim_training(spec);

  const AgentConfig agent = agent_section(cfg, "pretrain", spec.experiment_seed);
  std::vector<uint64_t> eval_seeds(static_cast<size_t>(agent.eval_rounds));
  std::iota(eval_seeds.begin(), eval_seeds.end(), spec.experiment_seed);

  Environment env(spec.batch, spec.env);
  const EnvPolicy fifo = fifo_policy(spec.env.menu);
  std::vector<double> fifo_makespans;
  for (size_t r = 0; r < eval_seeds.size(); ++r) {
    run_episode(env, eval_seeds[r], fifo, static_cast<int>(r));
    fifo_makespans.push_back(env.makespan());
  }
  const auto [fifo_mean, fifo_std] = summarize(fifo_makespans);

  const FeatureContext ctx = make_feature_context(spec.env, sim.table,
                                                  static_cast<int>(spec.batch.queries.size()));
  SimBackend sim_backend(spec.batch, sim.table, *sim.predictor, sim.embeds);
  FlatDecisionEnv sim_env(sim_backend, sim.table, ctx, sim.embeds);
  Environment true_raw(spec.batch, spec.env);
  TrueBackend true_backend(true_raw);
  FlatDecisionEnv true_env(true_backend, sim.table, ctx, sim.embeds);
  const PretrainPhase phase =
      run_pretrain_phase(agent, ctx, sim_env, true_env, eval_seeds, fifo_mean);

  fs::create_directories(out_dir);
  nn::save_checkpoint(phase.selected,
                      (fs::path(out_dir) / "selected_checkpoint.txt").string());
  write_curve_csv(phase.pretrain, (fs::path(out_dir) / "pretrain_curve.csv").string());
  const json summary = {{"seed", spec.experiment_seed},
                        {"fifo_mean", fifo_mean},
                        {"fifo_std", fifo_std},
                        {"sim_events", phase.pretrain.train_events + phase.pretrain.eval_events},
                        {"select_events", phase.select_events},
                        {"selected_index", phase.selected_index},
                        {"selected_mean", phase.selected_mean},
                        {"checkpoint_true_means", phase.checkpoint_true_means},
                        {"predictor_accuracy", sim.fit.accuracy},
                        {"predictor_mse", sim.fit.mse}};
  write_file((fs::path(out_dir) / "pretrain.json").string(), summary.dump(2) + "\n");
  std::cout << "selected checkpoint " << phase.selected_index << " with true-env mean "
            << phase.selected_mean << " s (fifo " << fifo_mean << " s)\noutputs in " << out_dir
            << "\n";
  return 0;
}

int cmd_finetune(const std::string& config, const std::string& checkpoint,
                 const std::string& out_dir) {
  const json cfg = load_config(config);
  TrainRunSpec spec;
  spec.batch = make_batch(workload_section(cfg));
  spec.env = env_section(cfg);
  spec.experiment_seed = experiment_seed(cfg);
  spec.agent = agent_section(cfg, "finetune", spec.experiment_seed);

  const nn::StateDict warm = nn::load_checkpoint_file(checkpoint);
  const ExecLog calib_log = calibrate(spec.batch, spec.env, spec.experiment_seed, 1);
  const AvgTimeTable table = AvgTimeTable::from_log(calib_log);
  std::vector<uint64_t> eval_seeds(static_cast<size_t>(spec.agent.eval_rounds));
  std::iota(eval_seeds.begin(), eval_seeds.end(), spec.experiment_seed);

  Environment env(spec.batch, spec.env);
  const EnvPolicy fifo = fifo_policy(spec.env.menu);
  std::vector<double> fifo_makespans;
  for (size_t r = 0; r < eval_seeds.size(); ++r) {
    run_episode(env, eval_seeds[r], fifo, static_cast<int>(r));
    fifo_makespans.push_back(env.makespan());
  }
  const auto [fifo_mean, fifo_std] = summarize(fifo_makespans);

  const FeatureContext ctx =
      make_feature_context(spec.env, table, static_cast<int>(spec.batch.queries.size()));
  const PlanEmbedder embedder(spec.agent.embed_dim, kPlanEmbedSeed);
  const std::vector<nn::Tensor> embeds = embedder.encode_batch(spec.batch);
  Environment train_raw(spec.batch, spec.env);
  TrueBackend backend(train_raw);
  FlatDecisionEnv denv(backend, table, ctx, embeds);
  SchedulerAgent agent(spec.agent, ctx);
  agent.load_checkpoint(warm);
  const TrainResult train = agent.train(denv, eval_seeds, fifo_mean);

  fs::create_directories(out_dir);
  nn::save_checkpoint(train.best, (fs::path(out_dir) / "checkpoint.txt").string());
  write_curve_csv(train, (fs::path(out_dir) / "curve.csv").string());
  json summary = train_summary(cfg, spec.agent, train, fifo_mean, fifo_std,
                               2 * calib_log.entry_count(), env.event_count());
  summary["warm_start"] = checkpoint;
  write_file((fs::path(out_dir) / "finetune.json").string(), summary.dump(2) + "\n");
  std::cout << "finetuning: best mean " << train.best_mean << " s vs fifo " << fifo_mean
            << " s\noutputs in " << out_dir << "\n";
  return 0;
}

int cmd_gantt(const std::string& config, const std::string& log_path, int round_id,
              int connections, const std::string& out) {
  const ExecLog log = read_exec_log_file(log_path);
  const RoundRecord* round = nullptr;
  for (const RoundRecord& r : log.rounds)
    if (r.round_id == round_id) round = &r;
  if (round == nullptr)
    throw MissingDataError("round " + std::to_string(round_id) + " not in " + log_path);
  int lanes = connections;
  if (lanes <= 0 && !config.empty()) lanes = env_section(load_config(config)).connections;
  if (lanes <= 0) {
    for (const LogEntry& e : round->entries) lanes = std::max(lanes, e.conn_id + 1);
    if (lanes <= 0) lanes = 1;
  }
  gantt_export_file(*round, lanes, out);
  std::cout << "wrote " << round->entries.size() << " bars over " << lanes << " lanes to " << out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concurrent-query scheduling laboratory"};
  app.require_subcommand(1);

  std::string config, batch, calib, log_path, checkpoint, out;
  std::string profile, algo = "iqppo";
  int n = 0, repeats = 1, clusters = 0, round_id = 0, connections = 0;
  int64_t wl_seed = -1;
  bool mask = true, complete = false;
  int rc = 0;

  auto* gen = app.add_subcommand("gen-workload", "generate a query batch");
  gen->add_option("--config", config, "config JSON with a workload section");
  gen->add_option("-n,--queries", n, "batch size");
  gen->add_option("--seed", wl_seed, "workload seed");
  gen->add_option("--profile", profile, "plain or planted");
  gen->add_option("--out", out, "batch JSON path")->required();
  gen->callback([&] { rc = cmd_gen_workload(config, out, n, wl_seed, profile); });

  auto* cal = app.add_subcommand("calibrate", "measure per-config solo execution times");
  cal->add_option("--config", config)->required();
  cal->add_option("--batch", batch, "batch JSON (defaults to the config workload)");
  cal->add_option("--repeats", repeats, "calibration repeats per (config, query)");
  cal->add_option("--out", out, "calibration log path")->required();
  cal->callback([&] { rc = cmd_calibrate(config, batch, out, repeats); });

  auto* base = app.add_subcommand("run-baselines", "run the configured strategies");
  base->add_option("--config", config)->required();
  base->add_option("--batch", batch);
  base->add_option("--calib", calib, "calibration log (needed by mcf and rl)");
  base->add_option("--out", out, "output directory")->required();
  base->callback([&] { rc = run_strategies(config, batch, calib, out); });

  auto* masks = app.add_subcommand("derive-masks", "compute per-query config masks");
  masks->add_option("--config", config)->required();
  masks->add_option("--batch", batch);
  masks->add_option("--calib", calib)->required();
  masks->add_option("--out", out)->required();
  masks->callback([&] { rc = cmd_derive_masks(config, batch, calib, out); });

  auto* gains = app.add_subcommand("compute-gains", "pairwise scheduling gains from a log");
  gains->add_option("--config", config)->required();
  gains->add_option("--batch", batch);
  gains->add_option("--log", log_path, "concurrent-execution log")->required();
  gains->add_flag("--complete", complete, "predict empty cells from plan embeddings");
  gains->add_option("--out", out)->required();
  gains->callback([&] { rc = cmd_compute_gains(config, batch, log_path, out, complete); });

  auto* clu = app.add_subcommand("cluster", "group queries by scheduling gain");
  clu->add_option("--config", config)->required();
  clu->add_option("--batch", batch);
  clu->add_option("--calib", calib)->required();
  clu->add_option("--clusters", clusters, "target cluster count (0 = default)");
  clu->add_option("--out", out)->required();
  clu->callback([&] { rc = cmd_cluster(config, batch, calib, out, clusters); });

  auto* train = app.add_subcommand("train", "train a scheduling policy");
  train->add_option("--config", config)->required();
  train->add_option("--algo", algo, "ppo or iqppo")->check(CLI::IsMember({"ppo", "iqppo"}));
  train->add_flag("--mask,!--no-mask", mask, "adaptive config masking");
  train->add_option("--clusters", clusters, "train on gain clusters (0 = flat)");
  train->add_option("--out", out, "output directory")->required();
  train->callback([&] { rc = cmd_train(config, out, algo, mask, clusters); });

  auto* tsim = app.add_subcommand("train-sim", "fit the incremental completion predictor");
  tsim->add_option("--config", config)->required();
  tsim->add_option("--out", out, "output directory")->required();
  tsim->callback([&] { rc = cmd_train_sim(config, out); });

  auto* pre = app.add_subcommand("pretrain", "train on the learned simulator and select");
  pre->add_option("--config", config)->required();
  pre->add_option("--out", out, "output directory")->required();
  pre->callback([&] { rc = cmd_pretrain(config, out); });

  auto* fin = app.add_subcommand("finetune", "continue training from a checkpoint");
  fin->add_option("--config", config)->required();
  fin->add_option("--checkpoint", checkpoint, "warm-start checkpoint")->required();
  fin->add_option("--out", out, "output directory")->required();
  fin->callback([&] { rc = cmd_finetune(config, checkpoint, out); });

  auto* ev = app.add_subcommand("eval", "evaluate configured strategies");
  ev->add_option("--config", config)->required();
  ev->add_option("--batch", batch);
  ev->add_option("--calib", calib);
  ev->add_option("--out", out, "output directory")->required();
  ev->callback([&] { rc = run_strategies(config, batch, calib, out); });

  auto* gantt = app.add_subcommand("gantt", "render one round as an SVG chart");
  gantt->add_option("--config", config, "config JSON (for the lane count)");
  gantt->add_option("--log", log_path)->required();
  gantt->add_option("--round", round_id, "round id to render");
  gantt->add_option("--connections", connections, "lane count override");
  gantt->add_option("--out", out, "SVG path")->required();
  gantt->callback([&] { rc = cmd_gantt(config, log_path, round_id, connections, out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const MissingDataError& e) {
    std::cerr << "missing data: " << e.what() << "\n";
    return 3;
  } catch (const InvalidArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataFormatError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
