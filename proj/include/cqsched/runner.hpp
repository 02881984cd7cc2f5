#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqsched/agent.hpp"
#include "cqsched/decision_env.hpp"
#include "cqsched/encoder.hpp"
#include "cqsched/envsim.hpp"
#include "cqsched/knowledge.hpp"
#include "cqsched/lsim.hpp"
#include "cqsched/workload.hpp"

namespace cqsched {

// Plan embeddings are a fixed signature shared by training, evaluation and
// the learned simulator, so every pipeline derives them from one constant.
inline constexpr uint64_t kPlanEmbedSeed = 0x5eedf00dUL;

// Static featurizer inputs shared by an agent and the environments it runs
// against: the config menu and connection count come from the environment,
// the time scale from the calibration table.
FeatureContext make_feature_context(const EnvConfig& env, const AvgTimeTable& table,
                                    int unit_count);

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

// Runs every query alone under every config `repeats` times, one round per
// (config, query, repeat), so the resulting log fills every average-time
// cell.  Round ids count up from zero.
ExecLog calibrate(const BatchSet& batch, const EnvConfig& cfg, uint64_t seed, int repeats = 1);

// ---------------------------------------------------------------------------
// Heuristic policies
// ---------------------------------------------------------------------------
//
// All heuristics submit with the minimal config; they only choose order.

// Batch order.
EnvPolicy fifo_policy(const ConfigMenu& menu);
// A fresh permutation per round, drawn from (strategy seed, round seed).
EnvPolicy random_policy(const ConfigMenu& menu, uint64_t strategy_seed);
// Longest mean solo time first; ties by query id.  The table must cover
// every query.
EnvPolicy mcf_policy(const ConfigMenu& menu, const AvgTimeTable& table);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class StrategyKind { random, fifo, mcf, rl, rl_clustered };

std::string strategy_kind_name(StrategyKind kind);
StrategyKind strategy_kind_from_name(const std::string& name);

struct Strategy {
  StrategyKind kind = StrategyKind::fifo;
  std::string name;  // output label; empty uses the kind name
  uint64_t seed = 0;  // extra stream for the random heuristic

  // RL kinds only.
  AgentConfig agent;
  nn::StateDict params;    // trained checkpoint; required for rl kinds
  Clustering clustering;   // rl_clustered only
  MaskConfig member_mask;  // member-level config pruning inside clusters

  std::string label() const { return name.empty() ? strategy_kind_name(kind) : name; }
};

struct ExperimentConfig {
  BatchSet batch;
  EnvConfig env;
  std::vector<Strategy> strategies;
  int rounds = 5;     // m
  uint64_t seed = 0;  // round seeds are seed+0 .. seed+m-1
  std::string out_dir;  // when non-empty: logs + metrics + config records

  void validate() const;
};

struct StrategyOutcome {
  std::string name;
  double mean_makespan = 0.0;
  double std_makespan = 0.0;
  std::vector<double> round_makespans;
  ExecLog log;
};

// Runs every strategy over the same m round seeds.  The calibration table is
// required by mcf and the rl kinds; passing nullptr with such a strategy in
// the list raises MissingDataError.
std::vector<StrategyOutcome> run_experiment(const ExperimentConfig& cfg,
                                            const AvgTimeTable* table);

// ---------------------------------------------------------------------------
// Training pipelines
// ---------------------------------------------------------------------------

struct TrainRunSpec {
  BatchSet batch;
  EnvConfig env;
  AgentConfig agent;
  uint64_t experiment_seed = 0;  // evaluation round seeds: seed+0 .. seed+m-1
  int calib_repeats = 1;
};

struct TrainRunResult {
  AvgTimeTable table;
  uint64_t calib_events = 0;
  uint64_t baseline_events = 0;
  double fifo_mean = 0.0;  // reward reference t_ref
  double fifo_std = 0.0;
  TrainResult train;
};

// From-scratch pipeline: calibrate, measure the FIFO reference on the
// evaluation seeds, then run IQ-PPO on the true environment.
TrainRunResult run_training(const TrainRunSpec& spec);

struct ClusterPipelineSpec {
  uint64_t seed = 0;        // round seeds for the mixture log
  int mixture_rounds = 12;  // fifo/random/mcf interleaved
  int n_clusters = 0;       // 0 = default_cluster_count(n)
  int embed_dim = 32;
  GainPredictorConfig predictor;
};

struct ClusterPipeline {
  ExecLog mixture_log;
  uint64_t log_events = 0;
  GainMatrix gains;
  double predictor_mse = 0.0;  // 0 when every cell was observed
  Clustering clustering;
};

// Scheduling-gain pipeline: heuristic mixture log -> gain matrix ->
// predictor completion for unobserved pairs -> average-linkage clusters.
ClusterPipeline build_clustering(const BatchSet& batch, const EnvConfig& env,
                                 const AvgTimeTable& table, const ClusterPipelineSpec& spec);

struct ClusteredTrainRunResult {
  AvgTimeTable table;
  uint64_t calib_events = 0;
  uint64_t baseline_events = 0;
  double fifo_mean = 0.0;
  double fifo_std = 0.0;
  ClusterPipeline pipeline;
  TrainResult train;
};

// Cluster-level pipeline: calibration and FIFO reference as above, then
// clustering, then IQ-PPO over cluster units.
ClusteredTrainRunResult run_clustered_training(const TrainRunSpec& spec,
                                               const ClusterPipelineSpec& cluster);

struct SimTrainSpec {
  BatchSet batch;
  EnvConfig env;
  SimConfig sim;
  uint64_t experiment_seed = 0;
  int mixture_rounds = 30;  // predictor training data volume
  int calib_repeats = 1;
};

struct SimTrainRunResult {
  AvgTimeTable table;
  uint64_t calib_events = 0;
  ExecLog mixture_log;
  uint64_t log_events = 0;
  int dataset_size = 0;
  FitReport fit;
  std::unique_ptr<SimPredictor> predictor;
  std::vector<nn::Tensor> embeds;
};

// Predictor pipeline: calibrate, collect a diverse heuristic log, build the
// completion dataset and fit the simulator.
SimTrainRunResult run_sim_training(const SimTrainSpec& spec);

struct PretrainRunSpec {
  SimTrainSpec sim;
  PretrainPlan plan;
};

struct PretrainRunResult {
  SimTrainRunResult sim;
  double fifo_mean = 0.0;
  double fifo_std = 0.0;
  uint64_t baseline_events = 0;
  PretrainReport report;
};

// Full transfer pipeline: simulator training, then pretrain on the simulator,
// checkpoint selection on the true environment, and fine-tuning.
PretrainRunResult run_pretrain_finetune(const PretrainRunSpec& spec);

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

nlohmann::json metrics_to_json(const std::vector<StrategyOutcome>& outcomes);
void write_learning_curve_csv(const TrainResult& result, std::ostream& os);
void write_predictor_curve_csv(const FitReport& report, double gamma, std::ostream& os);

// One lane per connection, one labeled bar per query.
void gantt_export(const RoundRecord& round, int connections, std::ostream& os);
void gantt_export_file(const RoundRecord& round, int connections, const std::string& path);

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

struct WorkloadSpec {
  int n = 12;
  uint64_t seed = 1;
  WorkloadProfile profile = WorkloadProfile::planted;
};

WorkloadSpec workload_from_json(const nlohmann::json& j);
nlohmann::json workload_to_json(const WorkloadSpec& spec);
BatchSet make_batch(const WorkloadSpec& spec);

EnvConfig env_from_json(const nlohmann::json& j);
nlohmann::json env_to_json(const EnvConfig& cfg);

AgentConfig agent_from_json(const nlohmann::json& j);
nlohmann::json agent_to_json(const AgentConfig& cfg);

SimConfig sim_from_json(const nlohmann::json& j);
nlohmann::json sim_to_json(const SimConfig& cfg);

}  // namespace cqsched
