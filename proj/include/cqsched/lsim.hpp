#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cqsched/agent.hpp"
#include "cqsched/decision_env.hpp"
#include "cqsched/encoder.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Completion samples
// ---------------------------------------------------------------------------
//
// One sample per scheduling instant (a submission or a completion) with at
// least one query still running afterwards: the state at that instant, which
// running query finishes next, and how long until it does.

struct CompletionSample {
  StateSnapshot snap;
  std::vector<char> running;  // classification support at the instant
  int label = -1;             // batch index of the earliest finisher
  double t_norm = 0.0;        // normalized time until that finish; > 0
};

// Reconstructs samples by replaying each round's log entries on a timeline.
// Simultaneous events collapse into one instant.  Malformed rounds (entries
// whose submit/start/finish times are out of order) raise DataFormatError.
std::vector<CompletionSample> build_dataset(const ExecLog& log, const BatchSet& batch,
                                            const AvgTimeTable& table, const FeatureContext& ctx);

// ---------------------------------------------------------------------------
// The predictor
// ---------------------------------------------------------------------------

struct SimConfig {
  nn::NetConfig net;
  int embed_dim = 32;
  double reg_weight = 0.1;  // gamma: weight of the regression loss
  int epochs = 40;
  int minibatch = 32;
  double lr = 1e-3;
  double holdout_fraction = 0.1;
  int incremental_epochs = 2;
  double regress_tolerance = 0.05;  // max relative metric slip before revert
  uint64_t seed = 0;

  void validate() const;
};

struct EpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_acc = 0.0;
  double holdout_mse = 0.0;
};

struct FitReport {
  std::vector<EpochStat> epochs;
  double accuracy = 0.0;           // final held-out earliest-finisher accuracy
  double mse = 0.0;                // final held-out regression MSE (normalized)
  double majority_baseline = 0.0;  // held-out accuracy of the majority label
  double variance_baseline = 0.0;  // held-out MSE of the mean predictor
  int train_count = 0;
  int holdout_count = 0;
};

struct UpdateReport {
  bool accepted = false;
  double acc_before = 0.0;
  double acc_after = 0.0;
  double mse_before = 0.0;
  double mse_after = 0.0;
  int new_train = 0;
  int new_holdout = 0;
};

class SimPredictor {
 public:
  SimPredictor(const SimConfig& cfg, const FeatureContext& ctx);

  struct Outputs {
    Encoding enc;
    nn::Tape::Id clf_logits = -1;  // [n], masked to running units by callers
  };
  Outputs forward(nn::Tape& t, const StateSnapshot& snap,
                  const std::vector<nn::Tensor>& embeds) const;
  // Predicted normalized finish time for one unit's representation.
  nn::Tape::Id time_prediction(nn::Tape& t, const Encoding& enc, int unit) const;

  // Batch-mean losses: cross-entropy over running units plus gamma times the
  // squared time error at the true finisher (teacher forcing).
  struct LossParts {
    nn::Tape::Id clf = -1;
    nn::Tape::Id reg = -1;
    nn::Tape::Id total = -1;
  };
  LossParts loss(nn::Tape& t, const std::vector<const CompletionSample*>& batch,
                 const std::vector<nn::Tensor>& embeds) const;

  // Frozen-model inference: (argmax finisher among running, normalized time
  // at that finisher).  Ties break to the lowest unit index.
  std::pair<int, double> predict(const StateSnapshot& snap, const std::vector<char>& running,
                                 const std::vector<nn::Tensor>& embeds) const;

  FitReport fit(const std::vector<CompletionSample>& data, const std::vector<nn::Tensor>& embeds);
  // Continues training on fresh samples at a 10x smaller rate; reverts the
  // whole update when held-out metrics slip more than the tolerance.
  UpdateReport incremental_update(const std::vector<CompletionSample>& fresh,
                                  const std::vector<nn::Tensor>& embeds);

  // (accuracy, mse) over the retained held-out set.
  std::pair<double, double> holdout_metrics(const std::vector<nn::Tensor>& embeds) const;

  const std::vector<CompletionSample>& holdout() const { return holdout_; }
  bool fitted() const { return fitted_; }
  nn::ParamStore& params() { return store_; }
  const SimConfig& config() const { return cfg_; }
  const FeatureContext& context() const { return ctx_; }

 private:
  std::pair<double, double> eval_metrics(const std::vector<CompletionSample>& samples,
                                         const std::vector<nn::Tensor>& embeds) const;

  SimConfig cfg_;
  FeatureContext ctx_;
  nn::ParamStore store_;
  StateEncoder encoder_;
  nn::Mlp clf_;
  nn::Mlp reg_;
  std::vector<CompletionSample> holdout_;
  bool fitted_ = false;
  uint64_t update_counter_ = 0;
};

// ---------------------------------------------------------------------------
// Simulated execution backend
// ---------------------------------------------------------------------------
//
// Drop-in replacement for the ground-truth environment: submissions work the
// same way, but advancing asks the predictor who finishes next and when.  A
// forward-progress floor keeps the clock strictly increasing so simulated
// episodes always terminate in exactly n completions.

inline constexpr double kSimMinStep = 1e-3;  // seconds

class SimBackend : public ExecBackend {
 public:
  SimBackend(const BatchSet& batch, const AvgTimeTable& table, const SimPredictor& model,
             std::vector<nn::Tensor> query_embeds);

  void reset(uint64_t round_seed) override;
  void submit(int query_id, int workers) override;
  std::pair<int, double> advance() override;

  double clock() const override { return clock_; }
  const QueryRun& run(int query_id) const override;
  const std::vector<int>& connection_map() const override { return conn_query_; }
  int free_connections() const override;
  bool any_running() const override { return running_count_ > 0; }
  bool any_pending() const override;
  bool all_finished() const override;
  double makespan() const override;
  uint64_t event_count() const override { return events_; }
  RoundRecord round_record(int round_id) const override;
  const BatchSet& batch() const override { return batch_; }

 private:
  int index_of(int query_id) const;

  const BatchSet& batch_;
  const AvgTimeTable& table_;
  const SimPredictor& model_;
  std::vector<nn::Tensor> embeds_;
  std::vector<QueryRun> runs_;
  std::vector<int> conn_query_;
  double clock_ = 0.0;
  int running_count_ = 0;
  int finished_count_ = 0;
  uint64_t events_ = 0;
};

// ---------------------------------------------------------------------------
// Pretrain -> select -> finetune
// ---------------------------------------------------------------------------
//
// Phase 1 trains an agent entirely against the simulator, checkpointing at
// every evaluation.  Phase 2 measures every checkpoint on the true
// environment and keeps the best.  Phase 3 resumes training from it on the
// true environment.  True-environment events are reported per phase.

struct PretrainPlan {
  AgentConfig pretrain;  // phase-1 hyperparameters (volume on the simulator)
  AgentConfig finetune;  // phase-3 hyperparameters (volume on the true env)
};

struct PretrainPhase {
  TrainResult pretrain;                      // events here are simulator events
  std::vector<double> checkpoint_true_means;  // one per pretrain curve point
  int selected_index = -1;
  double selected_mean = 0.0;  // true-env mean makespan before fine-tuning
  uint64_t select_events = 0;  // true-env events spent on checkpoint selection
  nn::StateDict selected;
};

struct PretrainReport {
  TrainResult pretrain;
  std::vector<double> checkpoint_true_means;
  int selected_index = -1;
  double selected_mean = 0.0;
  uint64_t select_events = 0;
  TrainResult finetune;  // events here are true-environment events
};

// Phase 1+2: train on the simulator, then measure every checkpoint on the
// real environment and keep the one with the lowest mean makespan.
PretrainPhase run_pretrain_phase(const AgentConfig& cfg, const FeatureContext& ctx,
                                 DecisionEnv& sim_env, DecisionEnv& true_env,
                                 const std::vector<uint64_t>& eval_seeds, double t_ref);

PretrainReport pretrain_finetune(const PretrainPlan& plan, const FeatureContext& ctx,
                                 DecisionEnv& sim_env, DecisionEnv& true_env,
                                 const std::vector<uint64_t>& eval_seeds, double t_ref);

}  // namespace cqsched
