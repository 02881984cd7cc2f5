#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cqsched/decision_env.hpp"
#include "cqsched/encoder.hpp"
#include "cqsched/knowledge.hpp"
#include "cqsched/nncore/adam.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct AgentConfig {
  nn::NetConfig net;
  MaskConfig mask;
  bool use_mask = true;  // adaptive config masking on the policy
  bool use_aux = true;   // completion-time auxiliary phase (off = plain PPO)
  int embed_dim = 32;

  // Training volume: cycles x ppo_iters_per_cycle x rounds_per_iter rounds.
  int cycles = 4;
  int ppo_iters_per_cycle = 10;
  int rounds_per_iter = 25;

  // PPO update.
  int ppo_epochs = 8;
  int minibatch = 64;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double gae_lambda = 0.95;
  double discount = 1.0;

  // Auxiliary phase over the cycle's completion records.
  int aux_epochs = 3;
  int aux_minibatch = 64;
  double clone_coef = 1.0;  // weight of the policy-preservation KL

  double lr = 3e-4;
  int eval_every_rounds = 50;
  int eval_rounds = 5;
  uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Rollout records
// ---------------------------------------------------------------------------

struct StepRecord {
  StateSnapshot snap;
  std::vector<char> mask;  // flat [unit * K + config] allowance at decision time
  int action = -1;         // flat action index
  double logp = 0.0;       // behavior log-probability
  double value = 0.0;      // behavior value estimate
  double reward = 0.0;
  char terminal = 0;
  double advantage = 0.0;
  double v_target = 0.0;
};

// One record per completion: the pre-completion state, which unit finished
// first and after how long (normalized).  The behavior policy over the
// decision mask is captured once per cycle, right before the joint phase.
struct AuxRecord {
  StateSnapshot snap;
  int unit = -1;
  double t_norm = 0.0;
  std::vector<char> mask;
  bool has_decision = false;
  std::vector<double> pi_old;  // probs over the allowed entries, ascending index
};

// ---------------------------------------------------------------------------
// GAE
// ---------------------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;  // advantage + behavior value
};

// One or more episodes' rewards/values in step order; `terminal` marks
// episode ends (no bootstrapping across them).
GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<char>& terminal, double discount, double lambda);

// In-place standardization; left untouched when the spread is degenerate.
void normalize_advantages(std::vector<double>& adv);

// ---------------------------------------------------------------------------
// Training products
// ---------------------------------------------------------------------------

struct EvalPoint {
  int rounds_done = 0;
  uint64_t train_events = 0;  // cumulative backend events spent on training rounds
  uint64_t eval_events = 0;   // cumulative backend events spent on evaluations
  double mean_makespan = 0.0;
  double std_makespan = 0.0;
  nn::StateDict checkpoint;
};

struct TrainResult {
  std::vector<EvalPoint> curve;
  nn::StateDict best;
  double best_mean = 0.0;
  int best_rounds = 0;
  uint64_t train_events = 0;
  uint64_t eval_events = 0;
};

// ---------------------------------------------------------------------------
// The agent
// ---------------------------------------------------------------------------

class SchedulerAgent {
 public:
  SchedulerAgent(const AgentConfig& cfg, const FeatureContext& ctx);

  struct Heads {
    Encoding enc;
    nn::Tape::Id logits = -1;  // [n * K], unit-major
    nn::Tape::Id value = -1;   // scalar
  };
  Heads forward(nn::Tape& t, const StateSnapshot& snap,
                const std::vector<nn::Tensor>& embeds) const;
  // Predicted normalized completion time of `unit`, which must be running.
  nn::Tape::Id aux_prediction(nn::Tape& t, const Encoding& enc, const StateSnapshot& snap,
                              int unit) const;

  // Loss builders (exposed so gradients can be checked end to end).  Both
  // average over the batch.
  struct PpoLossParts {
    nn::Tape::Id clip = -1;     // clipped surrogate (to be maximized)
    nn::Tape::Id value = -1;    // half squared value error
    nn::Tape::Id entropy = -1;  // policy entropy
    nn::Tape::Id total = -1;    // -clip + value_coef*value - entropy_coef*entropy
  };
  PpoLossParts ppo_loss(nn::Tape& t, const std::vector<const StepRecord*>& batch,
                        const std::vector<nn::Tensor>& embeds) const;
  struct JointLossParts {
    nn::Tape::Id aux = -1;    // half squared completion-time error
    nn::Tape::Id total = -1;  // aux + clone_coef * KL(pi_old, pi)
  };
  JointLossParts joint_loss(nn::Tape& t, const std::vector<const AuxRecord*>& batch,
                            const std::vector<nn::Tensor>& embeds) const;

  // Flat allowance: pending units only; with use_mask also drops configs
  // whose means show no real speedup over lower ones.
  std::vector<char> action_mask(DecisionEnv& env) const;

  // Greedy policy over the masked distribution (ties -> lowest flat index).
  UnitPolicy greedy_policy() const;

  // Mean/std makespan of the greedy policy over the given round seeds.
  std::pair<double, double> evaluate(DecisionEnv& env, const std::vector<uint64_t>& seeds) const;

  TrainResult train(DecisionEnv& env, const std::vector<uint64_t>& eval_seeds, double t_ref);

  // Building blocks for ablation studies on the auxiliary phase: gather
  // completion records with the sampling policy, run one joint phase over
  // them, and measure how far the policy moved from the recorded behavior.
  std::vector<AuxRecord> collect_aux_dataset(DecisionEnv& env, int rounds, uint64_t stream);
  void auxiliary_phase(DecisionEnv& env, std::vector<AuxRecord>& records);
  double mean_clone_kl(DecisionEnv& env, const std::vector<AuxRecord>& records) const;

  nn::ParamStore& params() { return store_; }
  const AgentConfig& config() const { return cfg_; }
  void load_checkpoint(const nn::StateDict& sd) { store_.load_state_dict(sd); }

 private:
  std::pair<int, int> decode_action(int flat) const;
  void collect_round(DecisionEnv& env, uint64_t round_seed, double t_ref, std::mt19937_64& rng,
                     std::vector<StepRecord>* steps, std::vector<AuxRecord>* aux) const;
  void ppo_update(DecisionEnv& env, const std::vector<StepRecord>& steps, nn::Adam& opt,
                  std::mt19937_64& rng);
  void aux_update(DecisionEnv& env, std::vector<AuxRecord>& records, nn::Adam& opt,
                  std::mt19937_64& rng);

  AgentConfig cfg_;
  FeatureContext ctx_;
  nn::ParamStore store_;
  StateEncoder encoder_;
  nn::Mlp policy_;
  nn::Mlp value_;
  nn::Mlp aux_;
};

}  // namespace cqsched
