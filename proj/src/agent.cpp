#include "cqsched/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "cqsched/errors.hpp"
#include "cqsched/rng.hpp"

namespace cqsched {

namespace {

// Distinct construction / rollout streams derived from the agent seed.
constexpr uint64_t kEncoderStream = 0x1d8f02u;
constexpr uint64_t kHeadStream = 0x2c44a7u;
constexpr uint64_t kSampleStream = 0x39b1e5u;
constexpr uint64_t kShuffleStream = 0x4e7d93u;
constexpr uint64_t kTrainRoundStream = 0x56c2f1u;
constexpr uint64_t kAuxPhaseStream = 0x6f90cbu;

AgentConfig checked(AgentConfig cfg) {
  cfg.validate();
  return cfg;
}

FeatureContext checked(FeatureContext ctx) {
  ctx.validate();
  return ctx;
}

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ProtocolError(std::string("training diverged: non-finite ") + what);
}

}  // namespace

void AgentConfig::validate() const {
  net.validate();
  if (mask.tau_abs < 0.0 || mask.tau_rel < 0.0)
    throw InvalidArgumentError("mask thresholds must be non-negative");
  if (embed_dim < 1) throw InvalidArgumentError("embed_dim must be positive");
  if (cycles < 1 || ppo_iters_per_cycle < 1 || rounds_per_iter < 1)
    throw InvalidArgumentError("training volume knobs must be positive");
  if (ppo_epochs < 1 || minibatch < 1 || aux_epochs < 1 || aux_minibatch < 1)
    throw InvalidArgumentError("update knobs must be positive");
  if (clip_eps <= 0.0 || clip_eps >= 1.0) throw InvalidArgumentError("clip_eps must lie in (0, 1)");
  if (value_coef < 0.0 || entropy_coef < 0.0 || clone_coef < 0.0)
    throw InvalidArgumentError("loss coefficients must be non-negative");
  if (gae_lambda < 0.0 || gae_lambda > 1.0)
    throw InvalidArgumentError("gae_lambda must lie in [0, 1]");
  if (discount <= 0.0 || discount > 1.0) throw InvalidArgumentError("discount must lie in (0, 1]");
  if (lr <= 0.0) throw InvalidArgumentError("learning rate must be positive");
  if (eval_every_rounds < 1 || eval_rounds < 1)
    throw InvalidArgumentError("evaluation knobs must be positive");
}

// ---------------------------------------------------------------------------
// GAE
// ---------------------------------------------------------------------------

GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<char>& terminal, double discount, double lambda) {
  if (rewards.size() != values.size() || rewards.size() != terminal.size())
    throw ShapeError("compute_gae: input lengths differ");
  const size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.value_targets.assign(n, 0.0);
  double carry = 0.0;
  for (size_t i = n; i-- > 0;) {
    // A terminal step ends its episode: nothing is bootstrapped across it.
    const double next_value = (terminal[i] || i + 1 == n) ? 0.0 : values[i + 1];
    const double delta = rewards[i] + discount * next_value - values[i];
    carry = delta + (terminal[i] ? 0.0 : discount * lambda * carry);
    out.advantages[i] = carry;
    out.value_targets[i] = carry + values[i];
  }
  return out;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const auto [mean, sd] = summarize(adv);
  if (sd < 1e-8) return;  // a flat batch carries no ordering information
  for (double& a : adv) a = (a - mean) / sd;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

SchedulerAgent::SchedulerAgent(const AgentConfig& cfg, const FeatureContext& ctx)
    : cfg_(checked(cfg)),
      ctx_(checked(ctx)),
      store_(),
      encoder_([&]() {
        std::mt19937_64 rng(mix64(cfg_.seed, kEncoderStream));
        return StateEncoder(store_, cfg_.net, ctx_, cfg_.embed_dim, rng);
      }()) {
  std::mt19937_64 rng(mix64(cfg_.seed, kHeadStream));
  const int h = cfg_.net.hidden_dim;
  policy_ = nn::make_mlp(store_, "policy", h, h, ctx_.menu.size(), cfg_.net.policy_depth,
                         /*head=*/true, rng);
  value_ = nn::make_mlp(store_, "value", h, h, 1, cfg_.net.value_depth, /*head=*/true, rng);
  aux_ = nn::make_mlp(store_, "aux", h, h, 1, cfg_.net.aux_depth, /*head=*/true, rng);
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

SchedulerAgent::Heads SchedulerAgent::forward(nn::Tape& t, const StateSnapshot& snap,
                                              const std::vector<nn::Tensor>& embeds) const {
  Heads h;
  h.enc = encoder_.encode(t, snap, embeds);
  h.logits = t.flatten(nn::mlp_apply(t, policy_, h.enc.per_unit));
  h.value = t.pick(nn::mlp_apply(t, value_, h.enc.global), 0);
  return h;
}

nn::Tape::Id SchedulerAgent::aux_prediction(nn::Tape& t, const Encoding& enc,
                                            const StateSnapshot& snap, int unit) const {
  if (unit < 0 || unit >= static_cast<int>(snap.units.size()))
    throw InvalidArgumentError("aux_prediction: unit out of range");
  if (snap.units[static_cast<size_t>(unit)].status != QueryStatus::running)
    throw ProtocolError("aux_prediction: completion time is only defined for running units");
  return t.pick(nn::mlp_apply(t, aux_, t.row(enc.per_unit, unit)), 0);
}

std::pair<int, int> SchedulerAgent::decode_action(int flat) const {
  const int K = ctx_.menu.size();
  return {flat / K, ctx_.menu.workers[static_cast<size_t>(flat % K)]};
}

std::vector<char> SchedulerAgent::action_mask(DecisionEnv& env) const {
  const std::vector<char> pending = env.unit_pending();
  if (cfg_.use_mask) return derive_masks(env.unit_avg_matrix(), pending, ctx_.menu, cfg_.mask);
  const int K = ctx_.menu.size();
  std::vector<char> allowed(pending.size() * static_cast<size_t>(K), 0);
  for (size_t u = 0; u < pending.size(); ++u)
    if (pending[u])
      for (int k = 0; k < K; ++k) allowed[u * static_cast<size_t>(K) + static_cast<size_t>(k)] = 1;
  return allowed;
}

// ---------------------------------------------------------------------------
// Loss builders
// ---------------------------------------------------------------------------

SchedulerAgent::PpoLossParts SchedulerAgent::ppo_loss(
    nn::Tape& t, const std::vector<const StepRecord*>& batch,
    const std::vector<nn::Tensor>& embeds) const {
  if (batch.empty()) throw InvalidArgumentError("ppo_loss needs a non-empty batch");
  std::vector<nn::Tape::Id> clip_terms, value_terms, entropy_terms;
  clip_terms.reserve(batch.size());
  value_terms.reserve(batch.size());
  entropy_terms.reserve(batch.size());
  for (const StepRecord* s : batch) {
    const Heads h = forward(t, s->snap, embeds);
    const nn::Tape::Id masked = nn::apply_mask(t, h.logits, s->mask);
    const nn::Tape::Id logp = nn::log_prob(t, masked, s->action);
    const nn::Tape::Id ratio = t.exp_(t.sub(logp, t.constant(nn::Tensor::scalar(s->logp))));
    clip_terms.push_back(t.min2(
        t.scale(ratio, s->advantage),
        t.scale(t.clamp(ratio, 1.0 - cfg_.clip_eps, 1.0 + cfg_.clip_eps), s->advantage)));
    const nn::Tape::Id vdiff = t.sub(h.value, t.constant(nn::Tensor::scalar(s->v_target)));
    value_terms.push_back(t.scale(t.mul(vdiff, vdiff), 0.5));
    entropy_terms.push_back(nn::entropy(t, masked, s->mask));
  }
  PpoLossParts parts;
  parts.clip = t.mean(t.concat(clip_terms));
  parts.value = t.mean(t.concat(value_terms));
  parts.entropy = t.mean(t.concat(entropy_terms));
  parts.total = t.add(t.sub(t.scale(parts.value, cfg_.value_coef), parts.clip),
                      t.scale(parts.entropy, -cfg_.entropy_coef));
  return parts;
}

SchedulerAgent::JointLossParts SchedulerAgent::joint_loss(
    nn::Tape& t, const std::vector<const AuxRecord*>& batch,
    const std::vector<nn::Tensor>& embeds) const {
  if (batch.empty()) throw InvalidArgumentError("joint_loss needs a non-empty batch");
  std::vector<nn::Tape::Id> aux_terms, total_terms;
  aux_terms.reserve(batch.size());
  total_terms.reserve(batch.size());
  for (const AuxRecord* r : batch) {
    const Heads h = forward(t, r->snap, embeds);
    const nn::Tape::Id diff = t.sub(aux_prediction(t, h.enc, r->snap, r->unit),
                                    t.constant(nn::Tensor::scalar(r->t_norm)));
    const nn::Tape::Id aux = t.scale(t.mul(diff, diff), 0.5);
    aux_terms.push_back(aux);
    if (r->has_decision) {
      const nn::Tape::Id masked = nn::apply_mask(t, h.logits, r->mask);
      total_terms.push_back(t.add(
          aux, t.scale(nn::kl_to_ref(t, masked, r->mask, r->pi_old), cfg_.clone_coef)));
    } else {
      total_terms.push_back(aux);
    }
  }
  JointLossParts parts;
  parts.aux = t.mean(t.concat(aux_terms));
  parts.total = t.mean(t.concat(total_terms));
  return parts;
}

// ---------------------------------------------------------------------------
// Acting
// ---------------------------------------------------------------------------

UnitPolicy SchedulerAgent::greedy_policy() const {
  return [this](DecisionEnv& env) -> std::pair<int, int> {
    const StateSnapshot snap = env.snapshot();
    const std::vector<char> mask = action_mask(env);
    nn::Tape t;
    const Heads h = forward(t, snap, env.unit_embeds());
    const std::vector<double> probs = nn::masked_softmax(t.val(h.logits).v, mask);
    int best = -1;
    for (size_t i = 0; i < probs.size(); ++i) {
      if (!mask[i]) continue;
      if (best < 0 || probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    if (best < 0) throw ProtocolError("greedy policy saw no allowed action");
    return decode_action(best);
  };
}

std::pair<double, double> SchedulerAgent::evaluate(DecisionEnv& env,
                                                   const std::vector<uint64_t>& seeds) const {
  if (seeds.empty()) throw InvalidArgumentError("evaluate needs at least one round seed");
  const UnitPolicy policy = greedy_policy();
  std::vector<double> makespans;
  makespans.reserve(seeds.size());
  for (const uint64_t s : seeds) makespans.push_back(run_decision_round(env, s, policy));
  return summarize(makespans);
}

void SchedulerAgent::collect_round(DecisionEnv& env, uint64_t round_seed, double t_ref,
                                   std::mt19937_64& rng, std::vector<StepRecord>* steps,
                                   std::vector<AuxRecord>* aux) const {
  env.reset(round_seed);
  const size_t first_step = steps->size();
  while (!env.exec().all_finished()) {
    while (env.decision_ready()) {
      StepRecord rec;
      rec.snap = env.snapshot();
      rec.mask = action_mask(env);
      nn::Tape t;
      const Heads h = forward(t, rec.snap, env.unit_embeds());
      const std::vector<double>& logits = t.val(h.logits).v;
      for (const double v : logits) require_finite(v, "policy logits");
      const std::vector<double> probs = nn::masked_softmax(logits, rec.mask);

      const double u = uniform01(rng);
      double cum = 0.0;
      int action = -1;
      for (size_t i = 0; i < probs.size(); ++i) {
        if (!rec.mask[i]) continue;
        cum += probs[i];
        if (u <= cum) {
          action = static_cast<int>(i);
          break;
        }
      }
      if (action < 0) {  // rounding left a sliver past the last allowed entry
        for (size_t i = probs.size(); i-- > 0;)
          if (rec.mask[i]) {
            action = static_cast<int>(i);
            break;
          }
      }
      if (action < 0) throw ProtocolError("sampling saw no allowed action");

      rec.action = action;
      rec.logp = std::log(std::max(probs[static_cast<size_t>(action)], 1e-300));
      rec.value = t.val(h.value).v[0];
      const auto [unit, workers] = decode_action(action);
      steps->push_back(std::move(rec));
      env.act(unit, workers);
    }
    if (!env.exec().any_running())
      throw ProtocolError("decision round stalled: nothing running and no decision ready");

    if (aux != nullptr) {
      AuxRecord rec;
      rec.snap = env.snapshot();
      rec.mask = action_mask(env);
      const double before = env.exec().clock();
      const auto [unit, clk] = env.advance();
      rec.unit = unit;
      rec.t_norm = (clk - before) / ctx_.norm.scale;
      aux->push_back(std::move(rec));
    } else {
      env.advance();
    }
  }
  if (steps->size() > first_step) {
    steps->back().reward = -env.exec().makespan() / t_ref;
    steps->back().terminal = 1;
  }
}

// ---------------------------------------------------------------------------
// PPO phase
// ---------------------------------------------------------------------------

void SchedulerAgent::ppo_update(DecisionEnv& env, const std::vector<StepRecord>& steps,
                                nn::Adam& opt, std::mt19937_64& rng) {
  if (steps.empty()) return;
  const std::vector<nn::Tensor>& embeds = env.unit_embeds();
  std::vector<size_t> order(steps.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    seeded_shuffle(order, rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.minibatch)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg_.minibatch));
      std::vector<const StepRecord*> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(&steps[order[i]]);
      nn::Tape t;
      const PpoLossParts parts = ppo_loss(t, batch, embeds);
      require_finite(t.val(parts.total).v[0], "policy loss");
      store_.zero_grads();
      t.backward(parts.total);
      opt.step();
    }
  }
}

// ---------------------------------------------------------------------------
// Auxiliary phase
// ---------------------------------------------------------------------------

void SchedulerAgent::aux_update(DecisionEnv& env, std::vector<AuxRecord>& records, nn::Adam& opt,
                                std::mt19937_64& rng) {
  if (records.empty()) return;
  const std::vector<nn::Tensor>& embeds = env.unit_embeds();

  // Freeze the behavior policy on every stored state before the joint
  // updates start: the clone term pulls the policy back toward these.
  for (AuxRecord& r : records) {
    r.has_decision = std::any_of(r.mask.begin(), r.mask.end(), [](char c) { return c != 0; });
    if (!r.has_decision) continue;
    nn::Tape t;
    const Heads h = forward(t, r.snap, embeds);
    const std::vector<double> probs = nn::masked_softmax(t.val(h.logits).v, r.mask);
    r.pi_old.clear();
    for (size_t i = 0; i < probs.size(); ++i)
      if (r.mask[i]) r.pi_old.push_back(probs[i]);
  }

  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg_.aux_epochs; ++epoch) {
    seeded_shuffle(order, rng);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg_.aux_minibatch)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg_.aux_minibatch));
      std::vector<const AuxRecord*> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(&records[order[i]]);
      nn::Tape t;
      const JointLossParts parts = joint_loss(t, batch, embeds);
      require_finite(t.val(parts.total).v[0], "joint loss");
      store_.zero_grads();
      t.backward(parts.total);
      opt.step();
    }
  }
}

// ---------------------------------------------------------------------------
// Ablation helpers
// ---------------------------------------------------------------------------

std::vector<AuxRecord> SchedulerAgent::collect_aux_dataset(DecisionEnv& env, int rounds,
                                                           uint64_t stream) {
  if (rounds < 1) throw InvalidArgumentError("collect_aux_dataset needs at least one round");
  std::mt19937_64 rng(mix64(cfg_.seed, stream));
  std::vector<StepRecord> scratch;
  std::vector<AuxRecord> records;
  for (int r = 0; r < rounds; ++r)
    collect_round(env, mix64(cfg_.seed, stream, static_cast<uint64_t>(r)), 1.0, rng, &scratch,
                  &records);
  return records;
}

void SchedulerAgent::auxiliary_phase(DecisionEnv& env, std::vector<AuxRecord>& records) {
  nn::AdamConfig adam;
  adam.lr = cfg_.lr;
  nn::Adam opt(store_.all(), adam);
  std::mt19937_64 rng(mix64(cfg_.seed, kAuxPhaseStream));
  aux_update(env, records, opt, rng);
}

double SchedulerAgent::mean_clone_kl(DecisionEnv& env,
                                     const std::vector<AuxRecord>& records) const {
  const std::vector<nn::Tensor>& embeds = env.unit_embeds();
  double total = 0.0;
  int counted = 0;
  for (const AuxRecord& r : records) {
    if (!r.has_decision) continue;
    nn::Tape t;
    const Heads h = forward(t, r.snap, embeds);
    const std::vector<double> probs = nn::masked_softmax(t.val(h.logits).v, r.mask);
    double kl = 0.0;
    size_t slot = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
      if (!r.mask[i]) continue;
      const double p_old = r.pi_old[slot++];
      if (p_old > 0.0) kl += p_old * std::log(p_old / std::max(probs[i], 1e-300));
    }
    total += kl;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / counted;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult SchedulerAgent::train(DecisionEnv& env, const std::vector<uint64_t>& eval_seeds,
                                  double t_ref) {
  if (eval_seeds.empty()) throw InvalidArgumentError("train needs fixed evaluation seeds");
  if (!(t_ref > 0.0)) throw InvalidArgumentError("t_ref must be positive");

  nn::AdamConfig adam;
  adam.lr = cfg_.lr;
  // Two optimizer instances on purpose: the joint phase keeps moment
  // estimates independent from the policy phase.
  nn::Adam ppo_opt(store_.all(), adam);
  nn::Adam aux_opt(store_.all(), adam);

  std::mt19937_64 sample_rng(mix64(cfg_.seed, kSampleStream));
  std::mt19937_64 shuffle_rng(mix64(cfg_.seed, kShuffleStream));

  TrainResult res;
  int rounds_done = 0;
  int last_eval = -1;
  uint64_t round_counter = 0;

  const auto run_eval = [&]() {
    const uint64_t before = env.exec().event_count();
    const auto [mean, sd] = evaluate(env, eval_seeds);
    res.eval_events += env.exec().event_count() - before;
    EvalPoint pt;
    pt.rounds_done = rounds_done;
    pt.train_events = res.train_events;
    pt.eval_events = res.eval_events;
    pt.mean_makespan = mean;
    pt.std_makespan = sd;
    pt.checkpoint = store_.state_dict();
    if (res.curve.empty() || mean < res.best_mean) {
      res.best_mean = mean;
      res.best = pt.checkpoint;
      res.best_rounds = rounds_done;
    }
    res.curve.push_back(std::move(pt));
    last_eval = rounds_done;
  };
  const auto maybe_eval = [&]() {
    if (rounds_done - last_eval >= cfg_.eval_every_rounds) run_eval();
  };

  run_eval();  // the untrained policy anchors the curve

  for (int cycle = 0; cycle < cfg_.cycles; ++cycle) {
    std::vector<AuxRecord> aux_buffer;
    for (int iter = 0; iter < cfg_.ppo_iters_per_cycle; ++iter) {
      std::vector<StepRecord> steps;
      for (int r = 0; r < cfg_.rounds_per_iter; ++r) {
        const uint64_t before = env.exec().event_count();
        const uint64_t rs = mix64(cfg_.seed, kTrainRoundStream, round_counter++);
        collect_round(env, rs, t_ref, sample_rng, &steps, cfg_.use_aux ? &aux_buffer : nullptr);
        res.train_events += env.exec().event_count() - before;
        ++rounds_done;
      }

      std::vector<double> rewards, values;
      std::vector<char> terminal;
      rewards.reserve(steps.size());
      for (const StepRecord& s : steps) {
        rewards.push_back(s.reward);
        values.push_back(s.value);
        terminal.push_back(s.terminal);
      }
      GaeResult gae = compute_gae(rewards, values, terminal, cfg_.discount, cfg_.gae_lambda);
      normalize_advantages(gae.advantages);
      for (size_t i = 0; i < steps.size(); ++i) {
        steps[i].advantage = gae.advantages[i];
        steps[i].v_target = gae.value_targets[i];
      }
      ppo_update(env, steps, ppo_opt, shuffle_rng);

      // Evaluations land after the update they follow; the cycle-end check
      // below runs after the joint phase instead.
      if (iter + 1 < cfg_.ppo_iters_per_cycle) maybe_eval();
    }
    if (cfg_.use_aux) aux_update(env, aux_buffer, aux_opt, shuffle_rng);
    maybe_eval();
  }
  if (rounds_done != last_eval) run_eval();  // make sure the final weights are measured

  return res;
}

}  // namespace cqsched
