#include "cqsched/lsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>

#include "cqsched/errors.hpp"
#include "cqsched/rng.hpp"

namespace cqsched {

namespace {

constexpr uint64_t kSimEncoderStream = 0x71a30du;
constexpr uint64_t kSimHeadStream = 0x82b5c9u;
constexpr uint64_t kSplitStream = 0x93d1afu;
constexpr uint64_t kEpochStream = 0xa4e86bu;
constexpr uint64_t kIncrementalStream = 0xb5f21du;

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ProtocolError(std::string("training diverged: non-finite ") + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

std::vector<CompletionSample> build_dataset(const ExecLog& log, const BatchSet& batch,
                                            const AvgTimeTable& table,
                                            const FeatureContext& ctx) {
  ctx.validate();
  const int n = static_cast<int>(batch.queries.size());
  std::vector<CompletionSample> out;

  for (const RoundRecord& round : log.rounds) {
    // Entry lookup by batch index; validate ordering as we go.
    std::vector<const LogEntry*> entry(static_cast<size_t>(n), nullptr);
    std::set<double> instants;
    for (const LogEntry& e : round.entries) {
      const int idx = batch.index_of(e.query_id);
      if (entry[static_cast<size_t>(idx)] != nullptr)
        throw DataFormatError("round " + std::to_string(round.round_id) + ": query " +
                              std::to_string(e.query_id) + " appears twice");
      if (e.start < e.submit || e.finish < e.start)
        throw DataFormatError("round " + std::to_string(round.round_id) + ": query " +
                              std::to_string(e.query_id) + " has unordered event times");
      if (e.conn_id < 0 || e.conn_id >= ctx.connections)
        throw DataFormatError("round " + std::to_string(round.round_id) + ": query " +
                              std::to_string(e.query_id) + " uses an unknown connection");
      entry[static_cast<size_t>(idx)] = &e;
      instants.insert(e.submit);
      instants.insert(e.finish);
    }

    // One sample per distinct instant: the state right after the instant's
    // transitions, labeled with the next finisher found further along.
    for (const double tau : instants) {
      CompletionSample s;
      s.snap.units.resize(static_cast<size_t>(n));
      s.snap.conn_unit.assign(static_cast<size_t>(ctx.connections), -1);
      s.running.assign(static_cast<size_t>(n), 0);
      int label = -1;
      double next_finish = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        const LogEntry* e = entry[static_cast<size_t>(i)];
        RunState& rs = s.snap.units[static_cast<size_t>(i)];
        const int qid = batch.queries[static_cast<size_t>(i)].query_id;
        if (e == nullptr || tau < e->submit) {
          rs.status = QueryStatus::pending;
          rs.avg_time = table.avg_any(qid);
          continue;
        }
        rs.workers = e->workers;
        rs.avg_time = table.avg(qid, e->workers);
        if (tau < e->finish) {
          rs.status = QueryStatus::running;
          rs.elapsed = tau - e->start;
          s.running[static_cast<size_t>(i)] = 1;
          if (s.snap.conn_unit[static_cast<size_t>(e->conn_id)] != -1)
            throw DataFormatError("round " + std::to_string(round.round_id) +
                                  ": two queries overlap on connection " +
                                  std::to_string(e->conn_id));
          s.snap.conn_unit[static_cast<size_t>(e->conn_id)] = i;
          if (e->finish < next_finish) {
            next_finish = e->finish;
            label = i;
          }
        } else {
          rs.status = QueryStatus::finished;
          rs.elapsed = e->finish - e->start;
        }
      }
      if (label < 0) continue;  // nothing running; the round is over here
      const double dt = next_finish - tau;
      if (dt <= 0.0) continue;  // duplicate instants carry no time signal
      s.label = label;
      s.t_norm = dt / ctx.norm.scale;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

void SimConfig::validate() const {
  net.validate();
  if (embed_dim < 1) throw InvalidArgumentError("embed_dim must be positive");
  // Zero is allowed so the decoupled classification-only limit stays testable.
  if (reg_weight < 0.0) throw InvalidArgumentError("reg_weight must be non-negative");
  if (epochs < 1 || minibatch < 1 || incremental_epochs < 1)
    throw InvalidArgumentError("training knobs must be positive");
  if (lr <= 0.0) throw InvalidArgumentError("learning rate must be positive");
  if (holdout_fraction <= 0.0 || holdout_fraction > 0.5)
    throw InvalidArgumentError("holdout_fraction must lie in (0, 0.5]");
  if (regress_tolerance < 0.0) throw InvalidArgumentError("regress_tolerance must be non-negative");
}

namespace {

SimConfig checked(SimConfig cfg) {
  cfg.validate();
  return cfg;
}

FeatureContext checked_ctx(FeatureContext ctx) {
  ctx.validate();
  return ctx;
}

}  // namespace

SimPredictor::SimPredictor(const SimConfig& cfg, const FeatureContext& ctx)
    : cfg_(checked(cfg)),
      ctx_(checked_ctx(ctx)),
      store_(),
      encoder_([&]() {
        std::mt19937_64 rng(mix64(cfg_.seed, kSimEncoderStream));
        return StateEncoder(store_, cfg_.net, ctx_, cfg_.embed_dim, rng);
      }()) {
  std::mt19937_64 rng(mix64(cfg_.seed, kSimHeadStream));
  const int h = cfg_.net.hidden_dim;
  clf_ = nn::make_mlp(store_, "clf", h, h, 1, cfg_.net.clf_depth, /*head=*/true, rng);
  reg_ = nn::make_mlp(store_, "reg", h, h, 1, cfg_.net.reg_depth, /*head=*/true, rng);
}

SimPredictor::Outputs SimPredictor::forward(nn::Tape& t, const StateSnapshot& snap,
                                            const std::vector<nn::Tensor>& embeds) const {
  Outputs o;
  o.enc = encoder_.encode(t, snap, embeds);
  o.clf_logits = t.flatten(nn::mlp_apply(t, clf_, o.enc.per_unit));
  return o;
}

nn::Tape::Id SimPredictor::time_prediction(nn::Tape& t, const Encoding& enc, int unit) const {
  return t.pick(nn::mlp_apply(t, reg_, t.row(enc.per_unit, unit)), 0);
}

SimPredictor::LossParts SimPredictor::loss(nn::Tape& t,
                                           const std::vector<const CompletionSample*>& batch,
                                           const std::vector<nn::Tensor>& embeds) const {
  if (batch.empty()) throw InvalidArgumentError("loss needs a non-empty batch");
  std::vector<nn::Tape::Id> ce_terms, sq_terms;
  ce_terms.reserve(batch.size());
  sq_terms.reserve(batch.size());
  for (const CompletionSample* s : batch) {
    if (s->label < 0 || s->label >= static_cast<int>(s->running.size()) ||
        !s->running[static_cast<size_t>(s->label)])
      throw InvalidArgumentError("completion sample labels a query that is not running");
    const Outputs o = forward(t, s->snap, embeds);
    const nn::Tape::Id masked = nn::apply_mask(t, o.clf_logits, s->running);
    ce_terms.push_back(t.scale(nn::log_prob(t, masked, s->label), -1.0));
    // Teacher forcing: the regression conditions on the true finisher.
    const nn::Tape::Id diff = t.sub(time_prediction(t, o.enc, s->label),
                                    t.constant(nn::Tensor::scalar(s->t_norm)));
    sq_terms.push_back(t.mul(diff, diff));
  }
  LossParts parts;
  parts.clf = t.mean(t.concat(ce_terms));
  parts.reg = t.mean(t.concat(sq_terms));
  parts.total = t.add(parts.clf, t.scale(parts.reg, cfg_.reg_weight));
  return parts;
}

std::pair<int, double> SimPredictor::predict(const StateSnapshot& snap,
                                             const std::vector<char>& running,
                                             const std::vector<nn::Tensor>& embeds) const {
  if (std::none_of(running.begin(), running.end(), [](char c) { return c != 0; }))
    throw ProtocolError("predict needs at least one running query");
  nn::Tape t;
  const Outputs o = forward(t, snap, embeds);
  const std::vector<double> probs = nn::masked_softmax(t.val(o.clf_logits).v, running);
  int best = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (!running[i]) continue;
    if (best < 0 || probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
  }
  return {best, t.val(time_prediction(t, o.enc, best)).v[0]};
}

std::pair<double, double> SimPredictor::eval_metrics(const std::vector<CompletionSample>& samples,
                                                     const std::vector<nn::Tensor>& embeds) const {
  if (samples.empty()) return {0.0, 0.0};
  int correct = 0;
  double sq_sum = 0.0;
  for (const CompletionSample& s : samples) {
    nn::Tape t;
    const Outputs o = forward(t, s.snap, embeds);
    const std::vector<double> probs = nn::masked_softmax(t.val(o.clf_logits).v, s.running);
    int best = -1;
    for (size_t i = 0; i < probs.size(); ++i) {
      if (!s.running[i]) continue;
      if (best < 0 || probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    if (best == s.label) ++correct;
    // MSE follows the training target: time at the true finisher.
    const double pred = t.val(time_prediction(t, o.enc, s.label)).v[0];
    sq_sum += (pred - s.t_norm) * (pred - s.t_norm);
  }
  const double m = static_cast<double>(samples.size());
  return {static_cast<double>(correct) / m, sq_sum / m};
}

std::pair<double, double> SimPredictor::holdout_metrics(
    const std::vector<nn::Tensor>& embeds) const {
  return eval_metrics(holdout_, embeds);
}

FitReport SimPredictor::fit(const std::vector<CompletionSample>& data,
                            const std::vector<nn::Tensor>& embeds) {
  if (data.size() < 2)
    throw InvalidArgumentError("fit needs at least two samples to split off a held-out set");

  std::vector<size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937_64 split_rng(mix64(cfg_.seed, kSplitStream));
  seeded_shuffle(idx, split_rng);
  size_t holdout_n = static_cast<size_t>(
      std::llround(cfg_.holdout_fraction * static_cast<double>(data.size())));
  holdout_n = std::max<size_t>(1, std::min(holdout_n, data.size() - 1));

  std::vector<CompletionSample> train;
  train.reserve(data.size() - holdout_n);
  holdout_.clear();
  holdout_.reserve(holdout_n);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i < idx.size() - holdout_n)
      train.push_back(data[idx[i]]);
    else
      holdout_.push_back(data[idx[i]]);
  }

  FitReport rep;
  rep.train_count = static_cast<int>(train.size());
  rep.holdout_count = static_cast<int>(holdout_.size());

  // Majority-label baseline from the training split, measured on the holdout.
  std::map<int, int> label_count;
  for (const CompletionSample& s : train) ++label_count[s.label];
  int majority = -1, majority_n = -1;
  for (const auto& [label, count] : label_count)
    if (count > majority_n) {
      majority = label;
      majority_n = count;
    }
  int hits = 0;
  double t_mean = 0.0;
  for (const CompletionSample& s : holdout_) {
    if (s.label == majority) ++hits;
    t_mean += s.t_norm;
  }
  t_mean /= static_cast<double>(holdout_.size());
  rep.majority_baseline = static_cast<double>(hits) / static_cast<double>(holdout_.size());
  for (const CompletionSample& s : holdout_)
    rep.variance_baseline += (s.t_norm - t_mean) * (s.t_norm - t_mean);
  rep.variance_baseline /= static_cast<double>(holdout_.size());

  nn::AdamConfig adam;
  adam.lr = cfg_.lr;
  nn::Adam opt(store_.all(), adam);
  std::mt19937_64 epoch_rng(mix64(cfg_.seed, kEpochStream));
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    seeded_shuffle(order, epoch_rng);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.minibatch)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg_.minibatch));
      std::vector<const CompletionSample*> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(&train[order[i]]);
      nn::Tape t;
      const LossParts parts = loss(t, batch, embeds);
      const double value = t.val(parts.total).v[0];
      require_finite(value, "predictor loss");
      loss_sum += value * static_cast<double>(stop - start);
      store_.zero_grads();
      t.backward(parts.total);
      opt.step();
    }
    const auto [acc, mse] = eval_metrics(holdout_, embeds);
    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = loss_sum / static_cast<double>(train.size());
    stat.holdout_acc = acc;
    stat.holdout_mse = mse;
    rep.epochs.push_back(stat);
  }
  fitted_ = true;
  rep.accuracy = rep.epochs.back().holdout_acc;
  rep.mse = rep.epochs.back().holdout_mse;
  return rep;
}

UpdateReport SimPredictor::incremental_update(const std::vector<CompletionSample>& fresh,
                                              const std::vector<nn::Tensor>& embeds) {
  if (!fitted_) throw ProtocolError("incremental update requires a fitted predictor");
  UpdateReport rep;
  if (fresh.empty()) {  // nothing to learn from; the model stays as-is
    const auto [acc, mse] = eval_metrics(holdout_, embeds);
    rep.accepted = true;
    rep.acc_before = rep.acc_after = acc;
    rep.mse_before = rep.mse_after = mse;
    return rep;
  }

  // Carve a held-out slice from the fresh samples so the regression check
  // also covers the new workload region.
  std::vector<size_t> idx(fresh.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937_64 split_rng(mix64(cfg_.seed, kIncrementalStream, update_counter_));
  seeded_shuffle(idx, split_rng);
  size_t holdout_n = 0;
  if (fresh.size() >= 2) {
    holdout_n = static_cast<size_t>(
        std::llround(cfg_.holdout_fraction * static_cast<double>(fresh.size())));
    holdout_n = std::max<size_t>(1, std::min(holdout_n, fresh.size() - 1));
  }
  std::vector<CompletionSample> train;
  train.reserve(fresh.size() - holdout_n);
  std::vector<CompletionSample> combined = holdout_;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i < idx.size() - holdout_n)
      train.push_back(fresh[idx[i]]);
    else
      combined.push_back(fresh[idx[i]]);
  }
  rep.new_train = static_cast<int>(train.size());
  rep.new_holdout = static_cast<int>(combined.size() - holdout_.size());

  std::tie(rep.acc_before, rep.mse_before) = eval_metrics(combined, embeds);
  const nn::StateDict before = store_.state_dict();

  nn::AdamConfig adam;
  adam.lr = cfg_.lr / 10.0;
  nn::Adam opt(store_.all(), adam);
  std::mt19937_64 epoch_rng(mix64(cfg_.seed, kIncrementalStream, update_counter_ + 1));
  ++update_counter_;
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg_.incremental_epochs; ++epoch) {
    seeded_shuffle(order, epoch_rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.minibatch)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg_.minibatch));
      std::vector<const CompletionSample*> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(&train[order[i]]);
      nn::Tape t;
      const LossParts parts = loss(t, batch, embeds);
      require_finite(t.val(parts.total).v[0], "predictor loss");
      store_.zero_grads();
      t.backward(parts.total);
      opt.step();
    }
  }

  std::tie(rep.acc_after, rep.mse_after) = eval_metrics(combined, embeds);
  const bool acc_regressed =
      rep.acc_after < rep.acc_before * (1.0 - cfg_.regress_tolerance) - 1e-12;
  const bool mse_regressed =
      rep.mse_after > rep.mse_before * (1.0 + cfg_.regress_tolerance) + 1e-12;
  if (acc_regressed || mse_regressed) {
    store_.load_state_dict(before);
    rep.accepted = false;
  } else {
    rep.accepted = true;
    holdout_ = std::move(combined);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Simulated backend
// ---------------------------------------------------------------------------

SimBackend::SimBackend(const BatchSet& batch, const AvgTimeTable& table, const SimPredictor& model,
                       std::vector<nn::Tensor> query_embeds)
    : batch_(batch), table_(table), model_(model), embeds_(std::move(query_embeds)) {
  batch_.validate();
  if (embeds_.size() != batch_.queries.size())
    throw InvalidArgumentError("one plan embedding per query is required");
  runs_.assign(batch_.queries.size(), QueryRun{});
  conn_query_.assign(static_cast<size_t>(model_.context().connections), -1);
}

int SimBackend::index_of(int query_id) const { return batch_.index_of(query_id); }

void SimBackend::reset(uint64_t round_seed) {
  (void)round_seed;  // the learned model is deterministic; rounds only differ by policy
  clock_ = 0.0;
  running_count_ = 0;
  finished_count_ = 0;
  runs_.assign(batch_.queries.size(), QueryRun{});
  conn_query_.assign(conn_query_.size(), -1);
}

void SimBackend::submit(int query_id, int workers) {
  (void)model_.context().menu.index_of(workers);
  const int idx = index_of(query_id);
  QueryRun& run = runs_[static_cast<size_t>(idx)];
  if (run.status != QueryStatus::pending)
    throw ProtocolError("query " + std::to_string(query_id) + " was already submitted");
  int conn = -1;
  for (size_t c = 0; c < conn_query_.size(); ++c)
    if (conn_query_[c] == -1) {
      conn = static_cast<int>(c);
      break;
    }
  if (conn < 0) throw ProtocolError("no free connection");
  run.status = QueryStatus::running;
  run.workers = workers;
  run.conn_id = conn;
  run.submit_time = clock_;
  run.start_time = clock_;
  conn_query_[static_cast<size_t>(conn)] = query_id;
  ++running_count_;
  ++events_;
}

std::pair<int, double> SimBackend::advance() {
  if (running_count_ == 0) throw ProtocolError("advance with no running query");
  const StateSnapshot snap = snapshot_backend(*this, table_);
  std::vector<char> running(runs_.size(), 0);
  for (size_t i = 0; i < runs_.size(); ++i)
    if (runs_[i].status == QueryStatus::running) running[i] = 1;
  const auto [unit, t_norm] = model_.predict(snap, running, embeds_);
  clock_ += std::max(t_norm * model_.context().norm.scale, kSimMinStep);

  QueryRun& run = runs_[static_cast<size_t>(unit)];
  run.status = QueryStatus::finished;
  run.finish_time = clock_;
  conn_query_[static_cast<size_t>(run.conn_id)] = -1;
  --running_count_;
  ++finished_count_;
  ++events_;
  return {batch_.queries[static_cast<size_t>(unit)].query_id, clock_};
}

const QueryRun& SimBackend::run(int query_id) const {
  return runs_[static_cast<size_t>(index_of(query_id))];
}

int SimBackend::free_connections() const {
  return static_cast<int>(std::count(conn_query_.begin(), conn_query_.end(), -1));
}

bool SimBackend::any_pending() const {
  return std::any_of(runs_.begin(), runs_.end(),
                     [](const QueryRun& r) { return r.status == QueryStatus::pending; });
}

bool SimBackend::all_finished() const {
  return finished_count_ == static_cast<int>(runs_.size());
}

double SimBackend::makespan() const {
  if (!all_finished()) throw ProtocolError("makespan is only defined once every query finished");
  return clock_;
}

RoundRecord SimBackend::round_record(int round_id) const {
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
  std::sort(rec.entries.begin(), rec.entries.end(), [](const LogEntry& a, const LogEntry& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.query_id < b.query_id;
  });
  return rec;
}

// ---------------------------------------------------------------------------
// Pretrain -> select -> finetune
// ---------------------------------------------------------------------------

PretrainPhase run_pretrain_phase(const AgentConfig& cfg, const FeatureContext& ctx,
                                 DecisionEnv& sim_env, DecisionEnv& true_env,
                                 const std::vector<uint64_t>& eval_seeds, double t_ref) {
  PretrainPhase phase;
  SchedulerAgent agent(cfg, ctx);
  phase.pretrain = agent.train(sim_env, eval_seeds, t_ref);

  // Every saved checkpoint is measured on the real environment; the one with
  // the lowest mean makespan seeds the fine-tuning run.
  const uint64_t before = true_env.exec().event_count();
  phase.checkpoint_true_means.reserve(phase.pretrain.curve.size());
  for (size_t i = 0; i < phase.pretrain.curve.size(); ++i) {
    agent.load_checkpoint(phase.pretrain.curve[i].checkpoint);
    const auto [mean, sd] = agent.evaluate(true_env, eval_seeds);
    phase.checkpoint_true_means.push_back(mean);
    if (phase.selected_index < 0 || mean < phase.selected_mean) {
      phase.selected_index = static_cast<int>(i);
      phase.selected_mean = mean;
    }
  }
  phase.select_events = true_env.exec().event_count() - before;
  phase.selected = phase.pretrain.curve[static_cast<size_t>(phase.selected_index)].checkpoint;
  return phase;
}

PretrainReport pretrain_finetune(const PretrainPlan& plan, const FeatureContext& ctx,
                                 DecisionEnv& sim_env, DecisionEnv& true_env,
                                 const std::vector<uint64_t>& eval_seeds, double t_ref) {
  PretrainPhase phase =
      run_pretrain_phase(plan.pretrain, ctx, sim_env, true_env, eval_seeds, t_ref);
  PretrainReport rep;
  rep.pretrain = std::move(phase.pretrain);
  rep.checkpoint_true_means = std::move(phase.checkpoint_true_means);
  rep.selected_index = phase.selected_index;
  rep.selected_mean = phase.selected_mean;
  rep.select_events = phase.select_events;

  SchedulerAgent fin_agent(plan.finetune, ctx);
  fin_agent.load_checkpoint(phase.selected);
  rep.finetune = fin_agent.train(true_env, eval_seeds, t_ref);
  return rep;
}

}  // namespace cqsched
