#include "cqsched/encoder.hpp"

#include <cmath>
#include <string>

#include "cqsched/rng.hpp"

namespace cqsched {

using nn::Tape;
using nn::Tensor;

// ---------------------------------------------------------------------------
// PlanEmbedder
// ---------------------------------------------------------------------------

namespace {

Tensor random_vec(int dim, double scale, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros({dim});
  for (double& v : t.v) v = uniform(rng, -scale, scale);
  return t;
}

}  // namespace

PlanEmbedder::PlanEmbedder(int dim, uint64_t seed) : dim_(dim) {
  if (dim < 1) throw InvalidArgumentError("plan embedding dimension must be positive");
  std::mt19937_64 rng(mix64(seed, 0x9e11));
  // variance ~1/dim keeps the pre-activation sums in tanh's linear range
  const double scale = std::sqrt(3.0 / static_cast<double>(dim));
  for (int k = 0; k < kOperatorKindCount; ++k) op_term_.push_back(random_vec(dim, scale, rng));
  for (int t = 0; t < kTableVocabulary; ++t) table_term_.push_back(random_vec(dim, scale, rng));
  sel_term_ = random_vec(dim, scale, rng);
  bias_ = random_vec(dim, scale, rng);
  child_mix_ = Tensor::zeros({dim, dim});
  for (double& v : child_mix_.v) v = uniform(rng, -scale, scale);
}

Tensor PlanEmbedder::embed_node(const PlanNode& node) const {
  Tensor acc = op_term_[static_cast<size_t>(node.op)];
  for (int i = 0; i < dim_; ++i) {
    acc.v[static_cast<size_t>(i)] += bias_.v[static_cast<size_t>(i)] +
                                     node.selectivity * sel_term_.v[static_cast<size_t>(i)];
  }
  for (int tbl : node.table_ids) {
    if (tbl < 0 || tbl >= kTableVocabulary)
      throw InvalidArgumentError("table id " + std::to_string(tbl) +
                                 " outside the embedding vocabulary");
    const Tensor& term = table_term_[static_cast<size_t>(tbl)];
    for (int i = 0; i < dim_; ++i) acc.v[static_cast<size_t>(i)] += term.v[static_cast<size_t>(i)];
  }
  if (!node.children.empty()) {
    Tensor mean = Tensor::zeros({dim_});
    for (const PlanNode& ch : node.children) {
      const Tensor e = embed_node(ch);
      for (int i = 0; i < dim_; ++i) mean.v[static_cast<size_t>(i)] += e.v[static_cast<size_t>(i)];
    }
    const double inv = 1.0 / static_cast<double>(node.children.size());
    for (double& v : mean.v) v *= inv;
    for (int i = 0; i < dim_; ++i) {
      double s = 0.0;
      for (int j = 0; j < dim_; ++j)
        s += child_mix_.v[static_cast<size_t>(i) * static_cast<size_t>(dim_) +
                          static_cast<size_t>(j)] *
             mean.v[static_cast<size_t>(j)];
      acc.v[static_cast<size_t>(i)] += s;
    }
  }
  for (double& v : acc.v) v = std::tanh(v);
  return acc;
}

Tensor PlanEmbedder::encode(const PlanNode& plan) const {
  plan.validate();
  return embed_node(plan);
}

std::vector<Tensor> PlanEmbedder::encode_batch(const BatchSet& batch) const {
  std::vector<Tensor> out;
  out.reserve(batch.queries.size());
  for (const QuerySpec& q : batch.queries) out.push_back(encode(q.plan));
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

void FeatureContext::validate() const {
  if (menu.workers.empty()) throw InvalidArgumentError("feature context needs a config menu");
  if (!(norm.scale > 0.0)) throw InvalidArgumentError("time normalizer must be positive");
  if (max_units < 1) throw InvalidArgumentError("max_units must be at least 1");
  if (connections < 1) throw InvalidArgumentError("connections must be at least 1");
}

StateSnapshot make_snapshot(const Environment& env, const AvgTimeTable& table) {
  StateSnapshot snap;
  const BatchSet& batch = env.batch();
  snap.units.reserve(batch.queries.size());
  for (const QuerySpec& q : batch.queries) {
    const QueryRun& r = env.run(q.query_id);
    RunState rs;
    rs.status = r.status;
    if (r.status == QueryStatus::pending) {
      rs.avg_time = table.avg_any(q.query_id);
    } else {
      rs.workers = r.workers;
      rs.elapsed = (r.status == QueryStatus::running ? env.clock() : r.finish_time) - r.start_time;
      rs.avg_time = table.avg(q.query_id, r.workers);
    }
    snap.units.push_back(rs);
  }
  snap.conn_unit.reserve(env.connection_map().size());
  for (int qid : env.connection_map())
    snap.conn_unit.push_back(qid < 0 ? -1 : batch.index_of(qid));
  return snap;
}

// ---------------------------------------------------------------------------
// StateEncoder
// ---------------------------------------------------------------------------

StateEncoder::StateEncoder(nn::ParamStore& store, const nn::NetConfig& net,
                           const FeatureContext& ctx, int embed_dim, std::mt19937_64& rng)
    : net_(net), ctx_(ctx), embed_dim_(embed_dim) {
  net_.validate();
  ctx_.validate();
  if (embed_dim < 1) throw InvalidArgumentError("embed_dim must be positive");
  const int F = feature_dim(ctx_.menu);
  const int h = net_.hidden_dim;
  repr_ = nn::make_mlp(store, "enc.repr", embed_dim + F, h, h, net_.repr_depth, false, rng);
  summary_seed_ = &store.create("enc.summary", {h}, nn::InitKind::xavier, rng);
  for (int l = 0; l < net_.attn_layers; ++l)
    attn_.push_back(nn::make_attention_layer(store, "enc.attn" + std::to_string(l), h,
                                             net_.attn_heads, net_.ff_dim, net_.norm, rng));
  global_ = nn::make_mlp(store, "enc.global", h + ctx_.max_units * F, h, h, net_.global_depth,
                         false, rng);
  unit_ = nn::make_mlp(store, "enc.unit", h + h + ctx_.connections * F, h, h, net_.query_depth,
                       false, rng);
}

Encoding StateEncoder::encode(Tape& t, const StateSnapshot& snap,
                              const std::vector<Tensor>& unit_embeds) const {
  const int n = static_cast<int>(snap.units.size());
  const int F = feature_dim(ctx_.menu);
  if (n < 1) throw InvalidArgumentError("snapshot has no units");
  if (n > ctx_.max_units)
    throw InvalidArgumentError("snapshot exceeds the configured unit capacity");
  if (static_cast<int>(snap.conn_unit.size()) != ctx_.connections)
    throw ShapeError("snapshot connection map does not match the context");
  if (static_cast<int>(unit_embeds.size()) != n)
    throw ShapeError("one plan embedding per unit is required");

  // Raw features are constants; only the MLP/attention weights carry grads.
  std::vector<std::vector<double>> feats(static_cast<size_t>(n));
  Tensor in = Tensor::zeros({n, embed_dim_ + F});
  for (int i = 0; i < n; ++i) {
    const Tensor& e = unit_embeds[static_cast<size_t>(i)];
    if (e.rank() != 1 || e.cols() != embed_dim_)
      throw ShapeError("plan embedding has the wrong dimension");
    feats[static_cast<size_t>(i)] = feature_vector(snap.units[static_cast<size_t>(i)], ctx_.menu,
                                                   ctx_.norm);
    double* dst = in.v.data() + static_cast<size_t>(i) * static_cast<size_t>(embed_dim_ + F);
    std::copy(e.v.begin(), e.v.end(), dst);
    std::copy(feats[static_cast<size_t>(i)].begin(), feats[static_cast<size_t>(i)].end(),
              dst + embed_dim_);
  }

  const Tape::Id X = nn::mlp_apply(t, repr_, t.constant(std::move(in)));
  Tape::Id A = t.concat_rows({X, t.param(*summary_seed_)});
  for (const nn::AttentionLayer& layer : attn_) A = nn::attention_apply(t, layer, A);

  const Tape::Id xs = t.row(A, n);
  const Tape::Id Xq = t.slice_rows(A, 0, n);

  Tensor f_all = Tensor::zeros({ctx_.max_units * F});
  for (int i = 0; i < n; ++i)
    std::copy(feats[static_cast<size_t>(i)].begin(), feats[static_cast<size_t>(i)].end(),
              f_all.v.begin() + static_cast<size_t>(i) * static_cast<size_t>(F));
  const Tape::Id global = nn::mlp_apply(t, global_, t.concat({xs, t.constant(std::move(f_all))}));

  Tensor f_conn = Tensor::zeros({n, ctx_.connections * F});
  for (int c = 0; c < ctx_.connections; ++c) {
    const int u = snap.conn_unit[static_cast<size_t>(c)];
    if (u < 0) continue;
    if (u >= n) throw ShapeError("connection map references an unknown unit");
    for (int i = 0; i < n; ++i)
      std::copy(feats[static_cast<size_t>(u)].begin(), feats[static_cast<size_t>(u)].end(),
                f_conn.v.begin() + static_cast<size_t>(i) * static_cast<size_t>(ctx_.connections * F) +
                    static_cast<size_t>(c) * static_cast<size_t>(F));
  }
  const Tape::Id per_unit = nn::mlp_apply(
      t, unit_, t.concat_cols({Xq, t.tile_rows(xs, n), t.constant(std::move(f_conn))}));

  Encoding enc;
  enc.per_unit = per_unit;
  enc.global = global;
  enc.attended = A;
  return enc;
}

}  // namespace cqsched
