#include "cqsched/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cqsched/nncore/adam.hpp"
#include "cqsched/rng.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

std::vector<char> derive_masks(const std::vector<std::vector<double>>& avg,
                               const std::vector<char>& pending, const ConfigMenu& menu,
                               const MaskConfig& mc) {
  const int K = menu.size();
  const int n = static_cast<int>(avg.size());
  if (pending.size() != avg.size()) throw ShapeError("derive_masks: pending size mismatch");
  if (mc.tau_abs < 0.0 || mc.tau_rel < 0.0)
    throw InvalidArgumentError("mask thresholds must be non-negative");

  std::vector<char> allowed(static_cast<size_t>(n) * static_cast<size_t>(K), 0);
  for (int u = 0; u < n; ++u) {
    if (!pending[static_cast<size_t>(u)]) continue;
    const std::vector<double>& a = avg[static_cast<size_t>(u)];
    if (static_cast<int>(a.size()) != K) throw ShapeError("derive_masks: config count mismatch");
    allowed[static_cast<size_t>(u * K)] = 1;  // minimal config always stays
    double best_lower = a[0];
    for (int k = 1; k < K; ++k) {
      const double saving = best_lower - a[static_cast<size_t>(k)];
      const bool wasteful = saving < mc.tau_abs && saving < mc.tau_rel * best_lower;
      allowed[static_cast<size_t>(u * K + k)] = wasteful ? 0 : 1;
      best_lower = std::min(best_lower, a[static_cast<size_t>(k)]);
    }
  }
  return allowed;
}

// ---------------------------------------------------------------------------
// Gains
// ---------------------------------------------------------------------------

size_t GainMatrix::index(int i, int j) const {
  if (i < 0 || j < 0 || i >= n || j >= n) throw InvalidArgumentError("gain index out of range");
  return static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j);
}

GainMatrix GainMatrix::empty_matrix(int n) {
  if (n < 1) throw InvalidArgumentError("gain matrix needs at least one query");
  GainMatrix g;
  g.n = n;
  const size_t cells = static_cast<size_t>(n) * static_cast<size_t>(n);
  g.value.assign(cells, 0.0);
  g.source.assign(cells, CellSource::empty);
  g.support.assign(cells, 0);
  return g;
}

GainMatrix compute_gains(const ExecLog& log, const BatchSet& batch) {
  const int n = static_cast<int>(batch.queries.size());
  GainMatrix g = GainMatrix::empty_matrix(n);

  // Unconditioned mean duration per query over the whole log.
  std::vector<double> sum(static_cast<size_t>(n), 0.0);
  std::vector<int> cnt(static_cast<size_t>(n), 0);
  for (const RoundRecord& r : log.rounds)
    for (const LogEntry& e : r.entries) {
      const int i = batch.index_of(e.query_id);
      sum[static_cast<size_t>(i)] += e.finish - e.start;
      cnt[static_cast<size_t>(i)] += 1;
    }
  std::vector<double> mean(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    if (cnt[static_cast<size_t>(i)] > 0)
      mean[static_cast<size_t>(i)] = sum[static_cast<size_t>(i)] / cnt[static_cast<size_t>(i)];

  for (const RoundRecord& r : log.rounds) {
    std::map<int, std::pair<double, double>> span;  // batch idx -> (start, finish)
    for (const LogEntry& e : r.entries) {
      const int i = batch.index_of(e.query_id);
      if (!span.emplace(i, std::make_pair(e.start, e.finish)).second)
        throw DataFormatError("round " + std::to_string(r.round_id) + " repeats query " +
                              std::to_string(e.query_id));
    }
    for (auto it = span.begin(); it != span.end(); ++it) {
      for (auto jt = std::next(it); jt != span.end(); ++jt) {
        const double ov = std::min(it->second.second, jt->second.second) -
                          std::max(it->second.first, jt->second.first);
        if (ov <= 0.0) continue;
        const int i = it->first, j = jt->first;
        const double ti = it->second.second - it->second.first;
        const double tj = jt->second.second - jt->second.first;
        if (ti <= 0.0 || tj <= 0.0 || mean[static_cast<size_t>(i)] <= 0.0 ||
            mean[static_cast<size_t>(j)] <= 0.0)
          continue;
        const double wi = std::sqrt(mean[static_cast<size_t>(i)]);
        const double wj = std::sqrt(mean[static_cast<size_t>(j)]);
        const double oij = ov / ti, oji = ov / tj;
        const double aij = 1.0 - ti / mean[static_cast<size_t>(i)];
        const double aji = 1.0 - tj / mean[static_cast<size_t>(j)];
        const double contrib = (oij * aij * wi + oji * aji * wj) / (wi + wj);
        g.value[g.index(i, j)] += contrib;
        g.support[g.index(i, j)] += 1;
      }
    }
  }

  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const size_t ij = g.index(i, j);
      if (g.support[ij] > 0) {
        g.value[ij] /= g.support[ij];
        g.source[ij] = CellSource::observed;
      }
      g.value[g.index(j, i)] = g.value[ij];
      g.support[g.index(j, i)] = g.support[ij];
      g.source[g.index(j, i)] = g.source[ij];
    }
  return g;
}

// ---------------------------------------------------------------------------
// Gain predictor
// ---------------------------------------------------------------------------

GainPredictor::GainPredictor(int embed_dim, const GainPredictorConfig& cfg)
    : embed_dim_(embed_dim), cfg_(cfg) {
  if (embed_dim < 1) throw InvalidArgumentError("gain predictor needs a positive embed dim");
  if (cfg.hidden < 1 || cfg.depth < 1 || cfg.epochs < 1 || cfg.minibatch < 1)
    throw InvalidArgumentError("gain predictor config must be positive");
  std::mt19937_64 rng(mix64(cfg.seed, 0x6a1f));
  mlp_ = nn::make_mlp(store_, "gain", 2 * embed_dim, cfg.hidden, 1, cfg.depth, true, rng);
}

namespace {

nn::Tensor pair_input(const nn::Tensor& a, const nn::Tensor& b) {
  nn::Tensor in = nn::Tensor::zeros({a.cols() + b.cols()});
  std::copy(a.v.begin(), a.v.end(), in.v.begin());
  std::copy(b.v.begin(), b.v.end(), in.v.begin() + a.cols());
  return in;
}

}  // namespace

double GainPredictor::predict(const nn::Tensor& ei, const nn::Tensor& ej) const {
  if (ei.cols() != embed_dim_ || ej.cols() != embed_dim_)
    throw ShapeError("gain predictor: embedding dimension mismatch");
  nn::Tape t;
  const auto fwd = t.val(nn::mlp_apply(t, mlp_, t.constant(pair_input(ei, ej)))).v[0];
  const auto rev = t.val(nn::mlp_apply(t, mlp_, t.constant(pair_input(ej, ei)))).v[0];
  return fwd + rev;
}

double GainPredictor::fit(const std::vector<nn::Tensor>& embeds, const GainMatrix& observed) {
  if (static_cast<int>(embeds.size()) != observed.n)
    throw ShapeError("gain predictor: one embedding per query required");
  struct Cell {
    int i, j;
    double target;
  };
  std::vector<Cell> cells;
  for (int i = 0; i < observed.n; ++i)
    for (int j = i + 1; j < observed.n; ++j)
      if (observed.source_at(i, j) == CellSource::observed)
        cells.push_back({i, j, observed.at(i, j)});
  if (cells.empty()) throw MissingDataError("no observed gain cells to fit on");

  nn::Adam opt(store_.all(), nn::AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
  double last_epoch_mse = 0.0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::mt19937_64 rng(mix64(cfg_.seed, 0xe70c, static_cast<uint64_t>(epoch)));
    std::vector<size_t> order(cells.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    seeded_shuffle(order, rng);
    double mse_sum = 0.0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg_.minibatch)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg_.minibatch));
      store_.zero_grads();
      nn::Tape t;
      std::vector<nn::Tape::Id> losses;
      for (size_t k = at; k < end; ++k) {
        const Cell& c = cells[order[k]];
        const nn::Tape::Id fwd = nn::mlp_apply(
            t, mlp_, t.constant(pair_input(embeds[static_cast<size_t>(c.i)],
                                           embeds[static_cast<size_t>(c.j)])));
        const nn::Tape::Id rev = nn::mlp_apply(
            t, mlp_, t.constant(pair_input(embeds[static_cast<size_t>(c.j)],
                                           embeds[static_cast<size_t>(c.i)])));
        const nn::Tape::Id diff =
            t.sub(t.add(t.pick(fwd, 0), t.pick(rev, 0)), t.constant(nn::Tensor::scalar(c.target)));
        losses.push_back(t.mul(diff, diff));
      }
      const nn::Tape::Id loss = t.scale(t.sum(t.concat(losses)),
                                        0.5 / static_cast<double>(losses.size()));
      t.backward(loss);
      mse_sum += 2.0 * t.val(loss).v[0] * static_cast<double>(losses.size());
      opt.step();
    }
    last_epoch_mse = mse_sum / static_cast<double>(cells.size());
  }
  return last_epoch_mse;
}

GainMatrix complete_gains(const GainMatrix& observed, const std::vector<nn::Tensor>& embeds,
                          const GainPredictorConfig& cfg) {
  if (embeds.empty()) throw InvalidArgumentError("complete_gains needs embeddings");
  GainPredictor pred(embeds[0].cols(), cfg);
  pred.fit(embeds, observed);
  GainMatrix out = observed;
  for (int i = 0; i < out.n; ++i)
    for (int j = i + 1; j < out.n; ++j) {
      if (out.source_at(i, j) != CellSource::empty) continue;
      const double v = pred.predict(embeds[static_cast<size_t>(i)],
                                    embeds[static_cast<size_t>(j)]);
      out.value[out.index(i, j)] = v;
      out.value[out.index(j, i)] = v;
      out.source[out.index(i, j)] = CellSource::predicted;
      out.source[out.index(j, i)] = CellSource::predicted;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

int Clustering::cluster_count() const {
  std::vector<int> ids = assignment;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return static_cast<int>(ids.size());
}

std::vector<std::vector<int>> Clustering::members() const {
  std::map<int, std::vector<int>> by_id;
  for (size_t q = 0; q < assignment.size(); ++q)
    by_id[assignment[q]].push_back(static_cast<int>(q));
  std::vector<std::vector<int>> out;
  out.reserve(by_id.size());
  for (auto& [id, m] : by_id) out.push_back(std::move(m));
  return out;
}

Clustering agglomerate(const GainMatrix& gains, int n_clusters) {
  const int n = gains.n;
  if (n_clusters < 1 || n_clusters > n)
    throw InvalidArgumentError("cluster count must lie in [1, n]");

  // pair_sum[a][b] = total gain between members of clusters a and b; the
  // average-linkage score is pair_sum / (|a| * |b|).  Clusters are labeled by
  // their minimal member, so merging b into a (a < b) keeps labels stable.
  std::vector<double> pair_sum(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) pair_sum[static_cast<size_t>(i) * static_cast<size_t>(n) +
                           static_cast<size_t>(j)] = gains.at(i, j);
  std::vector<int> size(static_cast<size_t>(n), 1);
  std::vector<char> active(static_cast<size_t>(n), 1);
  Clustering result;
  result.assignment.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) result.assignment[static_cast<size_t>(i)] = i;

  int remaining = n;
  while (remaining > n_clusters) {
    int best_a = -1, best_b = -1;
    double best_score = 0.0;
    for (int a = 0; a < n; ++a) {
      if (!active[static_cast<size_t>(a)]) continue;
      for (int b = a + 1; b < n; ++b) {
        if (!active[static_cast<size_t>(b)]) continue;
        const double score =
            pair_sum[static_cast<size_t>(a) * static_cast<size_t>(n) + static_cast<size_t>(b)] /
            (static_cast<double>(size[static_cast<size_t>(a)]) *
             static_cast<double>(size[static_cast<size_t>(b)]));
        if (best_a < 0 || score > best_score) {
          best_a = a;
          best_b = b;
          best_score = score;
        }
        // ties fall through: the scan order already prefers the smallest pair
      }
    }
    result.history.push_back(MergeStep{best_a, best_b, best_score});
    for (int x = 0; x < n; ++x) {
      if (!active[static_cast<size_t>(x)] || x == best_a || x == best_b) continue;
      const auto ax = static_cast<size_t>(best_a) * static_cast<size_t>(n) + static_cast<size_t>(x);
      const auto bx = static_cast<size_t>(best_b) * static_cast<size_t>(n) + static_cast<size_t>(x);
      pair_sum[ax] += pair_sum[bx];
      pair_sum[static_cast<size_t>(x) * static_cast<size_t>(n) + static_cast<size_t>(best_a)] =
          pair_sum[ax];
    }
    size[static_cast<size_t>(best_a)] += size[static_cast<size_t>(best_b)];
    active[static_cast<size_t>(best_b)] = 0;
    for (int q = 0; q < n; ++q)
      if (result.assignment[static_cast<size_t>(q)] == best_b)
        result.assignment[static_cast<size_t>(q)] = best_a;
    --remaining;
  }
  return result;
}

int default_cluster_count(int n) { return std::min(n, 100); }

int resolve_member_config(int cluster_workers, const std::vector<char>& allowed,
                          const ConfigMenu& menu) {
  if (static_cast<int>(allowed.size()) != menu.size())
    throw ShapeError("resolve_member_config: mask size mismatch");
  const double target = std::log2(static_cast<double>(cluster_workers));
  int best = -1;
  double best_dist = 0.0;
  for (int k = 0; k < menu.size(); ++k) {
    if (!allowed[static_cast<size_t>(k)]) continue;
    const double dist =
        std::abs(std::log2(static_cast<double>(menu.workers[static_cast<size_t>(k)])) - target);
    if (best < 0 || dist < best_dist - 1e-12) {
      best = k;
      best_dist = dist;
    }
    // equal distance keeps the earlier (fewer-worker) config
  }
  if (best < 0) throw InvalidArgumentError("no allowed config for cluster member");
  return menu.workers[static_cast<size_t>(best)];
}

std::vector<int> mcf_order(const std::vector<int>& members, const BatchSet& batch,
                           const AvgTimeTable& table) {
  std::vector<int> order = members;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ta = table.avg_any(batch.queries[static_cast<size_t>(a)].query_id);
    const double tb = table.avg_any(batch.queries[static_cast<size_t>(b)].query_id);
    if (ta != tb) return ta > tb;
    return batch.queries[static_cast<size_t>(a)].query_id <
           batch.queries[static_cast<size_t>(b)].query_id;
  });
  return order;
}

}  // namespace cqsched
