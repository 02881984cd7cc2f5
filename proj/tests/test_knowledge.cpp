#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cqsched/errors.hpp"
#include "cqsched/knowledge.hpp"
#include "cqsched/rng.hpp"
#include "cqsched/workload.hpp"

using namespace cqsched;

// ---------------------------------------------------------------------------
// Config masks
// ---------------------------------------------------------------------------

namespace {

const ConfigMenu kMenu{};  // {1, 2, 4}

std::vector<char> all_pending(int n) { return std::vector<char>(static_cast<size_t>(n), 1); }

}  // namespace

TEST_CASE("mask thresholds separate real speedups from noise") {
  MaskConfig mc;  // tau_abs = 0.5 s, tau_rel = 0.05

  SUBCASE("a 0.2 s / 2% improvement is masked") {
    const auto m = derive_masks({{10.0, 9.8, 9.7}}, all_pending(1), kMenu, mc);
    CHECK(m[0] == 1);  // minimal config always allowed
    CHECK(m[1] == 0);
    CHECK(m[2] == 0);  // 0.3 s, 3% against best lower 10.0 -- still minor
  }
  SUBCASE("a 4 s / 40% improvement stays allowed") {
    const auto m = derive_masks({{10.0, 6.0, 5.9}}, all_pending(1), kMenu, mc);
    CHECK(m[1] == 1);
    CHECK(m[2] == 0);  // vs best lower 6.0 the extra 0.1 s is noise
  }
  SUBCASE("both thresholds must flag the improvement as minor") {
    // 0.4 s and 8%: passes the relative bar, fails the absolute one
    const auto m = derive_masks({{5.0, 4.6}}, all_pending(1), ConfigMenu{{1, 2}}, mc);
    CHECK(m[1] == 1);
  }
  SUBCASE("single-config menu allows everything") {
    const auto m = derive_masks({{10.0}}, all_pending(1), ConfigMenu{{1}}, mc);
    CHECK(m[0] == 1);
  }
  SUBCASE("non-pending units are fully disallowed") {
    const auto m = derive_masks({{10.0, 6.0}, {10.0, 6.0}}, {1, 0}, ConfigMenu{{1, 2}}, mc);
    CHECK(m[0] == 1);
    CHECK(m[1] == 1);
    CHECK(m[2] == 0);
    CHECK(m[3] == 0);
  }
}

TEST_CASE("tightening thresholds only ever masks more configs") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::vector<double>> avg(4, std::vector<double>(3));
    for (auto& row : avg)
      for (double& x : row) x = 0.5 + 12.0 * uniform01(rng);
    const MaskConfig loose{0.25 * uniform01(rng), 0.04 * uniform01(rng)};
    MaskConfig tight = loose;
    tight.tau_abs += uniform01(rng);
    tight.tau_rel += 0.3 * uniform01(rng);

    const auto a = derive_masks(avg, all_pending(4), kMenu, loose);
    const auto b = derive_masks(avg, all_pending(4), kMenu, tight);
    for (size_t i = 0; i < a.size(); ++i)
      if (b[i]) CHECK(a[i]);  // allowed under tight => allowed under loose
  }
}

TEST_CASE("every pending unit keeps at least its minimal config") {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::vector<double>> avg(3, std::vector<double>(3));
    for (auto& row : avg)
      for (double& x : row) x = 0.1 + 5.0 * uniform01(rng);
    const MaskConfig mc{50.0 * uniform01(rng), uniform01(rng)};
    const auto m = derive_masks(avg, all_pending(3), kMenu, mc);
    for (int u = 0; u < 3; ++u) CHECK(m[static_cast<size_t>(u * 3)] == 1);
  }
}

// ---------------------------------------------------------------------------
// Pairwise gains
// ---------------------------------------------------------------------------

namespace {

BatchSet two_query_batch() {
  BatchSet batch;
  for (int id = 0; id < 2; ++id) {
    QuerySpec q;
    q.query_id = id;
    q.plan.op = OperatorKind::scan;
    q.plan.table_ids = {id};
    q.plan.selectivity = 0.5;
    q.table_set = {id};
    batch.queries.push_back(q);
  }
  return batch;
}

LogEntry entry(int qid, int conn, double start, double finish) {
  LogEntry e;
  e.query_id = qid;
  e.workers = 1;
  e.conn_id = conn;
  e.submit = start;
  e.start = start;
  e.finish = finish;
  return e;
}

}  // namespace

TEST_CASE("gain formula hand case evaluates to 0.05") {
  // co-run round: i runs [0,3) so t_i^j=3; j runs [1.5,10.5) so t_j^i=9; the
  // overlap is 1.5.  A solo round [0,5) lifts i's log average to (3+5)/2 = 4,
  // j's stays 9.  Then a_ij=1/4, o_ij=1/2, a_ji=0, o_ji=1/6 and
  //   gain = (0.5*0.25*sqrt(4) + (1/6)*0*sqrt(9)) / (sqrt(4)+sqrt(9)) = 0.05.
  ExecLog log;
  log.rounds.push_back({0, {entry(0, 0, 0.0, 3.0), entry(1, 1, 1.5, 10.5)}});
  log.rounds.push_back({1, {entry(0, 0, 0.0, 5.0)}});

  const GainMatrix g = compute_gains(log, two_query_batch());
  CHECK(g.source_at(0, 1) == CellSource::observed);
  CHECK(std::abs(g.at(0, 1) - 0.05) <= 1e-9);
  CHECK(g.at(1, 0) == g.at(0, 1));
}

TEST_CASE("gains leave non-overlapping pairs unfilled and zero accelerations at zero") {
  SUBCASE("zero overlap means no cell") {
    ExecLog log;
    log.rounds.push_back({0, {entry(0, 0, 0.0, 2.0), entry(1, 1, 2.0, 5.0)}});
    const GainMatrix g = compute_gains(log, two_query_batch());
    CHECK(g.source_at(0, 1) == CellSource::empty);
    CHECK(g.support_at(0, 1) == 0);
  }
  SUBCASE("running exactly at the average gives gain zero") {
    ExecLog log;
    log.rounds.push_back({0, {entry(0, 0, 0.0, 4.0), entry(1, 1, 0.0, 4.0)}});
    const GainMatrix g = compute_gains(log, two_query_batch());
    CHECK(g.source_at(0, 1) == CellSource::observed);
    CHECK(g.at(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("a repeated query in one round is rejected") {
    ExecLog log;
    log.rounds.push_back({0, {entry(0, 0, 0.0, 2.0), entry(0, 1, 0.0, 3.0)}});
    CHECK_THROWS_AS((void)compute_gains(log, two_query_batch()), DataFormatError);
  }
}

TEST_CASE("observed gains are symmetric and averaged over qualifying rounds") {
  std::mt19937_64 rng(31);
  const BatchSet batch = generate_workload(9, 6, WorkloadProfile::planted);
  ExecLog log;
  for (int r = 0; r < 6; ++r) {
    RoundRecord round{r, {}};
    double clock = 0.0;
    for (int i = 0; i < 9; ++i) {
      const double start = clock + 2.0 * uniform01(rng);
      const double dur = 0.5 + 4.0 * uniform01(rng);
      round.entries.push_back(entry(batch.queries[static_cast<size_t>(i)].query_id,
                                    i % 3, start, start + dur));
      if (i % 3 == 2) clock += 1.0;
    }
    log.rounds.push_back(round);
  }
  const GainMatrix g = compute_gains(log, batch);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j) {
      if (i == j) continue;
      CHECK(g.at(i, j) == g.at(j, i));
      CHECK(g.source_at(i, j) == g.source_at(j, i));
      CHECK(std::isfinite(g.at(i, j)));
    }
}

// ---------------------------------------------------------------------------
// Gain predictor
// ---------------------------------------------------------------------------

namespace {

std::vector<nn::Tensor> random_embeds(int n, int dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<nn::Tensor> out;
  for (int i = 0; i < n; ++i) {
    nn::Tensor t = nn::Tensor::zeros({dim});
    for (double& x : t.v) x = 2.0 * uniform01(rng) - 1.0;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("gain predictions are symmetric by construction") {
  GainPredictorConfig cfg;
  cfg.seed = 3;
  const GainPredictor pred(6, cfg);
  const std::vector<nn::Tensor> e = random_embeds(4, 6, 12);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double ij = pred.predict(e[static_cast<size_t>(i)], e[static_cast<size_t>(j)]);
      const double ji = pred.predict(e[static_cast<size_t>(j)], e[static_cast<size_t>(i)]);
      CHECK(std::abs(ij - ji) < 1e-12);
    }
}

TEST_CASE("fitting a synthetic symmetric target beats the mean predictor") {
  const int n = 12, dim = 5;
  const std::vector<nn::Tensor> e = random_embeds(n, dim, 44);

  // smooth symmetric ground truth on a subset of cells: a per-query score
  // summed over the pair, the shape the two-branch architecture represents
  std::mt19937_64 wrng(46);
  std::vector<double> w(dim);
  for (double& x : w) x = 2.0 * uniform01(wrng) - 1.0;
  auto score = [&](int i) {
    double dot = 0.0;
    for (int d = 0; d < dim; ++d)
      dot += w[static_cast<size_t>(d)] * e[static_cast<size_t>(i)].v[static_cast<size_t>(d)];
    return 0.15 * std::tanh(dot);
  };
  auto target = [&](int i, int j) { return score(i) + score(j); };

  GainMatrix observed = GainMatrix::empty_matrix(n);
  std::mt19937_64 rng(45);
  std::vector<std::pair<int, int>> heldout;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (uniform01(rng) < 0.2) {
        heldout.push_back({i, j});
        continue;  // leave the cell empty
      }
      observed.value[observed.index(i, j)] = target(i, j);
      observed.value[observed.index(j, i)] = target(i, j);
      observed.source[observed.index(i, j)] = CellSource::observed;
      observed.source[observed.index(j, i)] = CellSource::observed;
    }
  REQUIRE(!heldout.empty());

  GainPredictorConfig cfg;
  cfg.seed = 9;
  GainPredictor pred(dim, cfg);
  (void)pred.fit(e, observed);

  double mean = 0.0;
  int cells = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (observed.source_at(i, j) == CellSource::observed) {
        mean += observed.at(i, j);
        ++cells;
      }
  mean /= cells;

  double mse_pred = 0.0, mse_mean = 0.0;
  for (const auto& [i, j] : heldout) {
    const double y = target(i, j);
    const double yhat = pred.predict(e[static_cast<size_t>(i)], e[static_cast<size_t>(j)]);
    mse_pred += (yhat - y) * (yhat - y);
    mse_mean += (mean - y) * (mean - y);
  }
  CHECK(mse_pred < mse_mean);
}

TEST_CASE("complete_gains fills only the empty cells") {
  const int n = 5;
  const std::vector<nn::Tensor> e = random_embeds(n, 4, 50);
  GainMatrix observed = GainMatrix::empty_matrix(n);
  observed.value[observed.index(0, 1)] = 0.3;
  observed.value[observed.index(1, 0)] = 0.3;
  observed.source[observed.index(0, 1)] = CellSource::observed;
  observed.source[observed.index(1, 0)] = CellSource::observed;

  GainPredictorConfig cfg;
  cfg.epochs = 30;
  const GainMatrix full = complete_gains(observed, e, cfg);
  CHECK(full.at(0, 1) == 0.3);
  CHECK(full.source_at(0, 1) == CellSource::observed);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (i == 0 && j == 1) continue;
      if (i == 1 && j == 0) continue;
      CHECK(full.source_at(i, j) == CellSource::predicted);
      CHECK(full.at(i, j) == full.at(j, i));
    }
  CHECK_THROWS_AS((void)complete_gains(GainMatrix::empty_matrix(n), e, cfg), MissingDataError);
}

// ---------------------------------------------------------------------------
// Agglomeration
// ---------------------------------------------------------------------------

namespace {

GainMatrix matrix_from(const std::vector<std::vector<double>>& vals) {
  const int n = static_cast<int>(vals.size());
  GainMatrix g = GainMatrix::empty_matrix(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      g.value[g.index(i, j)] = vals[static_cast<size_t>(i)][static_cast<size_t>(j)];
      g.source[g.index(i, j)] = CellSource::observed;
    }
  return g;
}

// Brute-force average-linkage reference: clusters as explicit member lists,
// scan all pairs each step, keep the max-mean pair with the smallest id pair.
std::vector<std::pair<int, int>> brute_force_merges(const GainMatrix& g, int n_clusters) {
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < g.n; ++i) clusters.push_back({i});
  std::vector<std::pair<int, int>> merges;
  while (static_cast<int>(clusters.size()) > n_clusters) {
    double best = -1e300;
    size_t bi = 0, bj = 0;
    for (size_t a = 0; a < clusters.size(); ++a)
      for (size_t b = a + 1; b < clusters.size(); ++b) {
        double sum = 0.0;
        for (const int x : clusters[a])
          for (const int y : clusters[b]) sum += g.at(x, y);
        const double score =
            sum / (static_cast<double>(clusters[a].size()) * clusters[b].size());
        const int ida = clusters[a][0], idb = clusters[b][0];
        const int lo = std::min(ida, idb), hi = std::max(ida, idb);
        if (score > best) {
          best = score;
          bi = a;
          bj = b;
        } else if (score == best) {
          const int blo = std::min(clusters[bi][0], clusters[bj][0]);
          const int bhi = std::max(clusters[bi][0], clusters[bj][0]);
          if (lo < blo || (lo == blo && hi < bhi)) {
            bi = a;
            bj = b;
          }
        }
      }
    const int keep = std::min(clusters[bi][0], clusters[bj][0]);
    const int gone = std::max(clusters[bi][0], clusters[bj][0]);
    merges.push_back({keep, gone});
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    std::sort(clusters[bi].begin(), clusters[bi].end());
    clusters.erase(clusters.begin() + static_cast<long>(bj));
  }
  return merges;
}

}  // namespace

TEST_CASE("greedy agglomeration worked example") {
  const GainMatrix g = matrix_from({{0.0, 0.9, 0.1}, {0.9, 0.0, 0.2}, {0.1, 0.2, 0.0}});
  const Clustering c = agglomerate(g, 2);
  CHECK(c.cluster_count() == 2);
  CHECK(c.assignment == std::vector<int>{0, 0, 2});
  REQUIRE(c.history.size() == 1);
  CHECK(c.history[0].a == 0);
  CHECK(c.history[0].b == 1);
  CHECK(c.history[0].score == doctest::Approx(0.9));
}

TEST_CASE("agglomeration edge cases") {
  const GainMatrix g = matrix_from({{0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}, {0.5, 0.5, 0.0}});
  SUBCASE("n_c = n keeps singletons") {
    const Clustering c = agglomerate(g, 3);
    CHECK(c.assignment == std::vector<int>{0, 1, 2});
    CHECK(c.history.empty());
  }
  SUBCASE("all-equal gains merge the lexicographically smallest pair first") {
    const Clustering c = agglomerate(g, 2);
    CHECK(c.assignment == std::vector<int>{0, 0, 2});
  }
  SUBCASE("n_c out of range is rejected") {
    CHECK_THROWS_AS((void)agglomerate(g, 0), InvalidArgumentError);
    CHECK_THROWS_AS((void)agglomerate(g, 4), InvalidArgumentError);
  }
}

TEST_CASE("agglomeration matches the brute-force reference on random matrices") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 3 + static_cast<int>(mix64(91, static_cast<uint64_t>(trial)) % 6);
    GainMatrix g = GainMatrix::empty_matrix(n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        // quantized values provoke ties
        const double v = std::floor(uniform01(rng) * 4.0) / 4.0;
        g.value[g.index(i, j)] = v;
        g.value[g.index(j, i)] = v;
        g.source[g.index(i, j)] = CellSource::observed;
        g.source[g.index(j, i)] = CellSource::observed;
      }
    const int n_c = 1 + static_cast<int>(mix64(92, static_cast<uint64_t>(trial)) % n);
    const Clustering c = agglomerate(g, n_c);
    const auto expect = brute_force_merges(g, n_c);
    REQUIRE(c.history.size() == expect.size());
    for (size_t s = 0; s < expect.size(); ++s) {
      CHECK(c.history[s].a == expect[s].first);
      CHECK(c.history[s].b == expect[s].second);
    }
    // determinism of the whole pipeline
    const Clustering again = agglomerate(g, n_c);
    CHECK(again.assignment == c.assignment);
  }
}

// ---------------------------------------------------------------------------
// Cluster scheduling support
// ---------------------------------------------------------------------------

TEST_CASE("member config resolution honors the log2 metric and the masks") {
  const ConfigMenu menu{{1, 2, 4}};
  SUBCASE("a member that allows the cluster config just takes it") {
    CHECK(resolve_member_config(4, {1, 1, 1}, menu) == 4);
  }
  SUBCASE("a restricted member falls back to its closest allowed config") {
    CHECK(resolve_member_config(4, {1, 0, 0}, menu) == 1);
    CHECK(resolve_member_config(4, {1, 1, 0}, menu) == 2);
  }
  SUBCASE("log2 distance ties resolve toward fewer workers") {
    CHECK(resolve_member_config(2, {1, 0, 1}, menu) == 1);
  }
  SUBCASE("an unresolvable mask is rejected") {
    CHECK_THROWS_AS((void)resolve_member_config(2, {0, 0, 0}, menu), InvalidArgumentError);
  }
}

TEST_CASE("mcf orders members by average solo time, long to short") {
  BatchSet batch;
  for (int id = 0; id < 3; ++id) {
    QuerySpec q;
    q.query_id = 10 + id;
    q.plan.op = OperatorKind::scan;
    q.plan.table_ids = {id};
    q.plan.selectivity = 0.5;
    q.table_set = {id};
    batch.queries.push_back(q);
  }
  ExecLog log;
  log.rounds.push_back({0, {entry(10, 0, 0.0, 5.0), entry(11, 1, 0.0, 9.0),
                            entry(12, 2, 0.0, 1.0)}});
  const AvgTimeTable table = AvgTimeTable::from_log(log);

  SUBCASE("hand case {A:5, B:9, C:1} -> [B, A, C]") {
    const auto order = mcf_order({0, 1, 2}, batch, table);
    CHECK(order == std::vector<int>{1, 0, 2});
  }
  SUBCASE("subsets keep their relative order") {
    CHECK(mcf_order({0, 2}, batch, table) == std::vector<int>{0, 2});
  }
  SUBCASE("missing averages are reported") {
    BatchSet bigger = batch;
    QuerySpec q;
    q.query_id = 99;
    q.plan.op = OperatorKind::scan;
    q.plan.table_ids = {3};
    q.plan.selectivity = 0.5;
    q.table_set = {3};
    bigger.queries.push_back(q);
    CHECK_THROWS_AS((void)mcf_order({0, 3}, bigger, table), MissingDataError);
  }
}

TEST_CASE("all-equal averages fall back to id order and match a sort oracle") {
  std::mt19937_64 rng(97);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 4 + static_cast<int>(mix64(7, static_cast<uint64_t>(trial)) % 5);
    BatchSet batch;
    ExecLog log;
    RoundRecord round{0, {}};
    const bool equal = trial % 5 == 0;
    std::vector<double> avg(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      QuerySpec q;
      q.query_id = i;
      q.plan.op = OperatorKind::scan;
      q.plan.table_ids = {i % kTableVocabulary};
      q.plan.selectivity = 0.5;
      q.table_set = q.plan.table_ids;
      batch.queries.push_back(q);
      avg[static_cast<size_t>(i)] = equal ? 2.0 : 0.5 + std::floor(6.0 * uniform01(rng));
      round.entries.push_back(entry(i, i, 0.0, avg[static_cast<size_t>(i)]));
    }
    log.rounds.push_back(round);
    const AvgTimeTable table = AvgTimeTable::from_log(log);

    std::vector<int> members(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) members[static_cast<size_t>(i)] = i;
    std::vector<int> expect = members;
    std::stable_sort(expect.begin(), expect.end(), [&](int a, int b) {
      const double ta = avg[static_cast<size_t>(a)], tb = avg[static_cast<size_t>(b)];
      if (ta != tb) return ta > tb;
      return a < b;
    });
    CHECK(mcf_order(members, batch, table) == expect);
    if (equal) CHECK(mcf_order(members, batch, table) == members);
  }
}
