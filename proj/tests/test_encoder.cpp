#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cqsched/encoder.hpp"
#include "cqsched/errors.hpp"
#include "cqsched/nncore/gradcheck.hpp"
#include "cqsched/nncore/tape.hpp"
#include "cqsched/workload.hpp"

using namespace cqsched;
using namespace cqsched::nn;

// ---------------------------------------------------------------------------
// Shaping and clipping ops used by the encoder and the losses
// ---------------------------------------------------------------------------

TEST_CASE("forward values of shaping ops") {
  Tape t;
  Tensor m = Tensor::zeros({2, 3});
  for (int i = 0; i < 6; ++i) m.v[static_cast<size_t>(i)] = i + 1.0;
  const Tape::Id a = t.constant(m);

  SUBCASE("slice_rows and slice_cols pick contiguous blocks") {
    const Tape::Id r = t.slice_rows(a, 1, 1);
    CHECK(t.val(r).rows() == 1);
    CHECK(t.val(r).at(0, 0) == 4.0);
    CHECK(t.val(r).at(0, 2) == 6.0);
    const Tape::Id c = t.slice_cols(a, 1, 2);
    CHECK(t.val(c).cols() == 2);
    CHECK(t.val(c).at(0, 0) == 2.0);
    CHECK(t.val(c).at(1, 1) == 6.0);
  }
  SUBCASE("tile_rows repeats a vector") {
    const Tape::Id v = t.tile_rows(t.constant(Tensor::vec({7.0, 8.0})), 3);
    CHECK(t.val(v).rows() == 3);
    CHECK(t.val(v).at(0, 0) == 7.0);
    CHECK(t.val(v).at(2, 1) == 8.0);
  }
  SUBCASE("flatten keeps row-major order") {
    const Tape::Id f = t.flatten(a);
    CHECK(t.val(f).rows() == 1);
    CHECK(t.val(f).cols() == 6);
    CHECK(t.val(f).v[3] == 4.0);
  }
  SUBCASE("clamp pins values to the interval") {
    const Tape::Id c = t.clamp(t.constant(Tensor::vec({-1.0, 0.5, 2.0})), 0.0, 1.0);
    CHECK(t.val(c).v[0] == 0.0);
    CHECK(t.val(c).v[1] == 0.5);
    CHECK(t.val(c).v[2] == 1.0);
  }
  SUBCASE("min2 takes the elementwise minimum") {
    const Tape::Id lo = t.min2(t.constant(Tensor::vec({1.0, 5.0})),
                               t.constant(Tensor::vec({2.0, 4.0})));
    CHECK(t.val(lo).v[0] == 1.0);
    CHECK(t.val(lo).v[1] == 4.0);
  }
  SUBCASE("gather reorders and repeats entries") {
    const Tape::Id g = t.gather(t.constant(Tensor::vec({10.0, 20.0, 30.0})), {2, 0, 2});
    CHECK(t.val(g).v[0] == 30.0);
    CHECK(t.val(g).v[1] == 10.0);
    CHECK(t.val(g).v[2] == 30.0);
  }
}

TEST_CASE("gradcheck: slicing, tiling and flattening") {
  std::mt19937_64 rng(21);
  ParamStore store;
  Param& X = store.create("X", {3, 4}, InitKind::xavier, rng);
  Param& v = store.create("v", {4}, InitKind::xavier, rng);
  const double err = grad_check(store.all(), [&](Tape& t) {
    const Tape::Id x = t.param(X);
    const Tape::Id stacked = t.concat_rows({t.slice_rows(x, 0, 2), t.tile_rows(t.param(v), 2)});
    const Tape::Id cols = t.slice_cols(stacked, 1, 2);
    return t.mean(t.mul(t.flatten(cols), t.flatten(cols)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("gradcheck: exp, clamp interior and min2") {
  std::mt19937_64 rng(22);
  ParamStore store;
  Param& a = store.create("a", {5}, InitKind::xavier, rng);
  Param& b = store.create("b", {5}, InitKind::xavier, rng);
  // keep every coordinate strictly inside the clamp so the finite-difference
  // probe never crosses the kink
  for (double& x : a.value.v) x = 0.4 * std::tanh(x);
  for (double& x : b.value.v) x = 0.3 * std::tanh(x) + 0.1;
  const double err = grad_check(store.all(), [&](Tape& t) {
    const Tape::Id ea = t.exp_(t.param(a));
    const Tape::Id cb = t.clamp(t.param(b), -0.9, 0.9);
    return t.sum(t.min2(ea, cb));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("clamp blocks gradient outside the interval") {
  std::mt19937_64 rng(23);
  ParamStore store;
  Param& a = store.create("a", {3}, InitKind::zeros, rng);
  a.value.v = {-2.0, 0.0, 2.0};
  Tape t;
  const Tape::Id x = t.param(a);
  t.backward(t.sum(t.clamp(x, -1.0, 1.0)));
  CHECK(a.grad.v[0] == 0.0);
  CHECK(a.grad.v[1] == 1.0);
  CHECK(a.grad.v[2] == 0.0);
}

TEST_CASE("min2 routes gradient to the smaller side, ties to the first") {
  std::mt19937_64 rng(24);
  ParamStore store;
  Param& a = store.create("a", {3}, InitKind::zeros, rng);
  Param& b = store.create("b", {3}, InitKind::zeros, rng);
  a.value.v = {1.0, 5.0, 2.0};
  b.value.v = {2.0, 4.0, 2.0};
  Tape t;
  t.backward(t.sum(t.min2(t.param(a), t.param(b))));
  CHECK(a.grad.v == std::vector<double>{1.0, 0.0, 1.0});
  CHECK(b.grad.v == std::vector<double>{0.0, 1.0, 0.0});
}

// ---------------------------------------------------------------------------
// Plan embedding
// ---------------------------------------------------------------------------

namespace {

PlanNode scan_node(int table, double sel = 0.5) {
  PlanNode n;
  n.op = OperatorKind::scan;
  n.table_ids = {table};
  n.selectivity = sel;
  return n;
}

PlanNode join_node(PlanNode left, PlanNode right) {
  PlanNode n;
  n.op = OperatorKind::join;
  n.selectivity = 0.3;
  n.children = {std::move(left), std::move(right)};
  return n;
}

}  // namespace

TEST_CASE("plan embeddings are deterministic, bounded and structure-sensitive") {
  const PlanEmbedder e1(16, 99);
  const PlanEmbedder e2(16, 99);
  const PlanEmbedder e3(16, 100);
  const PlanNode plan = join_node(scan_node(1), scan_node(2));

  const Tensor a = e1.encode(plan);
  CHECK(a.cols() == 16);
  CHECK(e1.dim() == 16);
  CHECK(a.v == e2.encode(plan).v);
  CHECK(a.v != e3.encode(plan).v);
  for (const double x : a.v) CHECK(std::abs(x) <= 1.0);

  // the child fold is a mean, so operand order is deliberately irrelevant,
  // but the tables and selectivities underneath are not
  CHECK(a.v == e1.encode(join_node(scan_node(2), scan_node(1))).v);
  CHECK(a.v != e1.encode(join_node(scan_node(1), scan_node(3))).v);
  CHECK(a.v != e1.encode(join_node(scan_node(1), scan_node(2, 0.9))).v);
}

TEST_CASE("plan embedder rejects out-of-vocabulary tables") {
  const PlanEmbedder e(8, 1);
  CHECK_THROWS_AS((void)e.encode(scan_node(kTableVocabulary)), InvalidArgumentError);
  CHECK_THROWS_AS(PlanEmbedder(0, 1), InvalidArgumentError);
}

TEST_CASE("batch encoding yields one embedding per query") {
  const BatchSet batch = generate_workload(9, 4, WorkloadProfile::planted);
  const PlanEmbedder e(12, 7);
  const std::vector<Tensor> embeds = e.encode_batch(batch);
  REQUIRE(embeds.size() == batch.queries.size());
  for (const Tensor& t : embeds) CHECK(t.cols() == 12);
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

namespace {

ExecLog tiny_calibration(const BatchSet& batch, const EnvConfig& cfg) {
  Environment env(batch, cfg);
  ExecLog log;
  int round = 0;
  for (const int w : cfg.menu.workers)
    for (const QuerySpec& q : batch.queries) {
      env.reset(static_cast<uint64_t>(round));
      env.submit(q.query_id, w);
      env.advance_to_next_completion();
      log.rounds.push_back(env.round_record(round++));
    }
  return log;
}

}  // namespace

TEST_CASE("environment snapshots carry status, config, elapsed and averages") {
  const BatchSet batch = generate_workload(9, 11, WorkloadProfile::planted);
  EnvConfig cfg;
  cfg.connections = 2;
  const AvgTimeTable table = AvgTimeTable::from_log(tiny_calibration(batch, cfg));

  Environment env(batch, cfg);
  env.reset(5);
  env.submit(batch.queries[0].query_id, 2);
  env.submit(batch.queries[3].query_id, 1);
  const auto [done, when] = env.advance_to_next_completion();

  const StateSnapshot snap = make_snapshot(env, table);
  REQUIRE(snap.units.size() == batch.queries.size());
  REQUIRE(snap.conn_unit.size() == 2);

  const int done_idx = batch.index_of(done);
  CHECK(snap.units[static_cast<size_t>(done_idx)].status == QueryStatus::finished);
  int running = 0, pending = 0;
  for (const RunState& rs : snap.units) {
    if (rs.status == QueryStatus::running) {
      ++running;
      CHECK(rs.elapsed == doctest::Approx(when));
      REQUIRE(rs.workers.has_value());
      const int qid = done == batch.queries[0].query_id ? batch.queries[3].query_id
                                                        : batch.queries[0].query_id;
      CHECK(rs.avg_time == doctest::Approx(table.avg(qid, *rs.workers)));
    }
    if (rs.status == QueryStatus::pending) {
      ++pending;
      CHECK(!rs.workers.has_value());
      CHECK(rs.elapsed == 0.0);
    }
  }
  CHECK(running == 1);
  CHECK(pending == static_cast<int>(batch.queries.size()) - 2);

  // exactly one connection still holds the running unit
  int occupied = 0;
  for (const int u : snap.conn_unit)
    if (u >= 0) {
      ++occupied;
      CHECK(snap.units[static_cast<size_t>(u)].status == QueryStatus::running);
    }
  CHECK(occupied == 1);
}

// ---------------------------------------------------------------------------
// State encoder
// ---------------------------------------------------------------------------

namespace {

StateSnapshot toy_snapshot(int n, int connections, const ConfigMenu& menu) {
  StateSnapshot snap;
  snap.units.resize(static_cast<size_t>(n));
  snap.conn_unit.assign(static_cast<size_t>(connections), -1);
  for (int i = 0; i < n; ++i) {
    RunState& rs = snap.units[static_cast<size_t>(i)];
    rs.avg_time = 1.0 + i;
    if (i % 3 == 1) {
      rs.status = QueryStatus::running;
      rs.workers = menu.workers[static_cast<size_t>(i % menu.size())];
      rs.elapsed = 0.25 * (i + 1);
      if (i / 3 < connections) snap.conn_unit[static_cast<size_t>(i / 3)] = i;
    } else if (i % 3 == 2) {
      rs.status = QueryStatus::finished;
      rs.workers = menu.workers[0];
      rs.elapsed = 0.5;
    }
  }
  return snap;
}

std::vector<Tensor> toy_embeds(int n, int dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<Tensor> out;
  for (int i = 0; i < n; ++i) {
    Tensor t = Tensor::zeros({dim});
    for (double& x : t.v) x = uni(rng);
    out.push_back(std::move(t));
  }
  return out;
}

FeatureContext toy_context(int max_units, int connections) {
  FeatureContext ctx;
  ctx.norm.scale = 4.0;
  ctx.max_units = max_units;
  ctx.connections = connections;
  return ctx;
}

NetConfig tiny_net() {
  NetConfig net;
  net.hidden_dim = 6;
  net.attn_layers = 1;
  net.attn_heads = 2;
  net.ff_dim = 6;
  return net;
}

}  // namespace

TEST_CASE("encoder output shapes and padding behavior") {
  const FeatureContext ctx = toy_context(5, 2);
  std::mt19937_64 rng(31);
  ParamStore store;
  const StateEncoder enc(store, tiny_net(), ctx, 4, rng);

  for (const int n : {3, 5}) {
    Tape t;
    const Encoding e = enc.encode(t, toy_snapshot(n, 2, ctx.menu), toy_embeds(n, 4, 8));
    CHECK(t.val(e.per_unit).rows() == n);
    CHECK(t.val(e.per_unit).cols() == 6);
    CHECK(t.val(e.global).rows() == 1);
    CHECK(t.val(e.global).cols() == 6);
    CHECK(t.val(e.attended).rows() == n + 1);
  }

  Tape t;
  CHECK_THROWS_AS((void)enc.encode(t, toy_snapshot(6, 2, ctx.menu), toy_embeds(6, 4, 8)),
                  InvalidArgumentError);
  CHECK_THROWS_AS((void)enc.encode(t, toy_snapshot(3, 2, ctx.menu), toy_embeds(3, 5, 8)),
                  ShapeError);
}

TEST_CASE("encoder is deterministic in its seed") {
  const FeatureContext ctx = toy_context(4, 2);
  const StateSnapshot snap = toy_snapshot(4, 2, ctx.menu);
  const std::vector<Tensor> embeds = toy_embeds(4, 4, 9);

  auto run = [&](uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore store;
    const StateEncoder enc(store, tiny_net(), ctx, 4, rng);
    Tape t;
    const Encoding e = enc.encode(t, snap, embeds);
    return t.val(e.global).v;
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
}

TEST_CASE("gradcheck: full encoder loss reaches every parameter") {
  const FeatureContext ctx = toy_context(3, 2);
  const StateSnapshot snap = toy_snapshot(3, 2, ctx.menu);
  const std::vector<Tensor> embeds = toy_embeds(3, 3, 10);

  std::mt19937_64 rng(32);
  ParamStore store;
  NetConfig net = tiny_net();
  net.hidden_dim = 4;
  net.ff_dim = 4;
  const StateEncoder enc(store, net, ctx, 3, rng);

  const double err = grad_check(store.all(), [&](Tape& t) {
    const Encoding e = enc.encode(t, snap, embeds);
    const Tape::Id a = t.mean(t.mul(e.per_unit, e.per_unit));
    const Tape::Id b = t.mean(t.mul(e.global, e.global));
    return t.add(a, t.add(b, t.mean(e.attended)));
  });
  CHECK(err < 1e-4);

  // and the loss actually touches every parameter group
  ParamStore store2;
  std::mt19937_64 rng2(32);
  const StateEncoder enc2(store2, net, ctx, 3, rng2);
  Tape t;
  const Encoding e = enc2.encode(t, snap, embeds);
  t.backward(t.add(t.mean(t.mul(e.per_unit, e.per_unit)), t.mean(t.mul(e.global, e.global))));
  int touched = 0;
  for (Param* p : store2.all()) {
    double mag = 0.0;
    for (const double g : p->grad.v) mag += std::abs(g);
    if (mag > 0.0) ++touched;
  }
  CHECK(touched == static_cast<int>(store2.size()));
}
