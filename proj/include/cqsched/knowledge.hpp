#pragma once

#include <cstdint>
#include <vector>

#include "cqsched/nncore/net.hpp"
#include "cqsched/workload.hpp"

namespace cqsched {

// ---------------------------------------------------------------------------
// Adaptive config masking
// ---------------------------------------------------------------------------

struct MaskConfig {
  double tau_abs = 0.5;   // seconds a config upgrade must save
  double tau_rel = 0.05;  // fraction of the best lower-config mean it must save
};

// Row-major [unit][config] allowance flags.  Non-pending units are fully
// disallowed and a pending unit's minimal config is never masked.  A higher
// config is masked when the best mean over all strictly lower configs beats
// it by less than tau_abs seconds AND by less than tau_rel of that best lower
// mean: spending more workers must buy a real speedup on both scales.
// Referencing the minimum over all lower configs (rather than the best
// still-allowed one) makes the rule monotone in both thresholds.
std::vector<char> derive_masks(const std::vector<std::vector<double>>& avg,
                               const std::vector<char>& pending, const ConfigMenu& menu,
                               const MaskConfig& mc);

// ---------------------------------------------------------------------------
// Pairwise scheduling gains
// ---------------------------------------------------------------------------

enum class CellSource { empty, observed, predicted };

// Symmetric matrix of how much two queries historically benefit from
// co-running.  Per qualifying round (both ran, overlap > 0) the contribution
// is the overlap-weighted, sqrt-mean-time-weighted average of each side's
// relative speedup versus its unconditioned mean duration; cells average over
// qualifying rounds.
struct GainMatrix {
  int n = 0;
  std::vector<double> value;
  std::vector<CellSource> source;
  std::vector<int> support;  // qualifying co-run rounds per cell

  static GainMatrix empty_matrix(int n);
  double at(int i, int j) const { return value[index(i, j)]; }
  CellSource source_at(int i, int j) const { return source[index(i, j)]; }
  int support_at(int i, int j) const { return support[index(i, j)]; }

  size_t index(int i, int j) const;
};

GainMatrix compute_gains(const ExecLog& log, const BatchSet& batch);

// ---------------------------------------------------------------------------
// Gain predictor
// ---------------------------------------------------------------------------
//
// Order-invariant scorer over plan embeddings: g(i, j) = f(e_i || e_j) +
// f(e_j || e_i).  Trained on observed cells, used to fill empty ones.

struct GainPredictorConfig {
  int hidden = 32;
  int depth = 2;
  int epochs = 150;
  int minibatch = 16;
  double lr = 3e-3;
  uint64_t seed = 0;
};

class GainPredictor {
 public:
  GainPredictor(int embed_dim, const GainPredictorConfig& cfg);

  // Returns the final training MSE over the observed cells.
  double fit(const std::vector<nn::Tensor>& embeds, const GainMatrix& observed);
  double predict(const nn::Tensor& ei, const nn::Tensor& ej) const;

 private:
  int embed_dim_;
  GainPredictorConfig cfg_;
  nn::ParamStore store_;
  nn::Mlp mlp_;
};

// Observed cells are kept verbatim; empty off-diagonal cells are filled with
// predictions.
GainMatrix complete_gains(const GainMatrix& observed, const std::vector<nn::Tensor>& embeds,
                          const GainPredictorConfig& cfg);

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

struct MergeStep {
  int a = -1;  // surviving cluster id (the smaller one)
  int b = -1;  // absorbed cluster id
  double score = 0.0;
};

struct Clustering {
  std::vector<int> assignment;  // query index -> cluster id (min member index)
  std::vector<MergeStep> history;

  int cluster_count() const;
  // Member lists in ascending cluster-id order; members sorted ascending.
  std::vector<std::vector<int>> members() const;
};

// Average-linkage agglomeration with the gain matrix as similarity: while
// more than n_clusters remain, merge the pair with the highest mean pairwise
// gain (ties prefer the lexicographically smallest id pair).
Clustering agglomerate(const GainMatrix& gains, int n_clusters);

// Below this batch size clustering is skipped and queries schedule flat.
inline constexpr int kClusterBypassSize = 32;
int default_cluster_count(int n);

// Allowed config closest to the cluster-level choice in log2 worker space;
// ties prefer fewer workers.  `allowed` is indexed like the menu.
int resolve_member_config(int cluster_workers, const std::vector<char>& allowed,
                          const ConfigMenu& menu);

// Longest-mean-first submission order (descending unconditioned mean, ties by
// ascending query id).  `members` holds batch indices.
std::vector<int> mcf_order(const std::vector<int>& members, const BatchSet& batch,
                           const AvgTimeTable& table);

}  // namespace cqsched
