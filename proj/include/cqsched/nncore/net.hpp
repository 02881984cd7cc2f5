#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cqsched/nncore/param.hpp"
#include "cqsched/nncore/tape.hpp"

namespace cqsched::nn {

enum class NormKind { set_level, none };

// Shared architecture knobs.  Hidden layers always use tanh; prediction heads
// leave the final layer linear so the outputs are unbounded.
struct NetConfig {
  int hidden_dim = 64;
  int attn_layers = 2;
  int attn_heads = 4;
  int ff_dim = 64;          // width of the per-row feed-forward sublayer
  int repr_depth = 2;       // per-query representation MLP
  int global_depth = 2;     // global state MLP
  int query_depth = 2;      // final per-query MLP
  int policy_depth = 2;
  int value_depth = 2;
  int aux_depth = 2;
  int gain_depth = 2;
  int clf_depth = 2;
  int reg_depth = 2;
  NormKind norm = NormKind::set_level;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Multi-layer perceptron
// ---------------------------------------------------------------------------

struct Mlp {
  std::vector<Param*> W;
  std::vector<Param*> b;
  bool head = false;  // true: last layer has no activation
};

Mlp make_mlp(ParamStore& store, const std::string& prefix, int in_dim, int hidden, int out_dim,
             int depth, bool head, std::mt19937_64& rng);
// Applies the MLP to a rank-1 vector or row-wise to a rank-2 tensor.
Tape::Id mlp_apply(Tape& t, const Mlp& m, Tape::Id x);

// ---------------------------------------------------------------------------
// Attention layer (multi-head self-attention + feed-forward, each sublayer
// wrapped with a residual connection and set-level normalization)
// ---------------------------------------------------------------------------

struct AttentionLayer {
  Param *Wq, *bq, *Wk, *bk, *Wv, *bv, *Wo, *bo;
  Param *ff_W1, *ff_b1, *ff_W2, *ff_b2;
  Param *n1_gain, *n1_bias, *n2_gain, *n2_bias;
  int heads = 1;
  NormKind norm = NormKind::set_level;
};

AttentionLayer make_attention_layer(ParamStore& store, const std::string& prefix, int dim,
                                    int heads, int ff_dim, NormKind norm, std::mt19937_64& rng);
// X is [N, dim]; returns [N, dim].
Tape::Id attention_apply(Tape& t, const AttentionLayer& layer, Tape::Id X);
// The bare multi-head attention block without residual/norm/FF (exposed for
// oracle tests).
Tape::Id multi_head_attention(Tape& t, const AttentionLayer& layer, Tape::Id X);

// ---------------------------------------------------------------------------
// Distribution helpers over masked logit vectors
// ---------------------------------------------------------------------------

inline constexpr double kMaskValue = -1e8;

// logits + mask -> logits with kMaskValue added to disallowed entries.
Tape::Id apply_mask(Tape& t, Tape::Id logits, const std::vector<char>& allowed);
// log pi(action) for masked logits.
Tape::Id log_prob(Tape& t, Tape::Id masked_logits, int action);
// Entropy restricted to the allowed entries.
Tape::Id entropy(Tape& t, Tape::Id masked_logits, const std::vector<char>& allowed);
// KL(ref || softmax(logits)) over the allowed entries; ref is a constant
// probability vector over exactly those entries.
Tape::Id kl_to_ref(Tape& t, Tape::Id masked_logits, const std::vector<char>& allowed,
                   const std::vector<double>& ref_probs);

// Plain softmax of a masked logit vector (no tape).
std::vector<double> masked_softmax(const std::vector<double>& logits,
                                   const std::vector<char>& allowed);

}  // namespace cqsched::nn
