#include "cqsched/nncore/net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cqsched/rng.hpp"

namespace cqsched::nn {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

void xavier_fill(Tensor& t, std::mt19937_64& rng) {
  const int fan_in = t.rank() == 2 ? t.shape[0] : 1;
  const int fan_out = t.rank() == 2 ? t.shape[1] : t.shape[0];
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : t.v) x = uniform(rng, -limit, limit);
}

Param& ParamStore::create(const std::string& name, std::vector<int> shape, InitKind kind,
                          std::mt19937_64& rng) {
  if (by_name_.count(name)) throw InvalidArgumentError("duplicate parameter name " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Tensor::zeros(std::move(shape));
  switch (kind) {
    case InitKind::xavier: xavier_fill(p->value, rng); break;
    case InitKind::zeros: break;
    case InitKind::ones: std::fill(p->value.v.begin(), p->value.v.end(), 1.0); break;
  }
  p->grad = Tensor::zeros(p->value.shape);
  Param& ref = *p;
  by_name_[name] = p.get();
  params_.push_back(std::move(p));
  return ref;
}

Param* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamStore::with_prefix(const std::string& prefix) {
  std::vector<Param*> out;
  for (auto& p : params_)
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  return out;
}

size_t ParamStore::coordinate_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
}

StateDict ParamStore::state_dict() const {
  StateDict sd;
  for (const auto& p : params_) sd[p->name] = p->value;
  return sd;
}

void ParamStore::load_state_dict(const StateDict& sd) {
  if (sd.size() > params_.size())
    throw DataFormatError("state dict has " + std::to_string(sd.size()) +
                          " tensors, expected " + std::to_string(params_.size()));
  for (auto& p : params_) {
    auto it = sd.find(p->name);
    if (it == sd.end()) throw MissingDataError("state dict is missing parameter " + p->name);
    if (it->second.shape != p->value.shape)
      throw ShapeError("parameter " + p->name + ": shape " + it->second.shape_str() +
                       " does not match " + p->value.shape_str());
    p->value = it->second;
  }
}

// ---------------------------------------------------------------------------
// NetConfig
// ---------------------------------------------------------------------------

void NetConfig::validate() const {
  if (hidden_dim < 1 || attn_layers < 0 || attn_heads < 1 || ff_dim < 1)
    throw InvalidArgumentError("net config: dimensions must be positive");
  if (hidden_dim % attn_heads != 0)
    throw InvalidArgumentError("net config: hidden_dim must be divisible by attn_heads");
  for (int d : {repr_depth, global_depth, query_depth, policy_depth, value_depth, aux_depth,
                gain_depth, clf_depth, reg_depth})
    if (d < 1) throw InvalidArgumentError("net config: every MLP needs at least one layer");
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

Mlp make_mlp(ParamStore& store, const std::string& prefix, int in_dim, int hidden, int out_dim,
             int depth, bool head, std::mt19937_64& rng) {
  Mlp m;
  m.head = head;
  int cur = in_dim;
  for (int l = 0; l < depth; ++l) {
    const int width = (l == depth - 1) ? out_dim : hidden;
    m.W.push_back(&store.create(prefix + ".W" + std::to_string(l), {cur, width},
                                InitKind::xavier, rng));
    m.b.push_back(&store.create(prefix + ".b" + std::to_string(l), {width}, InitKind::zeros, rng));
    cur = width;
  }
  return m;
}

Tape::Id mlp_apply(Tape& t, const Mlp& m, Tape::Id x) {
  Tape::Id cur = x;
  for (size_t l = 0; l < m.W.size(); ++l) {
    cur = t.linear(cur, t.param(*m.W[l]), t.param(*m.b[l]));
    const bool last = l + 1 == m.W.size();
    if (!last || !m.head) cur = t.tanh_(cur);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

AttentionLayer make_attention_layer(ParamStore& store, const std::string& prefix, int dim,
                                    int heads, int ff_dim, NormKind norm, std::mt19937_64& rng) {
  if (dim % heads != 0) throw InvalidArgumentError("attention dim must divide into heads");
  AttentionLayer l;
  l.heads = heads;
  l.norm = norm;
  auto mat = [&](const char* n) -> Param* {
    return &store.create(prefix + "." + n, {dim, dim}, InitKind::xavier, rng);
  };
  auto vec0 = [&](const char* n) -> Param* {
    return &store.create(prefix + "." + n, {dim}, InitKind::zeros, rng);
  };
  l.Wq = mat("Wq"); l.bq = vec0("bq");
  l.Wk = mat("Wk"); l.bk = vec0("bk");
  l.Wv = mat("Wv"); l.bv = vec0("bv");
  l.Wo = mat("Wo"); l.bo = vec0("bo");
  l.ff_W1 = &store.create(prefix + ".ff_W1", {dim, ff_dim}, InitKind::xavier, rng);
  l.ff_b1 = &store.create(prefix + ".ff_b1", {ff_dim}, InitKind::zeros, rng);
  l.ff_W2 = &store.create(prefix + ".ff_W2", {ff_dim, dim}, InitKind::xavier, rng);
  l.ff_b2 = &store.create(prefix + ".ff_b2", {dim}, InitKind::zeros, rng);
  l.n1_gain = &store.create(prefix + ".n1_gain", {dim}, InitKind::ones, rng);
  l.n1_bias = &store.create(prefix + ".n1_bias", {dim}, InitKind::zeros, rng);
  l.n2_gain = &store.create(prefix + ".n2_gain", {dim}, InitKind::ones, rng);
  l.n2_bias = &store.create(prefix + ".n2_bias", {dim}, InitKind::zeros, rng);
  return l;
}

Tape::Id multi_head_attention(Tape& t, const AttentionLayer& layer, Tape::Id X) {
  const int dim = t.val(X).cols();
  const int dh = dim / layer.heads;
  const Tape::Id Q = t.linear(X, t.param(*layer.Wq), t.param(*layer.bq));
  const Tape::Id K = t.linear(X, t.param(*layer.Wk), t.param(*layer.bk));
  const Tape::Id V = t.linear(X, t.param(*layer.Wv), t.param(*layer.bv));
  std::vector<Tape::Id> heads;
  heads.reserve(static_cast<size_t>(layer.heads));
  for (int h = 0; h < layer.heads; ++h) {
    const Tape::Id Qh = t.slice_cols(Q, h * dh, dh);
    const Tape::Id Kh = t.slice_cols(K, h * dh, dh);
    const Tape::Id Vh = t.slice_cols(V, h * dh, dh);
    const Tape::Id scores = t.scale(t.matmul(Qh, t.transpose(Kh)), 1.0 / std::sqrt(dh));
    heads.push_back(t.matmul(t.softmax_rows(scores), Vh));
  }
  const Tape::Id cat = layer.heads == 1 ? heads[0] : t.concat_cols(heads);
  return t.linear(cat, t.param(*layer.Wo), t.param(*layer.bo));
}

namespace {

Tape::Id norm_apply(Tape& t, NormKind kind, Tape::Id X, Param& gain, Param& bias) {
  if (kind == NormKind::none) return X;
  return t.set_norm(X, t.param(gain), t.param(bias));
}

}  // namespace

Tape::Id attention_apply(Tape& t, const AttentionLayer& layer, Tape::Id X) {
  const Tape::Id att = multi_head_attention(t, layer, X);
  const Tape::Id h = norm_apply(t, layer.norm, t.add(X, att), *layer.n1_gain, *layer.n1_bias);
  const Tape::Id ff = t.linear(t.tanh_(t.linear(h, t.param(*layer.ff_W1), t.param(*layer.ff_b1))),
                               t.param(*layer.ff_W2), t.param(*layer.ff_b2));
  return norm_apply(t, layer.norm, t.add(h, ff), *layer.n2_gain, *layer.n2_bias);
}

// ---------------------------------------------------------------------------
// Masked distributions
// ---------------------------------------------------------------------------

Tape::Id apply_mask(Tape& t, Tape::Id logits, const std::vector<char>& allowed) {
  const Tensor& l = t.val(logits);
  if (l.rank() != 1 || l.numel() != allowed.size())
    throw ShapeError("apply_mask: mask size does not match logits");
  bool any = false;
  for (char a : allowed) any = any || a;
  if (!any) throw InvalidArgumentError("action mask disallows every entry");
  Tensor m = Tensor::zeros(l.shape);
  for (size_t i = 0; i < allowed.size(); ++i) m.v[i] = allowed[i] ? 0.0 : kMaskValue;
  return t.add(logits, t.constant(std::move(m)));
}

Tape::Id log_prob(Tape& t, Tape::Id masked_logits, int action) {
  return t.sub(t.pick(masked_logits, action), t.log_sum_exp(masked_logits));
}

namespace {

std::vector<int> allowed_indices(const std::vector<char>& allowed) {
  std::vector<int> idx;
  for (size_t i = 0; i < allowed.size(); ++i)
    if (allowed[i]) idx.push_back(static_cast<int>(i));
  if (idx.empty()) throw InvalidArgumentError("action mask disallows every entry");
  return idx;
}

}  // namespace

Tape::Id entropy(Tape& t, Tape::Id masked_logits, const std::vector<char>& allowed) {
  // H = lse(l) - sum_k p_k l_k, restricted to allowed entries (masked ones
  // carry zero probability mass by construction).
  const Tape::Id sub_logits = t.gather(masked_logits, allowed_indices(allowed));
  return t.sub(t.log_sum_exp(sub_logits), t.dot(t.softmax(sub_logits), sub_logits));
}

Tape::Id kl_to_ref(Tape& t, Tape::Id masked_logits, const std::vector<char>& allowed,
                   const std::vector<double>& ref_probs) {
  const std::vector<int> idx = allowed_indices(allowed);
  if (ref_probs.size() != idx.size())
    throw ShapeError("kl_to_ref: reference distribution size mismatch");
  // KL(ref || pi) = sum_k ref_k log ref_k - sum_k ref_k l_k + lse(l)
  double ref_entropy_term = 0.0;
  for (double p : ref_probs)
    if (p > 0.0) ref_entropy_term += p * std::log(p);
  const Tape::Id sub_logits = t.gather(masked_logits, idx);
  const Tape::Id cross = t.dot(t.constant(Tensor::vec(ref_probs)), sub_logits);
  return t.add(t.constant(Tensor::scalar(ref_entropy_term)),
               t.sub(t.log_sum_exp(sub_logits), cross));
}

std::vector<double> masked_softmax(const std::vector<double>& logits,
                                   const std::vector<char>& allowed) {
  if (logits.size() != allowed.size()) throw ShapeError("masked_softmax: size mismatch");
  bool any = false;
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < logits.size(); ++i)
    if (allowed[i]) {
      any = true;
      mx = std::max(mx, logits[i]);
    }
  if (!any) throw InvalidArgumentError("action mask disallows every entry");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i)
    if (allowed[i]) {
      p[i] = std::exp(logits[i] - mx);
      z += p[i];
    }
  for (double& x : p) x /= z;
  return p;
}

}  // namespace cqsched::nn
