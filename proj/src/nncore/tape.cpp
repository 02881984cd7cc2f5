#include "cqsched/nncore/tape.hpp"

#include <algorithm>
#include <cmath>

namespace cqsched::nn {

namespace {

// out[ar,br] += a[ar,ac] * b[br,ac]^T
void matmul_acc_nt(const double* a, int ar, int ac, const double* b, int br, double* out) {
  for (int i = 0; i < ar; ++i) {
    const double* arow = a + static_cast<size_t>(i) * static_cast<size_t>(ac);
    double* orow = out + static_cast<size_t>(i) * static_cast<size_t>(br);
    for (int j = 0; j < br; ++j) {
      const double* brow = b + static_cast<size_t>(j) * static_cast<size_t>(ac);
      double s = 0.0;
      for (int k = 0; k < ac; ++k) s += arow[k] * brow[k];
      orow[j] += s;
    }
  }
}

// out[ac,bc] += a[ar,ac]^T * b[ar,bc]
void matmul_acc_tn(const double* a, int ar, int ac, const double* b, int bc, double* out) {
  for (int i = 0; i < ar; ++i) {
    const double* arow = a + static_cast<size_t>(i) * static_cast<size_t>(ac);
    const double* brow = b + static_cast<size_t>(i) * static_cast<size_t>(bc);
    for (int k = 0; k < ac; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* orow = out + static_cast<size_t>(k) * static_cast<size_t>(bc);
      for (int j = 0; j < bc; ++j) orow[j] += aik * brow[j];
    }
  }
}

void softmax_into(const double* x, int n, double* out) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
}

}  // namespace

Tape::Id Tape::push(Tensor value, std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), nullptr});
  return static_cast<Id>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(Id id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.v.empty()) {
    n.grad.shape = n.value.shape;
    n.grad.v.assign(n.value.v.size(), 0.0);
  }
  return n.grad;
}

Tensor Tape::grad(Id id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad.v.empty()) return n.grad;
  Tensor z;
  z.shape = n.value.shape;
  z.v.assign(n.value.v.size(), 0.0);
  return z;
}

Tape::Id Tape::constant(Tensor t) { return push(std::move(t), nullptr); }

Tape::Id Tape::param(Param& p) {
  const Id id = push(p.value, nullptr);
  nodes_[static_cast<size_t>(id)].bound = &p;
  return id;
}

void Tape::backward(Id root) {
  if (val(root).numel() != 1) throw ShapeError("backward root must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor{};
  grad_buf(root).v[0] = 1.0;
  for (Id i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.v.empty()) continue;  // no downstream gradient reached here
    if (n.back) n.back(*this);
    if (n.bound) {
      if (n.bound->grad.v.empty()) {
        n.bound->grad.shape = n.value.shape;
        n.bound->grad.v.assign(n.value.v.size(), 0.0);
      }
      for (size_t k = 0; k < n.grad.v.size(); ++k) n.bound->grad.v[k] += n.grad.v[k];
    }
  }
}

// --- elementwise ------------------------------------------------------------

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ShapeError("add: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.v.size(); ++i) {
      ga.v[i] += g.v[i];
      gb.v[i] += g.v[i];
    }
  };
  return id;
}

Tape::Id Tape::sub(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ShapeError("sub: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= tb.v[i];
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.v.size(); ++i) {
      ga.v[i] += g.v[i];
      gb.v[i] -= g.v[i];
    }
  };
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ShapeError("mul: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= tb.v[i];
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.v.size(); ++i) {
      ga.v[i] += g.v[i] * vb.v[i];
      gb.v[i] += g.v[i] * va.v[i];
    }
  };
  return id;
}

Tape::Id Tape::scale(Id a, double c) {
  Tensor out = val(a);
  for (double& x : out.v) x *= c;
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, c](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += c * g.v[i];
  };
  return id;
}

// --- linear algebra -----------------------------------------------------------

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
    throw ShapeError("matmul: incompatible shapes " + ta.shape_str() + " x " + tb.shape_str());
  Tensor out = Tensor::zeros({ta.rows(), tb.cols()});
  matmul_accumulate(ta.v.data(), ta.rows(), ta.cols(), tb.v.data(), tb.cols(), out.v.data());
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    matmul_acc_nt(g.v.data(), g.rows(), g.cols(), vb.v.data(), vb.rows(), ga.v.data());
    matmul_acc_tn(va.v.data(), va.rows(), va.cols(), g.v.data(), g.cols(), gb.v.data());
  };
  return id;
}

Tape::Id Tape::transpose(Id a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw ShapeError("transpose needs a rank-2 tensor");
  Tensor out = Tensor::zeros({ta.cols(), ta.rows()});
  for (int i = 0; i < ta.rows(); ++i)
    for (int j = 0; j < ta.cols(); ++j) out.at(j, i) = ta.at(i, j);
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    const int r = g.rows(), c = g.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        ga.v[static_cast<size_t>(j) * static_cast<size_t>(r) + static_cast<size_t>(i)] +=
            g.v[static_cast<size_t>(i) * static_cast<size_t>(c) + static_cast<size_t>(j)];
  };
  return id;
}

Tape::Id Tape::linear(Id x, Id W, Id b) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(W);
  const Tensor& tb = val(b);
  if (tw.rank() != 2) throw ShapeError("linear: weight must be rank-2");
  const int in = tw.rows(), out_dim = tw.cols();
  if (tx.cols() != in) throw ShapeError("linear: input width " + tx.shape_str() +
                                        " does not match weight " + tw.shape_str());
  if (tb.rank() != 1 || tb.cols() != out_dim) throw ShapeError("linear: bad bias shape");
  const int rows = tx.rows();
  Tensor out = tx.rank() == 1 ? Tensor::zeros({out_dim}) : Tensor::zeros({rows, out_dim});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < out_dim; ++j)
      out.v[static_cast<size_t>(i) * static_cast<size_t>(out_dim) + static_cast<size_t>(j)] =
          tb.v[static_cast<size_t>(j)];
  matmul_accumulate(tx.v.data(), rows, in, tw.v.data(), out_dim, out.v.data());
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, x, W, b, rows, in, out_dim](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(W);
    Tensor& gx = t.grad_buf(x);
    Tensor& gw = t.grad_buf(W);
    Tensor& gb = t.grad_buf(b);
    matmul_acc_nt(g.v.data(), rows, out_dim, vw.v.data(), in, gx.v.data());
    matmul_acc_tn(vx.v.data(), rows, in, g.v.data(), out_dim, gw.v.data());
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < out_dim; ++j)
        gb.v[static_cast<size_t>(j)] +=
            g.v[static_cast<size_t>(i) * static_cast<size_t>(out_dim) + static_cast<size_t>(j)];
  };
  return id;
}

// --- shaping ------------------------------------------------------------------

Tape::Id Tape::concat(const std::vector<Id>& parts) {
  if (parts.empty()) throw ShapeError("concat needs at least one part");
  Tensor out;
  out.shape = {0};
  for (Id p : parts) {
    const Tensor& tp = val(p);
    if (tp.rank() != 1) throw ShapeError("concat expects rank-1 parts");
    out.shape[0] += tp.shape[0];
    out.v.insert(out.v.end(), tp.v.begin(), tp.v.end());
  }
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, parts](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    size_t off = 0;
    for (Id p : parts) {
      Tensor& gp = t.grad_buf(p);
      for (size_t i = 0; i < gp.v.size(); ++i) gp.v[i] += g.v[off + i];
      off += gp.v.size();
    }
  };
  return id;
}

Tape::Id Tape::concat_rows(const std::vector<Id>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows needs at least one part");
  const int cols = val(parts[0]).cols();
  int rows = 0;
  for (Id p : parts) {
    if (val(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += val(p).rows();
  }
  Tensor out = Tensor::zeros({rows, cols});
  size_t off = 0;
  for (Id p : parts) {
    const Tensor& tp = val(p);
    std::copy(tp.v.begin(), tp.v.end(), out.v.begin() + static_cast<long>(off));
    off += tp.v.size();
  }
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, parts](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    size_t off2 = 0;
    for (Id p : parts) {
      Tensor& gp = t.grad_buf(p);
      for (size_t i = 0; i < gp.v.size(); ++i) gp.v[i] += g.v[off2 + i];
      off2 += gp.v.size();
    }
  };
  return id;
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols needs at least one part");
  const int rows = val(parts[0]).rows();
  int cols = 0;
  for (Id p : parts) {
    if (val(p).rank() != 2 || val(p).rows() != rows)
      throw ShapeError("concat_cols: row mismatch");
    cols += val(p).cols();
  }
  Tensor out = Tensor::zeros({rows, cols});
  int coff = 0;
  for (Id p : parts) {
    const Tensor& tp = val(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < tp.cols(); ++j) out.at(i, coff + j) = tp.at(i, j);
    coff += tp.cols();
  }
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, parts, rows](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    int coff2 = 0;
    for (Id p : parts) {
      Tensor& gp = t.grad_buf(p);
      const int pc = gp.cols();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < pc; ++j)
          gp.v[static_cast<size_t>(i) * static_cast<size_t>(pc) + static_cast<size_t>(j)] +=
              g.at(i, coff2 + j);
      coff2 += pc;
    }
  };
  return id;
}

Tape::Id Tape::slice_cols(Id a, int start, int len) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2 || start < 0 || len <= 0 || start + len > ta.cols())
    throw ShapeError("slice_cols: bad range");
  Tensor out = Tensor::zeros({ta.rows(), len});
  for (int i = 0; i < ta.rows(); ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = ta.at(i, start + j);
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, start, len](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    const int cols = ga.cols();
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < len; ++j)
        ga.v[static_cast<size_t>(i) * static_cast<size_t>(cols) +
             static_cast<size_t>(start + j)] += g.at(i, j);
  };
  return id;
}

Tape::Id Tape::slice_rows(Id a, int start, int len) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2 || start < 0 || len <= 0 || start + len > ta.rows())
    throw ShapeError("slice_rows: bad range");
  const int cols = ta.cols();
  Tensor out = Tensor::zeros({len, cols});
  const size_t off = static_cast<size_t>(start) * static_cast<size_t>(cols);
  std::copy(ta.v.begin() + static_cast<long>(off),
            ta.v.begin() + static_cast<long>(off + out.v.size()), out.v.begin());
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, start, cols](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    const size_t off2 = static_cast<size_t>(start) * static_cast<size_t>(cols);
    for (size_t i = 0; i < g.v.size(); ++i) ga.v[off2 + i] += g.v[i];
  };
  return id;
}

Tape::Id Tape::tile_rows(Id a, int copies) {
  const Tensor& ta = val(a);
  if (ta.rank() != 1 || copies <= 0) throw ShapeError("tile_rows: rank-1 input required");
  const int cols = ta.cols();
  Tensor out = Tensor::zeros({copies, cols});
  for (int i = 0; i < copies; ++i)
    std::copy(ta.v.begin(), ta.v.end(),
              out.v.begin() + static_cast<long>(i) * static_cast<long>(cols));
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, copies, cols](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    for (int i = 0; i < copies; ++i)
      for (int j = 0; j < cols; ++j)
        ga.v[static_cast<size_t>(j)] +=
            g.v[static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j)];
  };
  return id;
}

Tape::Id Tape::row(Id a, int i) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2 || i < 0 || i >= ta.rows()) throw ShapeError("row: bad index");
  Tensor out = Tensor::zeros({ta.cols()});
  for (int j = 0; j < ta.cols(); ++j) out.at(j) = ta.at(i, j);
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, i](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    const int cols = ga.cols();
    for (int j = 0; j < cols; ++j)
      ga.v[static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j)] += g.at(j);
  };
  return id;
}

Tape::Id Tape::gather(Id a, std::vector<int> idx) {
  const Tensor& ta = val(a);
  if (ta.rank() != 1) throw ShapeError("gather expects a rank-1 tensor");
  Tensor out = Tensor::zeros({static_cast<int>(idx.size())});
  for (size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= ta.cols()) throw ShapeError("gather: index out of range");
    out.v[k] = ta.v[static_cast<size_t>(idx[k])];
  }
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, idx = std::move(idx)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    for (size_t k = 0; k < idx.size(); ++k) ga.v[static_cast<size_t>(idx[k])] += g.v[k];
  };
  return id;
}

Tape::Id Tape::pick(Id a, int i) {
  const Tensor& ta = val(a);
  if (ta.rank() != 1 || i < 0 || i >= ta.cols()) throw ShapeError("pick: bad index");
  const Id id = push(Tensor::scalar(ta.at(i)), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, i](Tape& t) {
    t.grad_buf(a).v[static_cast<size_t>(i)] += t.nodes_[static_cast<size_t>(id)].grad.v[0];
  };
  return id;
}

Tape::Id Tape::flatten(Id a) {
  const Tensor& ta = val(a);
  Tensor out = ta;
  out.shape = {static_cast<int>(ta.numel())};
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
  };
  return id;
}

// --- nonlinearities / reductions ------------------------------------------------

Tape::Id Tape::tanh_(Id a) {
  Tensor out = val(a);
  for (double& x : out.v) x = std::tanh(x);
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& y = t.val(id);
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
  };
  return id;
}

Tape::Id Tape::exp_(Id a) {
  Tensor out = val(a);
  for (double& x : out.v) x = std::exp(x);
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& y = t.val(id);
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * y.v[i];
  };
  return id;
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidArgumentError("clamp: lo must not exceed hi");
  Tensor out = val(a);
  for (double& x : out.v) x = std::min(hi, std::max(lo, x));
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, lo, hi](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val(a);
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.v.size(); ++i)
      if (x.v[i] > lo && x.v[i] < hi) ga.v[i] += g.v[i];
  };
  return id;
}

Tape::Id Tape::min2(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ShapeError("min2: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::min(out.v[i], tb.v[i]);
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.v.size(); ++i) {
      if (va.v[i] <= vb.v[i])
        ga.v[i] += g.v[i];
      else
        gb.v[i] += g.v[i];
    }
  };
  return id;
}

Tape::Id Tape::softmax(Id a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 1) throw ShapeError("softmax expects a rank-1 tensor");
  Tensor out = Tensor::zeros(ta.shape);
  softmax_into(ta.v.data(), ta.cols(), out.v.data());
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& y = t.val(id);
    Tensor& ga = t.grad_buf(a);
    double gy = 0.0;
    for (size_t i = 0; i < g.v.size(); ++i) gy += g.v[i] * y.v[i];
    for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += y.v[i] * (g.v[i] - gy);
  };
  return id;
}

Tape::Id Tape::softmax_rows(Id a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw ShapeError("softmax_rows expects a rank-2 tensor");
  Tensor out = Tensor::zeros(ta.shape);
  for (int i = 0; i < ta.rows(); ++i)
    softmax_into(ta.v.data() + static_cast<size_t>(i) * static_cast<size_t>(ta.cols()), ta.cols(),
                 out.v.data() + static_cast<size_t>(i) * static_cast<size_t>(ta.cols()));
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& y = t.val(id);
    Tensor& ga = t.grad_buf(a);
    const int rows = y.rows(), cols = y.cols();
    for (int i = 0; i < rows; ++i) {
      const size_t off = static_cast<size_t>(i) * static_cast<size_t>(cols);
      double gy = 0.0;
      for (int j = 0; j < cols; ++j) gy += g.v[off + static_cast<size_t>(j)] * y.v[off + static_cast<size_t>(j)];
      for (int j = 0; j < cols; ++j)
        ga.v[off + static_cast<size_t>(j)] +=
            y.v[off + static_cast<size_t>(j)] * (g.v[off + static_cast<size_t>(j)] - gy);
    }
  };
  return id;
}

Tape::Id Tape::log_sum_exp(Id a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 1) throw ShapeError("log_sum_exp expects a rank-1 tensor");
  double mx = ta.v[0];
  for (double x : ta.v) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : ta.v) z += std::exp(x - mx);
  const Id id = push(Tensor::scalar(mx + std::log(z)), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad.v[0];
    const Tensor& x = t.val(a);
    Tensor& ga = t.grad_buf(a);
    std::vector<double> p(x.v.size());
    softmax_into(x.v.data(), x.cols(), p.data());
    for (size_t i = 0; i < p.size(); ++i) ga.v[i] += g * p[i];
  };
  return id;
}

Tape::Id Tape::dot(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != 1 || !ta.same_shape(tb)) throw ShapeError("dot: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < ta.v.size(); ++i) s += ta.v[i] * tb.v[i];
  const Id id = push(Tensor::scalar(s), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad.v[0];
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < va.v.size(); ++i) {
      ga.v[i] += g * vb.v[i];
      gb.v[i] += g * va.v[i];
    }
  };
  return id;
}

Tape::Id Tape::sum(Id a) {
  const Tensor& ta = val(a);
  double s = 0.0;
  for (double x : ta.v) s += x;
  const Id id = push(Tensor::scalar(s), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad.v[0];
    Tensor& ga = t.grad_buf(a);
    for (double& x : ga.v) x += g;
  };
  return id;
}

Tape::Id Tape::mean(Id a) {
  const Tensor& ta = val(a);
  double s = 0.0;
  for (double x : ta.v) s += x;
  const double inv = 1.0 / static_cast<double>(ta.numel());
  const Id id = push(Tensor::scalar(s * inv), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, inv](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad.v[0] * inv;
    Tensor& ga = t.grad_buf(a);
    for (double& x : ga.v) x += g;
  };
  return id;
}

Tape::Id Tape::set_norm(Id x, Id gain, Id bias, double eps) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gain);
  const Tensor& tb = val(bias);
  if (tx.rank() != 2) throw ShapeError("set_norm expects a rank-2 input");
  const int rows = tx.rows(), cols = tx.cols();
  if (tg.rank() != 1 || tg.cols() != cols || tb.rank() != 1 || tb.cols() != cols)
    throw ShapeError("set_norm: gain/bias must match the column count");

  Tensor out = Tensor::zeros(tx.shape);
  for (int j = 0; j < cols; ++j) {
    double mu = 0.0;
    for (int i = 0; i < rows; ++i) mu += tx.at(i, j);
    mu /= rows;
    double var = 0.0;
    for (int i = 0; i < rows; ++i) {
      const double d = tx.at(i, j) - mu;
      var += d * d;
    }
    var /= rows;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < rows; ++i)
      out.at(i, j) = tg.at(j) * (tx.at(i, j) - mu) * inv + tb.at(j);
  }
  const Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, x, gain, bias, eps, rows, cols](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& vx = t.val(x);
    const Tensor& vg = t.val(gain);
    Tensor& gx = t.grad_buf(x);
    Tensor& ggain = t.grad_buf(gain);
    Tensor& gbias = t.grad_buf(bias);
    for (int j = 0; j < cols; ++j) {
      double mu = 0.0;
      for (int i = 0; i < rows; ++i) mu += vx.at(i, j);
      mu /= rows;
      double var = 0.0;
      for (int i = 0; i < rows; ++i) {
        const double d = vx.at(i, j) - mu;
        var += d * d;
      }
      var /= rows;
      const double inv = 1.0 / std::sqrt(var + eps);
      double dvar = 0.0, dmu = 0.0;
      for (int i = 0; i < rows; ++i) {
        const double xc = vx.at(i, j) - mu;
        const double gij = g.at(i, j);
        ggain.v[static_cast<size_t>(j)] += gij * xc * inv;
        gbias.v[static_cast<size_t>(j)] += gij;
        const double dxhat = gij * vg.at(j);
        dvar += dxhat * xc * (-0.5) * inv * inv * inv;
        dmu += -dxhat * inv;
      }
      for (int i = 0; i < rows; ++i) {
        const double xc = vx.at(i, j) - mu;
        const double dxhat = g.at(i, j) * vg.at(j);
        gx.at(i, j) += dxhat * inv + dvar * 2.0 * xc / rows + dmu / rows;
      }
    }
  };
  return id;
}

}  // namespace cqsched::nn
