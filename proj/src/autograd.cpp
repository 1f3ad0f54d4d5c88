#include "patchtts/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace patchtts {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) { return ConstMap(t.data.data(), t.rows(), t.cols()); }
MutMap view(Tensor& t) { return MutMap(t.data.data(), t.rows(), t.cols()); }

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

Graph& graph_of(Var a) {
  require(a.valid(), "op on an empty Var");
  return a.graph();
}

// dfdx(x, y) is the derivative given input x and output y.
template <typename F, typename D>
Var unary_elementwise(const char* op, Var a, F&& fwd, D dfdx) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.data) v = fwd(v);
  const int ia = a.id();
  return g.emit(op, std::move(out), {a}, [ia, dfdx](Graph& gr, int self) {
    if (!gr.needs_grad(ia)) return;
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(self);
    const Tensor& gy = gr.grad(self);
    Tensor& gx = gr.grad(ia);
    for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i] * dfdx(x.data[i], y.data[i]);
  });
}

double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor t) {
  if (!t.all_finite()) throw NumericError("non-finite constant");
  nodes_.push_back(Node{std::move(t), {}, nullptr, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{{}, {}, &p, record_, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Graph::value(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.param ? n.param->value : n.value;
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.param) return n.param->grad;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

Var Graph::emit(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return emit(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::emit(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  bool needs = false;
  if (record_) {
    for (const Var& v : inputs) needs = needs || needs_grad(v.id());
  }
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward() on a non-recording graph");
  require(loss.value().size() == 1, "backward() requires a scalar loss");
  const int root = loss.id();
  if (!needs_grad(root)) return;
  grad(root).data[0] += 1.0;
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

// --- linear algebra ----------------------------------------------------------

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const int m = trans_a ? A.cols() : A.rows();
  const int k = trans_a ? A.rows() : A.cols();
  const int kb = trans_b ? B.cols() : B.rows();
  const int n = trans_b ? B.rows() : B.cols();
  if (k != kb) throw std::invalid_argument("matmul: inner dimensions differ " + A.shape_str() + " x " + B.shape_str());
  Tensor out = Tensor::matrix(m, n);
  auto C = view(out);
  if (!trans_a && !trans_b) C.noalias() = view(A) * view(B);
  else if (!trans_a && trans_b) C.noalias() = view(A) * view(B).transpose();
  else if (trans_a && !trans_b) C.noalias() = view(A).transpose() * view(B);
  else C.noalias() = view(A).transpose() * view(B).transpose();

  const int ia = a.id(), ib = b.id();
  return g.emit("matmul", std::move(out), {a, b}, [ia, ib, trans_a, trans_b](Graph& gr, int self) {
    auto dC = view(gr.grad(self));
    const auto Av = view(gr.value(ia));
    const auto Bv = view(gr.value(ib));
    if (gr.needs_grad(ia)) {
      auto dA = view(gr.grad(ia));
      if (!trans_a && !trans_b) dA.noalias() += dC * Bv.transpose();
      else if (!trans_a && trans_b) dA.noalias() += dC * Bv;
      else if (trans_a && !trans_b) dA.noalias() += Bv * dC.transpose();
      else dA.noalias() += Bv.transpose() * dC.transpose();
    }
    if (gr.needs_grad(ib)) {
      auto dB = view(gr.grad(ib));
      if (!trans_a && !trans_b) dB.noalias() += Av.transpose() * dC;
      else if (!trans_a && trans_b) dB.noalias() += dC.transpose() * Av;
      else if (trans_a && !trans_b) dB.noalias() += Av * dC;
      else dB.noalias() += dC.transpose() * Av.transpose();
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a);
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
  const int ia = a.id(), ib = b.id();
  return g.emit("add", std::move(out), {a, b}, [ia, ib](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    for (int id : {ia, ib}) {
      if (!gr.needs_grad(id)) continue;
      Tensor& gx = gr.grad(id);
      for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i];
    }
  });
}

Var add_row(Var x, Var row) {
  Graph& g = graph_of(x);
  const Tensor& R = row.value();
  require(R.rows() == 1 && R.cols() == x.cols(), "add_row: row must be 1 x cols");
  Tensor out = x.value();
  const int c = out.cols();
  for (int r = 0; r < out.rows(); ++r)
    for (int j = 0; j < c; ++j) out(r, j) += R.data[static_cast<size_t>(j)];
  const int ix = x.id(), ir = row.id();
  return g.emit("add_row", std::move(out), {x, row}, [ix, ir](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    if (gr.needs_grad(ix)) {
      Tensor& gx = gr.grad(ix);
      for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i];
    }
    if (gr.needs_grad(ir)) {
      Tensor& grow = gr.grad(ir);
      const int cols = gy.cols();
      for (int r = 0; r < gy.rows(); ++r)
        for (int j = 0; j < cols; ++j) grow.data[static_cast<size_t>(j)] += gy(r, j);
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a);
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
  const int ia = a.id(), ib = b.id();
  return g.emit("mul", std::move(out), {a, b}, [ia, ib](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& A = gr.value(ia);
    const Tensor& B = gr.value(ib);
    if (gr.needs_grad(ia)) {
      Tensor& ga = gr.grad(ia);
      for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += gy.data[i] * B.data[i];
    }
    if (gr.needs_grad(ib)) {
      Tensor& gb = gr.grad(ib);
      for (size_t i = 0; i < gb.size(); ++i) gb.data[i] += gy.data[i] * A.data[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary_elementwise("scale", a, [s](double x) { return x * s; },
                           [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary_elementwise("add_scalar", a, [s](double x) { return x + s; },
                           [](double, double) { return 1.0; });
}

Var reciprocal(Var a) {
  return unary_elementwise("reciprocal", a, [](double x) { return 1.0 / x; },
                           [](double, double y) { return -y * y; });
}

Var exp(Var a) {
  return unary_elementwise("exp", a, [](double x) { return std::exp(x); },
                           [](double, double y) { return y; });
}

Var log(Var a) {
  static constexpr double kFloor = 1e-12;
  return unary_elementwise("log", a, [](double x) { return std::log(std::max(x, kFloor)); },
                           [](double x, double) { return x > kFloor ? 1.0 / x : 0.0; });
}

Var softplus(Var a) {
  return unary_elementwise("softplus", a, softplus_scalar,
                           [](double x, double) { return sigmoid(x); });
}

Var log_odds(Var logp, double lo, double hi) {
  auto clamp = [lo, hi](double x) { return std::clamp(std::exp(x), lo, hi); };
  return unary_elementwise(
      "log_odds", logp, [clamp](double x) { const double p = clamp(x); return std::log(p) - std::log1p(-p); },
      [lo, hi](double x, double) {
        const double p = std::exp(x);
        if (p <= lo || p >= hi) return 0.0;
        return 1.0 / (1.0 - p);
      });
}

Var mish(Var a) {
  return unary_elementwise("mish", a, [](double x) { return patchtts::mish(x); },
                           [](double x, double) { return mish_grad(x); });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  const int n = X.rows(), c = X.cols();
  require(gain.value().size() == static_cast<size_t>(c) && bias.value().size() == static_cast<size_t>(c),
          "layer_norm: gain/bias width mismatch");
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  Tensor out(X.shape, 0.0);
  std::vector<double> xhat(X.size());
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) {
    auto xr = X.row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= c;
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int j = 0; j < c; ++j) {
      const double h = (xr[static_cast<size_t>(j)] - mu) * is;
      xhat[static_cast<size_t>(r) * c + j] = h;
      out(r, j) = h * G.data[static_cast<size_t>(j)] + B.data[static_cast<size_t>(j)];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.emit("layer_norm", std::move(out), {x, gain, bias},
                [ix, ig, ib, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, int self) {
                  const Tensor& gy = gr.grad(self);
                  const Tensor& G = gr.value(ig);
                  if (gr.needs_grad(ig)) {
                    Tensor& gg = gr.grad(ig);
                    for (int r = 0; r < n; ++r)
                      for (int j = 0; j < c; ++j)
                        gg.data[static_cast<size_t>(j)] += gy(r, j) * xhat[static_cast<size_t>(r) * c + j];
                  }
                  if (gr.needs_grad(ib)) {
                    Tensor& gb = gr.grad(ib);
                    for (int r = 0; r < n; ++r)
                      for (int j = 0; j < c; ++j) gb.data[static_cast<size_t>(j)] += gy(r, j);
                  }
                  if (gr.needs_grad(ix)) {
                    Tensor& gx = gr.grad(ix);
                    std::vector<double> dh(static_cast<size_t>(c));
                    for (int r = 0; r < n; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (int j = 0; j < c; ++j) {
                        const double d = gy(r, j) * G.data[static_cast<size_t>(j)];
                        dh[static_cast<size_t>(j)] = d;
                        m1 += d;
                        m2 += d * xhat[static_cast<size_t>(r) * c + j];
                      }
                      m1 /= c;
                      m2 /= c;
                      const double is = inv_std[static_cast<size_t>(r)];
                      for (int j = 0; j < c; ++j)
                        gx(r, j) += is * (dh[static_cast<size_t>(j)] - m1 - xhat[static_cast<size_t>(r) * c + j] * m2);
                    }
                  }
                });
}

Var softmax_rows(Var x, Mask mask) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  const int n = X.rows(), c = X.cols();
  Tensor out(X.shape, 0.0);
  for (int r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (mask.allowed(r, j)) mx = std::max(mx, X(r, j));
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax_rows: row fully masked");
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      if (!mask.allowed(r, j)) continue;
      const double e = std::exp(X(r, j) - mx);
      out(r, j) = e;
      z += e;
    }
    for (int j = 0; j < c; ++j) out(r, j) /= z;
  }
  const int ix = x.id();
  return g.emit("softmax_rows", std::move(out), {x}, [ix, n, c](Graph& gr, int self) {
    if (!gr.needs_grad(ix)) return;
    const Tensor& Y = gr.value(self);
    const Tensor& gy = gr.grad(self);
    Tensor& gx = gr.grad(ix);
    for (int r = 0; r < n; ++r) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gy(r, j) * Y(r, j);
      for (int j = 0; j < c; ++j) gx(r, j) += Y(r, j) * (gy(r, j) - dot);
    }
  });
}

Var block_causal_attention(Var q, Var k, Var v, int block, int n_heads) {
  Graph& g = graph_of(q);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const int R = Q.rows(), d = Q.cols();
  require(K.same_shape(Q) && V.same_shape(Q), "block_causal_attention: q, k, v shapes differ");
  require(block > 0 && R % block == 0, "block_causal_attention: rows must be a multiple of block");
  require(n_heads > 0 && d % n_heads == 0, "block_causal_attention: width not divisible by heads");
  const int dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[(h * R + i) * block + jj] for key row (i / block) * block + jj.
  std::vector<double> probs(static_cast<size_t>(n_heads) * R * block, 0.0);
  Tensor out = Tensor::matrix(R, d);
  const double* qd = Q.data.data();
  const double* kd = K.data.data();
  const double* vd = V.data.data();
  for (int h = 0; h < n_heads; ++h) {
    const int c0 = h * dh;
    for (int i = 0; i < R; ++i) {
      const int base = (i / block) * block;
      const int len = i - base + 1;
      double* p = probs.data() + (static_cast<size_t>(h) * R + i) * block;
      const double* qi = qd + static_cast<size_t>(i) * d + c0;
      double mx = -std::numeric_limits<double>::infinity();
      for (int jj = 0; jj < len; ++jj) {
        const double* kj = kd + static_cast<size_t>(base + jj) * d + c0;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
        p[jj] = s * sc;
        mx = std::max(mx, p[jj]);
      }
      double z = 0.0;
      for (int jj = 0; jj < len; ++jj) {
        p[jj] = std::exp(p[jj] - mx);
        z += p[jj];
      }
      double* oi = out.data.data() + static_cast<size_t>(i) * d + c0;
      for (int jj = 0; jj < len; ++jj) {
        p[jj] /= z;
        const double* vj = vd + static_cast<size_t>(base + jj) * d + c0;
        for (int c = 0; c < dh; ++c) oi[c] += p[jj] * vj[c];
      }
    }
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return g.emit("block_causal_attention", std::move(out), {q, k, v},
                [iq, ik, iv, R, d, dh, block, n_heads, sc, probs = std::move(probs)](Graph& gr, int self) {
                  const double* gy = gr.grad(self).data.data();
                  const double* qd = gr.value(iq).data.data();
                  const double* kd = gr.value(ik).data.data();
                  const double* vd = gr.value(iv).data.data();
                  double* gq = gr.needs_grad(iq) ? gr.grad(iq).data.data() : nullptr;
                  double* gk = gr.needs_grad(ik) ? gr.grad(ik).data.data() : nullptr;
                  double* gv = gr.needs_grad(iv) ? gr.grad(iv).data.data() : nullptr;
                  std::vector<double> ds(static_cast<size_t>(block));
                  for (int h = 0; h < n_heads; ++h) {
                    const int c0 = h * dh;
                    for (int i = 0; i < R; ++i) {
                      const int base = (i / block) * block;
                      const int len = i - base + 1;
                      const double* p = probs.data() + (static_cast<size_t>(h) * R + i) * block;
                      const double* gi = gy + static_cast<size_t>(i) * d + c0;
                      double dot = 0.0;
                      for (int jj = 0; jj < len; ++jj) {
                        const size_t row = static_cast<size_t>(base + jj) * d + c0;
                        double dp = 0.0;
                        for (int c = 0; c < dh; ++c) dp += gi[c] * vd[row + c];
                        if (gv)
                          for (int c = 0; c < dh; ++c) gv[row + c] += p[jj] * gi[c];
                        ds[static_cast<size_t>(jj)] = dp;
                        dot += p[jj] * dp;
                      }
                      const size_t qrow = static_cast<size_t>(i) * d + c0;
                      for (int jj = 0; jj < len; ++jj) {
                        const double s = p[jj] * (ds[static_cast<size_t>(jj)] - dot) * sc;
                        const size_t row = static_cast<size_t>(base + jj) * d + c0;
                        if (gq)
                          for (int c = 0; c < dh; ++c) gq[qrow + c] += s * kd[row + c];
                        if (gk)
                          for (int c = 0; c < dh; ++c) gk[row + c] += s * qd[qrow + c];
                      }
                    }
                  }
                });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& T = table.value();
  const int c = T.cols();
  require(!ids.empty(), "gather_rows: empty index list");
  Tensor out = Tensor::matrix(static_cast<int>(ids.size()), c);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= T.rows()) throw std::out_of_range("gather_rows: index " + std::to_string(id) + " out of range");
    std::copy_n(T.row(id).begin(), c, out.row(static_cast<int>(i)).begin());
  }
  const int it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return g.emit("gather_rows", std::move(out), {table}, [it, c, idx = std::move(idx)](Graph& gr, int self) {
    if (!gr.needs_grad(it)) return;
    const Tensor& gy = gr.grad(self);
    Tensor& gt = gr.grad(it);
    for (size_t i = 0; i < idx.size(); ++i) {
      auto src = gy.row(static_cast<int>(i));
      auto dst = gt.row(idx[i]);
      for (int j = 0; j < c; ++j) dst[static_cast<size_t>(j)] += src[static_cast<size_t>(j)];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const int c = parts[0].cols();
  int total = 0;
  for (const Var& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch");
    total += p.rows();
  }
  Tensor out = Tensor::matrix(total, c);
  std::vector<int> ids, offsets;
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<ptrdiff_t>(off) * c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.rows();
  }
  return g.emit("concat_rows", std::move(out), parts, [ids, offsets, c](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    for (size_t k = 0; k < ids.size(); ++k) {
      if (!gr.needs_grad(ids[k])) continue;
      Tensor& gx = gr.grad(ids[k]);
      const auto base = gy.data.begin() + static_cast<ptrdiff_t>(offsets[k]) * c;
      for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += base[static_cast<ptrdiff_t>(i)];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const int n = parts[0].rows();
  int total = 0;
  for (const Var& p : parts) {
    require(p.rows() == n, "concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::vector<int> ids, offsets, widths;
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const int w = v.cols();
    for (int r = 0; r < n; ++r) std::copy_n(v.row(r).begin(), w, out.row(r).begin() + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return g.emit("concat_cols", std::move(out), parts, [ids, offsets, widths, n](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    for (size_t k = 0; k < ids.size(); ++k) {
      if (!gr.needs_grad(ids[k])) continue;
      Tensor& gx = gr.grad(ids[k]);
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < widths[k]; ++j) gx(r, j) += gy(r, offsets[k] + j);
    }
  });
}

Var slice_rows(Var x, int start, int count) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require(start >= 0 && count > 0 && start + count <= X.rows(), "slice_rows: range out of bounds");
  const int c = X.cols();
  Tensor out = Tensor::matrix(count, c);
  std::copy_n(X.data.begin() + static_cast<ptrdiff_t>(start) * c, static_cast<size_t>(count) * c, out.data.begin());
  const int ix = x.id();
  return g.emit("slice_rows", std::move(out), {x}, [ix, start, c](Graph& gr, int self) {
    if (!gr.needs_grad(ix)) return;
    const Tensor& gy = gr.grad(self);
    Tensor& gx = gr.grad(ix);
    const size_t base = static_cast<size_t>(start) * c;
    for (size_t i = 0; i < gy.size(); ++i) gx.data[base + i] += gy.data[i];
  });
}

Var slice_cols(Var x, int start, int count) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require(start >= 0 && count > 0 && start + count <= X.cols(), "slice_cols: range out of bounds");
  const int n = X.rows();
  Tensor out = Tensor::matrix(n, count);
  for (int r = 0; r < n; ++r) std::copy_n(X.row(r).begin() + start, count, out.row(r).begin());
  const int ix = x.id();
  return g.emit("slice_cols", std::move(out), {x}, [ix, start, count, n](Graph& gr, int self) {
    if (!gr.needs_grad(ix)) return;
    const Tensor& gy = gr.grad(self);
    Tensor& gx = gr.grad(ix);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < count; ++j) gx(r, start + j) += gy(r, j);
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  Graph& g = graph_of(logits);
  const Tensor& L = logits.value();
  const int n = L.rows(), c = L.cols();
  require(static_cast<int>(targets.size()) == n, "cross_entropy_rows: one target per row required");
  Tensor out = Tensor::matrix(n, 1);
  Tensor probs(L.shape, 0.0);
  for (int r = 0; r < n; ++r) {
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= c) throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    auto lr = L.row(r);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(lr[static_cast<size_t>(j)] - mx);
      probs(r, j) = e;
      z += e;
    }
    for (int j = 0; j < c; ++j) probs(r, j) /= z;
    out(r, 0) = mx + std::log(z) - lr[static_cast<size_t>(t)];
  }
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return g.emit("cross_entropy_rows", std::move(out), {logits},
                [il, n, c, tg = std::move(tg), probs = std::move(probs)](Graph& gr, int self) {
                  if (!gr.needs_grad(il)) return;
                  const Tensor& gy = gr.grad(self);
                  Tensor& gl = gr.grad(il);
                  for (int r = 0; r < n; ++r) {
                    const double w = gy(r, 0);
                    if (w == 0.0) continue;
                    for (int j = 0; j < c; ++j) gl(r, j) += w * probs(r, j);
                    gl(r, tg[static_cast<size_t>(r)]) -= w;
                  }
                });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().data) s += v;
  const int ix = x.id();
  return g.emit("sum", Tensor::scalar(s), {x}, [ix](Graph& gr, int self) {
    if (!gr.needs_grad(ix)) return;
    const double gy = gr.grad(self).data[0];
    for (double& v : gr.grad(ix).data) v += gy;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

double cross_entropy(std::span<const double> logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw std::out_of_range("cross_entropy: target out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - logits[static_cast<size_t>(target)];
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace patchtts
