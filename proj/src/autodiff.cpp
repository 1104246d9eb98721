#include "hpnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "hpnet/errors.hpp"
#include "hpnet/kernels.hpp"

namespace hpnet::ad {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Tensor grad_of(Var v) {
  const Tensor& g = v.grad();
  return g.size() == v.value().size() ? g : Tensor(v.shape(), 0.0);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool rg = false;
  for (const auto& v : inputs) {
    if (v.tape != this) throw Error("autodiff: input recorded on a different tape");
    rg = rg || requires_grad(v.id);
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, rg, rg ? std::move(fn) : nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::grad(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  return n.grad.empty() && !n.value.empty() ? empty_ : n.grad;
}

Tensor& Tape::grad_buffer(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward() needs a scalar root, got " + shape_str(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (seed.size() != root.value().size()) throw DimensionError("backward seed does not match root shape");
  for (auto& n : nodes_) n.grad = Tensor{};
  if (!requires_grad(root.id)) return;
  grad_buffer(root.id).values() = seed.values();
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("autodiff: operands live on different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void axpy(Tensor& dst, const Tensor& src, double alpha = 1.0) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += alpha * s[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out(Shape{m, n});
  kernels::gemm(A.data(), B.data(), nullptr, out.data(), m, k, n);
  Var ins[] = {a, b};
  return a.tape->record(std::move(out), ins, [a, b, m, k, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) kernels::gemm_a_bt_acc(g.data(), t.value(b.id).data(), t.grad_buffer(a.id).data(), m, k, n);
    if (t.requires_grad(b.id)) kernels::gemm_at_b_acc(t.value(a.id).data(), g.data(), t.grad_buffer(b.id).data(), m, k, n);
  });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  require_same_tape(x, w);
  const auto& X = x.value();
  const auto& W = w.value();
  if (W.rank() != 2 || X.cols() != W.dim(0)) {
    throw DimensionError("linear: input " + shape_str(X.shape()) + " does not match weight " + shape_str(W.shape()));
  }
  const std::size_t m = X.rows(), k = W.dim(0), n = W.dim(1);
  if (b && (b->value().size() != n)) {
    throw DimensionError("linear: bias " + shape_str(b->shape()) + " does not match weight " + shape_str(W.shape()));
  }
  Shape out_shape = X.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  kernels::gemm(X.data(), W.data(), b ? b->value().data() : nullptr, out.data(), m, k, n);
  std::vector<Var> ins{x, w};
  if (b) ins.push_back(*b);
  return x.tape->record(std::move(out), ins, [x, w, b, m, k, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x.id)) kernels::gemm_a_bt_acc(g.data(), t.value(w.id).data(), t.grad_buffer(x.id).data(), m, k, n);
    if (t.requires_grad(w.id)) kernels::gemm_at_b_acc(t.value(x.id).data(), g.data(), t.grad_buffer(w.id).data(), m, k, n);
    if (b && t.requires_grad(b->id)) {
      double* gb = t.grad_buffer(b->id).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g.data()[i * n + j];
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  axpy(out, b.value());
  Var ins[] = {a, b};
  return a.tape->record(std::move(out), ins, [a, b](Tape& t, int self) {
    if (t.requires_grad(a.id)) axpy(t.grad_buffer(a.id), t.grad(self));
    if (t.requires_grad(b.id)) axpy(t.grad_buffer(b.id), t.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  axpy(out, b.value(), -1.0);
  Var ins[] = {a, b};
  return a.tape->record(std::move(out), ins, [a, b](Tape& t, int self) {
    if (t.requires_grad(a.id)) axpy(t.grad_buffer(a.id), t.grad(self));
    if (t.requires_grad(b.id)) axpy(t.grad_buffer(b.id), t.grad(self), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Var ins[] = {a, b};
  return a.tape->record(std::move(out), ins, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * t.value(b.id)[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * t.value(a.id)[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  Var ins[] = {a};
  return a.tape->record(std::move(out), ins, [a, s](Tape& t, int self) { axpy(t.grad_buffer(a.id), t.grad(self), s); });
}

Var silu(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<double> sig(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sig[i] = 1.0 / (1.0 + std::exp(-x[i]));
    out[i] = x[i] * sig[i];
  }
  Var ins[] = {a};
  return a.tape->record(std::move(out), ins, [a, sig = std::move(sig)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a.id);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sig[i] * (1.0 + x[i] * (1.0 - sig[i]));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw DimensionError("layer_norm: affine params do not match width " + std::to_string(cols));
  }
  Tensor out(X.shape());
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  kernels::layer_norm(X.data(), gamma.value().data(), beta.value().data(), out.data(), xhat->data(), inv_std->data(),
                      rows, cols, eps);
  Var ins[] = {x, gamma, beta};
  return x.tape->record(std::move(out), ins, [x, gamma, beta, xhat, inv_std, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& gm = t.value(gamma.id);
    if (t.requires_grad(gamma.id)) {
      Tensor& gg = t.grad_buffer(gamma.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) gg[j] += g[r * cols + j] * (*xhat)[r * cols + j];
    }
    if (t.requires_grad(beta.id)) {
      Tensor& gb = t.grad_buffer(beta.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
    }
    if (t.requires_grad(x.id)) {
      Tensor& gx = t.grad_buffer(x.id);
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double dh = g[r * cols + j] * gm[j];
          s1 += dh;
          s2 += dh * (*xhat)[r * cols + j];
        }
        const double is = (*inv_std)[r];
        for (std::size_t j = 0; j < cols; ++j) {
          const double dh = g[r * cols + j] * gm[j];
          gx[r * cols + j] += is * (dh - inv_n * s1 - (*xhat)[r * cols + j] * inv_n * s2);
        }
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  Var ins[] = {a};
  return a.tape->record(std::move(out), ins, [a](Tape& t, int self) { axpy(t.grad_buffer(a.id), t.grad(self)); });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Var ins[] = {a};
  return a.tape->record(Tensor::scalar(s), ins, [a](Tape& t, int self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(a.id).values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var weighted_sum(Var a, std::span<const double> weights) {
  if (weights.size() != a.value().size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for tensor " +
                         shape_str(a.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.value()[i];
  std::vector<double> w(weights.begin(), weights.end());
  Var ins[] = {a};
  return a.tape->record(Tensor::scalar(s), ins, [a, w = std::move(w)](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < w.size(); ++i) ga[i] += g * w[i];
  });
}

Var gather_rows(Var x, std::span<const int> index) {
  const Tensor& X = x.value();
  const std::size_t cols = X.cols(), rows = X.rows();
  Tensor out(Shape{index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto r = static_cast<std::size_t>(index[i]);
    if (index[i] < 0 || r >= rows) throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range");
    std::copy_n(X.data() + r * cols, cols, out.data() + i * cols);
  }
  std::vector<int> idx(index.begin(), index.end());
  Var ins[] = {x};
  return x.tape->record(std::move(out), ins, [x, idx = std::move(idx), cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gx.data() + static_cast<std::size_t>(idx[i]) * cols;
      const double* src = g.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
}

Var scale_rows(Var x, std::span<const double> factor) {
  const Tensor& X = x.value();
  const std::size_t cols = X.cols();
  if (factor.size() != X.rows()) throw DimensionError("scale_rows: factor count does not match rows");
  Tensor out = X;
  for (std::size_t r = 0; r < factor.size(); ++r)
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] *= factor[r];
  std::vector<double> f(factor.begin(), factor.end());
  Var ins[] = {x};
  return x.tape->record(std::move(out), ins, [x, f = std::move(f), cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < f.size(); ++r)
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += f[r] * g[r * cols + j];
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rows() != B.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  const std::size_t rows = A.rows(), ca = A.cols(), cb = B.cols();
  Tensor out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(B.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  Var ins[] = {a, b};
  return a.tape->record(std::move(out), ins, [a, b, rows, ca, cb](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
    }
  });
}

Var softmax(Var x, std::span<const std::uint8_t> mask) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (!mask.empty() && mask.size() != X.size()) throw DimensionError("softmax: mask does not match input shape");
  Tensor out(X.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask.empty() && !mask[r * cols + j]) continue;
      const double v = X[r * cols + j];
      if (!std::isfinite(v)) throw NumericError("softmax: non-finite input in row " + std::to_string(r));
      mx = std::max(mx, v);
      any = true;
    }
    if (!any) throw MaskingError("softmax: row " + std::to_string(r) + " is fully masked");
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask.empty() && !mask[r * cols + j]) continue;
      out[r * cols + j] = std::exp(X[r * cols + j] - mx);
      z += out[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= z;
  }
  Var ins[] = {x};
  return x.tape->record(std::move(out), ins, [x, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

Var dropout(Var x, std::span<const std::uint8_t> keep, double rate) {
  if (keep.size() != x.value().size()) throw DimensionError("dropout: keep mask does not match input");
  std::vector<double> f(keep.size());
  const double s = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < keep.size(); ++i) f[i] = keep[i] ? s : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < f.size(); ++i) out[i] *= f[i];
  Var ins[] = {x};
  return x.tape->record(std::move(out), ins, [x, f = std::move(f)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < f.size(); ++i) gx[i] += f[i] * g[i];
  });
}

Var huber_rows(Var pred, const Tensor& target, double delta) {
  const Tensor& P = pred.value();
  if (P.size() != target.size() || P.cols() != target.cols()) {
    throw DimensionError("huber: prediction " + shape_str(P.shape()) + " vs target " + shape_str(target.shape()));
  }
  const std::size_t rows = P.rows(), cols = P.cols();
  Tensor out(Shape{rows}, 0.0);
  std::vector<double> dloss(P.size());
  const double inv = 1.0 / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = P[r * cols + j] - target[r * cols + j];
      const double ae = std::abs(e);
      if (ae <= delta) {
        s += 0.5 * e * e;
        dloss[r * cols + j] = e * inv;
      } else {
        s += delta * (ae - 0.5 * delta);
        dloss[r * cols + j] = (e > 0 ? delta : -delta) * inv;
      }
    }
    out[r] = s * inv;
  }
  Var ins[] = {pred};
  return pred.tape->record(std::move(out), ins, [pred, dloss = std::move(dloss), cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gp = t.grad_buffer(pred.id);
    for (std::size_t i = 0; i < dloss.size(); ++i) gp[i] += g[i / cols] * dloss[i];
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> target) {
  const Tensor& L = logits.value();
  const std::size_t rows = L.rows(), cols = L.cols();
  if (target.size() != rows) throw DimensionError("cross_entropy: target count does not match rows");
  Tensor out(Shape{rows});
  std::vector<double> prob(L.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, L[r * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(L[r * cols + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) prob[r * cols + j] = std::exp(L[r * cols + j] - lse);
    const auto k = static_cast<std::size_t>(target[r]);
    if (target[r] < 0 || k >= cols) throw DimensionError("cross_entropy: target out of range");
    out[r] = lse - L[r * cols + k];
  }
  std::vector<int> tg(target.begin(), target.end());
  Var ins[] = {logits};
  return logits.tape->record(std::move(out), ins,
                             [logits, prob = std::move(prob), tg = std::move(tg), cols](Tape& t, int self) {
                               const Tensor& g = t.grad(self);
                               Tensor& gl = t.grad_buffer(logits.id);
                               for (std::size_t r = 0; r < tg.size(); ++r) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                   const double onehot = static_cast<int>(j) == tg[r] ? 1.0 : 0.0;
                                   gl[r * cols + j] += g[r] * (prob[r * cols + j] - onehot);
                                 }
                               }
                             });
}

Var graph_attention(Var q, Var key_src, std::optional<Var> key_edge, Var val_src, std::optional<Var> val_edge,
                    const EdgeList& edges, std::size_t heads, std::vector<double>* trace) {
  const Tensor& Q = q.value();
  const std::size_t dim = Q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("attention: head count " + std::to_string(heads) + " does not divide width " +
                         std::to_string(dim));
  }
  if (edges.num_queries() != Q.rows()) throw DimensionError("attention: edge list does not match query count");
  if (key_src.value().cols() != dim || val_src.value().cols() != dim ||
      (key_edge && key_edge->value().cols() != dim) || (val_edge && val_edge->value().cols() != dim)) {
    throw DimensionError("attention: key/value width must equal query width " + std::to_string(dim));
  }
  if (key_edge.has_value() != val_edge.has_value()) throw DimensionError("attention: edge keys and values must pair");
  const std::size_t num_src = key_src.value().rows();
  for (int s : edges.src)
    if (s < 0 || static_cast<std::size_t>(s) >= num_src || static_cast<std::size_t>(s) >= val_src.value().rows())
      throw DimensionError("attention: source index out of range");
  if (key_edge) {
    for (int e : edges.eid)
      if (e < 0 || static_cast<std::size_t>(e) >= key_edge->value().rows())
        throw DimensionError("attention: edge index out of range");
  }

  auto make_args = [&edges, heads, dim](const Tape& t, Var qv, Var ks, std::optional<Var> ke, Var vs,
                                         std::optional<Var> ve) {
    kernels::AttentionArgs a;
    a.num_queries = t.value(qv.id).rows();
    a.dim = dim;
    a.heads = heads;
    a.q = t.value(qv.id).data();
    a.key_src = t.value(ks.id).data();
    a.key_edge = ke ? t.value(ke->id).data() : nullptr;
    a.val_src = t.value(vs.id).data();
    a.val_edge = ve ? t.value(ve->id).data() : nullptr;
    a.edges = kernels::EdgeCsr{edges.offsets, edges.src, edges.eid};
    return a;
  };

  Tensor out(Shape{Q.rows(), dim});
  auto weights = std::make_shared<std::vector<double>>(edges.num_edges() * heads);
  kernels::attention_forward(make_args(*q.tape, q, key_src, key_edge, val_src, val_edge), out.data(), weights->data());
  if (trace) {
    trace->assign(edges.num_edges(), 0.0);
    for (std::size_t e = 0; e < edges.num_edges(); ++e) {
      double s = 0.0;
      for (std::size_t h = 0; h < heads; ++h) s += (*weights)[e * heads + h];
      (*trace)[e] = s / static_cast<double>(heads);
    }
  }
  // The edge list must outlive backward(); keep a private copy.
  auto edges_copy = std::make_shared<EdgeList>(edges);
  std::vector<Var> ins{q, key_src, val_src};
  if (key_edge) ins.push_back(*key_edge);
  if (val_edge) ins.push_back(*val_edge);
  return q.tape->record(std::move(out), ins,
                        [q, key_src, key_edge, val_src, val_edge, weights, edges_copy, heads, dim](Tape& t, int self) {
                          kernels::AttentionArgs a;
                          a.num_queries = t.value(q.id).rows();
                          a.dim = dim;
                          a.heads = heads;
                          a.q = t.value(q.id).data();
                          a.key_src = t.value(key_src.id).data();
                          a.key_edge = key_edge ? t.value(key_edge->id).data() : nullptr;
                          a.val_src = t.value(val_src.id).data();
                          a.val_edge = val_edge ? t.value(val_edge->id).data() : nullptr;
                          a.edges = kernels::EdgeCsr{edges_copy->offsets, edges_copy->src, edges_copy->eid};
                          auto buf = [&t](std::optional<Var> v) -> double* {
                            return v && t.requires_grad(v->id) ? t.grad_buffer(v->id).data() : nullptr;
                          };
                          kernels::AttentionGrads g;
                          g.q = buf(q);
                          g.key_src = buf(key_src);
                          g.key_edge = buf(key_edge);
                          g.val_src = buf(val_src);
                          g.val_edge = buf(val_edge);
                          kernels::attention_backward(a, weights->data(), t.grad(self).data(), g);
                        });
}

}  // namespace hpnet::ad
