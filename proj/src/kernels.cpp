#include "hpnet/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#ifdef HPNET_HAVE_OPENMP
#include <omp.h>
#endif

namespace hpnet::kernels {
namespace {

inline void gemm_row(const double* __restrict a, const double* __restrict b, const double* __restrict bias,
                     double* __restrict c, std::size_t i, std::size_t k, std::size_t n) {
  double* __restrict ci = c + i * n;
  if (bias) {
    std::copy(bias, bias + n, ci);
  } else {
    std::fill(ci, ci + n, 0.0);
  }
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* __restrict bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

// db[p, :] += a[i, p] * dc[i, :] for rows i in [i0, i1), ascending i.
inline void at_b_rows(const double* __restrict a, const double* __restrict dc, double* __restrict db,
                      std::size_t i0, std::size_t i1, std::size_t p0, std::size_t p1, std::size_t k, std::size_t n) {
  for (std::size_t i = i0; i < i1; ++i) {
    const double* __restrict dci = dc + i * n;
    for (std::size_t p = p0; p < p1; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* __restrict dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += av * dci[j];
    }
  }
}

// da[i, :] += dc[i, :] * b^T with bt = b^T laid out [n x k].
inline void a_bt_row(const double* __restrict dc, const double* __restrict bt, double* __restrict da, std::size_t i,
                     std::size_t k, std::size_t n) {
  const double* __restrict dci = dc + i * n;
  double* __restrict dai = da + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double g = dci[j];
    const double* __restrict btj = bt + j * k;
    for (std::size_t p = 0; p < k; ++p) dai[p] += g * btj[p];
  }
}

std::vector<double> transpose(const double* b, std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  return bt;
}

inline void layer_norm_row(const double* x, const double* gamma, const double* beta, double* y, double* xhat,
                           double* inv_std, std::size_t r, std::size_t cols, double eps) {
  const double* xr = x + r * cols;
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = xr[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  inv_std[r] = is;
  for (std::size_t j = 0; j < cols; ++j) {
    const double h = (xr[j] - mean) * is;
    xhat[r * cols + j] = h;
    y[r * cols + j] = h * gamma[j] + beta[j];
  }
}

inline double key_at(const AttentionArgs& a, int e, std::size_t col) {
  double v = a.key_src[static_cast<std::size_t>(a.edges.src[e]) * a.dim + col];
  if (a.key_edge) v += a.key_edge[static_cast<std::size_t>(a.edges.eid[e]) * a.dim + col];
  return v;
}

inline double val_at(const AttentionArgs& a, int e, std::size_t col) {
  double v = a.val_src[static_cast<std::size_t>(a.edges.src[e]) * a.dim + col];
  if (a.val_edge) v += a.val_edge[static_cast<std::size_t>(a.edges.eid[e]) * a.dim + col];
  return v;
}

// Softmax-weighted mixture for one query over its CSR edge range.
void attend_query(const AttentionArgs& a, std::size_t i, double* out, double* weights) {
  const int begin = a.edges.offsets[i];
  const int end = a.edges.offsets[i + 1];
  double* oi = out + i * a.dim;
  std::fill(oi, oi + a.dim, 0.0);
  if (begin == end) return;
  const std::size_t dh = a.dim / a.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qi = a.q + i * a.dim;
  for (std::size_t h = 0; h < a.heads; ++h) {
    const std::size_t c0 = h * dh;
    double mx = -INFINITY;
    for (int e = begin; e < end; ++e) {
      double s = 0.0;
      for (std::size_t j = 0; j < dh; ++j) s += qi[c0 + j] * key_at(a, e, c0 + j);
      s *= scale;
      weights[static_cast<std::size_t>(e) * a.heads + h] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (int e = begin; e < end; ++e) {
      double& w = weights[static_cast<std::size_t>(e) * a.heads + h];
      w = std::exp(w - mx);
      z += w;
    }
    for (int e = begin; e < end; ++e) {
      double& w = weights[static_cast<std::size_t>(e) * a.heads + h];
      w /= z;
      for (std::size_t j = 0; j < dh; ++j) oi[c0 + j] += w * val_at(a, e, c0 + j);
    }
  }
}

// Gradient for one query: accumulates dq in place and writes per-edge key and
// value gradients into dk/dv rows (indexed by edge).
void attend_query_backward(const AttentionArgs& a, std::size_t i, const double* weights, const double* dout,
                           double* dq, double* dk, double* dv) {
  const int begin = a.edges.offsets[i];
  const int end = a.edges.offsets[i + 1];
  if (begin == end) return;
  const std::size_t dh = a.dim / a.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qi = a.q + i * a.dim;
  const double* gi = dout + i * a.dim;
  for (std::size_t h = 0; h < a.heads; ++h) {
    const std::size_t c0 = h * dh;
    double wdw = 0.0;
    for (int e = begin; e < end; ++e) {
      const double w = weights[static_cast<std::size_t>(e) * a.heads + h];
      double dw = 0.0;
      for (std::size_t j = 0; j < dh; ++j) dw += gi[c0 + j] * val_at(a, e, c0 + j);
      // stash dw in dk temporarily; overwritten below
      dk[static_cast<std::size_t>(e) * a.dim + c0] = dw;
      wdw += w * dw;
    }
    for (int e = begin; e < end; ++e) {
      const double w = weights[static_cast<std::size_t>(e) * a.heads + h];
      const double dw = dk[static_cast<std::size_t>(e) * a.dim + c0];
      const double ds = w * (dw - wdw) * scale;
      double* dke = dk + static_cast<std::size_t>(e) * a.dim + c0;
      double* dve = dv + static_cast<std::size_t>(e) * a.dim + c0;
      for (std::size_t j = 0; j < dh; ++j) {
        if (dq) dq[i * a.dim + c0 + j] += ds * key_at(a, e, c0 + j);
        dke[j] = ds * qi[c0 + j];
        dve[j] = w * gi[c0 + j];
      }
    }
  }
}

void scatter_edge_grads(const AttentionArgs& a, const double* dk, const double* dv, const AttentionGrads& g) {
  const std::size_t num_edges = a.edges.src.size();
  for (std::size_t e = 0; e < num_edges; ++e) {
    const std::size_t s = static_cast<std::size_t>(a.edges.src[e]) * a.dim;
    const double* dke = dk + e * a.dim;
    const double* dve = dv + e * a.dim;
    if (g.key_src)
      for (std::size_t j = 0; j < a.dim; ++j) g.key_src[s + j] += dke[j];
    if (g.val_src)
      for (std::size_t j = 0; j < a.dim; ++j) g.val_src[s + j] += dve[j];
    if (a.key_edge && g.key_edge) {
      const std::size_t x = static_cast<std::size_t>(a.edges.eid[e]) * a.dim;
      for (std::size_t j = 0; j < a.dim; ++j) g.key_edge[x + j] += dke[j];
    }
    if (a.val_edge && g.val_edge) {
      const std::size_t x = static_cast<std::size_t>(a.edges.eid[e]) * a.dim;
      for (std::size_t j = 0; j < a.dim; ++j) g.val_edge[x + j] += dve[j];
    }
  }
}

std::atomic<bool> g_parallel{true};

}  // namespace

namespace serial {

void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(a, b, bias, c, i, k, n);
}

void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  at_b_rows(a, dc, db, 0, m, 0, k, k, n);
}

void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  const auto bt = transpose(b, k, n);
  for (std::size_t i = 0; i < m; ++i) a_bt_row(dc, bt.data(), da, i, k, n);
}

void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r) layer_norm_row(x, gamma, beta, y, xhat, inv_std, r, cols, eps);
}

void attention_forward(const AttentionArgs& args, double* out, double* weights) {
  for (std::size_t i = 0; i < args.num_queries; ++i) attend_query(args, i, out, weights);
}

void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads) {
  const std::size_t num_edges = args.edges.src.size();
  std::vector<double> dk(num_edges * args.dim), dv(num_edges * args.dim);
  for (std::size_t i = 0; i < args.num_queries; ++i)
    attend_query_backward(args, i, weights, dout, grads.q, dk.data(), dv.data());
  scatter_edge_grads(args, dk.data(), dv.data(), grads);
}

}  // namespace serial

namespace parallel {

#ifdef HPNET_HAVE_OPENMP
void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    gemm_row(a, b, bias, c, static_cast<std::size_t>(i), k, n);
}

void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  // Each thread owns a block of db rows and walks every input row in order,
  // so each db entry sees the same summation order as the serial kernel.
#pragma omp parallel
  {
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    const auto id = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t p0 = k * id / nt, p1 = k * (id + 1) / nt;
    if (p0 < p1) at_b_rows(a, dc, db, 0, m, p0, p1, k, n);
  }
}

void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  const auto bt = transpose(b, k, n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    a_bt_row(dc, bt.data(), da, static_cast<std::size_t>(i), k, n);
}

void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    layer_norm_row(x, gamma, beta, y, xhat, inv_std, static_cast<std::size_t>(r), cols, eps);
}

void attention_forward(const AttentionArgs& args, double* out, double* weights) {
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(args.num_queries); ++i)
    attend_query(args, static_cast<std::size_t>(i), out, weights);
}

void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads) {
  const std::size_t num_edges = args.edges.src.size();
  std::vector<double> dk(num_edges * args.dim), dv(num_edges * args.dim);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(args.num_queries); ++i)
    attend_query_backward(args, static_cast<std::size_t>(i), weights, dout, grads.q, dk.data(), dv.data());
  // The scatter stays in edge order so sums match the serial reference.
  scatter_edge_grads(args, dk.data(), dv.data(), grads);
}
#else
void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  serial::gemm(a, b, bias, c, m, k, n);
}
void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  serial::gemm_at_b_acc(a, dc, db, m, k, n);
}
void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  serial::gemm_a_bt_acc(dc, b, da, m, k, n);
}
void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps) {
  serial::layer_norm(x, gamma, beta, y, xhat, inv_std, rows, cols, eps);
}
void attention_forward(const AttentionArgs& args, double* out, double* weights) {
  serial::attention_forward(args, out, weights);
}
void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads) {
  serial::attention_backward(args, weights, dout, grads);
}
#endif

}  // namespace parallel

bool openmp_available() {
#ifdef HPNET_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return openmp_available() && g_parallel.load(); }

namespace {
// Small problems (and calls from inside an outer parallel region) run serially.
bool use_parallel(std::size_t work) {
#ifdef HPNET_HAVE_OPENMP
  return parallel_enabled() && work >= 16384 && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  if (use_parallel(m * k * n))
    parallel::gemm(a, b, bias, c, m, k, n);
  else
    serial::gemm(a, b, bias, c, m, k, n);
}

void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n))
    parallel::gemm_at_b_acc(a, dc, db, m, k, n);
  else
    serial::gemm_at_b_acc(a, dc, db, m, k, n);
}

void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n))
    parallel::gemm_a_bt_acc(dc, b, da, m, k, n);
  else
    serial::gemm_a_bt_acc(dc, b, da, m, k, n);
}

void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps) {
  if (use_parallel(rows * cols * 8))
    parallel::layer_norm(x, gamma, beta, y, xhat, inv_std, rows, cols, eps);
  else
    serial::layer_norm(x, gamma, beta, y, xhat, inv_std, rows, cols, eps);
}

void attention_forward(const AttentionArgs& args, double* out, double* weights) {
  if (use_parallel(args.edges.src.size() * args.dim * 4))
    parallel::attention_forward(args, out, weights);
  else
    serial::attention_forward(args, out, weights);
}

void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads) {
  if (use_parallel(args.edges.src.size() * args.dim * 8))
    parallel::attention_backward(args, weights, dout, grads);
  else
    serial::attention_backward(args, weights, dout, grads);
}

}  // namespace hpnet::kernels
