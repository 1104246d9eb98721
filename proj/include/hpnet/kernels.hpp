#pragma once

// Dense inner loops used by the autodiff ops. Each kernel has a serial
// reference and an OpenMP variant; both walk every reduction in the same
// order, so their results agree bitwise. The dispatching entry points at the
// bottom pick the OpenMP variant when it is compiled in and enabled.

#include <cstddef>
#include <span>

namespace hpnet::kernels {

// CSR view of a query-major edge list: edges of query i occupy
// [offsets[i], offsets[i+1]). Key/value row of edge e is
// source[src[e]] + edge[eid[e]] (the edge term is optional).
struct EdgeCsr {
  std::span<const int> offsets;
  std::span<const int> src;
  std::span<const int> eid;
};

struct AttentionArgs {
  std::size_t num_queries = 0;
  std::size_t dim = 0;
  std::size_t heads = 1;
  const double* q = nullptr;         // [num_queries x dim]
  const double* key_src = nullptr;   // [*, dim]
  const double* key_edge = nullptr;  // [*, dim] or null
  const double* val_src = nullptr;
  const double* val_edge = nullptr;
  EdgeCsr edges;
};

struct AttentionGrads {
  double* q = nullptr;
  double* key_src = nullptr;
  double* key_edge = nullptr;
  double* val_src = nullptr;
  double* val_edge = nullptr;
};

namespace serial {
void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n);
void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n);
void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n);
void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps);
void attention_forward(const AttentionArgs& args, double* out, double* weights);
void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads);
}  // namespace serial

namespace parallel {
void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n);
void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n);
void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n);
void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps);
void attention_forward(const AttentionArgs& args, double* out, double* weights);
void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads);
}  // namespace parallel

bool openmp_available();
void set_parallel(bool enabled);
bool parallel_enabled();

// c = a[m x k] * b[k x n] (+ bias[n])
void gemm(const double* a, const double* b, const double* bias, double* c, std::size_t m, std::size_t k,
          std::size_t n);
// db += a^T * dc
void gemm_at_b_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n);
// da += dc * b^T
void gemm_a_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n);
void layer_norm(const double* x, const double* gamma, const double* beta, double* y, double* xhat, double* inv_std,
                std::size_t rows, std::size_t cols, double eps);
// weights is [num_edges x heads]; queries without edges produce zero rows.
void attention_forward(const AttentionArgs& args, double* out, double* weights);
// Gradients accumulate (+=) into the non-null buffers of grads.
void attention_backward(const AttentionArgs& args, const double* weights, const double* dout,
                        const AttentionGrads& grads);

}  // namespace hpnet::kernels
