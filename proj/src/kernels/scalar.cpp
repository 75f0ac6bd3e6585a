#include "scas/kernels.hpp"

#include <cmath>

namespace scas::kernels {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double* c,
                 std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void relu_scalar(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* act, double* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(act[i] > 0.0)) g[i] = 0.0;
  }
}

void adam_scalar(double* params, double* m, double* v, const double* grad,
                 std::size_t n, double beta1, double beta2, double step_size,
                 double eps_hat) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= step_size * m[i] / (std::sqrt(v[i]) + eps_hat);
  }
}

void lerp_scalar(double* target, const double* online, std::size_t n,
                 double tau) {
  const double keep = 1.0 - tau;
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = keep * target[i] + tau * online[i];
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::kScalar, gemm_scalar, relu_scalar,
                                 relu_backward_scalar, adam_scalar,
                                 lerp_scalar};
  return table;
}

}  // namespace scas::kernels
