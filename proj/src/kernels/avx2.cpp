// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma and
// is only entered through the dispatch table after a CPU feature check.

#include "scas/kernels.hpp"

#if defined(SCAS_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>

namespace scas::kernels {
namespace {

// Accumulation runs over k in order for every output element, the same order
// as the scalar reference; only FMA rounding differs.
inline void kernel_4x8(std::size_t k, const double* a, std::size_t lda,
                       const double* b, std::size_t ldb, double* c,
                       std::size_t ldc, bool accumulate) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  if (accumulate) {
    c00 = _mm256_loadu_pd(c);
    c01 = _mm256_loadu_pd(c + 4);
    c10 = _mm256_loadu_pd(c + ldc);
    c11 = _mm256_loadu_pd(c + ldc + 4);
    c20 = _mm256_loadu_pd(c + 2 * ldc);
    c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    c30 = _mm256_loadu_pd(c + 3 * ldc);
    c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// One row of C, four columns at a time.
inline void kernel_1x4(std::size_t k, const double* a, const double* b,
                       std::size_t ldb, double* c, bool accumulate) {
  __m256d acc = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p),
                          _mm256_loadu_pd(b + p * ldb), acc);
  }
  _mm256_storeu_pd(c, acc);
}

inline void kernel_1x1(std::size_t k, const double* a, const double* b,
                       std::size_t ldb, double* c, bool accumulate) {
  double acc = accumulate ? *c : 0.0;
  for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[p], b[p * ldb], acc);
  *c = acc;
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc, bool accumulate) {
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* ablk = a + i * lda;
    double* cblk = c + i * ldc;
    for (std::size_t j = 0; j < n8; j += 8) {
      kernel_4x8(k, ablk, lda, b + j, ldb, cblk + j, ldc, accumulate);
    }
    for (std::size_t r = 0; r < 4; ++r) {
      std::size_t j = n8;
      for (; j + 4 <= n; j += 4) {
        kernel_1x4(k, ablk + r * lda, b + j, ldb, cblk + r * ldc + j,
                   accumulate);
      }
      for (; j < n; ++j) {
        kernel_1x1(k, ablk + r * lda, b + j, ldb, cblk + r * ldc + j,
                   accumulate);
      }
    }
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      kernel_1x4(k, a + i * lda, b + j, ldb, c + i * ldc + j, accumulate);
    }
    for (; j < n; ++j) {
      kernel_1x1(k, a + i * lda, b + j, ldb, c + i * ldc + j, accumulate);
    }
  }
}

void relu_avx2(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // max(x, 0) returns 0 for NaN in the first operand, matching the scalar path.
    _mm256_storeu_pd(x + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* act, double* g, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask =
        _mm256_cmp_pd(_mm256_loadu_pd(act + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(g + i, _mm256_and_pd(mask, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) {
    if (!(act[i] > 0.0)) g[i] = 0.0;
  }
}

void adam_avx2(double* params, double* m, double* v, const double* grad,
               std::size_t n, double beta1, double beta2, double step_size,
               double eps_hat) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d ob1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d ob2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d step = _mm256_set1_pd(step_size);
  const __m256d eps = _mm256_set1_pd(eps_hat);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(ob1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                      _mm256_mul_pd(_mm256_mul_pd(ob2, g), g));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vi), eps);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(step, mi), denom);
    _mm256_storeu_pd(params + i, _mm256_sub_pd(_mm256_loadu_pd(params + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= step_size * m[i] / (std::sqrt(v[i]) + eps_hat);
  }
}

void lerp_avx2(double* target, const double* online, std::size_t n,
               double tau) {
  const __m256d keep = _mm256_set1_pd(1.0 - tau);
  const __m256d t = _mm256_set1_pd(tau);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_add_pd(
        _mm256_mul_pd(keep, _mm256_loadu_pd(target + i)),
        _mm256_mul_pd(t, _mm256_loadu_pd(online + i)));
    _mm256_storeu_pd(target + i, r);
  }
  const double k = 1.0 - tau;
  for (; i < n; ++i) target[i] = k * target[i] + tau * online[i];
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::kAvx2, gemm_avx2, relu_avx2,
                                 relu_backward_avx2, adam_avx2, lerp_avx2};
  return &table;
}

}  // namespace scas::kernels

#else

namespace scas::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace scas::kernels

#endif
