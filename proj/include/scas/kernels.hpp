#pragma once
// Dense arithmetic kernels behind the network code.
//
// Every kernel has a scalar reference implementation and an AVX2/FMA
// variant. The active table is chosen once at first use from CPU feature
// detection; SCAS_KERNELS=scalar forces the reference path.

#include <cstddef>
#include <string_view>

namespace scas::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;

  // C[m x n] (+)= A[m x k] * B[k x n], all row-major with the given leading
  // dimensions. When accumulate is false C is overwritten.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc, bool accumulate);

  // x[i] = max(x[i], 0)
  void (*relu)(double* x, std::size_t n);

  // g[i] = act[i] > 0 ? g[i] : 0
  void (*relu_backward)(const double* act, double* g, std::size_t n);

  // Bias-corrected Adam update, in place on params/m/v.
  // step_size = lr * sqrt(1 - beta2^t) / (1 - beta1^t), eps_hat = eps * sqrt(1 - beta2^t)
  void (*adam)(double* params, double* m, double* v, const double* grad,
               std::size_t n, double beta1, double beta2, double step_size,
               double eps_hat);

  // target[i] = (1 - tau) * target[i] + tau * online[i]
  void (*lerp)(double* target, const double* online, std::size_t n,
               double tau);
};

const KernelTable& scalar_table();

// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_has_avx2();

// Table used by the rest of the library.
const KernelTable& active();

// Override the active table (tests use this to compare implementations).
void set_active(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace scas::kernels
