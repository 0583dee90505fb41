#pragma once

#include <cstdlib>

#if __has_include(<cblas-openblas.h>)
#include <cblas-openblas.h>
#elif __has_include(<cblas.h>)
#include <cblas.h>
#else
#include <openblas/cblas.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace deconoise {
namespace detail {

// OpenBLAS selects its kernels from CPUID at initialization. Hypervisors
// often mask the model id, in which case the dispatcher falls back to slow
// generic kernels even on AVX-512 hardware. This runs before the OpenBLAS
// initializer (priority 101, static link) and pins the core type from the
// feature flags instead. An explicit OPENBLAS_CORETYPE wins.
__attribute__((constructor(101))) inline void blas_core_override() {
  if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f"))
    ::setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
  else if (__builtin_cpu_supports("avx2"))
    ::setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
}

template <class T>
void gemm(CBLAS_TRANSPOSE trans_a, CBLAS_TRANSPOSE trans_b, int m, int n,
          int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc);

template <>
inline void gemm<float>(CBLAS_TRANSPOSE trans_a, CBLAS_TRANSPOSE trans_b,
                        int m, int n, int k, float alpha, const float* a,
                        int lda, const float* b, int ldb, float beta, float* c,
                        int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

template <>
inline void gemm<double>(CBLAS_TRANSPOSE trans_a, CBLAS_TRANSPOSE trans_b,
                         int m, int n, int k, double alpha, const double* a,
                         int lda, const double* b, int ldb, double beta,
                         double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

}  // namespace detail

// Number of threads BLAS may use inside a single call. Results are
// deterministic for a fixed count; the project default is 1.
inline void set_compute_threads(int n) {
  openblas_set_num_threads(n > 0 ? n : 1);
}

}  // namespace deconoise
