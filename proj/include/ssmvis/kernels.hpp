#pragma once

// Dense double-precision inner loops. Every kernel has a scalar reference
// implementation and, when the CPU supports it, an AVX2+FMA variant. The
// active table is chosen once at startup (override with the environment
// variable SSMVIS_KERNELS=scalar|avx2) and can be switched for testing.

#include <cstddef>
#include <string_view>

namespace ssmvis::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // acc += a * b
  void (*mul_acc)(const double* a, const double* b, double* acc, std::size_t n);
  // state = decay * state + drive
  void (*affine_recur)(const double* decay, const double* drive, double* state, std::size_t n);
  void (*exp)(const double* in, double* out, std::size_t n);
};

const KernelTable& scalar_kernels();

/// nullptr when the binary was built without AVX2 support or the CPU lacks
/// AVX2/FMA.
const KernelTable* avx2_kernels();

const KernelTable& active();

/// Switches the process-wide table. Throws std::invalid_argument if the
/// requested ISA is unavailable. Not meant to be called while other
/// threads run kernels.
void select(Isa isa);

std::string_view active_name();

// Row-major matrix products built on the active table.
// C[m,n] = A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c);
// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g,
                 double* c);

}  // namespace ssmvis::kernels
