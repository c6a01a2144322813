#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace ssmvis::kernels {
namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const KernelTable* best = avx2_kernels();
  if (const char* env = std::getenv("SSMVIS_KERNELS")) {
    const std::string want{env};
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && best == nullptr) {
      throw std::invalid_argument("SSMVIS_KERNELS=avx2 requested but AVX2 is unavailable");
    }
  }
  return best != nullptr ? best : &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable* table = cpu_has_avx2_fma() ? avx2_table_if_compiled() : nullptr;
  return table;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

void select(Isa isa) {
  const KernelTable* table = isa == Isa::scalar ? &scalar_kernels() : avx2_kernels();
  if (table == nullptr) throw std::invalid_argument("requested kernel ISA is unavailable");
  active_slot().store(table, std::memory_order_release);
}

std::string_view active_name() { return active().name; }

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  const KernelTable& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = c + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] = 0.0;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      if (arow[p] != 0.0) kt.axpy(arow[p], b + p * n, row, n);
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c) {
  const KernelTable& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += kt.dot(a + i * k, b + j * k, k);
  }
}

void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g,
                 double* c) {
  const KernelTable& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      if (arow[p] != 0.0) kt.axpy(arow[p], grow, c + p * n, n);
    }
  }
}

}  // namespace ssmvis::kernels
