#pragma once

#include "ssmvis/kernels.hpp"

namespace ssmvis::kernels {

// Defined in kernels_avx2.cpp; returns nullptr when compiled without AVX2.
const KernelTable* avx2_table_if_compiled();

}  // namespace ssmvis::kernels
