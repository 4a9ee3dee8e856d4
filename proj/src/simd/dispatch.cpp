// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace crowngen::simd {

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar, &detail::squared_distances_scalar,
                                 &detail::nearest_scalar, &detail::axpy_scalar};
  return table;
}

const KernelTable* avx2_kernels() {
#if defined(CROWNGEN_HAVE_AVX2)
  static const KernelTable table{Isa::avx2, &detail::squared_distances_avx2,
                                 &detail::nearest_avx2, &detail::axpy_avx2};
  return &table;
#else
  return nullptr;
#endif
}

bool cpu_has_avx2() {
#if defined(CROWNGEN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable& table = [] () -> const KernelTable& {
    const char* env = std::getenv("CROWNGEN_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") {
      return scalar_kernels();
    }
    if (cpu_has_avx2() && avx2_kernels() != nullptr) return *avx2_kernels();
    return scalar_kernels();
  }();
  return table;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

}  // namespace crowngen::simd
