#include <atomic>
#include <cstdlib>
#include <string_view>

#include "scas/kernels.hpp"

namespace scas::kernels {
namespace {

const KernelTable* select_default() {
  if (const char* env = std::getenv("SCAS_KERNELS")) {
    if (std::string_view(env) == "scalar") return &scalar_table();
  }
  if (cpu_has_avx2() && avx2_table() != nullptr) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{select_default()};
  return current;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  if (isa == Isa::kAvx2 && cpu_has_avx2() && avx2_table() != nullptr) {
    slot().store(avx2_table());
  } else {
    slot().store(&scalar_table());
  }
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace scas::kernels
