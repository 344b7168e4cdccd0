#include "pricequant/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace pricequant::kernels {

#if !PRICEQUANT_HAVE_AVX2
const Table& avx2_table() { return scalar_table(); }
#endif

bool avx2_supported() {
#if PRICEQUANT_HAVE_AVX2
  static const bool ok = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return ok;
#else
  return false;
#endif
}

namespace {

Level detect() {
  if (const char* forced = std::getenv("PRICEQUANT_SIMD")) {
    const std::string f(forced);
    if (f == "scalar") return Level::scalar;
    if (f == "avx2" && avx2_supported()) return Level::avx2;
  }
  return avx2_supported() ? Level::avx2 : Level::scalar;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{detect()};
  return level;
}

}  // namespace

Level active_level() { return current().load(std::memory_order_relaxed); }

void set_level(Level level) {
  if (level == Level::avx2 && !avx2_supported()) level = Level::scalar;
  current().store(level, std::memory_order_relaxed);
}

std::string_view level_name(Level level) {
  return level == Level::avx2 ? "avx2" : "scalar";
}

const Table& active() {
  return active_level() == Level::avx2 ? avx2_table() : scalar_table();
}

}  // namespace pricequant::kernels
