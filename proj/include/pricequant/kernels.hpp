#pragma once

// Data-parallel inner loops used by the model, the optimizer and the
// neighbor search. Each kernel has a scalar reference implementation and,
// on x86-64, an AVX2+FMA variant. The active variant is chosen once at
// startup from CPUID and can be forced with PRICEQUANT_SIMD=scalar|avx2.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace pricequant::kernels {

enum class Level { scalar, avx2 };

struct AdamWCoeffs {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

struct Table {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sparse_dot)(const std::uint32_t* idx, const double* val, std::size_t nnz,
                       const double* dense);
  void (*adamw)(double* w, const double* g, double* m, double* v, std::size_t n,
                const AdamWCoeffs& c);
  std::size_t (*count_nonfinite)(const double* x, std::size_t n);
};

const Table& scalar_table();
// Only valid when avx2_supported() is true.
const Table& avx2_table();

bool avx2_supported();
Level active_level();
// Switches the process-wide table. Not thread-safe with concurrent kernel calls.
void set_level(Level level);
std::string_view level_name(Level level);

const Table& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sparse_dot(std::span<const std::uint32_t> idx, std::span<const double> val,
                         std::span<const double> dense) {
  return active().sparse_dot(idx.data(), val.data(), idx.size(), dense.data());
}

inline void adamw(std::span<double> w, std::span<const double> g, std::span<double> m,
                  std::span<double> v, const AdamWCoeffs& c) {
  active().adamw(w.data(), g.data(), m.data(), v.data(), w.size(), c);
}

inline std::size_t count_nonfinite(std::span<const double> x) {
  return active().count_nonfinite(x.data(), x.size());
}

}  // namespace pricequant::kernels
