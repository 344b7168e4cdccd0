#include "pricequant/kernels.hpp"

#include <cmath>

namespace pricequant::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sparse_dot(const std::uint32_t* idx, const double* val, std::size_t nnz,
                  const double* dense) {
  double s = 0.0;
  for (std::size_t i = 0; i < nnz; ++i) s += val[i] * dense[idx[i]];
  return s;
}

void adamw(double* w, const double* g, double* m, double* v, std::size_t n,
           const AdamWCoeffs& c) {
  const double decay = 1.0 - c.lr * c.weight_decay;
  const double step = c.lr / c.bias_correction1;
  const double inv_bc2 = 1.0 / c.bias_correction2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double denom = std::sqrt(v[i] * inv_bc2) + c.eps;
    w[i] = w[i] * decay - step * m[i] / denom;
  }
}

std::size_t count_nonfinite(const double* x, std::size_t n) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) bad += std::isfinite(x[i]) ? 0 : 1;
  return bad;
}

}  // namespace

const Table& scalar_table() {
  static const Table table{dot, axpy, sparse_dot, adamw, count_nonfinite};
  return table;
}

}  // namespace pricequant::kernels
