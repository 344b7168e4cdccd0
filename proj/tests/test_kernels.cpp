#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "pricequant/kernels.hpp"
#include "pricequant/rng.hpp"

using namespace pricequant;
namespace k = pricequant::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

// Sum of |a_i b_i|: bounds the rounding difference between summation orders.
double abs_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] * b[i]);
  return s;
}

}  // namespace

TEST_CASE("scalar dot and axpy on hand values") {
  const auto& t = k::scalar_table();
  const double a[] = {1, 2, 3};
  const double b[] = {4, -5, 6};
  CHECK(t.dot(a, b, 3) == 12.0);
  double y[] = {1, 1, 1};
  t.axpy(2.0, a, y, 3);
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 5.0);
  CHECK(y[2] == 7.0);
  const std::uint32_t idx[] = {0, 2};
  const double val[] = {0.5, 2.0};
  CHECK(t.sparse_dot(idx, val, 2, b) == 14.0);
}

TEST_CASE("avx2 kernels match scalar reference") {
  if (!k::avx2_supported()) {
    MESSAGE("AVX2 not available; equivalence not exercised");
    return;
  }
  const auto& s = k::scalar_table();
  const auto& v = k::avx2_table();
  Rng rng(42);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 64u, 257u, 1000u}) {
    CAPTURE(n);
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    const double tol = 8.0 * std::numeric_limits<double>::epsilon() * (abs_dot(a, b) + 1e-300) * (1.0 + std::log2(n + 1.0));
    CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <= tol);

    auto y1 = random_vec(rng, n);
    auto y2 = y1;
    s.axpy(0.37, a.data(), y1.data(), n);
    v.axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

    std::vector<std::uint32_t> idx(n);
    for (auto& i : idx) i = static_cast<std::uint32_t>(rng.index(300));
    const auto dense = random_vec(rng, 300);
    std::vector<double> gathered(n);
    for (std::size_t i = 0; i < n; ++i) gathered[i] = dense[idx[i]];
    const double stol = 8.0 * std::numeric_limits<double>::epsilon() * (abs_dot(a, gathered) + 1e-300) * (1.0 + std::log2(n + 1.0));
    CHECK(std::abs(s.sparse_dot(idx.data(), a.data(), n, dense.data()) -
                   v.sparse_dot(idx.data(), a.data(), n, dense.data())) <= stol);
  }
}

TEST_CASE("avx2 adamw is bitwise identical to scalar") {
  if (!k::avx2_supported()) return;
  Rng rng(7);
  for (std::size_t n : {1u, 4u, 6u, 13u, 100u}) {
    auto w1 = random_vec(rng, n), g = random_vec(rng, n);
    auto m1 = random_vec(rng, n), v1 = random_vec(rng, n);
    for (auto& x : v1) x = std::abs(x);
    auto w2 = w1, m2 = m1, v2 = v1;
    k::AdamWCoeffs c{1e-3, 0.9, 0.999, 1e-8, 0.01, 1.0 - 0.9 * 0.9, 1.0 - 0.999 * 0.999};
    k::scalar_table().adamw(w1.data(), g.data(), m1.data(), v1.data(), n, c);
    k::avx2_table().adamw(w2.data(), g.data(), m2.data(), v2.data(), n, c);
    CHECK(w1 == w2);
    CHECK(m1 == m2);
    CHECK(v1 == v2);
  }
}

TEST_CASE("count_nonfinite agrees across levels") {
  std::vector<double> x(23, 1.0);
  x[0] = std::numeric_limits<double>::quiet_NaN();
  x[5] = std::numeric_limits<double>::infinity();
  x[9] = -std::numeric_limits<double>::infinity();
  x[22] = std::numeric_limits<double>::quiet_NaN();
  x[10] = std::numeric_limits<double>::max();
  x[11] = std::numeric_limits<double>::denorm_min();
  CHECK(k::scalar_table().count_nonfinite(x.data(), x.size()) == 4);
  if (k::avx2_supported()) CHECK(k::avx2_table().count_nonfinite(x.data(), x.size()) == 4);
}

TEST_CASE("level can be forced and restored") {
  const auto before = k::active_level();
  k::set_level(k::Level::scalar);
  CHECK(k::active_level() == k::Level::scalar);
  CHECK(&k::active() == &k::scalar_table());
  if (k::avx2_supported()) {
    k::set_level(k::Level::avx2);
    CHECK(k::active_level() == k::Level::avx2);
  }
  k::set_level(before);
  CHECK(k::level_name(k::Level::scalar) == "scalar");
}
