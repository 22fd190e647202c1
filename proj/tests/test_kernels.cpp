#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "relclass/clstm.hpp"
#include "relclass/kernels.hpp"

using namespace relclass;
using namespace relclass::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

long double exact_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

double magnitude(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] * b[i]);
  return s;
}

struct IsaGuard {
  Isa saved = active_isa();
  ~IsaGuard() { set_isa(saved); }
};

bool have_avx2() { return detect_isa() == Isa::Avx2; }

}  // namespace

TEST_CASE("scalar dot and distance match extended precision") {
  std::mt19937_64 rng(3);
  for (std::size_t n = 0; n < 70; ++n) {
    const auto a = random_vector(n, rng);
    const auto b = random_vector(n, rng);
    const double tol = 1e-14 * (1.0 + magnitude(a, b));
    CHECK(std::abs(scalar::dot(a.data(), b.data(), n) - static_cast<double>(exact_dot(a, b))) <= tol);
    long double d = 0;
    for (std::size_t i = 0; i < n; ++i) d += (static_cast<long double>(a[i]) - b[i]) * (a[i] - b[i]);
    CHECK(std::abs(scalar::squared_distance(a.data(), b.data(), n) - static_cast<double>(d)) <= 1e-13 * (1.0 + d));
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!have_avx2()) {
    MESSAGE("AVX2 not available on this CPU; skipping");
    return;
  }
#if defined(__x86_64__) || defined(_M_X64)
  std::mt19937_64 rng(11);
  for (std::size_t n = 0; n < 133; ++n) {
    const auto a = random_vector(n, rng);
    const auto b = random_vector(n, rng);
    const double tol = 1e-14 * (1.0 + magnitude(a, b));
    CHECK(std::abs(avx2::dot(a.data(), b.data(), n) - scalar::dot(a.data(), b.data(), n)) <= tol);
    const double ds = scalar::squared_distance(a.data(), b.data(), n);
    CHECK(std::abs(avx2::squared_distance(a.data(), b.data(), n) - ds) <= 1e-14 * (1.0 + ds));
    auto y1 = random_vector(n, rng);
    auto y2 = y1;
    scalar::axpy(0.37, a.data(), y1.data(), n);
    avx2::axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (1.0 + std::abs(y1[i])));
  }
#endif
}

TEST_CASE("set_isa pins the dispatched implementation") {
  IsaGuard guard;
  REQUIRE(set_isa(Isa::Scalar));
  CHECK(active_isa() == Isa::Scalar);
  std::mt19937_64 rng(5);
  const auto a = random_vector(37, rng);
  const auto b = random_vector(37, rng);
  CHECK(dot(a, b) == scalar::dot(a.data(), b.data(), a.size()));
  if (have_avx2()) {
    REQUIRE(set_isa(Isa::Avx2));
    CHECK(active_isa() == Isa::Avx2);
  } else {
    CHECK_FALSE(set_isa(Isa::Avx2));
    CHECK(active_isa() == Isa::Scalar);
  }
  CHECK(isa_name(Isa::Scalar) == "scalar");
  CHECK(isa_name(Isa::Avx2) == "avx2");
}

TEST_CASE("gemv matches per-row dot products under every ISA") {
  IsaGuard guard;
  std::mt19937_64 rng(8);
  for (Isa isa : {Isa::Scalar, Isa::Avx2}) {
    if (!set_isa(isa)) continue;
    for (std::size_t rows : {1u, 3u, 6u, 17u}) {
      for (std::size_t cols : {1u, 4u, 5u, 31u}) {
        const auto m = random_vector(rows * cols, rng);
        const auto x = random_vector(cols, rng);
        const auto bias = random_vector(rows, rng);
        std::vector<double> out(rows);
        gemv(m, x, bias, out);
        for (std::size_t r = 0; r < rows; ++r) {
          long double s = bias[r];
          for (std::size_t c = 0; c < cols; ++c) s += static_cast<long double>(m[r * cols + c]) * x[c];
          CHECK(std::abs(out[r] - static_cast<double>(s)) <= 1e-13 * (1.0 + std::abs(static_cast<double>(s))));
        }
      }
    }
  }
}

TEST_CASE("gemv rejects mismatched shapes") {
  std::vector<double> m(6), x(4), bias(2), out(2);
  CHECK_THROWS_AS(gemv(m, x, bias, out), std::invalid_argument);
}

TEST_CASE("network loss and gradient agree across ISAs") {
  if (!have_avx2()) return;
  IsaGuard guard;
  const clstm::Shape shape{4, 5, 3, 2, 1, 4};
  const auto net = clstm::Network::initialize(shape, 21);
  std::mt19937_64 rng(2);
  const auto input = random_vector(shape.max_len * shape.embed_dim, rng);
  const clstm::Example batch[] = {{input, Label::Usage}};
  std::vector<double> g_scalar(net.params().size()), g_avx(net.params().size());
  set_isa(Isa::Scalar);
  const double l_scalar = net.loss_and_gradient(batch, {}, 0.5, g_scalar);
  set_isa(Isa::Avx2);
  const double l_avx = net.loss_and_gradient(batch, {}, 0.5, g_avx);
  CHECK(std::abs(l_scalar - l_avx) <= 1e-12);
  for (std::size_t i = 0; i < g_scalar.size(); ++i) CHECK(std::abs(g_scalar[i] - g_avx[i]) <= 1e-12);
}
