#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "relclass/kernels.hpp"

namespace relclass::kernels {

namespace {

struct Table {
  Isa isa;
  double (*dot)(const double*, const double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
};

constexpr Table kScalar{Isa::Scalar, scalar::dot, scalar::squared_distance, scalar::axpy};
#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2{Isa::Avx2, avx2::dot, avx2::squared_distance, avx2::axpy};
#endif

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* table_for(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return &kScalar;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return cpu_has_avx2() ? &kAvx2 : nullptr;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const Table* initial_table() {
  if (const char* env = std::getenv("RELCLASS_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &kScalar;
    if (want == "avx2") {
      if (const Table* t = table_for(Isa::Avx2)) return t;
    }
  }
  const Table* best = table_for(detect_isa());
  return best ? best : &kScalar;
}

std::atomic<const Table*>& current() {
  static std::atomic<const Table*> table{initial_table()};
  return table;
}

void require_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("kernels: operand length mismatch");
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

Isa detect_isa() { return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() { return current().load()->isa; }

bool set_isa(Isa isa) {
  const Table* t = table_for(isa);
  if (t == nullptr) return false;
  current().store(t);
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size());
  return current().load(std::memory_order_relaxed)->dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size());
  return current().load(std::memory_order_relaxed)->squared_distance(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size());
  current().load(std::memory_order_relaxed)->axpy(alpha, x.data(), y.data(), x.size());
}

void gemv(std::span<const double> matrix, std::span<const double> x,
          std::span<const double> bias, std::span<double> out) {
  const std::size_t rows = out.size();
  const std::size_t cols = x.size();
  if (matrix.size() != rows * cols || bias.size() != rows) {
    throw std::invalid_argument("kernels::gemv: shape mismatch");
  }
  const Table* t = current().load(std::memory_order_relaxed);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = bias[r] + t->dot(matrix.data() + r * cols, x.data(), cols);
  }
}

}  // namespace relclass::kernels
