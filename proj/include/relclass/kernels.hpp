#pragma once

// Dense arithmetic kernels shared by the SVM kernel evaluation and the
// C-LSTM forward/backward passes.
//
// Every kernel has a scalar reference implementation. On x86-64 an AVX2+FMA
// variant is compiled into a separate translation unit and selected at
// startup when the CPU reports both features. The selection can be pinned
// with set_isa() (tests) or the RELCLASS_SIMD environment variable
// ("scalar" or "avx2").

#include <cstddef>
#include <span>
#include <string_view>

namespace relclass::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

// Best ISA supported by this CPU and build.
Isa detect_isa();

// ISA currently in use.
Isa active_isa();

// Pins the dispatch table. Returns false (and leaves the table untouched) if
// the requested ISA is unavailable.
bool set_isa(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);

double squared_distance(std::span<const double> a, std::span<const double> b);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// out[r] = bias[r] + dot(row r of matrix, x) for a row-major rows x x.size()
// matrix. out.size() is the row count.
void gemv(std::span<const double> matrix, std::span<const double> x,
          std::span<const double> bias, std::span<double> out);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

}  // namespace relclass::kernels
