#pragma once

// Inner-loop kernels for attention, projections and FFN.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant compiled in its own translation unit. The active variant
// is chosen once at startup from CPUID; PANOATTN_ISA=scalar forces the
// reference path. Variants agree up to floating-point reassociation; the
// scalar path sums strictly left to right.

#include <cstddef>
#include <string_view>

namespace panoattn::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// True when the variant was compiled in and the CPU supports it.
bool isa_available(Isa isa);

Isa active_isa();

/// Switches the dispatched variant. Throws ArgumentError when unavailable.
/// Not synchronized with concurrent kernel calls.
void set_isa(Isa isa);

// Dispatched entry points.
double dot(const double* a, const double* b, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define PANOATTN_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
}  // namespace avx2
#else
#define PANOATTN_HAVE_AVX2_KERNELS 0
#endif

/// out[i][o] = dot(x row i, w row o): rows x cols_in times (cols_out x cols_in)^T.
template <typename T>
void matmul_nt(const T* x, const T* w, T* out, std::size_t rows, std::size_t cols_in,
               std::size_t cols_out) {
    for (std::size_t i = 0; i < rows; ++i) {
        const T* xi = x + i * cols_in;
        T* oi = out + i * cols_out;
        for (std::size_t o = 0; o < cols_out; ++o) oi[o] = dot(xi, w + o * cols_in, cols_in);
    }
}

}  // namespace panoattn::kernels
