#pragma once

#include <cstddef>
#include <string>

// Scalar reference kernels plus AVX2/FMA variants, selected once at startup.
// Every variant of a kernel is bit-identical to the scalar reference: the
// vector paths keep the same per-element operation order (fused multiply-add
// with k-ascending accumulation for the GEMM row kernel), so results do not
// depend on which variant runs.
namespace paa::simd {

enum class Isa { Scalar, Avx2Fma };

// Active instruction set. Detected from CPUID; the PAA_SIMD environment
// variable ("scalar" | "avx2") overrides detection.
Isa active_isa();
std::string isa_name(Isa isa);
void force_isa(Isa isa);  // for equivalence tests
bool avx2_supported();    // hardware capability, independent of active_isa

// acc[j] = fma(a, b[j], acc[j]) for j in [0, n)
void fma_row(float* acc, float a, const float* b, std::size_t n);
void fma_row(double* acc, double a, const double* b, std::size_t n);

// four chained fma_row steps with the accumulator kept in registers;
// bit-identical to calling fma_row(a[0],b0) .. fma_row(a[3],b3) in order
void fma_row4(float* acc, const float* a, const float* b0, const float* b1,
              const float* b2, const float* b3, std::size_t n);
void fma_row4(double* acc, const double* a, const double* b0, const double* b1,
              const double* b2, const double* b3, std::size_t n);

// out[i] = a[i] + b[i] / a[i] * b[i]
void add(float* out, const float* a, const float* b, std::size_t n);
void mul(float* out, const float* a, const float* b, std::size_t n);

// out[i] = alpha * a[i] + beta * b[i]   (Mixup / Brightness inner loop)
void axpby(float* out, float alpha, const float* a, float beta, const float* b,
           std::size_t n);

// out[i] = max(a[i], 0)
void relu(float* out, const float* a, std::size_t n);

// out[i] = min(max(a[i], lo), hi)
void clamp(float* out, const float* a, float lo, float hi, std::size_t n);

}  // namespace paa::simd
