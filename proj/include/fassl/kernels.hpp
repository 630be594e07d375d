#pragma once

#include <cstddef>

// Data-parallel inner loops shared by the graph engine, encoders and the
// evaluation harness. Every kernel has a scalar reference implementation;
// on x86-64 an AVX2/FMA variant is selected at runtime when the CPU supports
// it. The two paths are equivalence-tested against each other.
//
// Set FASSL_KERNELS=scalar (or =avx2) to pin the backend for a process.

namespace fassl::kern {

enum class Backend { scalar, avx2 };

// Backend chosen at startup (cpuid + FASSL_KERNELS override).
Backend active_backend();
const char* backend_name();

// Rebind all dispatched entry points. Throws ContractError if the requested
// backend is not available on this machine.
void force_backend(Backend b);

double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);

// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// x *= a
void scale(double a, double* x, std::size_t n);

void vadd(const double* a, const double* b, double* out, std::size_t n);
void vsub(const double* a, const double* b, double* out, std::size_t n);
void vmul(const double* a, const double* b, double* out, std::size_t n);

void relu(const double* x, double* out, std::size_t n);
// out = g where x > 0, else 0 (subgradient at 0 is 0)
void relu_bwd(const double* x, const double* g, double* out, std::size_t n);

// Row-major rows x cols matrix a.
// y = a * x
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
// x += a^T * g
void gemv_t_acc(const double* a, std::size_t rows, std::size_t cols, const double* g, double* x);
// a += g * x^T   (rank-1 accumulate, the matvec weight gradient)
void ger_acc(double* a, std::size_t rows, std::size_t cols, const double* g, const double* x);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
void vadd(const double* a, const double* b, double* out, std::size_t n);
void vsub(const double* a, const double* b, double* out, std::size_t n);
void vmul(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_bwd(const double* x, const double* g, double* out, std::size_t n);
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
void gemv_t_acc(const double* a, std::size_t rows, std::size_t cols, const double* g, double* x);
void ger_acc(double* a, std::size_t rows, std::size_t cols, const double* g, const double* x);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define FASSL_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
void vadd(const double* a, const double* b, double* out, std::size_t n);
void vsub(const double* a, const double* b, double* out, std::size_t n);
void vmul(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_bwd(const double* x, const double* g, double* out, std::size_t n);
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
void gemv_t_acc(const double* a, std::size_t rows, std::size_t cols, const double* g, double* x);
void ger_acc(double* a, std::size_t rows, std::size_t cols, const double* g, const double* x);
}  // namespace avx2
#endif

}  // namespace fassl::kern
