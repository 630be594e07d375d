#include "fassl/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "fassl/errors.hpp"

namespace fassl::kern {

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    double (*sumsq)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double, double*, std::size_t);
    void (*vadd)(const double*, const double*, double*, std::size_t);
    void (*vsub)(const double*, const double*, double*, std::size_t);
    void (*vmul)(const double*, const double*, double*, std::size_t);
    void (*relu)(const double*, double*, std::size_t);
    void (*relu_bwd)(const double*, const double*, double*, std::size_t);
    void (*gemv)(const double*, std::size_t, std::size_t, const double*, double*);
    void (*gemv_t_acc)(const double*, std::size_t, std::size_t, const double*, double*);
    void (*ger_acc)(double*, std::size_t, std::size_t, const double*, const double*);
};

constexpr Table kScalarTable = {
    scalar::dot,  scalar::sum,  scalar::sumsq,    scalar::axpy,       scalar::scale,
    scalar::vadd, scalar::vsub, scalar::vmul,     scalar::relu,       scalar::relu_bwd,
    scalar::gemv, scalar::gemv_t_acc, scalar::ger_acc,
};

#if defined(FASSL_HAVE_AVX2_KERNELS)
constexpr Table kAvx2Table = {
    avx2::dot,  avx2::sum,  avx2::sumsq,    avx2::axpy,       avx2::scale,
    avx2::vadd, avx2::vsub, avx2::vmul,     avx2::relu,       avx2::relu_bwd,
    avx2::gemv, avx2::gemv_t_acc, avx2::ger_acc,
};
#endif

bool cpu_has_avx2() {
#if defined(FASSL_HAVE_AVX2_KERNELS) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend resolve_backend() {
    if (const char* env = std::getenv("FASSL_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2()) throw ContractError("FASSL_KERNELS=avx2 but CPU lacks AVX2/FMA");
            return Backend::avx2;
        }
        throw ContractError(std::string("unknown FASSL_KERNELS value: ") + env);
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = resolve_backend();

const Table& table_for(Backend b) {
#if defined(FASSL_HAVE_AVX2_KERNELS)
    if (b == Backend::avx2) return kAvx2Table;
#endif
    (void)b;
    return kScalarTable;
}

Table g_table = table_for(g_backend);

}  // namespace

Backend active_backend() { return g_backend; }

const char* backend_name() { return g_backend == Backend::avx2 ? "avx2" : "scalar"; }

void force_backend(Backend b) {
    if (b == Backend::avx2 && !cpu_has_avx2()) {
        throw ContractError("AVX2 backend requested but CPU lacks AVX2/FMA");
    }
    g_backend = b;
    g_table = table_for(b);
}

double dot(const double* a, const double* b, std::size_t n) { return g_table.dot(a, b, n); }
double sum(const double* x, std::size_t n) { return g_table.sum(x, n); }
double sumsq(const double* x, std::size_t n) { return g_table.sumsq(x, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { g_table.axpy(a, x, y, n); }
void scale(double a, double* x, std::size_t n) { g_table.scale(a, x, n); }
void vadd(const double* a, const double* b, double* out, std::size_t n) { g_table.vadd(a, b, out, n); }
void vsub(const double* a, const double* b, double* out, std::size_t n) { g_table.vsub(a, b, out, n); }
void vmul(const double* a, const double* b, double* out, std::size_t n) { g_table.vmul(a, b, out, n); }
void relu(const double* x, double* out, std::size_t n) { g_table.relu(x, out, n); }
void relu_bwd(const double* x, const double* g, double* out, std::size_t n) { g_table.relu_bwd(x, g, out, n); }
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    g_table.gemv(a, rows, cols, x, y);
}
void gemv_t_acc(const double* a, std::size_t rows, std::size_t cols, const double* g, double* x) {
    g_table.gemv_t_acc(a, rows, cols, g, x);
}
void ger_acc(double* a, std::size_t rows, std::size_t cols, const double* g, const double* x) {
    g_table.ger_acc(a, rows, cols, g, x);
}

}  // namespace fassl::kern
