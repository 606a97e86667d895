#include <atomic>
#include <cstdlib>
#include <string>

#include "panoattn/errors.hpp"
#include "panoattn/kernels.hpp"

namespace panoattn::kernels {

namespace {

struct Table {
    double (*dot_f64)(const double*, const double*, std::size_t);
    float (*dot_f32)(const float*, const float*, std::size_t);
    void (*axpy_f64)(double, const double*, double*, std::size_t);
    void (*axpy_f32)(float, const float*, float*, std::size_t);
};

constexpr Table scalar_table{&scalar::dot, &scalar::dot, &scalar::axpy, &scalar::axpy};
#if PANOATTN_HAVE_AVX2_KERNELS
constexpr Table avx2_table{&avx2::dot, &avx2::dot, &avx2::axpy, &avx2::axpy};
#endif

bool cpu_has_avx2() {
#if PANOATTN_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Table& table_for(Isa isa) {
#if PANOATTN_HAVE_AVX2_KERNELS
    if (isa == Isa::avx2) return avx2_table;
#endif
    (void)isa;
    return scalar_table;
}

Isa initial_isa() {
    if (const char* env = std::getenv("PANOATTN_ISA")) {
        if (std::string(env) == "scalar") return Isa::scalar;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

struct State {
    std::atomic<Isa> isa{initial_isa()};
    std::atomic<const Table*> table{&table_for(isa.load())};
};

State& state() {
    static State s;
    return s;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

Isa active_isa() { return state().isa.load(); }

void set_isa(Isa isa) {
    if (!isa_available(isa)) {
        throw ArgumentError("kernel variant " + std::string(isa_name(isa)) + " not available");
    }
    state().isa.store(isa);
    state().table.store(&table_for(isa));
}

double dot(const double* a, const double* b, std::size_t n) { return state().table.load()->dot_f64(a, b, n); }
float dot(const float* a, const float* b, std::size_t n) { return state().table.load()->dot_f32(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    state().table.load()->axpy_f64(alpha, x, y, n);
}
void axpy(float alpha, const float* x, float* y, std::size_t n) {
    state().table.load()->axpy_f32(alpha, x, y, n);
}

}  // namespace panoattn::kernels
