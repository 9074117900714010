#pragma once
// Dense double-precision kernels behind the training inner loops.
//
// Every kernel exists in a scalar reference form and, on x86-64 hardware
// with AVX2+FMA, a vectorized form. One implementation table is selected
// at startup; the environment variable GSREG_KERNELS=scalar|avx2|auto
// overrides the automatic choice (useful for equivalence testing).
// Within a process the selection is fixed, so runs are reproducible.

#include <cstddef>
#include <string>
#include <string_view>

namespace gsreg::kernels {

struct KernelTable {
    const char* name;

    // out-of-place elementwise
    void (*vadd)(const double* a, const double* b, double* out, std::size_t n);
    void (*vsub)(const double* a, const double* b, double* out, std::size_t n);
    void (*vmul)(const double* a, const double* b, double* out, std::size_t n);

    // in-place updates
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
    void (*scal)(double alpha, double* x, std::size_t n);                   // x *= alpha

    // reductions
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*vsum)(const double* a, std::size_t n);
    double (*sq_diff_sum)(const double* a, const double* b, std::size_t n);  // sum (a-b)^2

    // activation
    void (*leaky_relu_fwd)(const double* x, double* y, std::size_t n, double slope);
    // gx += gy * (x > 0 ? 1 : slope)
    void (*leaky_relu_bwd)(const double* x, const double* gy, double* gx, std::size_t n,
                           double slope);

    // fused Adam update with precomputed bias corrections:
    //   m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
    //   p -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
    void (*adam_update)(double* p, double* m, double* v, const double* g, std::size_t n,
                        double lr, double beta1, double beta2, double eps, double bc1,
                        double bc2);
};

// Table selected for this process (GSREG_KERNELS respected on first call).
const KernelTable& active();

// Named table lookup: "scalar", "avx2". Returns nullptr when the variant
// is not compiled in or not runnable on this CPU.
const KernelTable* table(std::string_view name);

// Force a specific table for the remainder of the process. Throws
// std::invalid_argument for unknown/unavailable names. Intended for tests.
void force(std::string_view name);

bool avx2_supported();

// Tables as compiled (nullptr when absent from this build).
const KernelTable* scalar_table();
const KernelTable* avx2_table();

}  // namespace gsreg::kernels
