#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gsreg/kernels.hpp"
#include "gsreg/rng.hpp"

using namespace gsreg;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// sizes that exercise full vector lanes plus every tail length
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 63, 64, 65, 257, 1000};

}  // namespace

TEST_CASE("scalar table semantics") {
    const auto& k = *kernels::scalar_table();
    std::vector<double> a{1, 2, 3}, b{4, 5, 6}, out(3);
    k.vadd(a.data(), b.data(), out.data(), 3);
    CHECK(out == std::vector<double>{5, 7, 9});
    k.vsub(a.data(), b.data(), out.data(), 3);
    CHECK(out == std::vector<double>{-3, -3, -3});
    k.vmul(a.data(), b.data(), out.data(), 3);
    CHECK(out == std::vector<double>{4, 10, 18});
    CHECK(k.dot(a.data(), b.data(), 3) == doctest::Approx(32.0));
    CHECK(k.vsum(a.data(), 3) == doctest::Approx(6.0));
    CHECK(k.sq_diff_sum(a.data(), b.data(), 3) == doctest::Approx(27.0));

    std::vector<double> y{1, 1, 1};
    k.axpy(2.0, a.data(), y.data(), 3);
    CHECK(y == std::vector<double>{3, 5, 7});
    k.scal(0.5, y.data(), 3);
    CHECK(y == std::vector<double>{1.5, 2.5, 3.5});

    std::vector<double> x{-2, -0.5, 0.5, 2}, lr(4);
    k.leaky_relu_fwd(x.data(), lr.data(), 4, 0.1);
    CHECK(lr[0] == doctest::Approx(-0.2));
    CHECK(lr[1] == doctest::Approx(-0.05));
    CHECK(lr[2] == doctest::Approx(0.5));
    CHECK(lr[3] == doctest::Approx(2.0));

    std::vector<double> gy{1, 1, 1, 1}, gx(4, 0.0);
    k.leaky_relu_bwd(x.data(), gy.data(), gx.data(), 4, 0.1);
    CHECK(gx == std::vector<double>{0.1, 0.1, 1.0, 1.0});
}

TEST_CASE("avx2 variants match the scalar reference") {
    const auto* avx2 = kernels::table("avx2");
    if (!avx2) return;  // hardware without AVX2: nothing to compare
    const auto& ref = *kernels::scalar_table();

    Rng rng(7);
    for (std::size_t n : kSizes) {
        auto a = random_vec(n, rng);
        auto b = random_vec(n, rng);

        // elementwise ops are bit-exact: same operations per element
        std::vector<double> o1(n), o2(n);
        ref.vadd(a.data(), b.data(), o1.data(), n);
        avx2->vadd(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);
        ref.vsub(a.data(), b.data(), o1.data(), n);
        avx2->vsub(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);
        ref.vmul(a.data(), b.data(), o1.data(), n);
        avx2->vmul(a.data(), b.data(), o2.data(), n);
        CHECK(o1 == o2);
        ref.leaky_relu_fwd(a.data(), o1.data(), n, 0.2);
        avx2->leaky_relu_fwd(a.data(), o2.data(), n, 0.2);
        CHECK(o1 == o2);

        ref.scal(1.7, o1.data(), n);
        avx2->scal(1.7, o2.data(), n);
        CHECK(o1 == o2);

        // FMA-based ops agree within a few ulps
        std::vector<double> y1 = b, y2 = b;
        ref.axpy(0.37, a.data(), y1.data(), n);
        avx2->axpy(0.37, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

        std::vector<double> g1(n, 0.0), g2(n, 0.0);
        ref.leaky_relu_bwd(a.data(), b.data(), g1.data(), n, 0.2);
        avx2->leaky_relu_bwd(a.data(), b.data(), g2.data(), n, 0.2);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-14));

        // reductions reassociate; compare with a relative tolerance
        const double scale = std::max(1.0, static_cast<double>(n));
        CHECK(ref.dot(a.data(), b.data(), n) ==
              doctest::Approx(avx2->dot(a.data(), b.data(), n)).epsilon(1e-13 * scale));
        CHECK(ref.vsum(a.data(), n) ==
              doctest::Approx(avx2->vsum(a.data(), n)).epsilon(1e-13 * scale));
        CHECK(ref.sq_diff_sum(a.data(), b.data(), n) ==
              doctest::Approx(avx2->sq_diff_sum(a.data(), b.data(), n))
                  .epsilon(1e-13 * scale));
    }
}

TEST_CASE("adam_update variants agree") {
    const auto* avx2 = kernels::table("avx2");
    if (!avx2) return;
    const auto& ref = *kernels::scalar_table();

    Rng rng(11);
    for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 129u}) {
        auto g = random_vec(n, rng);
        auto p1 = random_vec(n, rng), p2 = p1;
        auto m1 = random_vec(n, rng, 0.0, 0.1), m2 = m1;
        auto v1 = random_vec(n, rng, 0.0, 0.1), v2 = v1;
        ref.adam_update(p1.data(), m1.data(), v1.data(), g.data(), n, 0.01, 0.9, 0.999,
                        1e-8, 0.5, 0.25);
        avx2->adam_update(p2.data(), m2.data(), v2.data(), g.data(), n, 0.01, 0.9, 0.999,
                          1e-8, 0.5, 0.25);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-13));
            CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-13));
            CHECK(v1[i] == doctest::Approx(v2[i]).epsilon(1e-13));
        }
    }
}

TEST_CASE("dispatch honors forcing") {
    CHECK(kernels::table("scalar") != nullptr);
    CHECK(kernels::table("nonsense") == nullptr);
    kernels::force("scalar");
    CHECK(std::string(kernels::active().name) == "scalar");
    if (kernels::avx2_supported()) {
        kernels::force("avx2");
        CHECK(std::string(kernels::active().name) == "avx2");
        kernels::force("auto");
        CHECK(std::string(kernels::active().name) == "avx2");
    }
    CHECK_THROWS_AS(kernels::force("bogus"), std::invalid_argument);
}
