#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gsreg/grid.hpp"
#include "gsreg/rng.hpp"

using namespace gsreg;

namespace {

Grid2 random_image(int h, int w, Rng& rng) {
    Grid2 g(h, w);
    for (auto& v : g.data) v = rng.uniform01();
    return g;
}

DisplacementField constant_field(int h, int w, double ux, double uy) {
    DisplacementField f(h, w);
    std::fill(f.ux.data.begin(), f.ux.data.end(), ux);
    std::fill(f.uy.data.begin(), f.uy.data.end(), uy);
    return f;
}

}  // namespace

TEST_CASE("normalize_intensity") {
    Grid2 g(1, 3);
    g.data = {2, 4, 6};
    const Grid2 n = normalize_intensity(g);
    CHECK(n.data == std::vector<double>{0.0, 0.5, 1.0});

    // already-normalized ramp is a fixed point
    Grid2 ramp(2, 3);
    ramp.data = {0, 0.2, 0.4, 0.6, 0.8, 1.0};
    CHECK(normalize_intensity(ramp).data == ramp.data);

    Grid2 constant(4, 4, 5.0);
    const Grid2 z = normalize_intensity(constant);
    CHECK(std::all_of(z.data.begin(), z.data.end(), [](double v) { return v == 0.0; }));

    CHECK_THROWS_AS(normalize_intensity(Grid2{}), ShapeError);
}

TEST_CASE("bilinear_sample basics") {
    Rng rng(3);
    Grid2 img = random_image(5, 7, rng);

    // exact at pixel centers
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x)
            CHECK(bilinear_sample(img, x, y) == img.at(y, x));

    Grid2 two(1, 2);
    two.data = {0.0, 1.0};
    CHECK(bilinear_sample(two, 0.5, 0.0) == doctest::Approx(0.5));

    // out-of-range x clamps to column 0, still interpolating rows
    for (double y : {0.0, 0.5, 1.75, 3.0}) {
        const double expected = bilinear_sample(img, 0.0, y);
        CHECK(bilinear_sample(img, -5.0, y) == expected);
    }

    // convexity: result within [min,max] of the 4 neighbors
    for (int trial = 0; trial < 200; ++trial) {
        const double x = rng.uniform(-1.0, 7.0);
        const double y = rng.uniform(-1.0, 5.0);
        const double v = bilinear_sample(img, x, y);
        const auto [mn, mx] = std::minmax_element(img.data.begin(), img.data.end());
        CHECK(v >= *mn - 1e-12);
        CHECK(v <= *mx + 1e-12);
    }
}

TEST_CASE("warp_image") {
    Rng rng(11);

    SUBCASE("zero field is the identity, bit-exact") {
        const Grid2 img = random_image(9, 8, rng);
        const Grid2 out = warp_image(img, DisplacementField(9, 8));
        CHECK(out.data == img.data);
    }

    SUBCASE("constant shift on a horizontal ramp, direct evaluation oracle") {
        const int h = 6, w = 10;
        Grid2 ramp(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) ramp.at(y, x) = static_cast<double>(x);
        const Grid2 out = warp_image(ramp, constant_field(h, w, 1.0, 0.0));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                CHECK(out.at(y, x) ==
                      doctest::Approx(std::min<double>(x + 1, w - 1)).epsilon(1e-12));
    }

    SUBCASE("warp by u then -u recovers the original in the interior") {
        const int n = 16;
        Grid2 smooth(n, n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                smooth.at(y, x) = 0.5 + 0.4 * std::sin(0.5 * x) * std::cos(0.4 * y);
        DisplacementField u(n, n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                u.ux.at(y, x) = 0.6 * std::sin(0.3 * y);
                u.uy.at(y, x) = 0.5 * std::cos(0.3 * x);
            }
        DisplacementField nu(n, n);
        for (std::size_t i = 0; i < u.ux.data.size(); ++i) {
            nu.ux.data[i] = -u.ux.data[i];
            nu.uy.data[i] = -u.uy.data[i];
        }
        const Grid2 round_trip = warp_image(warp_image(smooth, u), nu);
        for (int y = 2; y < n - 2; ++y)
            for (int x = 2; x < n - 2; ++x)
                CHECK(round_trip.at(y, x) ==
                      doctest::Approx(smooth.at(y, x)).epsilon(1e-2));
    }

    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(warp_image(Grid2(4, 4), DisplacementField(5, 5)), ShapeError);
    }
}

TEST_CASE("warp_labels") {
    SUBCASE("zero field identity") {
        LabelMask m(6, 6);
        m.at(2, 3) = 1;
        m.at(4, 4) = 3;
        const LabelMask out = warp_labels(m, DisplacementField(6, 6));
        CHECK(out.labels == m.labels);
    }

    SUBCASE("constant shift against a brute-force nearest-neighbor oracle") {
        LabelMask m(12, 12);
        m.at(5, 5) = 2;
        const DisplacementField f = constant_field(12, 12, 1.0, 0.0);
        const LabelMask out = warp_labels(m, f);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                const int sx =
                    static_cast<int>(std::lround(std::clamp(x + 1.0, 0.0, 11.0)));
                CHECK(out.at(y, x) == m.at(y, sx));
            }
        // the label lands where the sampled source rounds to (5,5)
        CHECK(out.at(5, 4) == 2);
        CHECK(out.at(5, 5) == 0);
    }

    SUBCASE("labels in output are a subset of input labels") {
        Rng rng(5);
        LabelMask m(10, 10);
        for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
        for (int trial = 0; trial < 20; ++trial) {
            DisplacementField f(10, 10);
            for (std::size_t i = 0; i < f.ux.data.size(); ++i) {
                f.ux.data[i] = rng.uniform(-15.0, 15.0);
                f.uy.data[i] = rng.uniform(-15.0, 15.0);
            }
            const LabelMask out = warp_labels(m, f);
            for (auto l : out.labels) CHECK(l <= 3);
        }
    }

    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(warp_labels(LabelMask(4, 4), DisplacementField(5, 5)), ShapeError);
    }
}

TEST_CASE("jacobian_determinant") {
    SUBCASE("zero field gives 1 everywhere") {
        const Grid2 det = jacobian_determinant(DisplacementField(8, 9));
        for (double v : det.data) CHECK(v == 1.0);
    }

    SUBCASE("pure translation gives 1 everywhere") {
        const Grid2 det = jacobian_determinant(constant_field(7, 7, 3.25, -1.5));
        for (double v : det.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    }

    SUBCASE("affine field matches the analytic determinant") {
        const int n = 10;
        DisplacementField f(n, n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                f.ux.at(y, x) = 0.1 * x;
                f.uy.at(y, x) = 0.2 * y;
            }
        const Grid2 det = jacobian_determinant(f);
        for (int y = 1; y < n - 1; ++y)
            for (int x = 1; x < n - 1; ++x)
                CHECK(det.at(y, x) == doctest::Approx(1.32).epsilon(1e-12));
    }

    SUBCASE("negative branch: u_x = -2x") {
        const int n = 8;
        DisplacementField f(n, n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) f.ux.at(y, x) = -2.0 * x;
        const Grid2 det = jacobian_determinant(f);
        for (int y = 1; y < n - 1; ++y)
            for (int x = 1; x < n - 1; ++x)
                CHECK(det.at(y, x) == doctest::Approx(-1.0).epsilon(1e-12));
    }

    SUBCASE("grids below 3x3 are rejected") {
        CHECK_THROWS_AS(jacobian_determinant(DisplacementField(2, 5)), ShapeError);
    }
}

TEST_CASE("spatial_gradient") {
    SUBCASE("constant grid") {
        auto [gx, gy] = spatial_gradient(Grid2(5, 6, 3.0));
        for (double v : gx.data) CHECK(v == 0.0);
        for (double v : gy.data) CHECK(v == 0.0);
    }

    SUBCASE("ramp in x") {
        Grid2 g(4, 5);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) g.at(y, x) = static_cast<double>(x);
        auto [gx, gy] = spatial_gradient(g);
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) CHECK(gx.at(y, x) == 1.0);
            CHECK(gx.at(y, 4) == 0.0);  // last column defined as zero
        }
        for (double v : gy.data) CHECK(v == 0.0);
    }

    SUBCASE("g = x + 2y, per-pixel direct evaluation") {
        Grid2 g(6, 6);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) g.at(y, x) = x + 2.0 * y;
        auto [gx, gy] = spatial_gradient(g);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                CHECK(gx.at(y, x) == 1.0);
                CHECK(gy.at(y, x) == 2.0);
            }
    }

    SUBCASE("degenerate grid rejected") {
        CHECK_THROWS_AS(spatial_gradient(Grid2(1, 1, 0.0)), ShapeError);
    }
}
