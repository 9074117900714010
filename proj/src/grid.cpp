#include "gsreg/grid.hpp"

#include <algorithm>
#include <cmath>

namespace gsreg {

Grid2 normalize_intensity(const Grid2& img) {
    if (img.numel() == 0) throw ShapeError("normalize_intensity: empty grid");
    const auto [mn_it, mx_it] = std::minmax_element(img.data.begin(), img.data.end());
    const double mn = *mn_it, mx = *mx_it;
    Grid2 out(img.height, img.width);
    if (mx == mn) return out;  // constant input -> all zeros
    const double inv = 1.0 / (mx - mn);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = (img.data[i] - mn) * inv;
    return out;
}

double bilinear_sample(const Grid2& img, double x, double y) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = std::min(static_cast<int>(cx), img.width - 2 >= 0 ? img.width - 2 : 0);
    const int y0 = std::min(static_cast<int>(cy), img.height - 2 >= 0 ? img.height - 2 : 0);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = cx - x0;
    const double fy = cy - y0;
    const double v00 = img.at(y0, x0), v10 = img.at(y0, x1);
    const double v01 = img.at(y1, x0), v11 = img.at(y1, x1);
    const double top = v00 + fx * (v10 - v00);
    const double bot = v01 + fx * (v11 - v01);
    return top + fy * (bot - top);
}

Grid2 warp_image(const Grid2& img, const DisplacementField& field) {
    if (!img.same_shape(field.ux) || !field.ux.same_shape(field.uy))
        throw ShapeError("warp_image: image/field shape mismatch");
    Grid2 out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(y, x) = bilinear_sample(img, x + field.ux.at(y, x), y + field.uy.at(y, x));
    return out;
}

LabelMask warp_labels(const LabelMask& mask, const DisplacementField& field) {
    if (mask.height != field.ux.height || mask.width != field.ux.width ||
        !field.ux.same_shape(field.uy))
        throw ShapeError("warp_labels: mask/field shape mismatch");
    LabelMask out(mask.height, mask.width);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const double sx = std::clamp(x + field.ux.at(y, x), 0.0,
                                         static_cast<double>(mask.width - 1));
            const double sy = std::clamp(y + field.uy.at(y, x), 0.0,
                                         static_cast<double>(mask.height - 1));
            const int nx = static_cast<int>(std::lround(sx));
            const int ny = static_cast<int>(std::lround(sy));
            out.at(y, x) = mask.at(ny, nx);
        }
    }
    return out;
}

namespace {

// Central difference inside, one-sided at the two borders.
inline double ddx(const Grid2& g, int y, int x) {
    if (x == 0) return g.at(y, 1) - g.at(y, 0);
    if (x == g.width - 1) return g.at(y, x) - g.at(y, x - 1);
    return 0.5 * (g.at(y, x + 1) - g.at(y, x - 1));
}

inline double ddy(const Grid2& g, int y, int x) {
    if (y == 0) return g.at(1, x) - g.at(0, x);
    if (y == g.height - 1) return g.at(y, x) - g.at(y - 1, x);
    return 0.5 * (g.at(y + 1, x) - g.at(y - 1, x));
}

}  // namespace

Grid2 jacobian_determinant(const DisplacementField& field) {
    const int h = field.height(), w = field.width();
    if (h < 3 || w < 3) throw ShapeError("jacobian_determinant: grid must be at least 3x3");
    Grid2 det(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double a = 1.0 + ddx(field.ux, y, x);  // d(phi_x)/dx
            const double b = ddy(field.ux, y, x);        // d(phi_x)/dy
            const double c = ddx(field.uy, y, x);        // d(phi_y)/dx
            const double d = 1.0 + ddy(field.uy, y, x);  // d(phi_y)/dy
            det.at(y, x) = a * d - b * c;
        }
    }
    return det;
}

std::pair<Grid2, Grid2> spatial_gradient(const Grid2& g) {
    if (g.height < 2 || g.width < 2)
        throw ShapeError("spatial_gradient: grid must be at least 2x2");
    Grid2 gx(g.height, g.width), gy(g.height, g.width);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x + 1 < g.width; ++x) gx.at(y, x) = g.at(y, x + 1) - g.at(y, x);
    for (int y = 0; y + 1 < g.height; ++y)
        for (int x = 0; x < g.width; ++x) gy.at(y, x) = g.at(y + 1, x) - g.at(y, x);
    return {std::move(gx), std::move(gy)};
}

}  // namespace gsreg
