#pragma once
// 2-D image containers and the geometric operators of the registration
// engine: bilinear warping, nearest-neighbor label warping, Jacobian
// determinants and finite-difference gradients.
//
// Conventions (fixed across the project):
//  - pixel centers sit at integer coordinates, x = column, y = row;
//  - displacements are stored in pixel units, deformation is x + u(x);
//  - sampling outside the image clamps coordinates to the border
//    (border-replicate), never zero-pads;
//  - Jacobians use central differences inside, one-sided at borders;
//  - smoothness-style gradients use forward differences with the last
//    row/column defined as zero.

#include <cstdint>
#include <utility>
#include <vector>

#include "gsreg/errors.hpp"

namespace gsreg {

struct Grid2 {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // row-major, data[y*width + x]

    Grid2() = default;
    Grid2(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t numel() const { return data.size(); }
    bool same_shape(const Grid2& o) const { return height == o.height && width == o.width; }
};

struct LabelMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;  // 0=background, 1..3 anatomy

    LabelMask() = default;
    LabelMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const {
        return labels[static_cast<std::size_t>(y) * width + x];
    }
    bool same_shape(const LabelMask& o) const {
        return height == o.height && width == o.width;
    }
};

// u = (u_x, u_y); the deformation applied to coordinates is x + u(x).
struct DisplacementField {
    Grid2 ux;
    Grid2 uy;

    DisplacementField() = default;
    DisplacementField(int h, int w) : ux(h, w), uy(h, w) {}

    int height() const { return ux.height; }
    int width() const { return ux.width; }
};

// Linear rescale to [0,1]; a constant input maps to all zeros.
Grid2 normalize_intensity(const Grid2& img);

// Bilinear interpolation with border-replicate clamping.
double bilinear_sample(const Grid2& img, double x, double y);

// out(x) = bilinear_sample(img, x + u(x)).
Grid2 warp_image(const Grid2& img, const DisplacementField& field);

// Nearest-neighbor label resampling at x + u(x); labels are never blended.
LabelMask warp_labels(const LabelMask& mask, const DisplacementField& field);

// Per-pixel det(I + grad u); central differences inside, one-sided on the
// borders. Requires at least 3x3.
Grid2 jacobian_determinant(const DisplacementField& field);

// Forward differences (d/dx, d/dy); the last column/row is defined as 0.
std::pair<Grid2, Grid2> spatial_gradient(const Grid2& g);

}  // namespace gsreg
