#pragma once
// Evaluation criteria: per-label Dice and 95% Hausdorff distance, image
// MSE, percentage of negative-Jacobian pixels, parameter count and
// inference timing. Distances are in pixel units (unit spacing).

#include <cstdint>
#include <vector>

#include "gsreg/grid.hpp"
#include "gsreg/network.hpp"

namespace gsreg {

struct EvalReport {
    double dice_lv = 0.0, dice_myo = 0.0, dice_rv = 0.0;
    double hd95_lv = 0.0, hd95_myo = 0.0, hd95_rv = 0.0;
    double mse = 0.0;
    double njd_percent = 0.0;

    double dice_mean() const { return (dice_lv + dice_myo + dice_rv) / 3.0; }
    double hd95_mean() const { return (hd95_lv + hd95_myo + hd95_rv) / 3.0; }
};

struct TimingReport {
    double mean_ms = 0.0;
    double std_ms = 0.0;
};

// 2|A n B| / (|A| + |B|); both sides empty -> 1.
double dice(const LabelMask& a, const LabelMask& b, std::uint8_t label);

// max of the directed 95th-percentile boundary distances (4-connectivity
// boundaries, exact Euclidean distances, lower nearest-rank percentile).
// Throws when the label is absent from either mask.
double hd95(const LabelMask& a, const LabelMask& b, std::uint8_t label);

// 100 * |{det < 0}| / (H*W) over the Jacobian-determinant map.
double njd_percent(const DisplacementField& field);

double mse(const Grid2& a, const Grid2& b);

// Exact squared Euclidean distance transform of `inside` (distance to the
// nearest true cell), row-major h x w. Infinite where no true cell exists.
std::vector<double> squared_edt(const std::vector<std::uint8_t>& inside, int h, int w);

// Label-boundary pixels under 4-connectivity; pixels touching the image
// edge count as boundary.
std::vector<std::uint8_t> boundary_of_label(const LabelMask& m, std::uint8_t label);

// Wall-clock per registration, `repetitions` timed passes over the pairs
// after 3 warm-up passes; mean/std over the per-pass means.
TimingReport time_inference(RegistrationModel& model, const std::vector<Tensor>& pairs,
                            int repetitions);

}  // namespace gsreg
