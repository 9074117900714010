#pragma once
// Synthetic cardiac-like benchmark: analytic phantoms (LV disk, Myo ring,
// RV crescent) deformed by smooth, fold-free Gaussian-bump displacement
// fields with exact ground truth. The fixed image is the analytic
// composition T(x + u(x)) rendered at pixel centers, so there is no
// resampling error in the ground truth correspondence.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gsreg/grid.hpp"

namespace gsreg {

struct PhantomSpec {
    int size = 64;  // square images

    // base geometry in units of image size (scaled at render time)
    double lv_cx = 0.56, lv_cy = 0.50;  // LV center
    double lv_radius = 0.125;
    double myo_radius = 0.19;   // outer myocardium radius
    double rv_radius = 0.115;   // RV disk radius
    double rv_offset = 0.205;   // RV center sits this far left of the LV
    double geometry_jitter = 0.10;  // relative per-case jitter, 0 disables

    // intensities before noise/normalization
    double intensity_bg = 0.05;
    double intensity_lv = 0.90;
    double intensity_myo = 0.45;
    double intensity_rv = 0.70;
    double noise_std = 0.02;

    void validate() const;
};

struct DeformSpec {
    int bumps = 5;
    double amp_min = 3.0;   // pixels
    double amp_max = 7.0;   // pixels
    double sigma_min = 8.0;  // pixels
    double sigma_max = 16.0;

    void validate() const;
};

struct SynthCase {
    Grid2 moving;
    Grid2 fixed;
    LabelMask moving_mask;
    LabelMask fixed_mask;
    DisplacementField gt_field;
};

// Deterministic per-seed case generation.
SynthCase make_pair(const PhantomSpec& pspec, const DeformSpec& dspec, std::uint64_t seed);

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> train;  // case directories relative to root
    std::vector<std::string> val;
    std::vector<std::string> test;
};

// Generates n cases (seeds base_seed..base_seed+n-1), writes them under
// out_dir/cases/, and splits 75/5/20 by case index (floor for train and
// val, remainder to test). Requires n >= 20.
DatasetManifest make_dataset(int n, const PhantomSpec& pspec, const DeformSpec& dspec,
                             std::uint64_t base_seed, const std::filesystem::path& out_dir);

// Reads a manifest previously written by make_dataset.
DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

struct LoadedCase {
    Grid2 moving;
    Grid2 fixed;
    LabelMask moving_mask;
    LabelMask fixed_mask;
    DisplacementField gt_field;
};

LoadedCase load_case(const std::filesystem::path& case_dir);

}  // namespace gsreg
