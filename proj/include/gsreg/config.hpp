#pragma once
// Flat `key = value` experiment configuration with `#` comments. Every
// key is validated against the known set before any work happens;
// unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gsreg/network.hpp"
#include "gsreg/surgery.hpp"
#include "gsreg/synth.hpp"

namespace gsreg {

struct RunConfig {
    // model / optimization
    std::string model = "unet";  // unet | direct_field
    std::string preset = "desk";
    std::string strategy = "layerwise_project";
    double lambda = 0.01;  // weighted_sum
    double sigma = 0.0;    // agr_random; 0 = per-group std
    std::string grouping = "per_layer";  // per_layer | per_tensor
    std::string similarity = "mse";
    int lncc_window = 9;
    double lr = 5e-3;
    int batch = 8;     // paper setting: 32
    int epochs = 100;  // paper setting: 500
    std::uint64_t seed = 42;

    // dataset generation
    int cases = 200;
    int image_size = 64;
    std::uint64_t base_seed = 1000;
    double noise_std = 0.02;
    double geometry_jitter = 0.10;
    int bumps = 5;
    double amp_min = 3.0, amp_max = 7.0;
    double sigma_min = 8.0, sigma_max = 16.0;

    // eval / timing
    int timing_reps = 5;

    // paths
    std::filesystem::path data;
    std::filesystem::path out;

    // Parsed file contents for checkpoint echo / reproducibility.
    std::vector<std::string> echo_lines() const;

    Strategy make_strategy() const { return Strategy::parse(strategy, lambda, sigma); }
    LossConfig make_loss() const {
        return LossConfig{similarity_from_string(similarity), lncc_window};
    }
    UNetConfig make_unet_config() const { return UNetConfig::from_preset(preset); }
    GroupGranularity make_granularity() const;
    PhantomSpec make_phantom_spec() const;
    DeformSpec make_deform_spec() const;

    void validate() const;
};

// Parses a config file; unknown keys or malformed values raise ConfigError.
RunConfig parse_config_file(const std::filesystem::path& path);

// Applies a `key = value` assignment (used for file lines and CLI overrides).
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace gsreg
