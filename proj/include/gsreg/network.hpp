#pragma once
// Registration models: a U-Net predicting a displacement field from a
// (fixed, moving) pair, and a direct-field model whose parameters are the
// field itself (used for instance-wise optimization and oracle tests).

#include <cstdint>
#include <string>
#include <vector>

#include "gsreg/autodiff.hpp"

namespace gsreg {

enum class ModelKind { UNet, DirectField };
enum class GroupGranularity { PerLayer, PerTensor };

struct UNetConfig {
    std::vector<int> encoder_widths;  // innermost last; decoder mirrors it
    double leaky_slope = 0.2;
    std::string preset = "custom";

    static UNetConfig desk();   // widths 8, 16, 32
    static UNetConfig paper();  // widths 16, 32, 64, 128, 256
    static UNetConfig from_preset(const std::string& name);

    int levels() const { return static_cast<int>(encoder_widths.size()); }
    // input spatial size must be divisible by this
    int divisibility() const { return 1 << (levels() - 1); }
};

class RegistrationModel {
public:
    // Encoder blocks of 2x[conv3x3 -> batchnorm -> leakyReLU] with maxpool
    // downsampling; decoder with nearest upsampling, skip concatenation and
    // the same blocks; final 3x3 conv to 2 channels, zero-initialized so
    // training starts at the identity transform. Other convs He-initialized.
    static RegistrationModel build_unet(const UNetConfig& cfg, std::uint64_t seed,
                                        GroupGranularity granularity = GroupGranularity::PerLayer);

    // Direct model: one trainable group "field" of shape (1,2,H,W).
    static RegistrationModel build_direct_field(int height, int width);

    ModelKind kind() const { return kind_; }
    const UNetConfig& config() const { return cfg_; }
    GroupGranularity granularity() const { return granularity_; }

    void set_train_mode(bool train) { train_mode_ = train; }
    bool train_mode() const { return train_mode_; }

    // Records the forward pass for a batch of stacked pairs
    // (N, 2, H, W; channel 0 = fixed, 1 = moving) and returns the field
    // node (N, 2, H, W). `binding` receives the tape nodes of every
    // trainable group, in flattening order.
    NodeId forward(Tape& tape, const Tensor& pair_batch, ParamBinding* binding = nullptr);

    std::vector<ParamGroup>& groups() { return groups_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }
    std::vector<BnRunningStats>& bn_stats() { return bn_stats_; }
    const std::vector<BnRunningStats>& bn_stats() const { return bn_stats_; }

    std::size_t param_count() const;

private:
    struct TensorRef {
        int group = -1;
        int slot = -1;
    };
    struct ConvSpec {
        std::string name;
        TensorRef w, b, bn_scale, bn_shift;
        int bn_stats = -1;
        bool has_bn = false;
    };
    struct BlockSpec {
        ConvSpec c0, c1;
    };

    Tensor& tensor_of(const TensorRef& ref) { return groups_[ref.group].tensors[ref.slot]; }
    NodeId bind(Tape& tape, const TensorRef& ref, ParamBinding* binding);
    NodeId run_conv(Tape& tape, NodeId in, const ConvSpec& spec, ParamBinding* binding);

    ModelKind kind_ = ModelKind::UNet;
    UNetConfig cfg_;
    GroupGranularity granularity_ = GroupGranularity::PerLayer;
    bool train_mode_ = true;

    std::vector<ParamGroup> groups_;
    std::vector<BnRunningStats> bn_stats_;

    std::vector<BlockSpec> enc_;
    std::vector<BlockSpec> dec_;  // deepest first
    ConvSpec head_;
};

}  // namespace gsreg
