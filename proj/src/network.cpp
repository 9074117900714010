#include "gsreg/network.hpp"

#include <cmath>

#include "gsreg/rng.hpp"

namespace gsreg {

UNetConfig UNetConfig::desk() {
    UNetConfig c;
    c.encoder_widths = {8, 16, 32};
    c.preset = "desk";
    return c;
}

UNetConfig UNetConfig::paper() {
    UNetConfig c;
    c.encoder_widths = {16, 32, 64, 128, 256};
    c.preset = "paper";
    return c;
}

UNetConfig UNetConfig::from_preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown network preset '" + name + "' (expected desk or paper)");
}

namespace {

Tensor he_init(int co, int ci, Rng& rng) {
    Tensor w(co, ci, 3, 3);
    const double std = std::sqrt(2.0 / (static_cast<double>(ci) * 9.0));
    for (auto& v : w.v) v = rng.normal(0.0, std);
    return w;
}

}  // namespace

RegistrationModel RegistrationModel::build_unet(const UNetConfig& cfg, std::uint64_t seed,
                                                GroupGranularity granularity) {
    if (cfg.levels() < 2)
        throw ConfigError("build_unet: at least 2 encoder levels required");
    RegistrationModel m;
    m.kind_ = ModelKind::UNet;
    m.cfg_ = cfg;
    m.granularity_ = granularity;

    Rng rng(seed);

    // Adds one conv layer's tensors to the parameter groups; per-layer
    // granularity packs w,b[,bn scale,shift] into one group in that order.
    auto add_conv = [&](const std::string& name, int ci, int co, bool has_bn,
                        bool zero_init) {
        ConvSpec spec;
        spec.name = name;
        spec.has_bn = has_bn;
        Tensor w = zero_init ? Tensor(co, ci, 3, 3) : he_init(co, ci, rng);
        Tensor b(co, 1, 1, 1);

        auto place = [&](Tensor t, const char* suffix) -> TensorRef {
            if (granularity == GroupGranularity::PerLayer) {
                if (m.groups_.empty() || m.groups_.back().layer_id != name)
                    m.groups_.push_back(ParamGroup{name, {}, true});
                m.groups_.back().tensors.push_back(std::move(t));
                return TensorRef{static_cast<int>(m.groups_.size() - 1),
                                 static_cast<int>(m.groups_.back().tensors.size() - 1)};
            }
            m.groups_.push_back(ParamGroup{name + "." + suffix, {std::move(t)}, true});
            return TensorRef{static_cast<int>(m.groups_.size() - 1), 0};
        };

        spec.w = place(std::move(w), "w");
        spec.b = place(std::move(b), "b");
        if (has_bn) {
            Tensor scale(co, 1, 1, 1, 1.0);
            Tensor shift(co, 1, 1, 1, 0.0);
            spec.bn_scale = place(std::move(scale), "bn_scale");
            spec.bn_shift = place(std::move(shift), "bn_shift");
            spec.bn_stats = static_cast<int>(m.bn_stats_.size());
            m.bn_stats_.emplace_back(co);
        }
        return spec;
    };

    const auto& widths = cfg.encoder_widths;
    const int levels = cfg.levels();

    int in_ch = 2;
    for (int l = 0; l < levels; ++l) {
        const std::string base = "enc" + std::to_string(l);
        BlockSpec blk;
        blk.c0 = add_conv(base + ".conv0", in_ch, widths[l], true, false);
        blk.c1 = add_conv(base + ".conv1", widths[l], widths[l], true, false);
        m.enc_.push_back(std::move(blk));
        in_ch = widths[l];
    }
    for (int l = levels - 2; l >= 0; --l) {
        const std::string base = "dec" + std::to_string(l);
        BlockSpec blk;
        const int cat_ch = in_ch + widths[l];  // upsampled + skip
        blk.c0 = add_conv(base + ".conv0", cat_ch, widths[l], true, false);
        blk.c1 = add_conv(base + ".conv1", widths[l], widths[l], true, false);
        m.dec_.push_back(std::move(blk));
        in_ch = widths[l];
    }
    m.head_ = add_conv("head.conv", in_ch, 2, false, true);
    return m;
}

RegistrationModel RegistrationModel::build_direct_field(int height, int width) {
    RegistrationModel m;
    m.kind_ = ModelKind::DirectField;
    m.cfg_.preset = "direct";
    m.groups_.push_back(ParamGroup{"field", {Tensor(1, 2, height, width)}, true});
    return m;
}

NodeId RegistrationModel::bind(Tape& tape, const TensorRef& ref, ParamBinding* binding) {
    const ParamGroup& g = groups_[ref.group];
    const NodeId id = g.trainable ? tape.param(g.tensors[ref.slot])
                                  : tape.leaf(g.tensors[ref.slot]);
    if (binding && g.trainable) (*binding)[g.layer_id].push_back(id);
    return id;
}

NodeId RegistrationModel::run_conv(Tape& tape, NodeId in, const ConvSpec& spec,
                                   ParamBinding* binding) {
    const NodeId w = bind(tape, spec.w, binding);
    const NodeId b = bind(tape, spec.b, binding);
    NodeId x = tape.conv2d(in, w, b, 1);
    if (spec.has_bn) {
        const NodeId scale = bind(tape, spec.bn_scale, binding);
        const NodeId shift = bind(tape, spec.bn_shift, binding);
        x = tape.batch_norm(x, scale, shift, train_mode_ ? BnMode::Train : BnMode::Eval,
                            &bn_stats_[spec.bn_stats]);
        x = tape.leaky_relu(x, cfg_.leaky_slope);
    }
    return x;
}

NodeId RegistrationModel::forward(Tape& tape, const Tensor& pair_batch,
                                  ParamBinding* binding) {
    if (pair_batch.c != 2)
        throw ShapeError("forward: expected a 2-channel (fixed, moving) batch, got " +
                         pair_batch.shape_str());

    if (kind_ == ModelKind::DirectField) {
        const Tensor& f = groups_[0].tensors[0];
        if (pair_batch.n != 1 || pair_batch.h != f.h || pair_batch.w != f.w)
            throw ShapeError("forward: direct_field expects a single " + f.shape_str() +
                             " pair, got " + pair_batch.shape_str());
        return bind(tape, TensorRef{0, 0}, binding);
    }

    const int div = cfg_.divisibility();
    if (pair_batch.h % div != 0 || pair_batch.w % div != 0)
        throw ShapeError("forward: input size " + pair_batch.shape_str() +
                         " must be divisible by " + std::to_string(div));

    NodeId x = tape.leaf(pair_batch);
    std::vector<NodeId> skips;
    for (std::size_t l = 0; l < enc_.size(); ++l) {
        if (l > 0) x = tape.maxpool2(x);
        x = run_conv(tape, x, enc_[l].c0, binding);
        x = run_conv(tape, x, enc_[l].c1, binding);
        if (l + 1 < enc_.size()) skips.push_back(x);
    }
    for (std::size_t d = 0; d < dec_.size(); ++d) {
        x = tape.upsample_nearest2(x);
        x = tape.concat_channels(x, skips[skips.size() - 1 - d]);
        x = run_conv(tape, x, dec_[d].c0, binding);
        x = run_conv(tape, x, dec_[d].c1, binding);
    }
    return run_conv(tape, x, head_, binding);
}

std::size_t RegistrationModel::param_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_)
        if (g.trainable) n += g.param_count();
    return n;
}

}  // namespace gsreg
