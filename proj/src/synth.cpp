#include "gsreg/synth.hpp"

#include <cmath>
#include <fstream>

#include "gsreg/io.hpp"
#include "gsreg/metrics.hpp"
#include "gsreg/rng.hpp"

namespace gsreg {

void PhantomSpec::validate() const {
    if (size < 16) throw ConfigError("phantom: size must be >= 16");
    if (lv_radius <= 0 || myo_radius <= lv_radius)
        throw ConfigError("phantom: radii must be positive and nested (LV inside Myo)");
    if (rv_radius <= 0 || rv_offset <= 0) throw ConfigError("phantom: invalid RV geometry");
    for (double v : {intensity_bg, intensity_lv, intensity_myo, intensity_rv})
        if (v < 0.0 || v > 1.0) throw ConfigError("phantom: intensities must be in [0,1]");
    if (noise_std < 0.0) throw ConfigError("phantom: noise_std must be >= 0");
    if (geometry_jitter < 0.0 || geometry_jitter > 0.5)
        throw ConfigError("phantom: geometry_jitter must be in [0, 0.5]");
}

void DeformSpec::validate() const {
    if (bumps < 0) throw ConfigError("deform: bumps must be >= 0");
    if (amp_min < 0 || amp_max < amp_min) throw ConfigError("deform: bad amplitude range");
    if (sigma_min <= 0 || sigma_max < sigma_min) throw ConfigError("deform: bad sigma range");
}

namespace {

// Per-case anatomy in pixel units.
struct Anatomy {
    double cx, cy, r_lv, r_myo, r_rv, rv_dx;
    double i_bg, i_lv, i_myo, i_rv;

    int region(double x, double y) const {
        const double d_lv = std::hypot(x - cx, y - cy);
        if (d_lv <= r_lv) return 1;                         // LV
        if (d_lv <= r_myo) return 2;                        // Myo ring
        const double d_rv = std::hypot(x - (cx - rv_dx), y - cy);
        if (d_rv <= r_rv) return 3;                         // RV crescent
        return 0;
    }

    double intensity(double x, double y) const {
        switch (region(x, y)) {
            case 1: return i_lv;
            case 2: return i_myo;
            case 3: return i_rv;
            default: return i_bg;
        }
    }
};

Anatomy sample_anatomy(const PhantomSpec& p, Rng& rng) {
    const double s = static_cast<double>(p.size);
    const double j = p.geometry_jitter;
    auto jit = [&](double v) { return j > 0.0 ? v * (1.0 + rng.uniform(-j, j)) : v; };
    Anatomy a;
    a.cx = p.lv_cx * s + (j > 0.0 ? rng.uniform(-j, j) * 0.25 * s : 0.0);
    a.cy = p.lv_cy * s + (j > 0.0 ? rng.uniform(-j, j) * 0.25 * s : 0.0);
    a.r_lv = jit(p.lv_radius * s);
    a.r_myo = std::max(jit(p.myo_radius * s), a.r_lv * 1.15);
    a.r_rv = jit(p.rv_radius * s);
    a.rv_dx = std::max(jit(p.rv_offset * s), a.r_myo * 0.9);
    a.i_bg = p.intensity_bg;
    a.i_lv = p.intensity_lv;
    a.i_myo = p.intensity_myo;
    a.i_rv = p.intensity_rv;
    return a;
}

struct Bump {
    double cx, cy, sigma, ax, ay;
};

struct SmoothField {
    std::vector<Bump> bumps;

    void displace(double x, double y, double& ux, double& uy) const {
        ux = 0.0;
        uy = 0.0;
        for (const auto& b : bumps) {
            const double dx = x - b.cx, dy = y - b.cy;
            const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            ux += b.ax * g;
            uy += b.ay * g;
        }
    }

    // conservative operator-norm bound: sum_k |a_k| * max|grad g_k|
    // with max|grad g| = exp(-1/2)/sigma for a unit Gaussian bump
    double gradient_bound() const {
        double bound = 0.0;
        for (const auto& b : bumps)
            bound += std::hypot(b.ax, b.ay) * std::exp(-0.5) / b.sigma;
        return bound;
    }

    void rescale(double factor) {
        for (auto& b : bumps) {
            b.ax *= factor;
            b.ay *= factor;
        }
    }
};

SmoothField sample_field(const DeformSpec& d, int size, Rng& rng) {
    SmoothField f;
    f.bumps.reserve(d.bumps);
    const double s = static_cast<double>(size);
    for (int i = 0; i < d.bumps; ++i) {
        Bump b;
        b.cx = rng.uniform(0.15 * s, 0.85 * s);
        b.cy = rng.uniform(0.15 * s, 0.85 * s);
        b.sigma = rng.uniform(d.sigma_min, d.sigma_max);
        const double amp = rng.uniform(d.amp_min, d.amp_max);
        const double theta = rng.uniform(0.0, 2.0 * 3.141592653589793238462643383279502884);
        b.ax = amp * std::cos(theta);
        b.ay = amp * std::sin(theta);
        f.bumps.push_back(b);
    }
    // fold-free guarantee via the analytic bound
    const double bound = f.gradient_bound();
    constexpr double kMaxOpNorm = 0.89;
    if (bound > kMaxOpNorm) f.rescale(kMaxOpNorm / bound);
    return f;
}

}  // namespace

SynthCase make_pair(const PhantomSpec& pspec, const DeformSpec& dspec, std::uint64_t seed) {
    pspec.validate();
    dspec.validate();

    Rng master(seed);
    Rng geo_rng = master.fork(1);
    Rng field_rng = master.fork(2);
    Rng noise_rng = master.fork(3);

    const int size = pspec.size;
    const Anatomy anatomy = sample_anatomy(pspec, geo_rng);
    SmoothField field = sample_field(dspec, size, field_rng);

    SynthCase out;
    out.moving = Grid2(size, size);
    out.fixed = Grid2(size, size);
    out.moving_mask = LabelMask(size, size);
    out.fixed_mask = LabelMask(size, size);
    out.gt_field = DisplacementField(size, size);

    // The discrete Jacobian of the rendered field is re-checked; if the
    // conservative analytic bound was not conservative enough for this
    // sample the amplitudes shrink until the field is fold-free.
    for (int attempt = 0; attempt < 12; ++attempt) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double ux, uy;
                field.displace(x, y, ux, uy);
                out.gt_field.ux.at(y, x) = ux;
                out.gt_field.uy.at(y, x) = uy;
            }
        if (dspec.bumps == 0 || njd_percent(out.gt_field) == 0.0) break;
        field.rescale(0.5);
    }

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            out.moving.at(y, x) = anatomy.intensity(x, y);
            out.moving_mask.at(y, x) =
                static_cast<std::uint8_t>(anatomy.region(x, y));
            const double sx = x + out.gt_field.ux.at(y, x);
            const double sy = y + out.gt_field.uy.at(y, x);
            out.fixed.at(y, x) = anatomy.intensity(sx, sy);
            out.fixed_mask.at(y, x) = static_cast<std::uint8_t>(anatomy.region(sx, sy));
        }

    if (pspec.noise_std > 0.0) {
        for (auto& v : out.moving.data) v += noise_rng.normal(0.0, pspec.noise_std);
        for (auto& v : out.fixed.data) v += noise_rng.normal(0.0, pspec.noise_std);
    }
    out.moving = normalize_intensity(out.moving);
    out.fixed = normalize_intensity(out.fixed);
    return out;
}

DatasetManifest make_dataset(int n, const PhantomSpec& pspec, const DeformSpec& dspec,
                             std::uint64_t base_seed,
                             const std::filesystem::path& out_dir) {
    if (n < 20) throw ConfigError("make_dataset: need at least 20 cases, got " +
                                  std::to_string(n));
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "cases");

    DatasetManifest manifest;
    manifest.root = out_dir;

    const int n_train = (n * 75) / 100;
    const int n_val = (n * 5) / 100;

    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "cases/case_%04d", i);
        const fs::path dir = out_dir / name;
        fs::create_directories(dir);

        const SynthCase c = make_pair(pspec, dspec, base_seed + static_cast<std::uint64_t>(i));
        write_pgm(dir / "moving.pgm", c.moving);
        write_pgm(dir / "fixed.pgm", c.fixed);
        write_mask(dir / "moving_mask.gsmf", c.moving_mask);
        write_mask(dir / "fixed_mask.gsmf", c.fixed_mask);
        write_field(dir / "gt_field.gsmf", c.gt_field);

        if (i < n_train)
            manifest.train.emplace_back(name);
        else if (i < n_train + n_val)
            manifest.val.emplace_back(name);
        else
            manifest.test.emplace_back(name);
    }

    auto write_list = [&](const char* fname, const std::vector<std::string>& lines) {
        std::ofstream out(out_dir / fname, std::ios::trunc);
        if (!out) throw IoError("cannot create manifest " + (out_dir / fname).string());
        for (const auto& l : lines) out << l << "\n";
    };
    write_list("train.txt", manifest.train);
    write_list("val.txt", manifest.val);
    write_list("test.txt", manifest.test);
    return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir) {
    DatasetManifest m;
    m.root = dataset_dir;
    auto read_list = [&](const char* fname, std::vector<std::string>& out) {
        std::ifstream in(dataset_dir / fname);
        if (!in) throw IoError("cannot open manifest " + (dataset_dir / fname).string());
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) out.push_back(line);
    };
    read_list("train.txt", m.train);
    read_list("val.txt", m.val);
    read_list("test.txt", m.test);
    return m;
}

LoadedCase load_case(const std::filesystem::path& case_dir) {
    LoadedCase c;
    c.moving = read_pgm(case_dir / "moving.pgm");
    c.fixed = read_pgm(case_dir / "fixed.pgm");
    c.moving_mask = read_mask(case_dir / "moving_mask.gsmf");
    c.fixed_mask = read_mask(case_dir / "fixed_mask.gsmf");
    c.gt_field = read_field(case_dir / "gt_field.gsmf");
    return c;
}

}  // namespace gsreg
