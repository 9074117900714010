#include "gsreg/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace gsreg {

double dice(const LabelMask& a, const LabelMask& b, std::uint8_t label) {
    if (!a.same_shape(b)) throw ShapeError("dice: mask shape mismatch");
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const bool ia = a.labels[i] == label;
        const bool ib = b.labels[i] == label;
        na += ia;
        nb += ib;
        inter += ia && ib;
    }
    if (na + nb == 0) return 1.0;  // both empty: perfect agreement by convention
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::uint8_t> boundary_of_label(const LabelMask& m, std::uint8_t label) {
    std::vector<std::uint8_t> out(m.labels.size(), 0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (m.at(y, x) != label) continue;
            const bool edge = y == 0 || y == m.height - 1 || x == 0 || x == m.width - 1;
            const bool exposed = edge || m.at(y - 1, x) != label || m.at(y + 1, x) != label ||
                                 m.at(y, x - 1) != label || m.at(y, x + 1) != label;
            if (exposed) out[static_cast<std::size_t>(y) * m.width + x] = 1;
        }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, double* d, int n, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        double s;
        while (true) {
            if (f[v[k]] == kInf) {
                // previous site unusable: replace it
                if (k == 0) {
                    v[0] = q;
                    z[0] = -kInf;
                    z[1] = kInf;
                    break;
                }
                --k;
                continue;
            }
            s = ((f[q] + q * static_cast<double>(q)) -
                 (f[v[k]] + v[k] * static_cast<double>(v[k]))) /
                (2.0 * q - 2.0 * v[k]);
            if (s <= z[k]) {
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = kInf;
            break;
        }
    }
    if (f[v[0]] == kInf) {
        std::fill_n(d, n, kInf);
        return;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - static_cast<double>(v[k]);
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

std::vector<double> squared_edt(const std::vector<std::uint8_t>& inside, int h, int w) {
    std::vector<double> dist(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = inside[i] ? 0.0 : kInf;

    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);

    // columns
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = dist[static_cast<std::size_t>(y) * w + x];
        edt_1d(f.data(), d.data(), h, v.data(), z.data());
        for (int y = 0; y < h; ++y) dist[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    // rows
    for (int y = 0; y < h; ++y) {
        double* row = dist.data() + static_cast<std::size_t>(y) * w;
        std::copy_n(row, w, f.data());
        edt_1d(f.data(), d.data(), w, v.data(), z.data());
        std::copy_n(d.data(), w, row);
    }
    return dist;
}

namespace {

// distances from each boundary pixel of `from` to the nearest boundary
// pixel of `to`
std::vector<double> directed_boundary_distances(const std::vector<std::uint8_t>& from,
                                                const std::vector<double>& sq_dist_to) {
    std::vector<double> out;
    for (std::size_t i = 0; i < from.size(); ++i)
        if (from[i]) out.push_back(std::sqrt(sq_dist_to[i]));
    return out;
}

// lower nearest-rank percentile: k-th smallest with k = ceil(p*n), 1-based
double percentile_nearest_rank(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (k == 0) k = 1;
    if (k > n) k = n;
    return values[k - 1];
}

}  // namespace

double hd95(const LabelMask& a, const LabelMask& b, std::uint8_t label) {
    if (!a.same_shape(b)) throw ShapeError("hd95: mask shape mismatch");
    const auto ba = boundary_of_label(a, label);
    const auto bb = boundary_of_label(b, label);
    const bool has_a = std::find(ba.begin(), ba.end(), 1) != ba.end();
    const bool has_b = std::find(bb.begin(), bb.end(), 1) != bb.end();
    if (!has_a || !has_b)
        throw ShapeError("hd95: label " + std::to_string(int(label)) +
                         " empty in one mask, undefined distance");

    const auto da = squared_edt(ba, a.height, a.width);
    const auto db = squared_edt(bb, a.height, a.width);
    const double p_ab = percentile_nearest_rank(directed_boundary_distances(ba, db), 0.95);
    const double p_ba = percentile_nearest_rank(directed_boundary_distances(bb, da), 0.95);
    return std::max(p_ab, p_ba);
}

double njd_percent(const DisplacementField& field) {
    const Grid2 det = jacobian_determinant(field);
    std::size_t neg = 0;
    for (double v : det.data) neg += v < 0.0;
    return 100.0 * static_cast<double>(neg) / static_cast<double>(det.numel());
}

double mse(const Grid2& a, const Grid2& b) {
    if (!a.same_shape(b)) throw ShapeError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

TimingReport time_inference(RegistrationModel& model, const std::vector<Tensor>& pairs,
                            int repetitions) {
    model.set_train_mode(false);
    using clock = std::chrono::steady_clock;

    auto one_pass = [&]() {
        const auto t0 = clock::now();
        for (const auto& p : pairs) {
            Tape tape;
            model.forward(tape, p);
        }
        const auto t1 = clock::now();
        const double total_ms =
            std::chrono::duration<double, std::milli>(t1 - t0).count();
        return total_ms / static_cast<double>(pairs.size());
    };

    for (int i = 0; i < 3; ++i) one_pass();  // warm-up, excluded

    std::vector<double> samples;
    samples.reserve(repetitions);
    for (int i = 0; i < repetitions; ++i) samples.push_back(one_pass());

    TimingReport rep;
    for (double s : samples) rep.mean_ms += s;
    rep.mean_ms /= static_cast<double>(samples.size());
    if (samples.size() > 1) {
        double acc = 0.0;
        for (double s : samples) acc += (s - rep.mean_ms) * (s - rep.mean_ms);
        rep.std_ms = std::sqrt(acc / static_cast<double>(samples.size() - 1));
    }
    return rep;
}

}  // namespace gsreg
