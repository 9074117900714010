#include "gsreg/io.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gsreg {

namespace {

// shortest representation that parses back to the same double
std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
}

float get_f32_le(const unsigned char* p) {
    const std::uint32_t bits = get_u32_le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

std::string gsmf_bytes(const std::vector<Grid2>& channels) {
    if (channels.empty()) throw IoError("gsmf: no channels to write");
    const int h = channels[0].height, w = channels[0].width;
    for (const auto& c : channels)
        if (c.height != h || c.width != w) throw IoError("gsmf: channel shape mismatch");
    std::string out;
    out.reserve(20 + channels.size() * channels[0].numel() * 4);
    out += "GSMF";
    put_u32_le(out, 1);
    put_u32_le(out, static_cast<std::uint32_t>(channels.size()));
    put_u32_le(out, static_cast<std::uint32_t>(h));
    put_u32_le(out, static_cast<std::uint32_t>(w));
    for (const auto& c : channels)
        for (double v : c.data) put_f32_le(out, static_cast<float>(v));
    return out;
}

// Parses one GSMF record starting at `offset` inside `bytes`; advances
// offset past the record. `where` names the file for error messages.
std::vector<Grid2> gsmf_parse(const std::string& bytes, std::size_t& offset,
                              const std::string& where) {
    const auto fail = [&](const std::string& what, std::size_t at) {
        throw IoError(where + ": " + what + " at byte offset " + std::to_string(at));
    };
    if (offset + 20 > bytes.size()) fail("truncated header", offset);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
    if (std::memcmp(p, "GSMF", 4) != 0) fail("bad magic", offset);
    const std::uint32_t version = get_u32_le(p + 4);
    if (version != 1) fail("unsupported version " + std::to_string(version), offset + 4);
    const std::uint32_t c = get_u32_le(p + 8);
    const std::uint32_t h = get_u32_le(p + 12);
    const std::uint32_t w = get_u32_le(p + 16);
    const std::size_t count = static_cast<std::size_t>(c) * h * w;
    const std::size_t need = 20 + count * 4;
    if (offset + need > bytes.size()) fail("truncated payload", bytes.size());
    std::vector<Grid2> channels;
    channels.reserve(c);
    std::size_t pos = offset + 20;
    for (std::uint32_t ci = 0; ci < c; ++ci) {
        Grid2 g(static_cast<int>(h), static_cast<int>(w));
        for (std::size_t i = 0; i < g.data.size(); ++i, pos += 4)
            g.data[i] = static_cast<double>(
                get_f32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + pos));
        channels.push_back(std::move(g));
    }
    offset += need;
    return channels;
}

}  // namespace

// ---------------------------------------------------------------------------
// PGM

void write_pgm(const std::filesystem::path& path, const Grid2& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n65535\n";
    out.reserve(out.size() + img.numel() * 2);
    for (double v : img.data) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        const auto s = static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
        out.push_back(static_cast<char>((s >> 8) & 0xff));  // big-endian per PGM
        out.push_back(static_cast<char>(s & 0xff));
    }
    write_file(path, out);
}

Grid2 read_pgm(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    const auto fail = [&](const std::string& what) {
        throw IoError(path.string() + ": " + what + " at byte offset " + std::to_string(pos));
    };

    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
            ++pos;
        if (start == pos) fail("truncated header");
        return bytes.substr(start, pos - start);
    };

    if (next_token() != "P5") fail("bad magic (expected P5)");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        fail("malformed header field");
    }
    if (w <= 0 || h <= 0) fail("invalid dimensions");
    if (maxval != 65535) fail("expected 16-bit maxval 65535");
    ++pos;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * 2;
    if (pos + need > bytes.size()) fail("truncated pixel data");

    Grid2 img(h, w);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const std::uint16_t s =
            static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
        img.data[i] = static_cast<double>(s) / 65535.0;
    }
    return img;
}

// ---------------------------------------------------------------------------
// GSMF

void write_gsmf(const std::filesystem::path& path, const std::vector<Grid2>& channels) {
    write_file(path, gsmf_bytes(channels));
}

std::vector<Grid2> read_gsmf(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::size_t offset = 0;
    auto channels = gsmf_parse(bytes, offset, path.string());
    if (offset != bytes.size())
        throw IoError(path.string() + ": trailing bytes at offset " + std::to_string(offset));
    return channels;
}

void write_field(const std::filesystem::path& path, const DisplacementField& field) {
    write_gsmf(path, {field.ux, field.uy});
}

DisplacementField read_field(const std::filesystem::path& path) {
    auto channels = read_gsmf(path);
    if (channels.size() != 2)
        throw IoError(path.string() + ": expected 2-channel field, got " +
                      std::to_string(channels.size()));
    DisplacementField f;
    f.ux = std::move(channels[0]);
    f.uy = std::move(channels[1]);
    return f;
}

void write_mask(const std::filesystem::path& path, const LabelMask& mask) {
    Grid2 g(mask.height, mask.width);
    for (std::size_t i = 0; i < mask.labels.size(); ++i)
        g.data[i] = static_cast<double>(mask.labels[i]);
    write_gsmf(path, {g});
}

LabelMask read_mask(const std::filesystem::path& path) {
    auto channels = read_gsmf(path);
    if (channels.size() != 1)
        throw IoError(path.string() + ": expected 1-channel mask, got " +
                      std::to_string(channels.size()));
    LabelMask m(channels[0].height, channels[0].width);
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        const double v = channels[0].data[i];
        if (v != std::floor(v) || v < 0.0 || v > 255.0)
            throw IoError(path.string() + ": non-integral label value " + std::to_string(v));
        m.labels[i] = static_cast<std::uint8_t>(v);
    }
    return m;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

std::string shape_line(const Tensor& t) {
    return std::to_string(t.n) + " " + std::to_string(t.c) + " " + std::to_string(t.h) +
           " " + std::to_string(t.w);
}

Grid2 flat_grid(const double* data, std::size_t n) {
    Grid2 g(1, static_cast<int>(n));
    std::copy_n(data, n, g.data.begin());
    return g;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RegistrationModel& model,
                     const AdamOptimizer& optimizer,
                     const std::vector<std::string>& config_echo) {
    std::ostringstream head;
    head << "GSREG-CHECKPOINT v1\n";
    head << "kind = " << (model.kind() == ModelKind::UNet ? "unet" : "direct_field") << "\n";
    if (model.kind() == ModelKind::UNet) {
        head << "preset = " << model.config().preset << "\n";
        head << "widths =";
        for (int w : model.config().encoder_widths) head << " " << w;
        head << "\n";
        head << "leaky_slope = " << fmt_double(model.config().leaky_slope) << "\n";
        head << "grouping = "
             << (model.granularity() == GroupGranularity::PerLayer ? "per_layer"
                                                                   : "per_tensor")
             << "\n";
    } else {
        const Tensor& f = model.groups()[0].tensors[0];
        head << "field_size = " << f.h << " " << f.w << "\n";
    }
    head << "step = " << optimizer.step_count() << "\n";
    const auto& ac = optimizer.config();
    head << "adam = " << fmt_double(ac.lr) << " " << fmt_double(ac.beta1) << " "
         << fmt_double(ac.beta2) << " " << fmt_double(ac.eps) << "\n";
    for (const auto& line : config_echo) head << "# cfg " << line << "\n";

    // tensor directory, then payload order matches directory order
    std::vector<std::pair<std::string, const std::vector<double>*>> payload;
    std::vector<Tensor> scratch;  // flattened moment/stat tensors live here

    for (const auto& g : model.groups())
        for (std::size_t i = 0; i < g.tensors.size(); ++i) {
            head << "tensor param " << g.layer_id << " " << i << " "
                 << shape_line(g.tensors[i]) << "\n";
            payload.emplace_back("param", &g.tensors[i].v);
        }
    for (std::size_t i = 0; i < model.bn_stats().size(); ++i) {
        const auto& st = model.bn_stats()[i];
        head << "tensor bn_mean " << i << " 0 1 1 1 " << st.mean.size() << "\n";
        payload.emplace_back("bn_mean", &st.mean);
        head << "tensor bn_var " << i << " 0 1 1 1 " << st.var.size() << "\n";
        payload.emplace_back("bn_var", &st.var);
    }
    for (const auto& [id, m] : optimizer.first_moments()) {
        head << "tensor adam_m " << id << " 0 1 1 1 " << m.size() << "\n";
        payload.emplace_back("adam_m", &m);
    }
    for (const auto& [id, v] : optimizer.second_moments()) {
        head << "tensor adam_v " << id << " 0 1 1 1 " << v.size() << "\n";
        payload.emplace_back("adam_v", &v);
    }
    head << "DATA\n";

    std::string out = head.str();
    for (const auto& [tag, vec] : payload)
        out += gsmf_bytes({flat_grid(vec->data(), vec->size())});
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);

    // split header from payload
    std::size_t data_pos = bytes.find("\nDATA\n");
    if (data_pos == std::string::npos)
        throw IoError(path.string() + ": missing DATA marker");
    const std::string header = bytes.substr(0, data_pos + 1);
    std::size_t offset = data_pos + 6;

    std::istringstream in(header);
    std::string line;
    std::getline(in, line);
    if (line != "GSREG-CHECKPOINT v1")
        throw IoError(path.string() + ": bad checkpoint magic '" + line + "'");

    std::string kind, preset = "custom", grouping = "per_layer";
    std::vector<int> widths;
    double leaky_slope = 0.2;
    int field_h = 0, field_w = 0;
    std::size_t step = 0;
    AdamConfig adam;
    std::vector<std::string> config_echo;
    struct TensorEntry {
        std::string tag, id;
        int slot = 0;
        int n = 0, c = 0, h = 0, w = 0;
    };
    std::vector<TensorEntry> entries;

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "#") {
            std::string cfg;
            ls >> cfg;  // "cfg"
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
            config_echo.push_back(rest);
        } else if (key == "kind") {
            std::string eq;
            ls >> eq >> kind;
        } else if (key == "preset") {
            std::string eq;
            ls >> eq >> preset;
        } else if (key == "widths") {
            std::string eq;
            ls >> eq;
            int w;
            while (ls >> w) widths.push_back(w);
        } else if (key == "leaky_slope") {
            std::string eq;
            ls >> eq >> leaky_slope;
        } else if (key == "grouping") {
            std::string eq;
            ls >> eq >> grouping;
        } else if (key == "field_size") {
            std::string eq;
            ls >> eq >> field_h >> field_w;
        } else if (key == "step") {
            std::string eq;
            ls >> eq >> step;
        } else if (key == "adam") {
            std::string eq;
            ls >> eq >> adam.lr >> adam.beta1 >> adam.beta2 >> adam.eps;
        } else if (key == "tensor") {
            TensorEntry e;
            ls >> e.tag >> e.id >> e.slot >> e.n >> e.c >> e.h >> e.w;
            entries.push_back(std::move(e));
        } else {
            throw IoError(path.string() + ": unknown checkpoint header line '" + line + "'");
        }
    }

    RegistrationModel model = [&] {
        if (kind == "unet") {
            UNetConfig cfg;
            cfg.encoder_widths = widths;
            cfg.leaky_slope = leaky_slope;
            cfg.preset = preset;
            return RegistrationModel::build_unet(cfg, 0,
                                                 grouping == "per_tensor"
                                                     ? GroupGranularity::PerTensor
                                                     : GroupGranularity::PerLayer);
        }
        if (kind == "direct_field")
            return RegistrationModel::build_direct_field(field_h, field_w);
        throw IoError(path.string() + ": unknown model kind '" + kind + "'");
    }();

    AdamOptimizer optimizer(adam);
    optimizer.set_step_count(step);

    for (const auto& e : entries) {
        auto block = gsmf_parse(bytes, offset, path.string());
        if (block.size() != 1)
            throw IoError(path.string() + ": checkpoint tensor blocks must be 1-channel");
        const std::vector<double>& data = block[0].data;

        auto expect_size = [&](std::size_t want, const std::string& what) {
            if (data.size() != want)
                throw IoError(path.string() + ": tensor size mismatch for " + what +
                              " (file " + std::to_string(data.size()) + ", expected " +
                              std::to_string(want) + ")");
        };

        if (e.tag == "param") {
            bool found = false;
            for (auto& g : model.groups())
                if (g.layer_id == e.id) {
                    if (e.slot >= static_cast<int>(g.tensors.size()))
                        throw IoError(path.string() + ": bad tensor slot for " + e.id);
                    Tensor& t = g.tensors[e.slot];
                    expect_size(t.numel(), "param " + e.id);
                    std::copy(data.begin(), data.end(), t.v.begin());
                    found = true;
                    break;
                }
            if (!found)
                throw IoError(path.string() + ": checkpoint group '" + e.id +
                              "' not present in rebuilt model");
        } else if (e.tag == "bn_mean" || e.tag == "bn_var") {
            const std::size_t idx = std::stoul(e.id);
            if (idx >= model.bn_stats().size())
                throw IoError(path.string() + ": bn stats index out of range");
            auto& st = model.bn_stats()[idx];
            auto& dst = e.tag == "bn_mean" ? st.mean : st.var;
            expect_size(dst.size(), e.tag);
            std::copy(data.begin(), data.end(), dst.begin());
        } else if (e.tag == "adam_m") {
            optimizer.first_moments()[e.id] = data;
        } else if (e.tag == "adam_v") {
            optimizer.second_moments()[e.id] = data;
        } else {
            throw IoError(path.string() + ": unknown tensor tag '" + e.tag + "'");
        }
    }
    if (offset != bytes.size())
        throw IoError(path.string() + ": trailing bytes at offset " + std::to_string(offset));

    return Checkpoint{std::move(model), std::move(optimizer), std::move(config_echo)};
}

}  // namespace gsreg
