#include "gsreg/config.hpp"

#include <charconv>
#include <fstream>

namespace gsreg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "model") cfg.model = value;
    else if (key == "preset") cfg.preset = value;
    else if (key == "strategy") cfg.strategy = value;
    else if (key == "lambda") cfg.lambda = parse_double(key, value);
    else if (key == "sigma") cfg.sigma = parse_double(key, value);
    else if (key == "grouping") cfg.grouping = value;
    else if (key == "similarity") cfg.similarity = value;
    else if (key == "lncc_window") cfg.lncc_window = static_cast<int>(parse_int(key, value));
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "batch") cfg.batch = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "cases") cfg.cases = static_cast<int>(parse_int(key, value));
    else if (key == "image_size") cfg.image_size = static_cast<int>(parse_int(key, value));
    else if (key == "base_seed") cfg.base_seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "noise_std") cfg.noise_std = parse_double(key, value);
    else if (key == "geometry_jitter") cfg.geometry_jitter = parse_double(key, value);
    else if (key == "bumps") cfg.bumps = static_cast<int>(parse_int(key, value));
    else if (key == "amp_min") cfg.amp_min = parse_double(key, value);
    else if (key == "amp_max") cfg.amp_max = parse_double(key, value);
    else if (key == "sigma_min") cfg.sigma_min = parse_double(key, value);
    else if (key == "sigma_max") cfg.sigma_max = parse_double(key, value);
    else if (key == "timing_reps") cfg.timing_reps = static_cast<int>(parse_int(key, value));
    else if (key == "data") cfg.data = value;
    else if (key == "out") cfg.out = value;
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                              ": empty key or value");
        apply_config_entry(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (model != "unet" && model != "direct_field")
        throw ConfigError("config: model must be unet or direct_field, got '" + model + "'");
    Strategy::parse(strategy, lambda, sigma);  // validates the name
    if (lambda < 0) throw ConfigError("config: lambda must be >= 0");
    if (strategy == "agr_random" && sigma < 0)
        throw ConfigError("config: sigma must be >= 0");
    if (grouping != "per_layer" && grouping != "per_tensor")
        throw ConfigError("config: grouping must be per_layer or per_tensor");
    similarity_from_string(similarity);
    if (lncc_window < 3 || lncc_window % 2 == 0)
        throw ConfigError("config: lncc_window must be odd and >= 3");
    if (lr <= 0) throw ConfigError("config: lr must be > 0");
    if (batch < 1) throw ConfigError("config: batch must be >= 1");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (image_size < 16) throw ConfigError("config: image_size must be >= 16");
    if (timing_reps < 1) throw ConfigError("config: timing_reps must be >= 1");
    UNetConfig::from_preset(preset);
}

GroupGranularity RunConfig::make_granularity() const {
    return grouping == "per_tensor" ? GroupGranularity::PerTensor
                                    : GroupGranularity::PerLayer;
}

PhantomSpec RunConfig::make_phantom_spec() const {
    PhantomSpec p;
    p.size = image_size;
    p.noise_std = noise_std;
    p.geometry_jitter = geometry_jitter;
    return p;
}

DeformSpec RunConfig::make_deform_spec() const {
    DeformSpec d;
    d.bumps = bumps;
    d.amp_min = amp_min;
    d.amp_max = amp_max;
    d.sigma_min = sigma_min;
    d.sigma_max = sigma_max;
    return d;
}

std::vector<std::string> RunConfig::echo_lines() const {
    std::vector<std::string> out;
    out.push_back("model = " + model);
    out.push_back("preset = " + preset);
    out.push_back("strategy = " + strategy);
    out.push_back("lambda = " + fmt(lambda));
    out.push_back("sigma = " + fmt(sigma));
    out.push_back("grouping = " + grouping);
    out.push_back("similarity = " + similarity);
    out.push_back("lncc_window = " + std::to_string(lncc_window));
    out.push_back("lr = " + fmt(lr));
    out.push_back("batch = " + std::to_string(batch));
    out.push_back("epochs = " + std::to_string(epochs));
    out.push_back("seed = " + std::to_string(seed));
    return out;
}

}  // namespace gsreg
