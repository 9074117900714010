// gsreg: deformable registration trainer/evaluator with gradient-surgery
// optimization. Subcommands: gen, train, register, eval, compare, selftest.
//
// Exit codes: 0 ok, 2 config/usage error, 3 I/O error, 4 numeric failure,
// 5 selftest failure.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gsreg/harness.hpp"

namespace {

using gsreg::RunConfig;

struct CommonOpts {
    std::string config_path;
    std::string out;
    std::string data;
    std::string strategy;
    std::string preset;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_data) {
    cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
    cmd->add_option("--out", opts.out, "output directory");
    if (with_data) cmd->add_option("--data", opts.data, "dataset directory (from gen)");
    cmd->add_option("--seed", opts.seed, "override seed");
    cmd->add_option("--strategy", opts.strategy,
                    "override strategy: layerwise_project | global_project | agr_random | "
                    "weighted_sum | similarity_only");
    cmd->add_option("--preset", opts.preset, "network preset: desk | paper");
}

RunConfig load_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = gsreg::parse_config_file(opts.config_path);
    if (!opts.out.empty()) cfg.out = opts.out;
    if (!opts.data.empty()) cfg.data = opts.data;
    if (!opts.strategy.empty()) cfg.strategy = opts.strategy;
    if (!opts.preset.empty()) cfg.preset = opts.preset;
    if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "gsreg: 2-D deformable image registration with gradient-surgery training.\n"
        "CSV columns: steps.csv(step,l_sim,l_reg,conflicted_layers,g_sim_norm,g_reg_norm);\n"
        "eval.csv(case,dice_lv,dice_myo,dice_rv,hd95_lv,hd95_myo,hd95_rv,mse,njd_percent);\n"
        "compare.csv(method,dice_lv,dice_myo,dice_rv,dice_mean,hd95_mean,mse,njd_percent,"
        "params,speed_ms). Distances are in pixels (unit spacing)."};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, eval_opts, compare_opts;
    std::string reg_checkpoint, reg_moving, reg_fixed, reg_out;
    std::string eval_checkpoint;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset into --out");
    add_common(gen, gen_opts, false);

    CLI::App* train = app.add_subcommand("train", "train a model on --data into --out");
    add_common(train, train_opts, true);

    CLI::App* reg = app.add_subcommand("register", "warp one pair with a checkpoint");
    reg->add_option("--checkpoint", reg_checkpoint, "model checkpoint")->required();
    reg->add_option("--moving", reg_moving, "moving image (PGM)")->required();
    reg->add_option("--fixed", reg_fixed, "fixed image (PGM)")->required();
    reg->add_option("--out", reg_out, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    add_common(eval, eval_opts, true);
    eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();

    CLI::App* compare = app.add_subcommand(
        "compare", "train and score every strategy on the shared dataset (GSREG_THREADS "
                   "caps run parallelism)");
    add_common(compare, compare_opts, true);

    CLI::App* selftest =
        app.add_subcommand("selftest", "gradient and projection property checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            const RunConfig cfg = load_config(gen_opts);
            const auto manifest = gsreg::run_gen(cfg);
            std::cout << "dataset: " << manifest.root.string() << " (" << manifest.train.size()
                      << " train / " << manifest.val.size() << " val / "
                      << manifest.test.size() << " test)\n";
        } else if (train->parsed()) {
            const RunConfig cfg = load_config(train_opts);
            const auto outputs = gsreg::run_training(cfg);
            std::cout << "checkpoint: " << outputs.checkpoint.string() << "\n"
                      << "steps: " << outputs.steps_csv.string() << "\n"
                      << "final L_sim " << outputs.final_l_sim << ", L_reg "
                      << outputs.final_l_reg << "\n";
        } else if (reg->parsed()) {
            gsreg::run_register(reg_checkpoint, reg_moving, reg_fixed, reg_out);
            std::cout << "wrote " << reg_out << "/warped.pgm and field.gsmf\n";
        } else if (eval->parsed()) {
            const RunConfig cfg = load_config(eval_opts);
            const auto summary = gsreg::run_eval(
                cfg, eval_checkpoint,
                cfg.out.empty() ? std::filesystem::path("eval.csv") : cfg.out / "eval.csv");
            std::cout << "eval: " << summary.csv.string() << "\n"
                      << "mean dice " << summary.means.dice_mean() << ", hd95 "
                      << summary.means.hd95_mean() << ", mse " << summary.means.mse
                      << ", njd% " << summary.means.njd_percent << "\n";
        } else if (compare->parsed()) {
            const RunConfig cfg = load_config(compare_opts);
            const auto outputs = gsreg::run_compare(cfg);
            std::cout << "comparison: " << outputs.csv.string() << "\n";
        } else if (selftest->parsed()) {
            const int failures = gsreg::run_selftest(std::cout);
            return failures == 0 ? 0 : 5;
        }
    } catch (const gsreg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gsreg::ShapeError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const gsreg::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const gsreg::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
