#include "gsreg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <numeric>
#include <thread>

#include "gsreg/rng.hpp"

namespace gsreg {

namespace {

namespace fs = std::filesystem;

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

Tensor pair_tensor(const Grid2& fixed, const Grid2& moving) {
    Tensor t(1, 2, fixed.height, fixed.width);
    std::copy(fixed.data.begin(), fixed.data.end(), t.plane(0, 0));
    std::copy(moving.data.begin(), moving.data.end(), t.plane(0, 1));
    return t;
}

Tensor batch_tensor(const std::vector<LoadedCase>& cases, const std::vector<int>& order,
                    std::size_t first, std::size_t count) {
    const Grid2& ref = cases[order[first]].fixed;
    Tensor t(static_cast<int>(count), 2, ref.height, ref.width);
    for (std::size_t i = 0; i < count; ++i) {
        const LoadedCase& c = cases[order[first + i]];
        std::copy(c.fixed.data.begin(), c.fixed.data.end(), t.plane(static_cast<int>(i), 0));
        std::copy(c.moving.data.begin(), c.moving.data.end(),
                  t.plane(static_cast<int>(i), 1));
    }
    return t;
}

DisplacementField field_from_tensor(const Tensor& t, int item) {
    DisplacementField f(t.h, t.w);
    std::copy_n(t.plane(item, 0), f.ux.numel(), f.ux.data.begin());
    std::copy_n(t.plane(item, 1), f.uy.numel(), f.uy.data.begin());
    return f;
}

std::vector<LoadedCase> load_split(const fs::path& root, const std::vector<std::string>& split) {
    std::vector<LoadedCase> out;
    out.reserve(split.size());
    for (const auto& rel : split) out.push_back(load_case(root / rel));
    return out;
}

RegistrationModel build_model(const RunConfig& cfg) {
    if (cfg.model == "direct_field")
        return RegistrationModel::build_direct_field(cfg.image_size, cfg.image_size);
    return RegistrationModel::build_unet(cfg.make_unet_config(), cfg.seed,
                                         cfg.make_granularity());
}

}  // namespace

DatasetManifest run_gen(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ConfigError("gen: output directory required");
    return make_dataset(cfg.cases, cfg.make_phantom_spec(), cfg.make_deform_spec(),
                        cfg.base_seed, cfg.out);
}

TrainOutputs run_training(const RunConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("train: dataset directory required");
    if (cfg.out.empty()) throw ConfigError("train: output directory required");
    const DatasetManifest manifest = read_manifest(cfg.data);
    if (manifest.train.empty()) throw IoError("train: empty train split in " + cfg.data.string());

    std::vector<LoadedCase> cases = load_split(manifest.root, manifest.train);
    const int batch = cfg.model == "direct_field" ? 1 : cfg.batch;
    if (cfg.model == "direct_field" && cases.size() != 1)
        throw ConfigError("train: direct_field is instance-wise; train split must hold "
                          "exactly one case, got " + std::to_string(cases.size()));

    RegistrationModel model = build_model(cfg);
    model.set_train_mode(true);
    AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    const Strategy strategy = cfg.make_strategy();
    const LossConfig loss = cfg.make_loss();
    Rng rng(cfg.seed);

    fs::create_directories(cfg.out);
    const fs::path csv_path = cfg.out / "steps.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("train: cannot create " + csv_path.string());
    csv << "step,l_sim,l_reg,conflicted_layers,g_sim_norm,g_reg_norm\n";

    std::vector<int> order(cases.size());
    std::iota(order.begin(), order.end(), 0);

    TrainOutputs out;
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the run RNG keeps the schedule reproducible.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        for (std::size_t b = 0; b < cases.size(); b += batch) {
            const std::size_t count = std::min<std::size_t>(batch, cases.size() - b);
            const Tensor t = batch_tensor(cases, order, b, count);
            const StepReport rep = train_step(model, t, loss, strategy, opt, rng);
            ++step;
            csv << step << ',' << fmt9(rep.l_sim) << ',' << fmt9(rep.l_reg) << ','
                << rep.conflicted_layers << ',' << fmt9(rep.g_sim_norm) << ','
                << fmt9(rep.g_reg_norm) << '\n';
            out.final_l_sim = rep.l_sim;
            out.final_l_reg = rep.l_reg;
        }
    }
    csv.close();

    out.checkpoint = cfg.out / "checkpoint.gsck";
    out.steps_csv = csv_path;
    save_checkpoint(out.checkpoint, model, opt, cfg.echo_lines());
    return out;
}

namespace {

// hd95 convention for degenerate predictions: a label erased by the model
// scores the image diagonal (the maximal surface distance).
double hd95_or_diagonal(const LabelMask& a, const LabelMask& b, std::uint8_t label) {
    try {
        return hd95(a, b, label);
    } catch (const ShapeError&) {
        return std::hypot(static_cast<double>(a.height - 1),
                          static_cast<double>(a.width - 1));
    }
}

EvalReport score_case(const LoadedCase& c, const Grid2& warped,
                      const LabelMask& warped_mask, const DisplacementField& field) {
    EvalReport r;
    r.dice_lv = dice(warped_mask, c.fixed_mask, 1);
    r.dice_myo = dice(warped_mask, c.fixed_mask, 2);
    r.dice_rv = dice(warped_mask, c.fixed_mask, 3);
    r.hd95_lv = hd95_or_diagonal(warped_mask, c.fixed_mask, 1);
    r.hd95_myo = hd95_or_diagonal(warped_mask, c.fixed_mask, 2);
    r.hd95_rv = hd95_or_diagonal(warped_mask, c.fixed_mask, 3);
    r.mse = mse(warped, c.fixed);
    r.njd_percent = njd_percent(field);
    return r;
}

EvalSummary summarize(std::vector<CaseScores> scored, const fs::path& csv_path,
                      std::size_t params, TimingReport timing) {
    EvalSummary s;
    s.cases = std::move(scored);
    s.params = params;
    s.timing = timing;
    s.csv = csv_path;

    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("eval: cannot create " + csv_path.string());
    // distances in pixel units, unit spacing
    csv << "case,dice_lv,dice_myo,dice_rv,hd95_lv,hd95_myo,hd95_rv,mse,njd_percent\n";
    for (const auto& cs : s.cases) {
        const auto& r = cs.report;
        csv << cs.case_id << ',' << fmt9(r.dice_lv) << ',' << fmt9(r.dice_myo) << ','
            << fmt9(r.dice_rv) << ',' << fmt9(r.hd95_lv) << ',' << fmt9(r.hd95_myo) << ','
            << fmt9(r.hd95_rv) << ',' << fmt9(r.mse) << ',' << fmt9(r.njd_percent) << '\n';

        s.means.dice_lv += r.dice_lv;
        s.means.dice_myo += r.dice_myo;
        s.means.dice_rv += r.dice_rv;
        s.means.hd95_lv += r.hd95_lv;
        s.means.hd95_myo += r.hd95_myo;
        s.means.hd95_rv += r.hd95_rv;
        s.means.mse += r.mse;
        s.means.njd_percent += r.njd_percent;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, s.cases.size()));
    s.means.dice_lv /= n;
    s.means.dice_myo /= n;
    s.means.dice_rv /= n;
    s.means.hd95_lv /= n;
    s.means.hd95_myo /= n;
    s.means.hd95_rv /= n;
    s.means.mse /= n;
    s.means.njd_percent /= n;
    return s;
}

}  // namespace

EvalSummary run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& csv_path) {
    if (cfg.data.empty()) throw ConfigError("eval: dataset directory required");
    const DatasetManifest manifest = read_manifest(cfg.data);
    if (manifest.test.empty()) throw IoError("eval: empty test split in " + cfg.data.string());
    std::vector<LoadedCase> cases = load_split(manifest.root, manifest.test);

    Checkpoint ckpt = load_checkpoint(checkpoint);
    ckpt.model.set_train_mode(false);

    std::vector<CaseScores> scored;
    std::vector<Tensor> pairs;
    scored.reserve(cases.size());
    pairs.reserve(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const LoadedCase& c = cases[i];
        Tensor pair = pair_tensor(c.fixed, c.moving);
        Tape tape;
        const NodeId field_node = ckpt.model.forward(tape, pair);
        const DisplacementField field = field_from_tensor(tape.value(field_node), 0);
        const Grid2 warped = warp_image(c.moving, field);
        const LabelMask warped_mask = warp_labels(c.moving_mask, field);
        scored.push_back(CaseScores{manifest.test[i], score_case(c, warped, warped_mask, field)});
        pairs.push_back(std::move(pair));
    }
    const TimingReport timing = time_inference(ckpt.model, pairs, cfg.timing_reps);
    return summarize(std::move(scored), csv_path, ckpt.model.param_count(), timing);
}

EvalSummary run_eval_initial(const RunConfig& cfg, const std::filesystem::path& csv_path) {
    if (cfg.data.empty()) throw ConfigError("eval: dataset directory required");
    const DatasetManifest manifest = read_manifest(cfg.data);
    if (manifest.test.empty()) throw IoError("eval: empty test split in " + cfg.data.string());
    std::vector<LoadedCase> cases = load_split(manifest.root, manifest.test);

    std::vector<CaseScores> scored;
    scored.reserve(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const LoadedCase& c = cases[i];
        const DisplacementField zero(c.fixed.height, c.fixed.width);
        scored.push_back(
            CaseScores{manifest.test[i], score_case(c, c.moving, c.moving_mask, zero)});
    }
    return summarize(std::move(scored), csv_path, 0, TimingReport{});
}

void run_register(const std::filesystem::path& checkpoint,
                  const std::filesystem::path& moving_path,
                  const std::filesystem::path& fixed_path,
                  const std::filesystem::path& out_dir) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    ckpt.model.set_train_mode(false);
    const Grid2 moving = read_pgm(moving_path);
    const Grid2 fixed = read_pgm(fixed_path);
    if (!moving.same_shape(fixed))
        throw ShapeError("register: moving and fixed image sizes differ");

    Tape tape;
    const NodeId field_node = ckpt.model.forward(tape, pair_tensor(fixed, moving));
    const DisplacementField field = field_from_tensor(tape.value(field_node), 0);

    fs::create_directories(out_dir);
    write_pgm(out_dir / "warped.pgm", warp_image(moving, field));
    write_field(out_dir / "field.gsmf", field);
}

std::vector<Strategy> compare_strategies() {
    return {
        Strategy::layerwise_project(), Strategy::global_project(),
        Strategy::agr_random(),        Strategy::weighted_sum(0.1),
        Strategy::weighted_sum(0.01),  Strategy::weighted_sum(0.001),
        Strategy::similarity_only(),
    };
}

CompareOutputs run_compare(const RunConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("compare: dataset directory required");
    if (cfg.out.empty()) throw ConfigError("compare: output directory required");
    fs::create_directories(cfg.out);

    const std::vector<Strategy> strategies = compare_strategies();

    int max_threads = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("GSREG_THREADS")) {
        const int t = std::atoi(env);
        if (t >= 1) max_threads = t;
    }
    max_threads = std::clamp(max_threads, 1, static_cast<int>(strategies.size()));

    struct RunResult {
        CompareRow row;
    };
    std::vector<RunResult> results(strategies.size());

    auto run_one = [&](std::size_t idx) {
        const Strategy& st = strategies[idx];
        RunConfig run_cfg = cfg;
        run_cfg.strategy =
            st.kind == StrategyKind::WeightedSum
                ? "weighted_sum"
                : (st.kind == StrategyKind::AgrRandom ? "agr_random" : st.name());
        if (st.kind == StrategyKind::WeightedSum) run_cfg.lambda = st.lambda;
        run_cfg.out = cfg.out / st.name();
        const TrainOutputs trained = run_training(run_cfg);
        const EvalSummary summary =
            run_eval(run_cfg, trained.checkpoint, run_cfg.out / "eval.csv");
        results[idx].row = CompareRow{st.name(), summary.means, summary.params,
                                      summary.timing.mean_ms};
    };

    // strategy runs are state-isolated; only `results[idx]` is shared
    std::size_t next = 0;
    std::mutex next_mutex;
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(strategies.size());
    for (int t = 0; t < max_threads; ++t)
        workers.emplace_back([&]() {
            while (true) {
                std::size_t idx;
                {
                    std::lock_guard<std::mutex> lock(next_mutex);
                    if (next >= strategies.size()) return;
                    idx = next++;
                }
                try {
                    run_one(idx);
                } catch (...) {
                    errors[idx] = std::current_exception();
                }
            }
        });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    CompareOutputs out;
    const EvalSummary initial = run_eval_initial(cfg, cfg.out / "initial_eval.csv");
    out.rows.push_back(CompareRow{"initial", initial.means, 0, 0.0});
    for (const auto& r : results) out.rows.push_back(r.row);

    out.csv = cfg.out / "compare.csv";
    std::ofstream csv(out.csv, std::ios::trunc);
    if (!csv) throw IoError("compare: cannot create " + out.csv.string());
    csv << "method,dice_lv,dice_myo,dice_rv,dice_mean,hd95_mean,mse,njd_percent,params,"
           "speed_ms\n";
    for (const auto& r : out.rows) {
        csv << r.method << ',' << fmt9(r.means.dice_lv) << ',' << fmt9(r.means.dice_myo)
            << ',' << fmt9(r.means.dice_rv) << ',' << fmt9(r.means.dice_mean()) << ','
            << fmt9(r.means.hd95_mean()) << ',' << fmt9(r.means.mse) << ','
            << fmt9(r.means.njd_percent) << ',' << r.params << ',' << fmt9(r.speed_ms)
            << '\n';
    }
    return out;
}

}  // namespace gsreg
