#pragma once
// Experiment orchestration shared by the CLI and the acceptance suite:
// dataset generation, training runs, checkpoint evaluation over the test
// split, and the multi-strategy comparison protocol.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gsreg/config.hpp"
#include "gsreg/io.hpp"
#include "gsreg/metrics.hpp"

namespace gsreg {

// gen: writes the synthetic dataset described by cfg into cfg.out.
DatasetManifest run_gen(const RunConfig& cfg);

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path steps_csv;
    double final_l_sim = 0.0;
    double final_l_reg = 0.0;
};

// train: full training run; dataset read from cfg.data, artifacts written
// under cfg.out.
TrainOutputs run_training(const RunConfig& cfg);

struct CaseScores {
    std::string case_id;
    EvalReport report;
};

struct EvalSummary {
    std::vector<CaseScores> cases;
    EvalReport means;
    std::size_t params = 0;
    TimingReport timing;
    std::filesystem::path csv;
};

// eval: scores a checkpoint over the test split of cfg.data and appends
// per-case rows to `csv_path`.
EvalSummary run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& csv_path);

// Unregistered baseline (zero deformation) over the test split.
EvalSummary run_eval_initial(const RunConfig& cfg, const std::filesystem::path& csv_path);

// register: warps one moving image with the checkpointed model and writes
// warped.pgm plus field.gsmf into out_dir.
void run_register(const std::filesystem::path& checkpoint,
                  const std::filesystem::path& moving_path,
                  const std::filesystem::path& fixed_path,
                  const std::filesystem::path& out_dir);

struct CompareRow {
    std::string method;
    EvalReport means;
    std::size_t params = 0;
    double speed_ms = 0.0;
};

struct CompareOutputs {
    std::vector<CompareRow> rows;
    std::filesystem::path csv;
};

// compare: trains every strategy of the evaluation protocol on the shared
// dataset/seed and merges the scores into one CSV. Strategy runs may
// execute concurrently; GSREG_THREADS caps the parallelism.
CompareOutputs run_compare(const RunConfig& cfg);

// List of strategies the comparison protocol covers, in CSV row order
// (the unregistered baseline row is separate).
std::vector<Strategy> compare_strategies();

// self-checks: gradient finite-difference suite + projection properties.
// Returns the number of failed checks; prints one line per check.
int run_selftest(std::ostream& out);

}  // namespace gsreg
