#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mvrisk/cli/config.hpp"

namespace mvrisk::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissing = 3;
inline constexpr int kExitIncompatible = 4;
inline constexpr int kExitDivergence = 5;

inline constexpr double kGradcheckTolerance = 1e-4;

// Maps the exception currently being handled to an exit code and prints it.
int report_exception();

// Writes <out>/cohort/{images,manifest.jsonl,splits.csv} and <out>/resolved_config.json.
void cmd_generate(const RunConfig& cfg);

struct TrainOptions {
    int stage = 1;
    std::filesystem::path cohort_dir;   // default <out>/cohort
    std::filesystem::path from_stage1;  // required for stage 2
};

// Writes <out>/stage{1,2}/{best.ckpt,last.ckpt,history.csv,resolved_config.json}.
trainer::TrainResult cmd_train(const RunConfig& cfg, const TrainOptions& opt);

enum class Baseline { DinoOnly, LocalOnly, HybridMax, Bilateral };
std::string to_string(Baseline b);
Baseline parse_baseline(const std::string& s);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;  // default <out>/cohort/manifest.jsonl
    cohort::Split split = cohort::Split::TestInternal;
    bool subgroups = false;
    std::optional<Baseline> baseline;  // default: inferred from the checkpoint
};

// Writes <out>/eval/<baseline>_<split>/{report.csv,report.json,scores.csv}.
evalreport::EvalReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt);

// Writes <out>/ablation/ablation.csv.
evalreport::AblationResult cmd_ablate(const RunConfig& cfg);

struct GradcheckOptions {
    std::size_t n_params = 200;
    bool use_config_model = false;  // default: the small built-in model
};

// Writes <out>/gradcheck.json.
trainer::GradcheckReport cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt);

struct DescribeOptions {
    std::filesystem::path manifest;
    cohort::Split split = cohort::Split::TestInternal;
};

// Writes <out>/cohort_description_<split>.csv.
evalreport::CohortDescription cmd_describe_cohort(const RunConfig& cfg, const DescribeOptions& opt);

// Full command line: mvrisk <generate|train|eval|ablate|gradcheck|describe-cohort> [options].
int run_cli(int argc, char** argv);

}  // namespace mvrisk::cli
