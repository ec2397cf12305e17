#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvrisk/cohort/synthetic.hpp"
#include "mvrisk/evalreport/ablation.hpp"
#include "mvrisk/evalreport/report.hpp"
#include "mvrisk/trainer/trainer.hpp"

namespace mvrisk::cli {

inline constexpr const char* kOutputRootEnv = "MVRISK_OUTPUT_ROOT";

struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "runs/default";

    trainer::ModelConfig model;
    cohort::SyntheticConfig synthetic;
    cohort::LabelingConfig labeling;
    cohort::MatchSpec match;
    trainer::TrainConfig stage1;
    trainer::TrainConfig stage2;
    evalreport::ReportConfig report;
    std::vector<std::size_t> ablation_resolutions{64, 96, 128};
    std::vector<std::uint64_t> ablation_seeds{1, 2};
    double ablation_budget_seconds = 0.0;  // 0: unlimited

    RunConfig();
    void validate() const;
    // Output directory with the output-root environment variable applied to relative paths.
    std::filesystem::path resolved_output_dir() const;
};

// Sections: seed, output_dir, imageprep, encoders, fusion, heads, objective,
// cohort, trainer, evalreport. Any key not listed raises ConfigError naming it.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// Sections that determine parameter shapes and preprocessing; stored in
// checkpoints and compared on load.
nlohmann::json model_json(const trainer::ModelConfig& m);

std::uint64_t fnv1a(const std::string& bytes);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace mvrisk::cli
