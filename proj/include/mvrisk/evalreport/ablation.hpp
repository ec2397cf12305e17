#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

#include "mvrisk/cohort/synthetic.hpp"
#include "mvrisk/trainer/trainer.hpp"

namespace mvrisk::evalreport {

struct AblationConfig {
    std::vector<std::size_t> resolutions{64, 96, 128};
    std::vector<trainer::AugmentMode> modes{trainer::AugmentMode::PerChannel, trainer::AugmentMode::Replicate};
    std::vector<std::uint64_t> seeds{1, 2};
    trainer::ModelConfig model;      // input size is overridden per resolution
    trainer::TrainConfig train;      // stage 1
    cohort::SyntheticConfig cohort;  // resolution is overridden; one cohort per resolution
    double budget_seconds = std::numeric_limits<double>::infinity();
};

struct AblationRow {
    trainer::AugmentMode mode;
    std::size_t resolution = 0;
    std::uint64_t seed = 0;
    double auc = 0.0;  // breast-level AUC on the internal test split
};

struct AblationAggregate {
    trainer::AugmentMode mode;
    std::size_t resolution = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t runs = 0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::vector<AblationAggregate> aggregates;
    bool incomplete = false;

    const AblationAggregate* find(trainer::AugmentMode mode, std::size_t resolution) const;

    // Run rows under "mode,resolution,seed,auc", then aggregate rows under
    // "mode,resolution,mean,min,max"; an "incomplete" line closes a partial run.
    void write_csv(const std::filesystem::path& path) const;
};

std::vector<AblationAggregate> aggregate_rows(const std::vector<AblationRow>& rows);

// Trains one stage-1 model per (resolution, mode, seed). Runs are skipped once
// the wall-clock budget is spent and the result is flagged incomplete.
AblationResult ablation_run(const AblationConfig& cfg,
                            const std::function<void(const AblationRow&)>& on_row = nullptr);

}  // namespace mvrisk::evalreport
