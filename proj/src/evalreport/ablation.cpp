#include "mvrisk/evalreport/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

namespace mvrisk::evalreport {

const AblationAggregate* AblationResult::find(trainer::AugmentMode mode, std::size_t resolution) const {
    for (const auto& a : aggregates)
        if (a.mode == mode && a.resolution == resolution) return &a;
    return nullptr;
}

void AblationResult::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write ablation csv " + path.string());
    char buf[64];
    os << "mode,resolution,seed,auc\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f", r.auc);
        os << trainer::to_string(r.mode) << ',' << r.resolution << ',' << r.seed << ',' << buf << '\n';
    }
    os << "mode,resolution,mean,min,max\n";
    for (const auto& a : aggregates) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", a.mean, a.min, a.max);
        os << trainer::to_string(a.mode) << ',' << a.resolution << ',' << buf << '\n';
    }
    if (incomplete) os << "incomplete\n";
}

std::vector<AblationAggregate> aggregate_rows(const std::vector<AblationRow>& rows) {
    std::vector<AblationAggregate> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const AblationAggregate& a) { return a.mode == r.mode && a.resolution == r.resolution; });
        if (it == out.end()) {
            out.push_back({r.mode, r.resolution, 0.0, r.auc, r.auc, 0});
            it = out.end() - 1;
        }
        it->mean += r.auc;
        it->min = std::min(it->min, r.auc);
        it->max = std::max(it->max, r.auc);
        ++it->runs;
    }
    for (auto& a : out) a.mean /= static_cast<double>(a.runs);
    return out;
}

AblationResult ablation_run(const AblationConfig& cfg, const std::function<void(const AblationRow&)>& on_row) {
    if (cfg.resolutions.empty() || cfg.modes.empty() || cfg.seeds.empty())
        throw ConfigError("ablation needs at least one resolution, mode and seed");
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    AblationResult result;
    for (std::size_t res : cfg.resolutions) {
        if (elapsed() >= cfg.budget_seconds) {
            result.incomplete = true;
            break;
        }
        auto cc = cfg.cohort;
        cc.resolution = res;
        const auto samples = cohort::generate_synthetic_cohort(cc).samples();
        auto train = cohort::filter_split(samples, cohort::Split::Train);
        auto val = cohort::filter_split(samples, cohort::Split::Val);
        if (val.empty()) std::tie(train, val) = trainer::split_validation(train, cfg.train.val_fraction, cc.seed);
        const auto test = cohort::filter_split(samples, cohort::Split::TestInternal);
        for (auto mode : cfg.modes)
            for (auto seed : cfg.seeds) {
                if (elapsed() >= cfg.budget_seconds) {
                    result.incomplete = true;
                    break;
                }
                auto mc = cfg.model;
                mc.encoders.height = mc.encoders.width = res;
                mc.augment_mode = mode;
                auto tc = cfg.train;
                tc.stage = 1;
                tc.seed = seed;
                tc.checkpoint_best.clear();
                tc.checkpoint_last.clear();
                trainer::BreastModel<float> model(mc, seed);
                trainer::train_stage1(model, train, val, tc);
                const auto logits = trainer::breast_logits(model, trainer::breast_embeddings(model, test));
                AblationRow row{mode, res, seed, trainer::breast_auc(test, logits)};
                result.rows.push_back(row);
                if (on_row) on_row(row);
            }
        if (result.incomplete) break;
    }
    result.aggregates = aggregate_rows(result.rows);
    return result;
}

}  // namespace mvrisk::evalreport
