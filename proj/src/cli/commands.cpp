#include "mvrisk/cli/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "CLI11.hpp"

namespace mvrisk::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

std::string hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// The output location does not change any result, so it is left out.
std::string config_hash(const RunConfig& cfg) {
    auto j = to_json(cfg);
    j.erase("output_dir");
    return hex(fnv1a(j.dump()));
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
    write_text(dir / "resolved_config.json", to_json(cfg).dump(2) + "\n");
}

struct LoadedCohort {
    std::vector<cohort::PatientSample> samples;
    fs::path manifest;
};

LoadedCohort load_cohort(const fs::path& manifest, const cohort::LabelingConfig& labeling) {
    if (!fs::exists(manifest)) throw MissingArtifact("manifest not found: " + manifest.string());
    auto m = cohort::read_manifest(manifest);
    return {cohort::load_samples(m, manifest.parent_path(), labeling), manifest};
}

void check_resolution(const std::vector<cohort::PatientSample>& samples, const trainer::ModelConfig& m) {
    for (const auto& s : samples)
        for (const auto& v : s.views)
            if (v.height != m.encoders.height || v.width != m.encoders.width)
                throw Incompatible("cohort image " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                                   " does not match model input " + std::to_string(m.encoders.height) + "x" +
                                   std::to_string(m.encoders.width));
}

std::pair<std::vector<cohort::PatientSample>, std::vector<cohort::PatientSample>> train_val(
    const std::vector<cohort::PatientSample>& all, const trainer::TrainConfig& tc) {
    auto train = cohort::filter_split(all, cohort::Split::Train);
    auto val = cohort::filter_split(all, cohort::Split::Val);
    if (train.empty()) throw ValidationError("cohort has no training patients");
    if (val.empty()) return trainer::split_validation(train, tc.val_fraction, tc.seed);
    return {train, val};
}

json checkpoint_meta(const RunConfig& cfg, int stage) {
    return {{"stage", stage}, {"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"model", model_json(cfg.model)}};
}

encoders::Checkpoint read_compatible(const fs::path& path, const RunConfig& cfg) {
    if (path.empty()) throw MissingArtifact("no checkpoint given");
    if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string());
    auto ck = encoders::read_checkpoint(path);
    if (!ck.meta.contains("model") || ck.meta.at("model") != model_json(cfg.model))
        throw Incompatible("checkpoint " + path.string() + " was written for a different model configuration");
    if (!ck.meta.contains("stage")) throw Incompatible("checkpoint " + path.string() + " has no stage");
    return ck;
}

Baseline inferred_baseline(const trainer::ModelConfig& m, int stage) {
    if (stage == 2) return Baseline::Bilateral;
    switch (m.variant) {
        case trainer::ModelVariant::GlobalOnly:
            return Baseline::DinoOnly;
        case trainer::ModelVariant::LocalOnly:
            return Baseline::LocalOnly;
        case trainer::ModelVariant::Hybrid:
            return Baseline::HybridMax;
    }
    return Baseline::HybridMax;
}

void check_baseline(Baseline b, const trainer::ModelConfig& m, int stage) {
    const bool ok = [&] {
        switch (b) {
            case Baseline::DinoOnly:
                return m.variant == trainer::ModelVariant::GlobalOnly;
            case Baseline::LocalOnly:
                return m.variant == trainer::ModelVariant::LocalOnly;
            case Baseline::HybridMax:
                return m.variant == trainer::ModelVariant::Hybrid;
            case Baseline::Bilateral:
                return stage == 2;
        }
        return false;
    }();
    if (!ok)
        throw Incompatible("baseline " + to_string(b) + " cannot be evaluated from a stage-" + std::to_string(stage) +
                           " " + trainer::to_string(m.variant) + " checkpoint");
}

}  // namespace

std::string to_string(Baseline b) {
    switch (b) {
        case Baseline::DinoOnly:
            return "dino_only";
        case Baseline::LocalOnly:
            return "local_only";
        case Baseline::HybridMax:
            return "hybrid_max";
        case Baseline::Bilateral:
            return "bilateral";
    }
    return "?";
}

Baseline parse_baseline(const std::string& s) {
    for (auto b : {Baseline::DinoOnly, Baseline::LocalOnly, Baseline::HybridMax, Baseline::Bilateral})
        if (to_string(b) == s) return b;
    throw ConfigError("unknown baseline '" + s + "' (dino_only, local_only, hybrid_max, bilateral)");
}

int report_exception() {
    try {
        throw;
    } catch (const ConfigError& e) {
        log("config error: " + std::string(e.what()));
        return kExitConfig;
    } catch (const MissingArtifact& e) {
        log("missing artifact: " + std::string(e.what()));
        return kExitMissing;
    } catch (const Incompatible& e) {
        log("incompatible: " + std::string(e.what()));
        return kExitIncompatible;
    } catch (const ShapeMismatch& e) {
        log("incompatible: " + std::string(e.what()));
        return kExitIncompatible;
    } catch (const Divergence& e) {
        log("diverged: " + std::string(e.what()));
        return kExitDivergence;
    } catch (const std::exception& e) {
        log("error: " + std::string(e.what()));
        return kExitFailure;
    }
}

void cmd_generate(const RunConfig& cfg) {
    const fs::path out = cfg.resolved_output_dir();
    auto coh = cohort::generate_synthetic_cohort(cfg.synthetic);
    cohort::write_cohort(coh, out / "cohort", cfg.synthetic.image_format);
    write_resolved_config(cfg, out);
    log("wrote " + std::to_string(coh.patients.size()) + " patients to " + (out / "cohort").string());
}

trainer::TrainResult cmd_train(const RunConfig& cfg, const TrainOptions& opt) {
    if (opt.stage != 1 && opt.stage != 2) throw ConfigError("--stage must be 1 or 2");
    const fs::path out = cfg.resolved_output_dir();
    const fs::path dir = out / ("stage" + std::to_string(opt.stage));
    encoders::Checkpoint stage1;
    if (opt.stage == 2) {
        if (opt.from_stage1.empty()) throw MissingArtifact("stage 2 needs --from-stage1");
        stage1 = read_compatible(opt.from_stage1, cfg);
        if (stage1.meta.at("stage") != 1) throw Incompatible(opt.from_stage1.string() + " is not a stage-1 checkpoint");
    }
    const fs::path cohort_dir = opt.cohort_dir.empty() ? out / "cohort" : opt.cohort_dir;
    auto loaded = load_cohort(cohort_dir / "manifest.jsonl", cfg.labeling);
    check_resolution(loaded.samples, cfg.model);

    trainer::TrainConfig tc = opt.stage == 1 ? cfg.stage1 : cfg.stage2;
    tc.checkpoint_best = dir / "best.ckpt";
    tc.checkpoint_last = dir / "last.ckpt";
    fs::create_directories(dir);
    auto [train, val] = train_val(loaded.samples, tc);
    log("stage " + std::to_string(opt.stage) + ": " + std::to_string(train.size()) + " train, " +
        std::to_string(val.size()) + " validation patients");

    trainer::BreastModel<float> model(cfg.model, cfg.seed);
    const json meta = checkpoint_meta(cfg, opt.stage);
    auto result = opt.stage == 1 ? trainer::train_stage1(model, train, val, tc, meta)
                                 : trainer::train_stage2(model, train, val, tc, stage1, meta);
    result.history.write_csv(dir / "history.csv");
    write_resolved_config(cfg, dir);
    log("best epoch " + std::to_string(result.best_epoch) + " of " + std::to_string(result.epochs_run) + ", " +
        tc.early_stop.metric + " " + std::to_string(result.best_metric));
    return result;
}

evalreport::EvalReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt) {
    const fs::path out = cfg.resolved_output_dir();
    auto ck = read_compatible(opt.checkpoint, cfg);
    const int stage = ck.meta.at("stage").get<int>();
    const Baseline baseline = opt.baseline.value_or(inferred_baseline(cfg.model, stage));
    check_baseline(baseline, cfg.model, stage);

    const fs::path manifest = opt.manifest.empty() ? out / "cohort" / "manifest.jsonl" : opt.manifest;
    auto loaded = load_cohort(manifest, cfg.labeling);
    auto samples = cohort::filter_split(loaded.samples, opt.split);
    if (samples.empty()) throw ValidationError("no labeled patients in split " + cohort::to_string(opt.split));
    check_resolution(samples, cfg.model);

    trainer::BreastModel<float> model(cfg.model, cfg.seed);
    encoders::load_into(ck, model.store());
    auto emb = trainer::breast_embeddings(model, samples);
    std::vector<double> scores;
    if (baseline == Baseline::Bilateral) {
        scores = trainer::bilateral_logits(model, emb);
    } else {
        for (const auto& l : trainer::breast_logits(model, emb)) scores.push_back(std::max(l[0], l[1]));
    }

    evalreport::ScoredCohort scored;
    for (std::size_t i = 0; i < samples.size(); ++i)
        scored.patients.push_back({samples[i].episode.patient_id, scores[i], samples[i].label,
                                   evalreport::attributes_of(samples[i].episode)});
    auto strata = opt.subgroups ? evalreport::default_strata() : std::vector<evalreport::StratumDef>{};
    auto report = evalreport::subgroup_report(scored, strata, cfg.report);
    report.model = to_string(baseline);
    report.metadata = {{"seed", cfg.seed},
                       {"split", cohort::to_string(opt.split)},
                       {"checkpoint_hash", hex(file_hash(opt.checkpoint))},
                       {"config_hash", config_hash(cfg)},
                       {"n_boot", cfg.report.n_boot},
                       {"level", cfg.report.level}};

    const fs::path dir = out / "eval" / (to_string(baseline) + "_" + cohort::to_string(opt.split));
    fs::create_directories(dir);
    report.write_csv(dir / "report.csv");
    report.write_json(dir / "report.json");
    std::string csv = "patient_id,label,score\n";
    char buf[64];
    for (const auto& p : scored.patients) {
        std::snprintf(buf, sizeof buf, ",%d,%.9g\n", p.label, p.score);
        csv += p.patient_id + buf;
    }
    write_text(dir / "scores.csv", csv);
    if (report.overall.suppressed)
        log(report.model + ": AUC not reported (" + report.overall.note + ")");
    else
        log(report.model + ": AUC " + std::to_string(report.overall.auc) + " [" + std::to_string(report.overall.ci.lo) +
            ", " + std::to_string(report.overall.ci.hi) + "] on " + std::to_string(report.overall.n) + " patients");
    return report;
}

evalreport::AblationResult cmd_ablate(const RunConfig& cfg) {
    evalreport::AblationConfig ac;
    ac.resolutions = cfg.ablation_resolutions;
    ac.seeds = cfg.ablation_seeds;
    ac.model = cfg.model;
    ac.train = cfg.stage1;
    ac.cohort = cfg.synthetic;
    if (cfg.ablation_budget_seconds > 0.0) ac.budget_seconds = cfg.ablation_budget_seconds;
    auto result = evalreport::ablation_run(ac, [](const evalreport::AblationRow& r) {
        log(trainer::to_string(r.mode) + " @" + std::to_string(r.resolution) + " seed " + std::to_string(r.seed) +
            ": AUC " + std::to_string(r.auc));
    });
    const fs::path dir = cfg.resolved_output_dir() / "ablation";
    fs::create_directories(dir);
    result.write_csv(dir / "ablation.csv");
    if (result.incomplete) log("time budget exhausted; ablation is incomplete");
    return result;
}

trainer::GradcheckReport cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt) {
    const auto model = opt.use_config_model ? cfg.model : trainer::tiny_model_config();
    auto rep = trainer::gradcheck_model(model, opt.n_params, cfg.seed);
    json entries = json::array();
    for (const auto& e : rep.entries)
        entries.push_back({{"path", e.path},
                           {"index", e.index},
                           {"analytic", e.analytic},
                           {"numeric", e.numeric},
                           {"rel_error", e.rel_error}});
    json j = {{"max_rel_error", rep.max_rel_error},
              {"tolerance", kGradcheckTolerance},
              {"passed", rep.max_rel_error < kGradcheckTolerance && rep.frozen_max_abs_grad == 0.0},
              {"frozen_params", rep.frozen_params},
              {"frozen_max_abs_grad", rep.frozen_max_abs_grad},
              {"entries", entries}};
    write_text(cfg.resolved_output_dir() / "gradcheck.json", j.dump(2) + "\n");
    char buf[160];
    std::snprintf(buf, sizeof buf, "gradcheck: %zu params, max rel error %.3g, frozen max |grad| %.3g",
                  rep.entries.size(), rep.max_rel_error, rep.frozen_max_abs_grad);
    log(buf);
    return rep;
}

evalreport::CohortDescription cmd_describe_cohort(const RunConfig& cfg, const DescribeOptions& opt) {
    const fs::path out = cfg.resolved_output_dir();
    const fs::path manifest = opt.manifest.empty() ? out / "cohort" / "manifest.jsonl" : opt.manifest;
    if (!fs::exists(manifest)) throw MissingArtifact("manifest not found: " + manifest.string());
    auto d = evalreport::cohort_description(cohort::read_manifest(manifest), opt.split, cfg.labeling);
    fs::create_directories(out);
    d.write_csv(out / ("cohort_description_" + cohort::to_string(opt.split) + ".csv"));
    log(std::to_string(d.n_cases) + " cases, " + std::to_string(d.n_controls) + " controls in " +
        cohort::to_string(opt.split));
    return d;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Multi-view breast cancer risk models: cohorts, training and evaluation"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("-o,--out", out_dir, "output directory (overrides output_dir)");
    app.add_option("--seed", seed, "overrides the configured seed");

    auto* gen = app.add_subcommand("generate", "write a synthetic cohort");

    TrainOptions topt;
    auto* train = app.add_subcommand("train", "train stage 1 (breast) or stage 2 (bilateral)");
    train->add_option("--stage", topt.stage, "1 or 2")->required();
    train->add_option("--cohort", topt.cohort_dir, "cohort directory with manifest.jsonl");
    train->add_option("--from-stage1", topt.from_stage1, "stage-1 checkpoint for stage 2");

    EvalOptions eopt;
    std::string eval_split = "test_internal", baseline;
    auto* eval = app.add_subcommand("eval", "score a split and report AUC with bootstrap intervals");
    eval->add_option("--checkpoint", eopt.checkpoint, "trained checkpoint")->required();
    eval->add_option("--manifest", eopt.manifest, "cohort manifest");
    eval->add_option("--split", eval_split, "train, val, test_internal or test_external");
    eval->add_flag("--subgroups", eopt.subgroups, "add per-attribute strata");
    eval->add_option("--baseline", baseline, "dino_only, local_only, hybrid_max or bilateral");

    auto* ablate = app.add_subcommand("ablate", "per-channel versus replicate augmentation across resolutions");

    GradcheckOptions gopt;
    auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
    grad->add_option("--params", gopt.n_params, "number of sampled parameters");
    grad->add_flag("--config-model", gopt.use_config_model, "check the configured model instead of the small one");

    DescribeOptions dopt;
    std::string describe_split = "test_internal";
    auto* describe = app.add_subcommand("describe-cohort", "case/control composition table for one split");
    describe->add_option("--manifest", dopt.manifest, "cohort manifest");
    describe->add_option("--split", describe_split, "train, val, test_internal or test_external");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig cfg;
        try {
            cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
            if (seed) {
                json j = to_json(cfg);
                j["seed"] = *seed;
                cfg = parse_config(j);
            }
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            eopt.split = cohort::parse_split(eval_split);
            dopt.split = cohort::parse_split(describe_split);
            if (!baseline.empty()) eopt.baseline = parse_baseline(baseline);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }

        if (*gen) cmd_generate(cfg);
        if (*train) cmd_train(cfg, topt);
        if (*eval) cmd_eval(cfg, eopt);
        if (*ablate) cmd_ablate(cfg);
        if (*describe) cmd_describe_cohort(cfg, dopt);
        if (*grad) {
            auto rep = cmd_gradcheck(cfg, gopt);
            if (!(rep.max_rel_error < kGradcheckTolerance) || rep.frozen_max_abs_grad != 0.0) return kExitFailure;
        }
        return kExitOk;
    } catch (...) {
        return report_exception();
    }
}

}  // namespace mvrisk::cli
