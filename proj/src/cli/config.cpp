#include "mvrisk/cli/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

namespace mvrisk::cli {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config key '" + name() + "' must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + qualified(key) + "': " + e.what());
        }
    }

    Section sub(const std::string& key) {
        used_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, qualified(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown config key '" + qualified(k) + "'");
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string name() const { return path_.empty() ? "<root>" : path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

void get_grid(Section& s, const std::string& key, fusion::GridSize& g) {
    std::vector<std::size_t> v{g.height, g.width};
    s.get(key, v);
    if (v.size() != 2) throw ConfigError("config key '" + s.qualified(key) + "' must be [height, width]");
    g = {v[0], v[1]};
}

void get_range(Section& s, const std::string& key, double& lo, double& hi) {
    std::vector<double> v{lo, hi};
    s.get(key, v);
    if (v.size() != 2) throw ConfigError("config key '" + s.qualified(key) + "' must be [low, high]");
    lo = v[0];
    hi = v[1];
}

void get_weighted(Section& s, const std::string& key, cohort::Weighted& w) {
    std::vector<std::pair<std::string, double>> v(w.begin(), w.end());
    s.get(key, v);
    w = v;
}

void parse_train(Section s, trainer::TrainConfig& t) {
    s.get("epochs_max", t.epochs_max);
    s.get("batch_size", t.batch_size);
    s.get("lr", t.lr);
    s.get("weight_decay", t.weight_decay);
    auto es = s.sub("early_stop");
    es.get("metric", t.early_stop.metric);
    es.get("patience", t.early_stop.patience);
    es.get("min_delta", t.early_stop.min_delta);
    es.finish();
    s.finish();
}

json train_json(const trainer::TrainConfig& t) {
    return {{"epochs_max", t.epochs_max},
            {"batch_size", t.batch_size},
            {"lr", t.lr},
            {"weight_decay", t.weight_decay},
            {"early_stop",
             {{"metric", t.early_stop.metric}, {"patience", t.early_stop.patience}, {"min_delta", t.early_stop.min_delta}}}};
}

std::string gate_mode_name(heads::GateMode m) { return m == heads::GateMode::SharedScorer ? "shared_scorer" : "literal"; }

heads::GateMode parse_gate_mode(const std::string& s) {
    if (s == "shared_scorer") return heads::GateMode::SharedScorer;
    if (s == "literal") return heads::GateMode::Literal;
    throw ConfigError("heads.bilateral.gate_mode must be shared_scorer or literal, got '" + s + "'");
}

std::string match_key_name(cohort::MatchKey k) {
    switch (k) {
        case cohort::MatchKey::Site:
            return "site";
        case cohort::MatchKey::Age:
            return "age";
        case cohort::MatchKey::Manufacturer:
            return "manufacturer";
    }
    return "?";
}

cohort::MatchKey parse_match_key(const std::string& s) {
    if (s == "site") return cohort::MatchKey::Site;
    if (s == "age") return cohort::MatchKey::Age;
    if (s == "manufacturer") return cohort::MatchKey::Manufacturer;
    throw ConfigError("cohort.match.keys: unknown key '" + s + "'");
}

void apply_seed(RunConfig& c) {
    c.synthetic.seed = c.seed;
    c.stage1.seed = c.seed;
    c.stage2.seed = c.seed;
    c.report.seed = c.seed;
}

}  // namespace

RunConfig::RunConfig() {
    stage1.stage = 1;
    stage1.epochs_max = 20;
    stage1.early_stop.metric = "breast_auc";
    stage2.stage = 2;
    stage2.epochs_max = 30;
    stage2.early_stop.metric = "patient_auc";
    synthetic.resolution = model.encoders.height;
    apply_seed(*this);
}

void RunConfig::validate() const {
    model.validate();
    synthetic.validate();
    match.validate();
    stage1.validate();
    stage2.validate();
    if (stage1.stage != 1 || stage2.stage != 2) throw ConfigError("trainer stage sections are fixed to stages 1 and 2");
    if (stage2.early_stop.metric != "patient_auc") throw ConfigError("trainer.stage2.early_stop.metric must be patient_auc");
    if (synthetic.resolution != model.encoders.height || model.encoders.height != model.encoders.width)
        throw ConfigError("cohort.synthetic.resolution must equal encoders.height and encoders.width");
    if (report.n_boot < 1) throw ConfigError("evalreport.n_boot must be >= 1");
    if (!(report.level > 0.0 && report.level < 1.0)) throw ConfigError("evalreport.level must lie in (0,1)");
    if (ablation_resolutions.empty() || ablation_seeds.empty())
        throw ConfigError("evalreport.ablation needs resolutions and seeds");
    for (auto r : ablation_resolutions)
        if (r % model.encoders.global.patch_size != 0)
            throw ConfigError("evalreport.ablation.resolutions: " + std::to_string(r) + " is not divisible by the patch size");
    if (ablation_budget_seconds < 0.0) throw ConfigError("evalreport.ablation.budget_seconds must be >= 0");
}

std::filesystem::path RunConfig::resolved_output_dir() const {
    if (output_dir.is_absolute()) return output_dir;
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / output_dir;
    return output_dir;
}

RunConfig parse_config(const json& j) {
    RunConfig c;
    Section root(j, "");
    root.get("seed", c.seed);
    std::string out = c.output_dir.string();
    root.get("output_dir", out);
    c.output_dir = out;

    auto& m = c.model;
    {
        auto s = root.sub("imageprep");
        get_range(s, "brightness_range", m.augment.brightness_range.first, m.augment.brightness_range.second);
        get_range(s, "contrast_range", m.augment.contrast_range.first, m.augment.contrast_range.second);
        json clip = m.augment.clahe_clip_limit;
        s.get("clahe_clip_limit", clip);
        if (clip.is_null())
            m.augment.clahe_clip_limit = imageprep::kNoClip;
        else if (clip.is_number())
            m.augment.clahe_clip_limit = clip.get<double>();
        else
            throw ConfigError("config key 'imageprep.clahe_clip_limit' must be a number or null");
        fusion::GridSize g{m.augment.clahe_grid.rows, m.augment.clahe_grid.cols};
        get_grid(s, "clahe_grid", g);
        m.augment.clahe_grid = {g.height, g.width};
        s.get("scale_clahe_grid", m.scale_clahe_grid);
        std::string mode = trainer::to_string(m.augment_mode);
        s.get("augment_mode", mode);
        m.augment_mode = trainer::parse_augment_mode(mode);
        s.finish();
    }
    {
        auto s = root.sub("encoders");
        s.get("height", m.encoders.height);
        s.get("width", m.encoders.width);
        s.get("view_specific_local", m.encoders.view_specific_local);
        auto g = s.sub("global");
        g.get("patch_size", m.encoders.global.patch_size);
        g.get("token_dim", m.encoders.global.token_dim);
        g.get("num_layers", m.encoders.global.num_layers);
        g.get("num_heads", m.encoders.global.num_heads);
        g.get("mlp_ratio", m.encoders.global.mlp_ratio);
        g.get("seed", m.encoders.global.seed);
        g.get("zero_bias", m.encoders.global.zero_bias);
        g.finish();
        auto l = s.sub("local");
        l.get("widths", m.encoders.local.widths);
        l.get("cardinality", m.encoders.local.cardinality);
        l.get("se_reduction", m.encoders.local.se_reduction);
        l.finish();
        s.finish();
    }
    {
        auto s = root.sub("fusion");
        s.get("latent_dim", m.fusion.latent_dim);
        get_grid(s, "grid", m.fusion.grid);
        s.get("num_heads", m.fusion.num_heads);
        s.get("ffn_mult", m.fusion.ffn_mult);
        get_grid(s, "pool", m.fusion.pool);
        s.get("num_blocks", m.fusion.num_blocks);
        s.finish();
    }
    {
        auto s = root.sub("heads");
        auto b = s.sub("breast");
        b.get("hidden", m.breast_head.hidden);
        b.get("dropout", m.breast_head.dropout);
        b.finish();
        auto bl = s.sub("bilateral");
        bl.get("mixer_dim", m.bilateral.mixer_dim);
        bl.get("num_layers", m.bilateral.num_layers);
        bl.get("num_heads", m.bilateral.num_heads);
        bl.get("ffn_mult", m.bilateral.ffn_mult);
        bl.get("gate_hidden", m.bilateral.gate_hidden);
        bl.get("head_hidden", m.bilateral.head_hidden);
        bl.get("dropout", m.bilateral.dropout);
        std::string gm = gate_mode_name(m.bilateral.gate_mode);
        bl.get("gate_mode", gm);
        m.bilateral.gate_mode = parse_gate_mode(gm);
        bl.finish();
        s.finish();
    }
    {
        auto s = root.sub("objective");
        objective::FocalConfig f;
        s.get("focal_alpha", f.alpha);
        s.get("focal_gamma", f.gamma);
        std::string red = "mean";
        s.get("reduction", red);
        if (red == "mean")
            f.reduction = objective::Reduction::Mean;
        else if (red == "sum")
            f.reduction = objective::Reduction::Sum;
        else
            throw ConfigError("objective.reduction must be mean or sum");
        c.stage1.focal = c.stage2.focal = f;
        s.finish();
    }
    {
        auto s = root.sub("cohort");
        auto y = s.sub("synthetic");
        auto& sc = c.synthetic;
        y.get("n_patients", sc.n_patients);
        y.get("positive_fraction", sc.positive_fraction);
        sc.resolution = m.encoders.height;
        y.get("resolution", sc.resolution);
        y.get("blob_contrast", sc.blob_contrast);
        y.get("radius_min", sc.radius_min);
        y.get("radius_max", sc.radius_max);
        y.get("asymmetry", sc.asymmetry);
        y.get("background_min", sc.background_min);
        y.get("background_max", sc.background_max);
        y.get("field_amplitude", sc.field_amplitude);
        y.get("noise_std", sc.noise_std);
        y.get("confounder_rate", sc.confounder_rate);
        y.get("max_confounders", sc.max_confounders);
        get_range(y, "contrast_range", sc.contrast_min, sc.contrast_max);
        get_range(y, "gamma_range", sc.gamma_min, sc.gamma_max);
        y.get("interval_cancer_fraction", sc.interval_cancer_fraction);
        y.get("test_internal_fraction", sc.test_internal_fraction);
        y.get("test_external_fraction", sc.test_external_fraction);
        y.get("val_fraction", sc.val_fraction);
        y.get("image_format", sc.image_format);
        get_weighted(y, "sites", sc.sites);
        get_weighted(y, "manufacturers", sc.manufacturers);
        get_weighted(y, "external_manufacturers", sc.external_manufacturers);
        get_weighted(y, "ethnicities", sc.ethnicities);
        get_weighted(y, "cancer_types", sc.cancer_types);
        get_weighted(y, "grades", sc.grades);
        y.finish();
        auto l = s.sub("labeling");
        l.get("benign_positive", c.labeling.benign_positive);
        l.get("ci_contralateral_negative", c.labeling.ci_contralateral_negative);
        l.get("prior_window_years", c.labeling.prior_window_years);
        l.finish();
        auto mt = s.sub("match");
        mt.get("ratio", c.match.ratio);
        std::vector<std::string> keys;
        for (auto k : c.match.keys) keys.push_back(match_key_name(k));
        mt.get("keys", keys);
        c.match.keys.clear();
        for (const auto& k : keys) c.match.keys.insert(parse_match_key(k));
        mt.get("age_tolerance", c.match.age_tolerance);
        mt.finish();
        s.finish();
    }
    {
        auto s = root.sub("trainer");
        std::string variant = trainer::to_string(m.variant);
        s.get("variant", variant);
        m.variant = trainer::parse_variant(variant);
        s.get("val_fraction", c.stage1.val_fraction);
        c.stage2.val_fraction = c.stage1.val_fraction;
        s.get("cache_embeddings", c.stage2.cache_embeddings);
        parse_train(s.sub("stage1"), c.stage1);
        parse_train(s.sub("stage2"), c.stage2);
        s.finish();
    }
    {
        auto s = root.sub("evalreport");
        s.get("n_boot", c.report.n_boot);
        s.get("level", c.report.level);
        s.get("min_cases", c.report.min_cases);
        auto a = s.sub("ablation");
        a.get("resolutions", c.ablation_resolutions);
        a.get("seeds", c.ablation_seeds);
        a.get("budget_seconds", c.ablation_budget_seconds);
        a.finish();
        s.finish();
    }
    root.finish();
    apply_seed(c);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

json model_json(const trainer::ModelConfig& m) {
    const auto& e = m.encoders;
    json clip = std::isinf(m.augment.clahe_clip_limit) ? json(nullptr) : json(m.augment.clahe_clip_limit);
    return {
        {"variant", trainer::to_string(m.variant)},
        {"imageprep",
         {{"brightness_range", {m.augment.brightness_range.first, m.augment.brightness_range.second}},
          {"contrast_range", {m.augment.contrast_range.first, m.augment.contrast_range.second}},
          {"clahe_clip_limit", clip},
          {"clahe_grid", {m.augment.clahe_grid.rows, m.augment.clahe_grid.cols}},
          {"scale_clahe_grid", m.scale_clahe_grid},
          {"augment_mode", trainer::to_string(m.augment_mode)}}},
        {"encoders",
         {{"height", e.height},
          {"width", e.width},
          {"view_specific_local", e.view_specific_local},
          {"global",
           {{"patch_size", e.global.patch_size},
            {"token_dim", e.global.token_dim},
            {"num_layers", e.global.num_layers},
            {"num_heads", e.global.num_heads},
            {"mlp_ratio", e.global.mlp_ratio},
            {"seed", e.global.seed},
            {"zero_bias", e.global.zero_bias}}},
          {"local",
           {{"widths", e.local.widths}, {"cardinality", e.local.cardinality}, {"se_reduction", e.local.se_reduction}}}}},
        {"fusion",
         {{"latent_dim", m.fusion.latent_dim},
          {"grid", {m.fusion.grid.height, m.fusion.grid.width}},
          {"num_heads", m.fusion.num_heads},
          {"ffn_mult", m.fusion.ffn_mult},
          {"pool", {m.fusion.pool.height, m.fusion.pool.width}},
          {"num_blocks", m.fusion.num_blocks}}},
        {"heads",
         {{"breast", {{"hidden", m.breast_head.hidden}, {"dropout", m.breast_head.dropout}}},
          {"bilateral",
           {{"mixer_dim", m.bilateral.mixer_dim},
            {"num_layers", m.bilateral.num_layers},
            {"num_heads", m.bilateral.num_heads},
            {"ffn_mult", m.bilateral.ffn_mult},
            {"gate_hidden", m.bilateral.gate_hidden},
            {"head_hidden", m.bilateral.head_hidden},
            {"dropout", m.bilateral.dropout},
            {"gate_mode", gate_mode_name(m.bilateral.gate_mode)}}}}}};
}

json to_json(const RunConfig& c) {
    auto mj = model_json(c.model);
    const auto& sc = c.synthetic;
    std::vector<std::string> keys;
    for (auto k : c.match.keys) keys.push_back(match_key_name(k));
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir.generic_string();
    j["imageprep"] = mj["imageprep"];
    j["encoders"] = mj["encoders"];
    j["fusion"] = mj["fusion"];
    j["heads"] = mj["heads"];
    j["objective"] = {{"focal_alpha", c.stage1.focal.alpha},
                      {"focal_gamma", c.stage1.focal.gamma},
                      {"reduction", c.stage1.focal.reduction == objective::Reduction::Mean ? "mean" : "sum"}};
    j["cohort"] = {
        {"synthetic",
         {{"n_patients", sc.n_patients},
          {"positive_fraction", sc.positive_fraction},
          {"resolution", sc.resolution},
          {"blob_contrast", sc.blob_contrast},
          {"radius_min", sc.radius_min},
          {"radius_max", sc.radius_max},
          {"asymmetry", sc.asymmetry},
          {"background_min", sc.background_min},
          {"background_max", sc.background_max},
          {"field_amplitude", sc.field_amplitude},
          {"noise_std", sc.noise_std},
          {"confounder_rate", sc.confounder_rate},
          {"max_confounders", sc.max_confounders},
          {"contrast_range", {sc.contrast_min, sc.contrast_max}},
          {"gamma_range", {sc.gamma_min, sc.gamma_max}},
          {"interval_cancer_fraction", sc.interval_cancer_fraction},
          {"test_internal_fraction", sc.test_internal_fraction},
          {"test_external_fraction", sc.test_external_fraction},
          {"val_fraction", sc.val_fraction},
          {"image_format", sc.image_format},
          {"sites", sc.sites},
          {"manufacturers", sc.manufacturers},
          {"external_manufacturers", sc.external_manufacturers},
          {"ethnicities", sc.ethnicities},
          {"cancer_types", sc.cancer_types},
          {"grades", sc.grades}}},
        {"labeling",
         {{"benign_positive", c.labeling.benign_positive},
          {"ci_contralateral_negative", c.labeling.ci_contralateral_negative},
          {"prior_window_years", c.labeling.prior_window_years}}},
        {"match", {{"ratio", c.match.ratio}, {"keys", keys}, {"age_tolerance", c.match.age_tolerance}}}};
    j["trainer"] = {{"variant", trainer::to_string(c.model.variant)},
                    {"val_fraction", c.stage1.val_fraction},
                    {"cache_embeddings", c.stage2.cache_embeddings},
                    {"stage1", train_json(c.stage1)},
                    {"stage2", train_json(c.stage2)}};
    j["evalreport"] = {{"n_boot", c.report.n_boot},
                       {"level", c.report.level},
                       {"min_cases", c.report.min_cases},
                       {"ablation",
                        {{"resolutions", c.ablation_resolutions},
                         {"seeds", c.ablation_seeds},
                         {"budget_seconds", c.ablation_budget_seconds}}}};
    return j;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
    return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifact("cannot read " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a(bytes);
}

}  // namespace mvrisk::cli
