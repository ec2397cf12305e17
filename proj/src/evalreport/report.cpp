#include "mvrisk/evalreport/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace mvrisk::evalreport {

std::vector<double> ScoredCohort::scores() const {
    std::vector<double> out;
    for (const auto& p : patients) out.push_back(p.score);
    return out;
}

std::vector<int> ScoredCohort::labels() const {
    std::vector<int> out;
    for (const auto& p : patients) out.push_back(p.label);
    return out;
}

std::string age_bin(double age) {
    if (age < 60.0) return "<60";
    if (age < 65.0) return "60-65";
    return "65+";
}

std::map<std::string, std::string> attributes_of(const cohort::Episode& e) {
    return {{"age_bin", age_bin(e.age)},      {"ethnicity", e.ethnicity},     {"site", e.site},
            {"manufacturer", e.manufacturer}, {"cancer_type", e.cancer_type}, {"grade", e.grade}};
}

std::vector<StratumDef> default_strata() {
    return {{"age_bin", false},      {"ethnicity", false},  {"site", false},
            {"manufacturer", false}, {"cancer_type", true}, {"grade", true}};
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string attribute(const ScoredPatient& p, const std::string& name) {
    auto it = p.attributes.find(name);
    if (it == p.attributes.end() || it->second.empty()) return kUnknown;
    return it->second;
}

nlohmann::json cell_json(const CellResult& c) {
    nlohmann::json j{{"stratum", c.stratum}, {"value", c.value},         {"n", c.n},
                     {"n_cases", c.n_cases}, {"n_controls", c.n_controls}, {"suppressed", c.suppressed}};
    if (c.suppressed) {
        j["note"] = c.note;
    } else {
        j["auc"] = c.auc;
        j["ci_lo"] = c.ci.lo;
        j["ci_hi"] = c.ci.hi;
        j["bootstrap_redrawn"] = c.ci.redrawn;
    }
    return j;
}

}  // namespace

CellResult evaluate_cell(const std::vector<const ScoredPatient*>& members, const std::string& stratum,
                         const std::string& value, const ReportConfig& cfg) {
    CellResult c;
    c.stratum = stratum;
    c.value = value;
    c.n = members.size();
    std::vector<double> s;
    std::vector<int> y;
    for (const auto* p : members) {
        s.push_back(p->score);
        y.push_back(p->label);
        (p->label == 1 ? c.n_cases : c.n_controls)++;
    }
    if (c.n_cases == 0 || c.n_controls == 0) {
        c.suppressed = true;
        c.note = "not evaluable";
    } else if (c.n_cases < cfg.min_cases) {
        c.suppressed = true;
        c.note = "fewer than " + std::to_string(cfg.min_cases) + " cases";
    } else {
        c.auc = auc(s, y);
        c.ci = bootstrap_ci(s, y, cfg.n_boot, cfg.level, cfg.seed);
    }
    return c;
}

EvalReport subgroup_report(const ScoredCohort& cohort, const std::vector<StratumDef>& strata, const ReportConfig& cfg) {
    EvalReport r;
    std::vector<const ScoredPatient*> all;
    for (const auto& p : cohort.patients) all.push_back(&p);
    r.overall = evaluate_cell(all, "overall", "all", cfg);
    for (const auto& def : strata) {
        std::set<std::string> values;
        for (const auto& p : cohort.patients)
            if (!def.case_only || p.label == 1) values.insert(attribute(p, def.attribute));
        for (const auto& v : values) {
            std::vector<const ScoredPatient*> members;
            for (const auto& p : cohort.patients) {
                if (def.case_only && p.label == 0)
                    members.push_back(&p);
                else if (attribute(p, def.attribute) == v)
                    members.push_back(&p);
            }
            r.strata.push_back(evaluate_cell(members, def.attribute, v, cfg));
        }
    }
    r.metadata["n_boot"] = cfg.n_boot;
    r.metadata["level"] = cfg.level;
    r.metadata["bootstrap_seed"] = cfg.seed;
    r.metadata["min_cases"] = cfg.min_cases;
    return r;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j{{"model", model}, {"overall", cell_json(overall)}, {"metadata", metadata}};
    j["strata"] = nlohmann::json::array();
    for (const auto& c : strata) j["strata"].push_back(cell_json(c));
    return j;
}

void EvalReport::write_json(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write report " + path.string());
    os << to_json().dump(2) << '\n';
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write report " + path.string());
    os << "model,stratum,value,n,n_cases,n_controls,auc,ci_lo,ci_hi,note\n";
    auto row = [&](const CellResult& c) {
        os << csv_field(model) << ',' << csv_field(c.stratum) << ',' << csv_field(c.value) << ',' << c.n << ','
           << c.n_cases << ',' << c.n_controls << ',';
        if (c.suppressed)
            os << kSuppressed << ',' << kSuppressed << ',' << kSuppressed << ',' << csv_field(c.note) << '\n';
        else
            os << fmt(c.auc) << ',' << fmt(c.ci.lo) << ',' << fmt(c.ci.hi) << ",\n";
    };
    row(overall);
    for (const auto& c : strata) row(c);
}

namespace {

AgeSummary summarize_ages(std::vector<double> ages) {
    if (ages.empty()) return {};
    std::sort(ages.begin(), ages.end());
    return {quantile_sorted(ages, 0.5), quantile_sorted(ages, 0.25), quantile_sorted(ages, 0.75)};
}

}  // namespace

CohortDescription cohort_description(const cohort::CohortManifest& manifest, cohort::Split split,
                                     const cohort::LabelingConfig& labeling) {
    const auto labels = cohort::label_episodes(manifest.episodes, labeling);
    std::vector<const cohort::Episode*> cases, controls;
    for (std::size_t i = 0; i < manifest.episodes.size(); ++i) {
        const auto& e = manifest.episodes[i];
        if (e.split != split) continue;
        const auto l = labels.episodes[i].label;
        if (l == cohort::BreastLabelValue::Positive)
            cases.push_back(&e);
        else if (l == cohort::BreastLabelValue::Negative)
            controls.push_back(&e);
    }
    CohortDescription d;
    d.n_cases = cases.size();
    d.n_controls = controls.size();
    auto ages = [](const std::vector<const cohort::Episode*>& v) {
        std::vector<double> a;
        for (const auto* e : v) a.push_back(e->age);
        return summarize_ages(std::move(a));
    };
    d.cases_age = ages(cases);
    d.controls_age = ages(controls);

    const std::vector<std::pair<std::string, std::string>> sections{
        {"Age", "age_bin"},          {"Ethnicity", "ethnicity"},     {"Site", "site"},
        {"Manufacturer", "manufacturer"}, {"Cancer type", "cancer_type"}, {"Grade", "grade"}};
    for (const auto& [title, key] : sections) {
        const bool case_only = key == "cancer_type" || key == "grade";
        std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
        auto value_of = [&](const cohort::Episode* e) {
            const auto v = attributes_of(*e).at(key);
            return v.empty() ? std::string(kUnknown) : v;
        };
        for (const auto* e : cases) counts[value_of(e)].first++;
        if (!case_only)
            for (const auto* e : controls) counts[value_of(e)].second++;
        for (const auto& [value, c] : counts) {
            DescriptionRow r{title, value, c.first, 0.0, c.second, 0.0, case_only};
            if (d.n_cases) r.cases_pct = 100.0 * static_cast<double>(c.first) / static_cast<double>(d.n_cases);
            if (d.n_controls && !case_only)
                r.controls_pct = 100.0 * static_cast<double>(c.second) / static_cast<double>(d.n_controls);
            d.rows.push_back(r);
        }
    }
    return d;
}

void CohortDescription::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write cohort description " + path.string());
    char buf[96];
    os << "section,value,cases_n,cases_pct,controls_n,controls_pct\n";
    os << "Total,all," << n_cases << ",100.0," << n_controls << ",100.0\n";
    auto age = [&](const AgeSummary& a) {
        std::snprintf(buf, sizeof buf, "%.1f (%.1f-%.1f)", a.median, a.q1, a.q3);
        return std::string(buf);
    };
    os << "Age,median (IQR)," << age(cases_age) << ",," << age(controls_age) << ",\n";
    for (const auto& r : rows) {
        os << csv_field(r.section) << ',' << csv_field(r.value) << ',' << r.cases << ',';
        std::snprintf(buf, sizeof buf, "%.1f", r.cases_pct);
        os << buf << ',';
        if (r.case_only) {
            os << ",\n";
            continue;
        }
        std::snprintf(buf, sizeof buf, "%.1f", r.controls_pct);
        os << r.controls << ',' << buf << '\n';
    }
}

}  // namespace mvrisk::evalreport
