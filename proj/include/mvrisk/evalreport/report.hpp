#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvrisk/cohort/cohort.hpp"
#include "mvrisk/evalreport/metrics.hpp"

namespace mvrisk::evalreport {

inline constexpr const char* kUnknown = "Unknown/Not Stated";
inline constexpr const char* kSuppressed = "-";

struct ScoredPatient {
    std::string patient_id;
    double score = 0.0;
    int label = 0;
    std::map<std::string, std::string> attributes;
};

struct ScoredCohort {
    std::vector<ScoredPatient> patients;

    std::vector<double> scores() const;
    std::vector<int> labels() const;
};

// Age bins used for reporting: "<60", "60-65" (60 <= age < 65), "65+".
std::string age_bin(double age);

// age_bin, ethnicity, site, manufacturer, cancer_type, grade.
std::map<std::string, std::string> attributes_of(const cohort::Episode& e);

struct StratumDef {
    std::string attribute;
    // Case attributes (cancer type, grade): the stratum keeps its matching
    // cases plus every control.
    bool case_only = false;
};

std::vector<StratumDef> default_strata();

struct ReportConfig {
    std::size_t n_boot = kDefaultBootstrap;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::size_t min_cases = 5;
};

struct CellResult {
    std::string stratum;  // "overall" for the whole cohort
    std::string value;
    std::size_t n = 0;
    std::size_t n_cases = 0;
    std::size_t n_controls = 0;
    bool suppressed = false;
    std::string note;  // reason for suppression
    double auc = 0.0;
    Interval ci;
};

struct EvalReport {
    std::string model;
    CellResult overall;
    std::vector<CellResult> strata;
    nlohmann::json metadata = nlohmann::json::object();

    // model,stratum,value,n,n_cases,n_controls,auc,ci_lo,ci_hi,note
    void write_csv(const std::filesystem::path& path) const;
    void write_json(const std::filesystem::path& path) const;
    nlohmann::json to_json() const;
};

CellResult evaluate_cell(const std::vector<const ScoredPatient*>& members, const std::string& stratum,
                         const std::string& value, const ReportConfig& cfg);

// Overall AUC with bootstrap CI and, for each stratum definition, one cell per
// observed attribute value (empty values become "Unknown/Not Stated").
EvalReport subgroup_report(const ScoredCohort& cohort, const std::vector<StratumDef>& strata, const ReportConfig& cfg);

struct DescriptionRow {
    std::string section;
    std::string value;
    std::size_t cases = 0;
    double cases_pct = 0.0;
    std::size_t controls = 0;
    double controls_pct = 0.0;
    bool case_only = false;
};

struct AgeSummary {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

struct CohortDescription {
    std::size_t n_cases = 0;
    std::size_t n_controls = 0;
    AgeSummary cases_age;
    AgeSummary controls_age;
    std::vector<DescriptionRow> rows;

    // section,value,cases_n,cases_pct,controls_n,controls_pct
    void write_csv(const std::filesystem::path& path) const;
};

// Counts and percentages per case/control arm for the episodes of `split`
// with a definite episode label.
CohortDescription cohort_description(const cohort::CohortManifest& manifest, cohort::Split split,
                                     const cohort::LabelingConfig& labeling = {});

}  // namespace mvrisk::evalreport
