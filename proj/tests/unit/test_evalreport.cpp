#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mvrisk/evalreport/ablation.hpp"
#include "mvrisk/evalreport/report.hpp"

using namespace mvrisk;
using namespace mvrisk::evalreport;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                den += 1.0;
            }
    return num / den;
}

ScoredPatient patient(const std::string& id, double score, int label, std::map<std::string, std::string> attrs = {}) {
    return {id, score, label, std::move(attrs)};
}

}  // namespace

TEST_CASE("auc") {
    CHECK(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}) == 1.0);
    CHECK(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
    const std::vector<double> s{0.3, 0.7, 0.3, 0.9, 0.1, 0.7};
    const std::vector<int> y{1, 0, 0, 1, 0, 1};
    CHECK(auc(s, y) == pairwise_auc(s, y));
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), NotEvaluable);
    CHECK_THROWS_AS(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ShapeMismatch);
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{2, 0}), InvalidParameter);

    Rng rng(4);
    std::uniform_int_distribution<int> level(0, 9), lab(0, 1);
    for (int t = 0; t < 30; ++t) {
        std::vector<double> sc(40);
        std::vector<int> yy(40);
        for (std::size_t i = 0; i < 40; ++i) sc[i] = level(rng) / 10.0, yy[i] = lab(rng);
        yy[0] = 0;
        yy[1] = 1;
        const double a = auc(sc, yy);
        CHECK(a == pairwise_auc(sc, yy));
        std::vector<double> transformed, neg;
        for (double v : sc) transformed.push_back(std::exp(3 * v) - 7), neg.push_back(-v);
        CHECK(auc(transformed, yy) == a);
        // with ties, the mirrored score still sums to one because ties count half both ways
        CHECK(a + auc(neg, yy) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("bootstrap intervals") {
    const std::vector<double> sep{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
    const std::vector<int> y{0, 0, 0, 1, 1, 1};
    auto ci = bootstrap_ci(sep, y, 300, 0.95, 1);
    CHECK(ci.lo == 1.0);
    CHECK(ci.hi == 1.0);
    CHECK(ci.redrawn > 0);

    const std::vector<double> s{0.3, 0.7, 0.3, 0.9, 0.1, 0.7, 0.2, 0.5};
    const std::vector<int> yy{1, 0, 0, 1, 0, 1, 0, 1};
    auto one = bootstrap_ci(s, yy, 1, 0.95, 5);
    CHECK(one.lo == one.hi);
    auto a = bootstrap_ci(s, yy, 400, 0.95, 5);
    auto b = bootstrap_ci(s, yy, 400, 0.95, 5);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.lo <= auc(s, yy));
    CHECK(auc(s, yy) <= a.hi);
    CHECK(a.lo >= 0.0);
    CHECK(a.hi <= 1.0);
    CHECK_THROWS_AS(bootstrap_ci(s, yy, 0), InvalidParameter);
    CHECK_THROWS_AS(bootstrap_ci(s, yy, 10, 1.0), InvalidParameter);
}

TEST_CASE("quantile") {
    const std::vector<double> v{1.0, 2.0, 4.0};
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 0.5) == 2.0);
    CHECK(quantile_sorted(v, 0.75) == 3.0);
    CHECK(quantile_sorted(v, 1.0) == 4.0);
}

TEST_CASE("subgroup report") {
    ReportConfig cfg;
    cfg.n_boot = 200;
    SUBCASE("controls-only stratum is not evaluable") {
        ScoredCohort c;
        for (int i = 0; i < 6; ++i) c.patients.push_back(patient("c" + std::to_string(i), 0.6 + 0.01 * i, 1, {{"site", "A"}}));
        for (int i = 0; i < 6; ++i) c.patients.push_back(patient("k" + std::to_string(i), 0.1 * i, 0, {{"site", i < 3 ? "A" : "B"}}));
        auto r = subgroup_report(c, {{"site", false}}, cfg);
        REQUIRE(r.strata.size() == 2);
        CHECK_FALSE(r.strata[0].suppressed);
        CHECK(r.strata[1].value == "B");
        CHECK(r.strata[1].suppressed);
        CHECK(r.strata[1].note == "not evaluable");
    }
    SUBCASE("three cases under min_cases 5") {
        ScoredCohort c;
        for (int i = 0; i < 3; ++i) c.patients.push_back(patient("c" + std::to_string(i), 0.9, 1));
        for (int i = 0; i < 10; ++i) c.patients.push_back(patient("k" + std::to_string(i), 0.1, 0));
        auto r = subgroup_report(c, {}, cfg);
        CHECK(r.overall.suppressed);
        CHECK(r.overall.note == "fewer than 5 cases");
        CHECK(r.overall.n == 13);
    }
    SUBCASE("strata match auc on the restricted subset") {
        ScoredCohort c;
        Rng rng(2);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < 60; ++i) {
            const int label = i % 3 == 0;
            c.patients.push_back(patient("p" + std::to_string(i), u(rng) + 0.3 * label, label,
                                         {{"site", i % 2 ? "A" : "B"}, {"grade", label ? (i % 4 ? "1" : "2") : ""}}));
        }
        auto r = subgroup_report(c, {{"site", false}, {"grade", true}}, cfg);
        std::size_t site_total = 0;
        for (const auto& cell : r.strata) {
            std::vector<double> s;
            std::vector<int> y;
            for (const auto& p : c.patients) {
                const bool in = cell.stratum == "site" ? p.attributes.at("site") == cell.value
                                                       : (p.label == 0 || p.attributes.at("grade") == cell.value);
                if (in) s.push_back(p.score), y.push_back(p.label);
            }
            CHECK(cell.n == s.size());
            REQUIRE_FALSE(cell.suppressed);
            CHECK(cell.auc == pairwise_auc(s, y));
            CHECK(cell.ci.lo <= cell.auc);
            CHECK(cell.auc <= cell.ci.hi);
            if (cell.stratum == "site") site_total += cell.n;
        }
        CHECK(site_total == c.patients.size());
        CHECK(r.strata.size() == 4);
        CHECK(r.overall.auc == pairwise_auc(c.scores(), c.labels()));
    }
    SUBCASE("empty attribute becomes its own value, CSV marks suppression") {
        ScoredCohort c;
        c.patients.push_back(patient("a", 0.9, 1, {{"ethnicity", ""}}));
        c.patients.push_back(patient("b", 0.1, 0, {{"ethnicity", "White"}}));
        auto r = subgroup_report(c, {{"ethnicity", false}}, cfg);
        REQUIRE(r.strata.size() == 2);
        CHECK(r.strata[0].value == std::string(kUnknown));
        r.model = "m";
        const auto p = std::filesystem::temp_directory_path() / "mvrisk_report.csv";
        r.write_csv(p);
        std::ifstream is(p);
        std::string header, overall;
        std::getline(is, header);
        std::getline(is, overall);
        CHECK(header == "model,stratum,value,n,n_cases,n_controls,auc,ci_lo,ci_hi,note");
        CHECK(overall == "m,overall,all,2,1,1,-,-,-,fewer than 5 cases");
        std::filesystem::remove(p);
    }
}

TEST_CASE("age bins") {
    CHECK(age_bin(59.9) == "<60");
    CHECK(age_bin(60.0) == "60-65");
    CHECK(age_bin(64.99) == "60-65");
    CHECK(age_bin(65.0) == "65+");
}

TEST_CASE("cohort description tallies a small manifest") {
    using namespace mvrisk::cohort;
    auto ep = [](const std::string& id, Outcome o, LesionSide s, double age, const std::string& eth,
                 const std::string& site) {
        Episode e;
        e.patient_id = "P" + id;
        e.episode_id = "E" + id;
        e.exam_date = "2020-01-01";
        e.outcome = o;
        e.lesion_laterality = s;
        e.age = age;
        e.site = site;
        e.manufacturer = "GE";
        e.ethnicity = eth;
        if (o != Outcome::N) e.cancer_type = "Invasive", e.grade = "2";
        e.split = Split::TestInternal;
        return e;
    };
    CohortManifest m;
    m.episodes = {ep("1", Outcome::M, LesionSide::Left, 55, "White", "A"),
                  ep("2", Outcome::CI, LesionSide::Right, 67, "", "B"),
                  ep("3", Outcome::N, LesionSide::None, 61, "White", "A"),
                  ep("4", Outcome::N, LesionSide::None, 63, "Asian", "A")};
    auto d = cohort_description(m, Split::TestInternal);
    CHECK(d.n_cases == 2);
    CHECK(d.n_controls == 2);
    CHECK(d.cases_age.median == 61.0);
    CHECK(d.controls_age.q1 == 61.5);
    auto find = [&](const std::string& section, const std::string& value) -> const DescriptionRow& {
        for (const auto& r : d.rows)
            if (r.section == section && r.value == value) return r;
        FAIL("missing row " << section << "/" << value);
        return d.rows.front();
    };
    CHECK(find("Ethnicity", kUnknown).cases == 1);
    CHECK(find("Ethnicity", kUnknown).controls == 0);
    CHECK(find("Ethnicity", "White").cases_pct == 50.0);
    CHECK(find("Ethnicity", "White").controls_pct == 50.0);
    CHECK(find("Site", "A").controls == 2);
    CHECK(find("Age", "60-65").controls == 2);
    CHECK(find("Age", "<60").cases == 1);
    CHECK(find("Cancer type", "Invasive").cases == 2);
    CHECK(find("Grade", "2").case_only);
    std::map<std::string, std::pair<double, double>> sums;
    for (const auto& r : d.rows) {
        sums[r.section].first += r.cases_pct;
        sums[r.section].second += r.controls_pct;
    }
    for (const auto& [section, s] : sums) {
        CHECK(s.first == doctest::Approx(100.0).epsilon(1e-3));
        if (section != "Cancer type" && section != "Grade") CHECK(s.second == doctest::Approx(100.0).epsilon(1e-3));
    }
    CHECK(cohort_description(m, Split::Train).n_cases == 0);
}

TEST_CASE("ablation aggregation") {
    using trainer::AugmentMode;
    std::vector<AblationRow> rows{{AugmentMode::PerChannel, 64, 1, 0.6},
                                  {AugmentMode::PerChannel, 64, 2, 0.8},
                                  {AugmentMode::Replicate, 64, 1, 0.5}};
    auto agg = aggregate_rows(rows);
    REQUIRE(agg.size() == 2);
    CHECK(agg[0].mean == doctest::Approx(0.7));
    CHECK(agg[0].min == 0.6);
    CHECK(agg[0].max == 0.8);
    CHECK(agg[1].runs == 1);
}

TEST_CASE("ablation run covers every setup") {
    AblationConfig cfg;
    cfg.resolutions = {16, 24, 32};
    cfg.seeds = {1, 2};
    cfg.model = trainer::tiny_model_config();
    cfg.model.encoders.local.widths = {4, 8};
    cfg.train.epochs_max = 1;
    cfg.train.batch_size = 16;
    cfg.cohort.n_patients = 24;
    cfg.cohort.positive_fraction = 0.5;
    cfg.cohort.test_internal_fraction = 0.4;
    auto r = ablation_run(cfg);
    CHECK(r.rows.size() == 12);
    CHECK(r.aggregates.size() == 6);
    CHECK_FALSE(r.incomplete);
    for (const auto& a : r.aggregates) {
        double sum = 0.0;
        for (const auto& row : r.rows)
            if (row.mode == a.mode && row.resolution == a.resolution) sum += row.auc;
        CHECK(a.mean == doctest::Approx(sum / 2.0));
    }
    const auto p = std::filesystem::temp_directory_path() / "mvrisk_ablation.csv";
    r.write_csv(p);
    std::ifstream is(p);
    std::size_t lines = 0;
    for (std::string l; std::getline(is, l);) ++lines;
    CHECK(lines == 1 + 12 + 1 + 6);
    std::filesystem::remove(p);

    cfg.budget_seconds = 0.0;
    auto partial = ablation_run(cfg);
    CHECK(partial.incomplete);
    CHECK(partial.rows.empty());
}
