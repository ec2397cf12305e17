#include "mvrisk/cohort/cohort.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvrisk/imageprep/image_io.hpp"

namespace mvrisk::cohort {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ValidationError(std::string("unknown ") + what + " '" + s + "'");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
    for (const auto& [name, value] : table)
        if (v == value) return name;
    return "?";
}

constexpr std::array<std::pair<const char*, Outcome>, 6> kOutcomes{{{"N", Outcome::N},
                                                                   {"B", Outcome::B},
                                                                   {"M", Outcome::M},
                                                                   {"CI", Outcome::CI},
                                                                   {"CIP", Outcome::CIP},
                                                                   {"MP", Outcome::MP}}};
constexpr std::array<std::pair<const char*, LesionSide>, 4> kSides{{{"Left", LesionSide::Left},
                                                                    {"Right", LesionSide::Right},
                                                                    {"Bilateral", LesionSide::Bilateral},
                                                                    {"None", LesionSide::None}}};
constexpr std::array<std::pair<const char*, Split>, 4> kSplits{{{"train", Split::Train},
                                                                {"val", Split::Val},
                                                                {"test_internal", Split::TestInternal},
                                                                {"test_external", Split::TestExternal}}};
constexpr std::array<const char*, 4> kImageKeys{"L_CC", "L_MLO", "R_CC", "R_MLO"};

}  // namespace

std::string to_string(Outcome o) { return enum_name(o, kOutcomes); }
std::string to_string(LesionSide s) { return enum_name(s, kSides); }
std::string to_string(Split s) { return enum_name(s, kSplits); }
Outcome parse_outcome(const std::string& s) { return parse_enum(s, kOutcomes, "outcome"); }
LesionSide parse_lesion_side(const std::string& s) { return parse_enum(s, kSides, "lesion laterality"); }
Split parse_split(const std::string& s) { return parse_enum(s, kSplits, "split"); }

std::string to_string(BreastLabelValue v) {
    switch (v) {
        case BreastLabelValue::Positive:
            return "positive";
        case BreastLabelValue::Negative:
            return "negative";
        case BreastLabelValue::Excluded:
            return "excluded";
    }
    return "?";
}

void Episode::validate() const {
    for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].empty())
            throw ValidationError("episode " + episode_id + " is missing view " + kImageKeys[i]);
    const bool test = split == Split::TestInternal || split == Split::TestExternal;
    const AgeRange range = test ? kTestAges : kTrainAges;
    if (!range.contains(age))
        throw ValidationError("episode " + episode_id + " age " + std::to_string(age) + " outside [" +
                              std::to_string(range.lo) + ", " + std::to_string(range.hi) + "]");
    days_from_iso_date(exam_date);
}

long days_from_iso_date(const std::string& iso) {
    int y = 0;
    unsigned m = 0, d = 0;
    char dash1 = 0, dash2 = 0;
    std::istringstream is(iso);
    if (!(is >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-' || !is.eof())
        throw ValidationError("malformed exam date '" + iso + "'");
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw ValidationError("invalid exam date '" + iso + "'");
    return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

BreastLabelValue LabelingResult::breast(const std::string& episode_id, Laterality lat) const {
    for (const auto& b : breasts)
        if (b.episode_id == episode_id && b.laterality == lat) return b.label;
    throw MissingArtifact("no breast label for episode " + episode_id);
}

BreastLabelValue LabelingResult::episode(const std::string& episode_id) const {
    for (const auto& e : episodes)
        if (e.episode_id == episode_id) return e.label;
    throw MissingArtifact("no label for episode " + episode_id);
}

namespace {

using Pair = std::array<BreastLabelValue, 2>;

Pair lesion_labels(const Episode& e, LesionSide side, BreastLabelValue contralateral) {
    switch (side) {
        case LesionSide::Left:
            return {BreastLabelValue::Positive, contralateral};
        case LesionSide::Right:
            return {contralateral, BreastLabelValue::Positive};
        case LesionSide::Bilateral:
            return {BreastLabelValue::Positive, BreastLabelValue::Positive};
        case LesionSide::None:
            break;
    }
    throw ValidationError("episode " + e.episode_id + " has outcome " + to_string(e.outcome) +
                          " but no lesion laterality");
}

}  // namespace

LabelingResult label_episodes(const std::vector<Episode>& episodes, const LabelingConfig& cfg) {
    const double window_days = cfg.prior_window_years * 365.25;
    const auto neg = BreastLabelValue::Negative;
    const auto exc = BreastLabelValue::Excluded;
    const auto ci_contra = cfg.ci_contralateral_negative ? neg : exc;
    LabelingResult out;
    for (const auto& e : episodes) {
        Pair labels{neg, neg};
        switch (e.outcome) {
            case Outcome::N:
                break;
            case Outcome::B:
                if (cfg.benign_positive) labels = lesion_labels(e, e.lesion_laterality, neg);
                break;
            case Outcome::M:
                labels = lesion_labels(e, e.lesion_laterality, neg);
                break;
            case Outcome::CI:
                labels = lesion_labels(e, e.lesion_laterality, ci_contra);
                break;
            case Outcome::CIP:
            case Outcome::MP: {
                const Outcome index_outcome = e.outcome == Outcome::CIP ? Outcome::CI : Outcome::M;
                const long day = days_from_iso_date(e.exam_date);
                const Episode* index = nullptr;
                long best_gap = 0;
                bool any_index = false;
                for (const auto& o : episodes) {
                    if (o.patient_id != e.patient_id || o.outcome != index_outcome) continue;
                    const long gap = days_from_iso_date(o.exam_date) - day;
                    if (gap <= 0) continue;
                    any_index = true;
                    if (static_cast<double>(gap) <= window_days && (!index || gap < best_gap)) {
                        index = &o;
                        best_gap = gap;
                    }
                }
                const auto contra = e.outcome == Outcome::CIP ? ci_contra : neg;
                if (index) {
                    const LesionSide side =
                        e.lesion_laterality != LesionSide::None ? e.lesion_laterality : index->lesion_laterality;
                    labels = lesion_labels(e, side, contra);
                } else if (any_index) {
                    labels = {exc, exc};
                } else {
                    labels = lesion_labels(e, e.lesion_laterality, contra);
                }
                break;
            }
        }
        out.breasts.push_back({e.episode_id, Laterality::Left, labels[0]});
        out.breasts.push_back({e.episode_id, Laterality::Right, labels[1]});
        BreastLabelValue ep = exc;
        if (labels[0] == BreastLabelValue::Positive || labels[1] == BreastLabelValue::Positive)
            ep = BreastLabelValue::Positive;
        else if (labels[0] == neg && labels[1] == neg)
            ep = neg;
        out.episodes.push_back({e.episode_id, ep});
    }
    return out;
}

void MatchSpec::validate() const {
    if (ratio < 1) throw ConfigError("match ratio must be >= 1");
    if (keys.empty()) throw ConfigError("match keys must be nonempty");
    if (!(age_tolerance >= 0.0)) throw ConfigError("age tolerance must be >= 0");
}

MatchSubject subject_of(const Episode& e) { return {e.patient_id, e.age, e.site, e.manufacturer}; }

bool compatible(const MatchSubject& a, const MatchSubject& b, const MatchSpec& spec) {
    if (spec.keys.count(MatchKey::Site) && a.site != b.site) return false;
    if (spec.keys.count(MatchKey::Manufacturer) && a.manufacturer != b.manufacturer) return false;
    if (spec.keys.count(MatchKey::Age) && std::abs(a.age - b.age) > spec.age_tolerance) return false;
    return true;
}

MatchResult match_case_control(const std::vector<MatchSubject>& cases, const std::vector<MatchSubject>& controls,
                               const MatchSpec& spec, Rng& rng) {
    spec.validate();
    if (cases.empty() || controls.empty()) throw InvalidParameter("case and control pools must be nonempty");
    std::set<std::string> case_ids;
    for (const auto& c : cases) case_ids.insert(c.patient_id);
    for (const auto& c : controls)
        if (case_ids.count(c.patient_id))
            throw InvalidParameter("patient " + c.patient_id + " is in both the case and control pools");

    std::vector<std::size_t> order(cases.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<bool> used(controls.size(), false);
    MatchResult out;
    for (std::size_t ci : order) {
        const auto& c = cases[ci];
        std::vector<std::size_t> eligible;
        for (std::size_t j = 0; j < controls.size(); ++j)
            if (!used[j] && compatible(c, controls[j], spec)) eligible.push_back(j);
        if (eligible.size() < spec.ratio) {
            out.unmatched.push_back(c.patient_id);
            continue;
        }
        MatchedSet set{c.patient_id, {}};
        for (std::size_t k = 0; k < spec.ratio; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
            std::swap(eligible[k], eligible[pick(rng)]);
            used[eligible[k]] = true;
            set.control_ids.push_back(controls[eligible[k]].patient_id);
        }
        out.matched.push_back(std::move(set));
    }
    return out;
}

std::set<std::string> CohortManifest::patients(std::optional<Split> split) const {
    std::set<std::string> out;
    for (const auto& e : episodes)
        if (!split || e.split == *split) out.insert(e.patient_id);
    return out;
}

namespace {

nlohmann::json episode_json(const Episode& e) {
    nlohmann::json images;
    for (std::size_t i = 0; i < 4; ++i) images[kImageKeys[i]] = e.images[i];
    return {{"patient_id", e.patient_id},
            {"episode_id", e.episode_id},
            {"exam_date", e.exam_date},
            {"outcome", to_string(e.outcome)},
            {"lesion_laterality", to_string(e.lesion_laterality)},
            {"age", e.age},
            {"site", e.site},
            {"manufacturer", e.manufacturer},
            {"ethnicity", e.ethnicity},
            {"cancer_type", e.cancer_type},
            {"grade", e.grade},
            {"images", images},
            {"split", to_string(e.split)}};
}

Episode episode_from_json(const nlohmann::json& j) {
    Episode e;
    try {
        e.patient_id = j.at("patient_id").get<std::string>();
        e.episode_id = j.at("episode_id").get<std::string>();
        e.exam_date = j.at("exam_date").get<std::string>();
        e.outcome = parse_outcome(j.at("outcome").get<std::string>());
        e.lesion_laterality = parse_lesion_side(j.at("lesion_laterality").get<std::string>());
        e.age = j.at("age").get<double>();
        e.site = j.at("site").get<std::string>();
        e.manufacturer = j.at("manufacturer").get<std::string>();
        e.ethnicity = j.value("ethnicity", "");
        e.cancer_type = j.value("cancer_type", "");
        e.grade = j.value("grade", "");
        const auto& images = j.at("images");
        for (std::size_t i = 0; i < 4; ++i) e.images[i] = images.at(kImageKeys[i]).get<std::string>();
        e.split = parse_split(j.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("manifest record: ") + ex.what());
    }
    return e;
}

}  // namespace

void write_manifest(const CohortManifest& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write manifest " + path.string());
    for (const auto& e : m.episodes) os << episode_json(e).dump() << '\n';
    if (!os) throw ConfigError("failed writing manifest " + path.string());
}

CohortManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifact("cannot open manifest " + path.string());
    CohortManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        m.episodes.push_back(episode_from_json(j));
    }
    std::map<std::string, Split> seen;
    for (const auto& e : m.episodes) {
        auto [it, fresh] = seen.emplace(e.patient_id, e.split);
        if (!fresh && it->second != e.split) throw ValidationError("patient " + e.patient_id + " spans splits");
    }
    return m;
}

void write_splits(const CohortManifest& m, const std::filesystem::path& path) {
    std::map<std::string, Split> splits;
    for (const auto& e : m.episodes) {
        auto [it, fresh] = splits.emplace(e.patient_id, e.split);
        if (!fresh && it->second != e.split) throw ValidationError("patient " + e.patient_id + " spans splits");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write splits " + path.string());
    os << "patient_id,split\n";
    for (const auto& [pid, s] : splits) os << pid << ',' << to_string(s) << '\n';
}

std::map<std::string, Split> read_splits(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifact("cannot open splits " + path.string());
    std::map<std::string, Split> out;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ValidationError("malformed splits row '" + line + "'");
        const std::string pid = line.substr(0, comma);
        const Split s = parse_split(line.substr(comma + 1));
        auto [it, fresh] = out.emplace(pid, s);
        if (!fresh && it->second != s) throw ValidationError("patient " + pid + " spans splits");
    }
    return out;
}

std::vector<PatientSample> load_samples(const CohortManifest& m, const std::filesystem::path& root,
                                        const LabelingConfig& cfg) {
    const auto labels = label_episodes(m.episodes, cfg);
    std::map<std::string, std::size_t> latest;
    for (std::size_t i = 0; i < m.episodes.size(); ++i) {
        const auto& e = m.episodes[i];
        if (labels.episodes[i].label == BreastLabelValue::Excluded) continue;
        auto it = latest.find(e.patient_id);
        if (it == latest.end() || days_from_iso_date(m.episodes[it->second].exam_date) <= days_from_iso_date(e.exam_date))
            latest[e.patient_id] = i;
    }
    std::vector<std::size_t> keep;
    for (const auto& [pid, i] : latest) keep.push_back(i);
    std::sort(keep.begin(), keep.end());
    std::vector<PatientSample> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) {
        const auto& e = m.episodes[i];
        e.validate();
        PatientSample s;
        s.episode = e;
        s.label = labels.episodes[i].label == BreastLabelValue::Positive ? 1 : 0;
        for (int side = 0; side < 2; ++side) {
            const auto v = labels.breasts[2 * i + side].label;
            s.breast_labels[side] = v == BreastLabelValue::Positive ? 1 : v == BreastLabelValue::Negative ? 0 : -1;
        }
        for (Laterality lat : {Laterality::Left, Laterality::Right})
            for (ViewPosition vp : {ViewPosition::CC, ViewPosition::MLO}) {
                auto img = imageprep::read_image(root / e.image(lat, vp));
                img.laterality = lat;
                img.view_position = vp;
                img.id = e.episode_id + "_" + std::string(mvrisk::to_string(lat)) + "_" +
                         std::string(mvrisk::to_string(vp));
                s.views[view_index(lat, vp)] = std::move(img);
            }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<PatientSample> filter_split(const std::vector<PatientSample>& samples, Split split) {
    std::vector<PatientSample> out;
    for (const auto& s : samples)
        if (s.episode.split == split) out.push_back(s);
    return out;
}

}  // namespace mvrisk::cohort
