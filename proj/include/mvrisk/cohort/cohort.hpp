#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mvrisk/core/rng.hpp"
#include "mvrisk/imageprep/imageprep.hpp"

namespace mvrisk::cohort {

enum class Outcome { N, B, M, CI, CIP, MP };
enum class LesionSide { Left, Right, Bilateral, None };
enum class Split { Train, Val, TestInternal, TestExternal };

std::string to_string(Outcome o);
std::string to_string(LesionSide s);
std::string to_string(Split s);
Outcome parse_outcome(const std::string& s);
LesionSide parse_lesion_side(const std::string& s);
Split parse_split(const std::string& s);

// View slots are ordered L-CC, L-MLO, R-CC, R-MLO.
constexpr std::size_t view_index(Laterality lat, ViewPosition view) {
    return (lat == Laterality::Left ? 0 : 2) + (view == ViewPosition::CC ? 0 : 1);
}

struct AgeRange {
    double lo = 40.0;
    double hi = 80.0;
    bool contains(double age) const { return age >= lo && age <= hi; }
};

inline constexpr AgeRange kTrainAges{40.0, 80.0};
inline constexpr AgeRange kTestAges{47.0, 73.0};

struct Episode {
    std::string patient_id;
    std::string episode_id;
    std::string exam_date;  // YYYY-MM-DD
    Outcome outcome = Outcome::N;
    LesionSide lesion_laterality = LesionSide::None;
    double age = 0.0;
    std::string site;
    std::string manufacturer;
    std::string ethnicity;    // empty when not stated
    std::string cancer_type;  // empty for controls
    std::string grade;        // empty for controls
    std::array<std::string, 4> images;
    Split split = Split::Train;

    const std::string& image(Laterality lat, ViewPosition view) const { return images[view_index(lat, view)]; }

    // Four image references present and age inside the range for its split.
    void validate() const;
};

// Days since 1970-01-01; throws ValidationError on a malformed date.
long days_from_iso_date(const std::string& iso);

enum class BreastLabelValue { Positive, Negative, Excluded };
std::string to_string(BreastLabelValue v);

struct BreastLabel {
    std::string episode_id;
    Laterality laterality = Laterality::Left;
    BreastLabelValue label = BreastLabelValue::Excluded;
};

struct EpisodeLabel {
    std::string episode_id;
    BreastLabelValue label = BreastLabelValue::Excluded;
};

struct LabelingConfig {
    bool benign_positive = true;            // off: B episodes are labelled negative on both sides
    bool ci_contralateral_negative = true;  // off: CI contralateral breasts are excluded
    double prior_window_years = 3.0;
};

struct LabelingResult {
    std::vector<BreastLabel> breasts;  // two per episode, Left then Right, input order
    std::vector<EpisodeLabel> episodes;

    BreastLabelValue breast(const std::string& episode_id, Laterality lat) const;
    BreastLabelValue episode(const std::string& episode_id) const;
};

// Prior exams (CIP/MP) inherit the lesion side of the index CI/M episode of the
// same patient that follows them within the prior window when their own side is
// None. A prior whose only index lies outside the window is excluded.
LabelingResult label_episodes(const std::vector<Episode>& episodes, const LabelingConfig& cfg = {});

enum class MatchKey { Site, Age, Manufacturer };

struct MatchSpec {
    std::size_t ratio = 2;
    std::set<MatchKey> keys{MatchKey::Site, MatchKey::Age, MatchKey::Manufacturer};
    double age_tolerance = 2.0;

    void validate() const;
};

struct MatchSubject {
    std::string patient_id;
    double age = 0.0;
    std::string site;
    std::string manufacturer;
};

MatchSubject subject_of(const Episode& e);
bool compatible(const MatchSubject& a, const MatchSubject& b, const MatchSpec& spec);

struct MatchedSet {
    std::string case_id;
    std::vector<std::string> control_ids;
};

struct MatchResult {
    std::vector<MatchedSet> matched;   // in the randomized processing order
    std::vector<std::string> unmatched;
};

// Greedy matching in shuffled case order. Each case draws `ratio` controls
// uniformly from the unused compatible ones; a case with too few candidates
// is reported unmatched and consumes nothing.
MatchResult match_case_control(const std::vector<MatchSubject>& cases, const std::vector<MatchSubject>& controls,
                               const MatchSpec& spec, Rng& rng);

struct CohortManifest {
    std::vector<Episode> episodes;

    std::set<std::string> patients(std::optional<Split> split = std::nullopt) const;
};

// One JSON object per line. Field names: patient_id, episode_id, exam_date,
// outcome, lesion_laterality, age, site, manufacturer, ethnicity, cancer_type,
// grade, images {L_CC, L_MLO, R_CC, R_MLO}, split.
void write_manifest(const CohortManifest& m, const std::filesystem::path& path);
CohortManifest read_manifest(const std::filesystem::path& path);

// "patient_id,split" CSV with a header row. Throws ValidationError if any
// patient appears in more than one split.
void write_splits(const CohortManifest& m, const std::filesystem::path& path);
std::map<std::string, Split> read_splits(const std::filesystem::path& path);

// One patient ready for the models: the index episode, its four views and
// labels (breast labels indexed by Laterality; -1 marks an excluded breast).
struct PatientSample {
    Episode episode;
    std::array<imageprep::ViewImage, 4> views;
    int label = 0;
    std::array<int, 2> breast_labels{0, 0};

    const imageprep::ViewImage& view(Laterality lat, ViewPosition v) const { return views[view_index(lat, v)]; }
};

// Loads every episode with a definite episode label; image paths are resolved
// relative to `root`. Only the latest episode per patient is kept.
std::vector<PatientSample> load_samples(const CohortManifest& m, const std::filesystem::path& root,
                                        const LabelingConfig& cfg = {});

std::vector<PatientSample> filter_split(const std::vector<PatientSample>& samples, Split split);

}  // namespace mvrisk::cohort
