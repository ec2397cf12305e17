#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mvrisk/cohort/cohort.hpp"

namespace mvrisk::cohort {

using Weighted = std::vector<std::pair<std::string, double>>;

struct SyntheticConfig {
    std::size_t n_patients = 200;
    double positive_fraction = 0.3;
    std::size_t resolution = 64;

    double blob_contrast = 0.08;   // added to every pixel inside the lesion mask
    double radius_min = 0.07;      // ellipse semi-axes as a fraction of the resolution
    double radius_max = 0.12;
    double asymmetry = 1.0;        // probability a lesion is unilateral rather than bilateral

    double background_min = 0.35;
    double background_max = 0.50;
    double field_amplitude = 0.05; // low-frequency texture shared by both breasts
    double noise_std = 0.03;       // independent per-side pixel noise
    double confounder_rate = 0.5;  // chance of symmetric look-alike blobs present in both breasts
    std::size_t max_confounders = 2;

    // Per-image acquisition perturbation applied after the lesion: contrast
    // about the image mean, then a gamma curve. Both default to identity.
    double contrast_min = 1.0;
    double contrast_max = 1.0;
    double gamma_min = 1.0;
    double gamma_max = 1.0;

    Weighted sites{{"SITE_A", 0.5}, {"SITE_B", 0.3}, {"SITE_C", 0.2}};
    Weighted manufacturers{{"HOLOGIC", 0.6}, {"GE", 0.25}, {"SIEMENS", 0.15}};
    Weighted external_manufacturers{{"GE", 0.5}, {"SIEMENS", 0.5}};
    Weighted ethnicities{{"White", 0.7}, {"Asian", 0.1}, {"Black", 0.08}, {"Other", 0.04}, {"", 0.08}};
    Weighted cancer_types{{"Invasive", 0.8}, {"DCIS", 0.2}};
    Weighted grades{{"1", 0.25}, {"2", 0.45}, {"3", 0.3}};
    double interval_cancer_fraction = 0.2;  // positives coded CI rather than M

    double test_internal_fraction = 0.2;
    double test_external_fraction = 0.0;
    double val_fraction = 0.1;  // of the remaining (non-test) patients

    std::string image_format = "png";  // "png" or "raw"
    bool keep_backgrounds = false;     // also store each view before the lesion was added
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticPatient {
    PatientSample sample;
    std::array<std::vector<std::uint8_t>, 4> lesion_masks;  // empty when the view has no lesion
    std::array<std::vector<float>, 4> backgrounds;          // filled when keep_backgrounds
};

struct SyntheticCohort {
    std::vector<SyntheticPatient> patients;

    CohortManifest manifest() const;
    std::vector<PatientSample> samples() const;
};

// Deterministic in cfg.seed; each patient draws from its own derived stream,
// so generation is parallel and independent of the thread count.
SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& cfg);

// Writes images/<patient>_<side>_<view>.<ext>, manifest.jsonl and splits.csv
// under `dir`; manifest image paths are relative to `dir`.
void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir, const std::string& image_format);

}  // namespace mvrisk::cohort
