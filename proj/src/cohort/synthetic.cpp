#include "mvrisk/cohort/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mvrisk/imageprep/image_io.hpp"

namespace mvrisk::cohort {

void SyntheticConfig::validate() const {
    if (n_patients == 0) throw ConfigError("n_patients must be positive");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) throw ConfigError("positive_fraction must lie in (0,1)");
    if (!(blob_contrast > 0.0 && blob_contrast < 1.0)) throw ConfigError("blob_contrast must lie in (0,1)");
    if (resolution < 16) throw ConfigError("resolution must be at least 16");
    if (!(radius_min > 0.0 && radius_min <= radius_max && radius_max < 0.25))
        throw ConfigError("lesion radii must satisfy 0 < radius_min <= radius_max < 0.25");
    if (!(asymmetry >= 0.0 && asymmetry <= 1.0)) throw ConfigError("asymmetry must lie in [0,1]");
    if (!(confounder_rate >= 0.0 && confounder_rate <= 1.0)) throw ConfigError("confounder_rate must lie in [0,1]");
    if (!(contrast_min > 0.0 && contrast_min <= contrast_max)) throw ConfigError("contrast range invalid");
    if (!(gamma_min > 0.0 && gamma_min <= gamma_max)) throw ConfigError("gamma range invalid");
    if (!(noise_std >= 0.0 && field_amplitude >= 0.0)) throw ConfigError("noise and field amplitudes must be >= 0");
    if (!(background_min >= 0.0 && background_min <= background_max && background_max + blob_contrast <= 1.0))
        throw ConfigError("background range must leave room for the lesion contrast");
    const double test = test_internal_fraction + test_external_fraction;
    if (test_internal_fraction < 0.0 || test_external_fraction < 0.0 || test >= 1.0)
        throw ConfigError("test fractions must be >= 0 and sum below 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0,1)");
    if (image_format != "png" && image_format != "raw") throw ConfigError("image_format must be png or raw");
    for (const Weighted* w : {&sites, &manufacturers, &ethnicities, &cancer_types, &grades}) {
        double total = 0.0;
        for (const auto& [name, p] : *w) {
            if (p < 0.0) throw ConfigError("attribute weights must be >= 0");
            total += p;
        }
        if (!(total > 0.0)) throw ConfigError("attribute weights must not all be zero");
    }
}

namespace {

struct Ellipse {
    double cx, cy, ra, rb, theta;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(theta), s = std::sin(theta);
        const double u = (c * dx + s * dy) / ra, v = (-s * dx + c * dy) / rb;
        return u * u + v * v <= 1.0;
    }
};

double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

const std::string& draw(Rng& rng, const Weighted& w) {
    double total = 0.0;
    for (const auto& e : w) total += e.second;
    double u = uniform(rng, 0.0, total);
    for (const auto& e : w) {
        if (u < e.second) return e.first;
        u -= e.second;
    }
    return w.back().first;
}

// Ellipse in pixel units, wholly inside the image with a one-pixel margin.
Ellipse draw_ellipse(Rng& rng, const SyntheticConfig& cfg) {
    const double n = static_cast<double>(cfg.resolution);
    Ellipse e{};
    e.ra = uniform(rng, cfg.radius_min, cfg.radius_max) * n;
    e.rb = uniform(rng, cfg.radius_min, cfg.radius_max) * n;
    e.theta = uniform(rng, 0.0, std::numbers::pi);
    const double r = std::max(e.ra, e.rb) + 1.0;
    e.cx = uniform(rng, r, n - 1.0 - r);
    e.cy = uniform(rng, r, n - 1.0 - r);
    return e;
}

struct Wave {
    double fx, fy, phase, amp;
};

std::string iso_date(long days) {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

SyntheticPatient make_patient(const SyntheticConfig& cfg, std::size_t index) {
    Rng rng = make_rng(cfg.seed, {index});
    const std::size_t n = cfg.resolution;
    SyntheticPatient out;
    auto& s = out.sample;
    auto& e = s.episode;

    char pid[32];
    std::snprintf(pid, sizeof pid, "P%05zu", index);
    e.patient_id = pid;
    e.episode_id = e.patient_id + "_E1";

    const bool positive = uniform(rng, 0.0, 1.0) < cfg.positive_fraction;
    const double split_u = uniform(rng, 0.0, 1.0);
    const double val_u = uniform(rng, 0.0, 1.0);
    if (split_u < cfg.test_internal_fraction)
        e.split = Split::TestInternal;
    else if (split_u < cfg.test_internal_fraction + cfg.test_external_fraction)
        e.split = Split::TestExternal;
    else
        e.split = val_u < cfg.val_fraction ? Split::Val : Split::Train;
    const bool test = e.split == Split::TestInternal || e.split == Split::TestExternal;
    const AgeRange ages = test ? kTestAges : kTrainAges;
    e.age = std::floor(uniform(rng, ages.lo, ages.hi + 1.0 - 1e-9));
    e.site = draw(rng, cfg.sites);
    e.manufacturer = draw(rng, e.split == Split::TestExternal ? cfg.external_manufacturers : cfg.manufacturers);
    e.ethnicity = draw(rng, cfg.ethnicities);
    const long base_day = days_from_iso_date("2016-01-01");
    e.exam_date = iso_date(base_day + static_cast<long>(uniform(rng, 0.0, 1460.0)));

    std::array<bool, 2> lesion_side{false, false};
    if (positive) {
        e.outcome = uniform(rng, 0.0, 1.0) < cfg.interval_cancer_fraction ? Outcome::CI : Outcome::M;
        const bool unilateral = uniform(rng, 0.0, 1.0) < cfg.asymmetry;
        const bool left = uniform(rng, 0.0, 1.0) < 0.5;
        if (unilateral) {
            lesion_side[left ? 0 : 1] = true;
            e.lesion_laterality = left ? LesionSide::Left : LesionSide::Right;
        } else {
            lesion_side = {true, true};
            e.lesion_laterality = LesionSide::Bilateral;
        }
        e.cancer_type = draw(rng, cfg.cancer_types);
        e.grade = draw(rng, cfg.grades);
    }
    s.label = positive ? 1 : 0;
    s.breast_labels = {lesion_side[0] ? 1 : 0, lesion_side[1] ? 1 : 0};

    const double base = uniform(rng, cfg.background_min, cfg.background_max);
    std::array<std::vector<Wave>, 2> fields;  // per view position, shared by both sides
    for (auto& f : fields)
        for (int k = 0; k < 3; ++k) {
            const double sx = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
            f.push_back({sx * uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0), uniform(rng, 0.0, 2.0 * std::numbers::pi),
                         cfg.field_amplitude * uniform(rng, 0.5, 1.5) / 3.0});
        }
    std::vector<Ellipse> confounders;
    if (uniform(rng, 0.0, 1.0) < cfg.confounder_rate) {
        const std::size_t count = 1 + static_cast<std::size_t>(uniform(rng, 0.0, 1.0) * cfg.max_confounders * 0.999999);
        for (std::size_t k = 0; k < count; ++k) confounders.push_back(draw_ellipse(rng, cfg));
    }
    const Ellipse lesion = draw_ellipse(rng, cfg);
    const double delta = cfg.blob_contrast;

    for (Laterality lat : {Laterality::Left, Laterality::Right})
        for (ViewPosition vp : {ViewPosition::CC, ViewPosition::MLO}) {
            const std::size_t vi = view_index(lat, vp);
            Rng noise_rng = make_rng(cfg.seed, {index, 1000 + vi});
            std::normal_distribution<double> noise(0.0, cfg.noise_std);
            const auto& waves = fields[vp == ViewPosition::CC ? 0 : 1];
            const bool has_lesion = lesion_side[lat == Laterality::Left ? 0 : 1];
            imageprep::ViewImage img(n, n, 0.0f, lat, vp);
            img.id = e.episode_id + "_" + std::string(mvrisk::to_string(lat)) + "_" + std::string(mvrisk::to_string(vp));
            std::vector<std::uint8_t> mask(has_lesion ? n * n : 0);
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) {
                    const double u = static_cast<double>(x) / n, v = static_cast<double>(y) / n;
                    double val = base;
                    for (const auto& w : waves) val += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
                    for (const auto& c : confounders)
                        if (c.contains(static_cast<double>(x), static_cast<double>(y))) val += delta;
                    if (cfg.noise_std > 0.0) val += noise(noise_rng);
                    img.at(y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0 - delta));
                    if (has_lesion && lesion.contains(static_cast<double>(x), static_cast<double>(y)))
                        mask[y * n + x] = 1;
                }
            if (cfg.keep_backgrounds) out.backgrounds[vi] = img.pixels;
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) img.pixels[i] += static_cast<float>(delta);
            if (cfg.contrast_min != 1.0 || cfg.contrast_max != 1.0 || cfg.gamma_min != 1.0 || cfg.gamma_max != 1.0) {
                const double c = uniform(noise_rng, cfg.contrast_min, cfg.contrast_max);
                const double g = uniform(noise_rng, cfg.gamma_min, cfg.gamma_max);
                double mean = 0.0;
                for (float p : img.pixels) mean += p;
                mean /= static_cast<double>(img.pixels.size());
                for (float& p : img.pixels) {
                    const double q = std::clamp(mean + c * (p - mean), 0.0, 1.0);
                    p = static_cast<float>(std::pow(q, g));
                }
            }
            out.lesion_masks[vi] = std::move(mask);
            s.views[vi] = std::move(img);
        }
    const std::string ext = cfg.image_format == "png" ? ".png" : ".raw";
    for (Laterality lat : {Laterality::Left, Laterality::Right})
        for (ViewPosition vp : {ViewPosition::CC, ViewPosition::MLO})
            e.images[view_index(lat, vp)] = "images/" + e.patient_id + "_" + std::string(mvrisk::to_string(lat)) + "_" +
                                            std::string(mvrisk::to_string(vp)) + ext;
    return out;
}

}  // namespace

CohortManifest SyntheticCohort::manifest() const {
    CohortManifest m;
    m.episodes.reserve(patients.size());
    for (const auto& p : patients) m.episodes.push_back(p.sample.episode);
    return m;
}

std::vector<PatientSample> SyntheticCohort::samples() const {
    std::vector<PatientSample> out;
    out.reserve(patients.size());
    for (const auto& p : patients) out.push_back(p.sample);
    return out;
}

SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticCohort c;
    c.patients.resize(cfg.n_patients);
    const auto n = static_cast<long>(cfg.n_patients);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) c.patients[static_cast<std::size_t>(i)] = make_patient(cfg, static_cast<std::size_t>(i));
    return c;
}

void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir, const std::string& image_format) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    CohortManifest m = cohort.manifest();
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        auto& e = m.episodes[i];
        for (std::size_t v = 0; v < 4; ++v) {
            auto rel = std::filesystem::path(e.images[v]).replace_extension(image_format == "png" ? ".png" : ".raw");
            e.images[v] = rel.generic_string();
            imageprep::write_image(cohort.patients[i].sample.views[v], dir / rel);
        }
    }
    write_manifest(m, dir / "manifest.jsonl");
    write_splits(m, dir / "splits.csv");
}

}  // namespace mvrisk::cohort
