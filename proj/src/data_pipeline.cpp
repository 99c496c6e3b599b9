#include "ophmae/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ophmae {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool invalid_entry(const ManifestRecord& r) {
    const std::string tag = lower(r.modality_tag);
    return tag.empty() || tag == "completed" || tag == "invalid";
}

}  // namespace

CurationResult curate(const std::vector<ManifestRecord>& records) {
    CurationResult result;
    for (const auto& r : records) {
        if (!r.has_image_dir) {
            ++result.log.missing_image_dir;
        } else if (!r.has_metadata) {
            ++result.log.missing_metadata;
        } else if (r.n_frames < 1) {
            ++result.log.too_few_frames;
        } else if (invalid_entry(r)) {
            ++result.log.invalid_entries;
        } else if (!r.is_macular) {
            ++result.log.non_macular;
        } else {
            result.kept.push_back(r);
            ++result.log.retained;
        }
    }
    return result;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::PRETRAIN: return "PRETRAIN";
        case Split::FT_TRAIN: return "FT_TRAIN";
        case Split::FT_VALID: return "FT_VALID";
        default: return "FT_TEST";
    }
}

std::array<int, 4> SplitAssignment::counts() const {
    std::array<int, 4> c{0, 0, 0, 0};
    for (const auto& [patient, split] : by_patient) ++c[static_cast<size_t>(split)];
    return c;
}

nlohmann::json SplitAssignment::to_json() const {
    nlohmann::json j;
    for (const auto& [patient, split] : by_patient) j[patient] = to_string(split);
    return j;
}

SplitAssignment SplitAssignment::from_json(const nlohmann::json& j) {
    SplitAssignment a;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string s = it.value().get<std::string>();
        Split split = Split::PRETRAIN;
        if (s == "FT_TRAIN") split = Split::FT_TRAIN;
        else if (s == "FT_VALID") split = Split::FT_VALID;
        else if (s == "FT_TEST") split = Split::FT_TEST;
        else if (s != "PRETRAIN") throw InvalidConfig("unknown split tag " + s);
        a.by_patient[it.key()] = split;
    }
    return a;
}

SplitAssignment split_patients(const std::vector<std::string>& patients, double pretrain_frac,
                               const std::array<int, 3>& ft_ratios, uint64_t seed) {
    const int n = static_cast<int>(patients.size());
    if (n < 10) throw TooFewPatients("need >= 10 patients for a non-degenerate split");
    if (!(pretrain_frac > 0.0 && pretrain_frac < 1.0))
        throw InvalidRatio("pretrain fraction must lie in (0,1)");
    const double ratio_sum = ft_ratios[0] + ft_ratios[1] + ft_ratios[2];
    if (ratio_sum <= 0) throw InvalidRatio("fine-tune ratios must sum > 0");

    // quotas over all four buckets in one largest-remainder pass
    const double ft_frac = 1.0 - pretrain_frac;
    const std::array<double, 4> shares = {
        pretrain_frac, ft_frac * ft_ratios[0] / ratio_sum, ft_frac * ft_ratios[1] / ratio_sum,
        ft_frac * ft_ratios[2] / ratio_sum};
    std::array<int, 4> quota{};
    std::array<double, 4> remainder{};
    int assigned = 0;
    for (size_t b = 0; b < 4; ++b) {
        const double exact = shares[b] * n;
        quota[b] = static_cast<int>(std::floor(exact));
        remainder[b] = exact - quota[b];
        assigned += quota[b];
    }
    while (assigned < n) {
        size_t best = 0;
        for (size_t b = 1; b < 4; ++b)
            if (remainder[b] > remainder[best]) best = b;
        ++quota[best];
        remainder[best] = -1.0;
        ++assigned;
    }

    std::vector<std::string> shuffled = patients;
    std::sort(shuffled.begin(), shuffled.end());  // independence from input order
    Rng rng(seed);
    rng.shuffle(shuffled);

    SplitAssignment out;
    int at = 0;
    const std::array<Split, 4> buckets = {Split::PRETRAIN, Split::FT_TRAIN, Split::FT_VALID,
                                          Split::FT_TEST};
    for (size_t b = 0; b < 4; ++b)
        for (int i = 0; i < quota[b]; ++i)
            out.by_patient[shuffled[static_cast<size_t>(at++)]] = buckets[b];
    return out;
}

std::vector<size_t> subset_sample(size_t universe, size_t n, uint64_t seed) {
    if (n > universe)
        throw SubsetTooLarge(std::to_string(n) + " from " + std::to_string(universe));
    Rng rng(seed);
    const std::vector<int> picked =
        rng.sample_without_replacement(static_cast<int>(universe), static_cast<int>(n));
    std::vector<size_t> out(picked.size());
    for (size_t i = 0; i < picked.size(); ++i) out[i] = static_cast<size_t>(picked[i]);
    std::sort(out.begin(), out.end());
    return out;
}

SyntheticPair generate_synthetic_pair(const SignalSpec& spec, const PairDims& dims, Rng& rng,
                                      const std::string& patient_id, const std::string& scan_id,
                                      Eye eye, const std::string& task_id) {
    SyntheticPair out;
    OctVolume& vol = out.pair.oct;
    vol.height = dims.vol_h;
    vol.width = dims.vol_w;
    vol.depth = dims.vol_d;
    vol.patient_id = patient_id;
    vol.scan_id = scan_id;
    vol.eye = eye;
    vol.voxels.assign(static_cast<size_t>(dims.vol_h) * dims.vol_w * dims.vol_d, 0.0);

    EnFaceImage& img = out.pair.enface;
    img.height = dims.img_h;
    img.width = dims.img_w;
    img.patient_id = patient_id;
    img.scan_id = scan_id;
    img.eye = eye;
    img.pixels.assign(static_cast<size_t>(dims.img_h) * dims.img_w, 0.0);

    const bool banded = spec.band_amplitude > 0.0;
    const double phase = spec.band_phase;
    const double base = 0.35;
    auto band = [&](double coord) {
        return banded ? spec.band_amplitude *
                            std::sin(2.0 * std::numbers::pi * coord / spec.band_period + phase)
                      : 0.0;
    };

    const bool planted = spec.class_id > 0;
    double ch = spec.oct_signal.center_h, cw = spec.oct_signal.center_w,
           cd = spec.oct_signal.center_d;
    double pch = spec.enface_signal.center_h, pcw = spec.enface_signal.center_w;
    if (planted && spec.center_jitter > 0.0) {
        // shared planar jitter keeps the blob and the planar pattern aligned
        const double jh = (rng.uniform() * 2.0 - 1.0) * spec.center_jitter;
        const double jw = (rng.uniform() * 2.0 - 1.0) * spec.center_jitter;
        ch += jh;
        cw += jw;
        pch += jh;
        pcw += jw;
    }

    const double r_vol = spec.oct_signal.radius * dims.vol_h;
    for (int d = 0; d < dims.vol_d; ++d)
        for (int h = 0; h < dims.vol_h; ++h)
            for (int w = 0; w < dims.vol_w; ++w) {
                double v = base + band(h);
                if (planted) {
                    const double dh = h - ch * dims.vol_h;
                    const double dw = w - cw * dims.vol_w;
                    const double dd = (d - cd * dims.vol_d) * (static_cast<double>(dims.vol_h) /
                                                               dims.vol_d);
                    const double dist2 = dh * dh + dw * dw + dd * dd;
                    v += spec.oct_signal.amplitude * std::exp(-dist2 / (2.0 * r_vol * r_vol));
                }
                if (spec.noise_sd > 0.0) v += spec.noise_sd * rng.normal();
                vol.at(h, w, d) = std::clamp(v, 0.0, 1.0);
            }

    const double r_img = spec.enface_signal.radius * dims.img_h;
    for (int h = 0; h < dims.img_h; ++h)
        for (int w = 0; w < dims.img_w; ++w) {
            double v = base + band(w);
            if (planted) {
                const double dh = h - pch * dims.img_h;
                const double dw = w - pcw * dims.img_w;
                const double dist2 = dh * dh + dw * dw;
                v += spec.enface_signal.amplitude * std::exp(-dist2 / (2.0 * r_img * r_img));
            }
            if (spec.noise_sd > 0.0) v += spec.noise_sd * rng.normal();
            img.at(h, w) = std::clamp(v, 0.0, 1.0);
        }

    out.label.task_id = task_id;
    out.label.label = planted ? spec.class_id : 0;
    out.label.num_classes = std::max(2, spec.class_id + 1);
    out.label.laterality = eye == Eye::LEFT ? Laterality::LEFT : Laterality::RIGHT;
    out.pair = validate_pair(out.pair.oct, out.pair.enface);
    return out;
}

DemographicMix DemographicMix::default_mix() {
    DemographicMix mix;
    mix.age = {{AgeGroup::LT45, 0.1019},
               {AgeGroup::A45_64, 0.2885},
               {AgeGroup::A65_74, 0.2255},
               {AgeGroup::GE75, 0.2165},
               {AgeGroup::UNKNOWN, 0.1676}};
    mix.sex = {{Sex::FEMALE, 0.4544}, {Sex::MALE, 0.3033}, {Sex::UNKNOWN, 0.2423}};
    mix.race = {{RaceEthnicity::NHW, 0.4399},
                {RaceEthnicity::NHB, 0.2065},
                {RaceEthnicity::HISPANIC, 0.0541},
                {RaceEthnicity::OTHER, 0.0460},
                {RaceEthnicity::UNKNOWN, 0.2535}};
    return mix;
}

namespace {

template <typename T>
T sample_categorical(const std::vector<std::pair<T, double>>& dist, Rng& rng) {
    double total = 0.0;
    for (const auto& [value, weight] : dist) total += weight;
    double u = rng.uniform() * total;
    for (const auto& [value, weight] : dist) {
        if (u < weight) return value;
        u -= weight;
    }
    return dist.back().first;
}

}  // namespace

Cohort generate_cohort(const CohortConfig& config, uint64_t seed) {
    if (!(config.prevalence > 0.0 && config.prevalence < 1.0))
        throw InvalidPrevalence("prevalence must lie in (0,1)");
    if (config.n_patients < 1) throw InvalidConfig("need at least one patient");

    Cohort cohort;
    Rng root(seed);
    for (int p = 0; p < config.n_patients; ++p) {
        Rng rng = root.child(static_cast<uint64_t>(p));
        const std::string patient = "P" + std::to_string(100000 + p);
        const std::string scan = patient + "-S1";
        const Eye eye = rng.bounded(2) == 0 ? Eye::LEFT : Eye::RIGHT;
        const bool positive = rng.uniform() < config.prevalence;

        SignalSpec spec = config.signal;
        spec.class_id = positive ? std::max(1, config.signal.class_id) : 0;

        CohortSample sample;
        sample.data = generate_synthetic_pair(spec, config.dims, rng, patient, scan, eye,
                                              config.task_id);
        sample.demographics.age_group = sample_categorical(config.mix.age, rng);
        sample.demographics.sex = sample_categorical(config.mix.sex, rng);
        sample.demographics.race_ethnicity = sample_categorical(config.mix.race, rng);
        cohort.samples.push_back(std::move(sample));

        ManifestRecord record;
        record.patient_id = patient;
        record.scan_id = scan;
        record.eye = eye;
        record.n_frames = config.dims.vol_d;
        record.modality_tag = "OCT+IR";
        cohort.manifest.push_back(std::move(record));
    }
    return cohort;
}

std::vector<std::string> patient_ids(const Cohort& cohort) {
    std::vector<std::string> ids;
    ids.reserve(cohort.samples.size());
    for (const auto& s : cohort.samples) ids.push_back(s.data.pair.oct.patient_id);
    return ids;
}

}  // namespace ophmae
