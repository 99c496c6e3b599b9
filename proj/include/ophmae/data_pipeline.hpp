#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "ophmae/adaptation.hpp"
#include "ophmae/core_types.hpp"
#include "ophmae/rng.hpp"

namespace ophmae {

struct ManifestRecord {
    std::string patient_id;
    std::string scan_id;
    Eye eye = Eye::LEFT;
    int n_frames = 0;
    std::string modality_tag;  // acquisition tag; "completed"/"invalid"/empty mark bad entries
    bool has_image_dir = true;
    bool has_metadata = true;
    bool is_macular = true;
};

struct CurationLog {
    long missing_image_dir = 0;
    long missing_metadata = 0;
    long too_few_frames = 0;
    long invalid_entries = 0;
    long non_macular = 0;
    long retained = 0;
};

struct CurationResult {
    std::vector<ManifestRecord> kept;
    CurationLog log;
};

// Applies the exclusion rules in order; each record is charged to the first
// rule it violates.
CurationResult curate(const std::vector<ManifestRecord>& records);

enum class Split { PRETRAIN, FT_TRAIN, FT_VALID, FT_TEST };
std::string to_string(Split s);

struct SplitAssignment {
    std::map<std::string, Split> by_patient;

    std::array<int, 4> counts() const;
    nlohmann::json to_json() const;
    static SplitAssignment from_json(const nlohmann::json& j);
};

// pretrain_frac of patients to PRETRAIN, remainder to train/valid/test at the
// given ratios; quotas by largest remainder, patients shuffled per seed.
SplitAssignment split_patients(const std::vector<std::string>& patients, double pretrain_frac,
                               const std::array<int, 3>& ft_ratios, uint64_t seed);

// n distinct element indices drawn uniformly, deterministic per seed
std::vector<size_t> subset_sample(size_t universe, size_t n, uint64_t seed);

// Class-conditional planted signal. Geometry in fractional coordinates so the
// same spec works at any resolution; amplitudes additive before the final
// clip to [0,1].
struct SignalSpec {
    int class_id = 1;
    struct Blob {
        double center_h = 0.5, center_w = 0.5, center_d = 0.5;
        double radius = 0.16;     // fraction of the H extent
        double amplitude = 0.35;
    } oct_signal;
    struct Planar {
        double center_h = 0.5, center_w = 0.5;
        double radius = 0.18;
        double amplitude = 0.35;
    } enface_signal;
    double noise_sd = 0.02;
    // layered background bands (0 turns them off and leaves a flat field);
    // the phase is a spec constant so reconstruction of the shared layer
    // structure is a learnable pretext at desk scale
    double band_amplitude = 0.28;
    double band_period = 32.0;  // voxels
    double band_phase = 0.9;    // radians
    double center_jitter = 0.08;
};

struct PairDims {
    int vol_h = 64, vol_w = 64, vol_d = 10;
    int img_h = 64, img_w = 64;
};

struct SyntheticPair {
    PairedSample pair;
    LabelRecord label;
};

// One synthetic pair: shared-phase banded background (plus noise) in both
// modalities; class_id > 0 adds an aligned blob to the volume and a planar
// pattern to the image. class 0 emits background only.
SyntheticPair generate_synthetic_pair(const SignalSpec& spec, const PairDims& dims, Rng& rng,
                                      const std::string& patient_id, const std::string& scan_id,
                                      Eye eye, const std::string& task_id);

struct DemographicMix {
    std::vector<std::pair<AgeGroup, double>> age;
    std::vector<std::pair<Sex, double>> sex;
    std::vector<std::pair<RaceEthnicity, double>> race;

    // proportions mirroring the curated cohort's published distribution
    static DemographicMix default_mix();
};

struct CohortConfig {
    int n_patients = 100;
    double prevalence = 0.5;
    DemographicMix mix = DemographicMix::default_mix();
    PairDims dims;
    SignalSpec signal;  // class_id field ignored; label drives it
    std::string task_id = "planted_blob";
};

struct CohortSample {
    SyntheticPair data;
    DemographicRecord demographics;
};

struct Cohort {
    std::vector<CohortSample> samples;           // one per patient
    std::vector<ManifestRecord> manifest;
};

// One pair per patient (eye drawn at random), labels Bernoulli(prevalence),
// demographics from the mix; per-patient child rng streams keep generation
// order-independent.
Cohort generate_cohort(const CohortConfig& config, uint64_t seed);

std::vector<std::string> patient_ids(const Cohort& cohort);

}  // namespace ophmae
