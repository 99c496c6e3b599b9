#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ophmae/data_pipeline.hpp"

using namespace ophmae;

namespace {

ManifestRecord good_record(const std::string& patient, const std::string& scan) {
    ManifestRecord r;
    r.patient_id = patient;
    r.scan_id = scan;
    r.n_frames = 25;
    r.modality_tag = "OCT";
    return r;
}

double volume_mean(const OctVolume& v) {
    double s = 0.0;
    for (double x : v.voxels) s += x;
    return s / static_cast<double>(v.voxels.size());
}

}  // namespace

TEST_CASE("curation rules fire in order with per-rule counts") {
    std::vector<ManifestRecord> records;
    records.push_back(good_record("P1", "S1"));  // retained
    ManifestRecord no_dir = good_record("P2", "S2");
    no_dir.has_image_dir = false;
    no_dir.n_frames = 0;  // would also hit the frame rule; the first rule claims it
    records.push_back(no_dir);
    ManifestRecord no_meta = good_record("P3", "S3");
    no_meta.has_metadata = false;
    records.push_back(no_meta);
    ManifestRecord zero_frames = good_record("P4", "S4");
    zero_frames.n_frames = 0;
    records.push_back(zero_frames);
    ManifestRecord completed = good_record("P5", "S5");
    completed.modality_tag = "COMPLETED";
    records.push_back(completed);
    ManifestRecord invalid = good_record("P6", "S6");
    invalid.modality_tag = "";
    records.push_back(invalid);
    ManifestRecord peripheral = good_record("P7", "S7");
    peripheral.is_macular = false;
    records.push_back(peripheral);
    records.push_back(good_record("P8", "S8"));
    records.push_back(good_record("P9", "S9"));
    ManifestRecord one_frame = good_record("P10", "S10");
    one_frame.n_frames = 1;  // "fewer than one frame" excludes only n < 1
    records.push_back(one_frame);

    const CurationResult result = curate(records);
    CHECK(result.log.missing_image_dir == 1);
    CHECK(result.log.missing_metadata == 1);
    CHECK(result.log.too_few_frames == 1);
    CHECK(result.log.invalid_entries == 2);
    CHECK(result.log.non_macular == 1);
    CHECK(result.log.retained == 4);
    CHECK(result.kept.size() == 4);

    SUBCASE("curation is idempotent on its own output") {
        const CurationResult again = curate(result.kept);
        CHECK(again.kept.size() == result.kept.size());
        CHECK(again.log.missing_image_dir == 0);
        CHECK(again.log.invalid_entries == 0);
        for (size_t i = 0; i < again.kept.size(); ++i)
            CHECK(again.kept[i].scan_id == result.kept[i].scan_id);
    }
}

TEST_CASE("split: 100 patients give 80 pretrain and 8/2/10 fine-tune") {
    std::vector<std::string> patients;
    for (int i = 0; i < 100; ++i) patients.push_back("P" + std::to_string(i));
    const SplitAssignment split = split_patients(patients, 0.8, {4, 1, 5}, 7);
    const auto counts = split.counts();
    CHECK(counts[0] == 80);
    CHECK(counts[1] == 8);
    CHECK(counts[2] == 2);
    CHECK(counts[3] == 10);

    SUBCASE("every patient appears exactly once") {
        CHECK(split.by_patient.size() == 100);
        std::set<std::string> seen;
        for (const auto& [p, s] : split.by_patient) CHECK(seen.insert(p).second);
    }

    SUBCASE("deterministic per seed, different across seeds") {
        const SplitAssignment again = split_patients(patients, 0.8, {4, 1, 5}, 7);
        CHECK(again.by_patient == split.by_patient);
        const SplitAssignment other = split_patients(patients, 0.8, {4, 1, 5}, 8);
        CHECK(other.by_patient != split.by_patient);
    }

    SUBCASE("input order does not matter") {
        std::vector<std::string> reversed(patients.rbegin(), patients.rend());
        CHECK(split_patients(reversed, 0.8, {4, 1, 5}, 7).by_patient == split.by_patient);
    }
}

TEST_CASE("split: 4:1:5 applied exactly to ten fine-tune patients") {
    std::vector<std::string> patients;
    for (int i = 0; i < 50; ++i) patients.push_back("Q" + std::to_string(i));
    // 50 patients at 0.8 -> 40 pretrain, 10 fine-tune -> 4/1/5
    const auto counts = split_patients(patients, 0.8, {4, 1, 5}, 3).counts();
    CHECK(counts[0] == 40);
    CHECK(counts[1] == 4);
    CHECK(counts[2] == 1);
    CHECK(counts[3] == 5);
}

TEST_CASE("split rejects tiny cohorts") {
    std::vector<std::string> nine;
    for (int i = 0; i < 9; ++i) nine.push_back("P" + std::to_string(i));
    CHECK_THROWS_AS(split_patients(nine, 0.8, {4, 1, 5}, 1), TooFewPatients);
}

TEST_CASE("split json round trip") {
    std::vector<std::string> patients;
    for (int i = 0; i < 20; ++i) patients.push_back("P" + std::to_string(i));
    const SplitAssignment split = split_patients(patients, 0.8, {4, 1, 5}, 5);
    const SplitAssignment back = SplitAssignment::from_json(split.to_json());
    CHECK(back.by_patient == split.by_patient);
}

TEST_CASE("subset_sample: cardinality, determinism, containment") {
    const auto s = subset_sample(500, 100, 11);
    CHECK(s.size() == 100);
    CHECK(std::set<size_t>(s.begin(), s.end()).size() == 100);
    for (size_t idx : s) CHECK(idx < 500);

    CHECK(subset_sample(500, 100, 11) == s);
    CHECK(subset_sample(7, 7, 1).size() == 7);
    CHECK_THROWS_AS(subset_sample(50, 51, 1), SubsetTooLarge);

    SUBCASE("ten seeds give ten distinct subsets") {
        std::set<std::vector<size_t>> distinct;
        for (uint64_t seed = 1; seed <= 10; ++seed) distinct.insert(subset_sample(500, 100, seed));
        CHECK(distinct.size() == 10);
    }
}

TEST_CASE("synthetic pair: flat spec with zero noise is constant") {
    SignalSpec spec;
    spec.class_id = 0;
    spec.noise_sd = 0.0;
    spec.band_amplitude = 0.0;
    Rng rng(1);
    const SyntheticPair sp =
        generate_synthetic_pair(spec, PairDims{}, rng, "P1", "S1", Eye::LEFT, "t");
    const double v0 = sp.pair.oct.voxels.front();
    for (double v : sp.pair.oct.voxels) CHECK(v == v0);
    const double p0 = sp.pair.enface.pixels.front();
    for (double p : sp.pair.enface.pixels) CHECK(p == p0);
    CHECK(sp.label.label == 0);
}

TEST_CASE("planted class raises the volume mean (expectation over 100 draws)") {
    SignalSpec pos;
    pos.class_id = 1;
    pos.oct_signal.amplitude = 0.5;
    SignalSpec neg = pos;
    neg.class_id = 0;
    double mean_pos = 0.0, mean_neg = 0.0;
    for (int t = 0; t < 100; ++t) {
        Rng ra(100 + static_cast<uint64_t>(t)), rb(100 + static_cast<uint64_t>(t));
        mean_pos += volume_mean(
            generate_synthetic_pair(pos, PairDims{}, ra, "P", "S", Eye::LEFT, "t").pair.oct);
        mean_neg += volume_mean(
            generate_synthetic_pair(neg, PairDims{}, rb, "P", "S", Eye::LEFT, "t").pair.oct);
    }
    CHECK(mean_pos / 100.0 > mean_neg / 100.0);
}

TEST_CASE("synthetic pair determinism and pair validity") {
    SignalSpec spec;
    spec.class_id = 1;
    Rng r1(9), r2(9);
    const SyntheticPair a = generate_synthetic_pair(spec, PairDims{}, r1, "P", "S", Eye::RIGHT, "t");
    const SyntheticPair b = generate_synthetic_pair(spec, PairDims{}, r2, "P", "S", Eye::RIGHT, "t");
    CHECK(a.pair.oct.voxels == b.pair.oct.voxels);
    CHECK(a.pair.enface.pixels == b.pair.enface.pixels);
    CHECK_NOTHROW(validate_pair(a.pair.oct, a.pair.enface));
    CHECK(a.label.laterality == Laterality::RIGHT);
}

TEST_CASE("cohort: prevalence within binomial bounds, determinism, mix override") {
    CohortConfig config;
    config.n_patients = 200;
    config.prevalence = 0.5;
    const Cohort cohort = generate_cohort(config, 31);
    CHECK(cohort.samples.size() == 200);
    CHECK(cohort.manifest.size() == 200);
    int positives = 0;
    for (const auto& s : cohort.samples) positives += s.data.label.label > 0 ? 1 : 0;
    // Binomial(200, 0.5): 99% bounds ~ 100 +- 2.58 * sqrt(50) ~ [81, 119]
    CHECK(positives >= 81);
    CHECK(positives <= 119);

    SUBCASE("fixed seed reproduces the cohort") {
        const Cohort again = generate_cohort(config, 31);
        CHECK(again.samples[17].data.pair.oct.voxels == cohort.samples[17].data.pair.oct.voxels);
        CHECK(again.samples[42].data.label.label == cohort.samples[42].data.label.label);
    }

    SUBCASE("degenerate demographic mix is honored") {
        CohortConfig all_female = config;
        all_female.n_patients = 50;
        all_female.mix.sex = {{Sex::FEMALE, 1.0}};
        const Cohort c = generate_cohort(all_female, 32);
        for (const auto& s : c.samples) CHECK(s.demographics.sex == Sex::FEMALE);
    }

    SUBCASE("prevalence validation") {
        CohortConfig bad = config;
        bad.prevalence = 0.0;
        CHECK_THROWS_AS(generate_cohort(bad, 1), InvalidPrevalence);
    }
}

TEST_CASE("no patient id repeats across cohort samples") {
    CohortConfig config;
    config.n_patients = 120;
    const Cohort cohort = generate_cohort(config, 33);
    std::set<std::string> ids;
    for (const auto& id : patient_ids(cohort)) CHECK(ids.insert(id).second);
}
