// Acceptance suite: runs every gate criterion and prints one pass/fail line
// per criterion. Exit code 0 only if all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "ophmae/adaptation.hpp"
#include "ophmae/backbone.hpp"
#include "ophmae/data_pipeline.hpp"
#include "ophmae/evaluation.hpp"
#include "ophmae/objectives.hpp"
#include "ophmae/patching.hpp"
#include "ophmae/runner.hpp"

using namespace ophmae;
using ad::Mat;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- shared toy fixtures (C=16, depth=1, 8 volume + 6 image tokens) ----

ModelConfig toy_config() {
    ModelConfig c;
    c.embed_dim = 16;
    c.enc_depth_oct = 1;
    c.enc_depth_ir = 1;
    c.n_heads = 2;
    c.dec_dim = 8;
    c.dec_depth = 0;
    c.k_views = 2;
    return c;
}

GridSpec toy_grid() {
    GridSpec g;
    g.vol = {4, 1, 2};
    g.img = {3, 2, 1};
    return g;
}

PairedSample toy_sample(uint64_t seed) {
    PairDims dims{64, 16, 10, 48, 32};
    SignalSpec spec;
    spec.class_id = 1;
    Rng rng(seed);
    return generate_synthetic_pair(spec, dims, rng, "P1", "S1", Eye::LEFT, "toy").pair;
}

// ---- desk-scale fixtures ----

ModelConfig desk_config() { return ModelConfig{}; }  // the documented defaults

GridSpec desk_grid() {
    GridSpec g;
    g.vol = {4, 4, 2};  // 64x64x10 volume
    g.img = {4, 4, 1};  // 64x64 image
    return g;
}

PairDims desk_dims() { return PairDims{}; }

// ---------------------------------------------------------------- 1 ----

Outcome criterion_gradients() {
    const auto t0 = Clock::now();
    const PairedSample sample = toy_sample(21);
    std::ostringstream detail;
    bool pass = true;

    const std::vector<std::pair<std::string, std::array<double, 3>>> cases = {
        {"L_recon", {1, 0, 0}}, {"L_cross_relation", {0, 1, 0}}, {"L_consistency", {0, 0, 1}}};
    for (const auto& [name, lambdas] : cases) {
        ModelConfig cfg = toy_config();
        cfg.lambda_recon = lambdas[0];
        cfg.lambda_cross = lambdas[1];
        cfg.lambda_consistency = lambdas[2];
        if (lambdas[2] > 0.0) {
            // a depth-0 decoder reconstructs overlap tokens identically in
            // every view (mask token + position only), which pins the
            // consistency loss at zero; give the decoder one attention block
            // so this leg checks a live gradient path
            cfg.enc_depth_oct = 2;
            cfg.enc_depth_ir = 2;
            cfg.dec_depth = 1;
        }
        Model model(cfg, toy_grid(), 7);

        // dense relation targets are detached training constants; the checked
        // function holds them at the base point while parameters move
        Rng base_rng(23);
        const PretrainOutputs base = forward_pretrain(model, sample, base_rng);
        ForwardOptions opts;
        opts.frozen_dense = &base.dense_relations;
        auto build = [&]() {
            Rng rng(23);
            return pretrain_loss(model, forward_pretrain(model, sample, rng, opts)).total;
        };
        Rng pick(31);
        const FdReport report = finite_difference_check(build, model.params(), 1e-4, 1e-4, 3, pick);
        detail << name << " max_rel_err=" << report.max_rel_err << " (" << report.entries.size()
               << " coords); ";
        pass = pass && report.ok();
    }
    const double elapsed = seconds_since(t0);
    detail << "runtime " << elapsed << "s";
    return {pass && elapsed < 60.0, detail.str()};
}

// ---------------------------------------------------------------- 2 ----

Outcome criterion_mask_mechanics() {
    Rng fuzz(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(fuzz.bounded(9999));
        const double rho = 0.02 + 0.96 * fuzz.uniform();
        const MaskView view = sample_mask_view(n, rho, fuzz);
        if (view.masked_count() != round_half_away(rho * n))
            return {false, "cardinality mismatch at N=" + std::to_string(n)};
    }

    const int n = 1024;
    const int m = 768;
    double total = 0.0;
    const int seeds = 1000;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(5000 + static_cast<uint64_t>(s));
        const MaskEnsemble e = sample_mask_ensemble(n, 0.75, 2, rng);
        total += static_cast<double>(e.pairwise_overlap.at({0, 1}).size());
    }
    const double mean = total / seeds;
    const double expectation = 576.0;  // rho^2 N
    // |A ^ B| is hypergeometric given A: var = m(m/N)(1-m/N)(N-m)/(N-1)
    const double var_one = m * (static_cast<double>(m) / n) * (1.0 - static_cast<double>(m) / n) *
                           (static_cast<double>(n - m) / (n - 1));
    const double three_sigma = 3.0 * std::sqrt(var_one / seeds);
    std::ostringstream detail;
    detail << "1000 fuzz cases exact; mean overlap " << mean << " vs 576 +- " << three_sigma;
    return {std::abs(mean - expectation) < three_sigma, detail.str()};
}

// ---------------------------------------------------------------- 3 ----

Outcome criterion_mae_contract() {
    // The loss must read nothing from unmasked patches. With the patch
    // embeddings zeroed the encoder path from raw pixels is structurally
    // dead, so any end-to-end sensitivity to an unmasked pixel could come
    // only from the loss itself; central differences must therefore vanish
    // on unmasked pixels and stay alive on masked ones (the target path).
    ModelConfig cfg = toy_config();
    cfg.k_views = 1;
    cfg.lambda_cross = 0.0;
    cfg.lambda_consistency = 0.0;
    Model model(cfg, toy_grid(), 7);
    model.params().get("oct/embed/w")->value.setZero();
    model.params().get("ir/embed/w")->value.setZero();

    PairedSample sample = toy_sample(33);
    auto loss_value = [&](const PairedSample& s) {
        Rng rng(17);
        return pretrain_loss(model, forward_pretrain(model, s, rng)).total->value(0, 0);
    };

    Rng probe_rng(17);
    const PretrainOutputs probe = forward_pretrain(model, sample, probe_rng);
    const MaskView& view = probe.views[0].view_oct;
    const int visible_token = view.visible_indices().front();
    const int masked_token = view.masked_indices().front();

    const GridShape grid = toy_grid().vol;
    auto voxel_of_token = [&](int token, int hh, int ww, int dd) {
        const int gd = token / (grid.gh * grid.gw);
        const int rem = token % (grid.gh * grid.gw);
        const int gh = rem / grid.gw;
        const int gw = rem % grid.gw;
        return std::array<int, 3>{gh * 16 + hh, gw * 16 + ww, gd * 5 + dd};
    };

    const double eps = 1e-4;
    auto fd_at = [&](int token, int hh, int ww, int dd) {
        const auto [h, w, d] = voxel_of_token(token, hh, ww, dd);
        PairedSample up = sample, down = sample;
        up.oct.at(h, w, d) += eps;
        down.oct.at(h, w, d) -= eps;
        return (loss_value(up) - loss_value(down)) / (2.0 * eps);
    };

    double max_unmasked = 0.0;
    for (const auto& [hh, ww, dd] :
         std::vector<std::array<int, 3>>{{0, 0, 0}, {7, 9, 2}, {15, 15, 4}})
        max_unmasked = std::max(max_unmasked, std::abs(fd_at(visible_token, hh, ww, dd)));
    const double masked_grad = std::abs(fd_at(masked_token, 7, 9, 2));

    std::ostringstream detail;
    detail << "max |fd| at unmasked pixels " << max_unmasked << " (tol 1e-8); masked-pixel |fd| "
           << masked_grad << " stays live";
    return {max_unmasked <= 1e-8 && masked_grad > 1e-6, detail.str()};
}

// ---------------------------------------------------------------- 4 ----

Outcome criterion_fixed_points() {
    Rng rng(3);
    bool pass = true;
    std::ostringstream detail;

    // L_consistency: K = 1
    const MaskEnsemble single = sample_mask_ensemble(16, 0.5, 1, rng);
    Mat pred(8, 4);
    pred.setRandom();
    pass = pass && loss_consistency({pred}, single) == 0.0;

    // L_consistency: identical predictions on the overlap
    MaskEnsemble pairv;
    MaskView v0, v1;
    v0.masked = {1, 1, 0, 0};
    v1.masked = {0, 1, 1, 0};
    v0.ratio = v1.ratio = 0.5;
    pairv.views = {v0, v1};
    pairv.pairwise_overlap[{0, 1}] = {1};
    Mat p0(2, 3), p1(2, 3);
    p0.setRandom();
    p1.setRandom();
    p1.row(0) = p0.row(1);
    pass = pass && loss_consistency({p0, p1}, pairv) == 0.0;

    // L_cross_relation: predicted == dense
    Mat dense(5, 7);
    dense.setRandom();
    pass = pass && loss_cross_relation(dense, dense) == 0.0;

    // L_recon: pred == target
    MaskView view;
    view.masked = {1, 1, 1, 0, 0};
    view.ratio = 0.6;
    Mat target(3, 6);
    target.setRandom();
    pass = pass && loss_recon(target, target, view, false) == 0.0;

    detail << "all four fixed points exactly zero";
    return {pass, detail.str()};
}

// ---------------------------------------------------------------- 5 ----

Outcome criterion_adaptive_purity() {
    const auto t0 = Clock::now();
    Model model(desk_config(), desk_grid(), 11);
    ClassifierHead enface_head = attach_head(192, 2, 5);
    ClassifierHead oct_head = attach_head(192, 2, 6);

    Rng data_rng(8);
    SignalSpec spec;
    spec.class_id = 1;
    PairedSample sample =
        generate_synthetic_pair(spec, desk_dims(), data_rng, "P", "S", Eye::LEFT, "t").pair;

    const Mat enface_base = predict(model, enface_head, sample, {false, true});
    const Mat oct_base = predict(model, oct_head, sample, {true, false});

    Rng noise(9);
    bool pass = true;
    for (int trial = 0; trial < 10; ++trial) {
        PairedSample perturbed = sample;
        for (auto& v : perturbed.oct.voxels) v = noise.uniform();
        const Mat probs = predict(model, enface_head, perturbed, {false, true});
        pass = pass && (probs - enface_base).cwiseAbs().maxCoeff() == 0.0;

        PairedSample perturbed_ir = sample;
        for (auto& v : perturbed_ir.enface.pixels) v = noise.uniform();
        const Mat oct_probs = predict(model, oct_head, perturbed_ir, {true, false});
        pass = pass && (oct_probs - oct_base).cwiseAbs().maxCoeff() == 0.0;
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream detail;
    detail << "10 withheld-input perturbations per direction, bit-identical logits; runtime "
           << elapsed << "s";
    return {pass && elapsed < 10.0, detail.str()};
}

// ---------------------------------------------------------------- 6 ----

Outcome criterion_fusion_identity() {
    Model model(desk_config(), desk_grid(), 12);
    model.zero_fusion_parameters();
    Rng data_rng(13);
    SignalSpec spec;
    spec.class_id = 1;
    const PairedSample sample =
        generate_synthetic_pair(spec, desk_dims(), data_rng, "P", "S", Eye::LEFT, "t").pair;

    const Mat dual = forward_inference(model, sample, {true, true});
    const Mat oct_only = forward_inference(model, sample, {true, false});
    const Mat enface_only = forward_inference(model, sample, {false, true});
    double max_diff = 0.0;
    for (int c = 0; c < 192; ++c) {
        max_diff = std::max(max_diff, std::abs(dual(0, c) - oct_only(0, c)));
        max_diff = std::max(max_diff, std::abs(dual(0, c + 192) - enface_only(0, c)));
    }
    std::ostringstream detail;
    detail << "max |dual - concat(single)| = " << max_diff << " (tol 1e-6)";
    return {max_diff < 1e-6, detail.str()};
}

// ---------------------------------------------------------------- 7 ----

Outcome criterion_freeze_integrity() {
    Model model(toy_config(), toy_grid(), 14);
    std::vector<LabeledSample> train;
    for (int i = 0; i < 16; ++i) {
        SignalSpec spec;
        spec.class_id = i % 2;
        Rng rng(400 + static_cast<uint64_t>(i));
        auto sp = generate_synthetic_pair(spec, PairDims{64, 16, 10, 48, 32}, rng,
                                          "P" + std::to_string(i), "S", Eye::LEFT, "t");
        LabeledSample s;
        s.pair = sp.pair;
        s.label = sp.label;
        s.label.num_classes = 2;
        train.push_back(std::move(s));
    }

    FinetuneConfig config;
    config.phase1_epochs = 25;  // 16 samples / batch 4 -> 4 steps/epoch -> 100 steps
    config.phase2_epochs = 0;
    config.batch_size = 4;
    config.warmup_steps = 5;

    const auto names = model.encoder_and_fusion_param_names();
    const uint64_t before = parameter_checksum(model.params(), names);
    ClassifierHead head = attach_head(32, 2, 15);
    finetune(model, head, train, {}, config, FinetuneMode::FEW_SHOT, {true, true}, 16);
    const uint64_t after = parameter_checksum(model.params(), names);

    std::ostringstream detail;
    detail << "100 phase-1 steps; encoder+fusion checksum " << (before == after ? "unchanged" : "CHANGED");
    return {before == after, detail.str()};
}

// ---------------------------------------------------------------- 8 ----

double mann_whitney_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

double ap_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const long n_pos = std::count(labels.begin(), labels.end(), 1);
    double ap = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        long tp = 0, fp = 0;
        for (size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= t) (labels[i] == 1 ? tp : fp)++;
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        ap += (recall - prev_recall) * (static_cast<double>(tp) / static_cast<double>(tp + fp));
        prev_recall = recall;
    }
    return ap;
}

Outcome criterion_metric_oracles() {
    Rng rng(60);
    double max_auroc_err = 0.0, max_ap_err = 0.0, max_mcc_err = 0.0, max_kappa_err = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 4 + static_cast<int>(rng.bounded(27));
        std::vector<double> scores(static_cast<size_t>(n));
        std::vector<int> labels(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            scores[static_cast<size_t>(i)] = std::floor(rng.uniform() * 16.0) / 16.0;
            labels[static_cast<size_t>(i)] = rng.bounded(2) == 0 ? 0 : 1;
        }
        labels[0] = 1;
        labels[1] = 0;
        max_auroc_err =
            std::max(max_auroc_err, std::abs(auroc(scores, labels) - mann_whitney_oracle(scores, labels)));
        max_ap_err = std::max(max_ap_err, std::abs(auprc(scores, labels) - ap_oracle(scores, labels)));

        const ConfusionCounts cc = confusion_at_threshold(scores, labels, 0.5);
        const double tp = cc.tp, fp = cc.fp, tn = cc.tn, fn = cc.fn;
        const double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
        const double mcc_direct = denom == 0.0 ? 0.0 : (tp * tn - fp * fn) / denom;
        max_mcc_err = std::max(max_mcc_err, std::abs(mcc(cc) - mcc_direct));

        const double nn = tp + fp + tn + fn;
        const double po = (tp + tn) / nn;
        const double pe = ((tp + fp) / nn) * ((tp + fn) / nn) + ((tn + fn) / nn) * ((tn + fp) / nn);
        const double kappa_direct = pe >= 1.0 ? 0.0 : (po - pe) / (1.0 - pe);
        max_kappa_err = std::max(max_kappa_err, std::abs(cohen_kappa(cc) - kappa_direct));
    }

    // published AMD operating point: precision 90.4%, recall 90.7% -> F1 90.5%
    const double f1 = 2.0 * 0.904 * 0.907 / (0.904 + 0.907);
    const double f1_err_pp = std::abs(f1 * 100.0 - 90.5);

    std::ostringstream detail;
    detail << "auroc err " << max_auroc_err << ", auprc err " << max_ap_err << ", mcc err "
           << max_mcc_err << ", kappa err " << max_kappa_err << ", F1 " << f1 * 100.0 << "% ("
           << f1_err_pp << "pp from 90.5)";
    const bool pass = max_auroc_err < 1e-9 && max_ap_err < 1e-9 && max_mcc_err < 1e-9 &&
                      max_kappa_err < 1e-9 && f1_err_pp < 0.1;
    return {pass, detail.str()};
}

// ---------------------------------------------------------------- 9 ----

PredictionSet grouped_predictions(const std::vector<int>& labels_a,
                                  const std::vector<double>& scores_a,
                                  const std::vector<int>& labels_b,
                                  const std::vector<double>& scores_b) {
    PredictionSet set;
    set.num_classes = 2;
    auto push = [&set](int label, double score, AgeGroup age) {
        PredictionRecord r;
        r.scores = {1.0 - score, score};
        r.label = label;
        r.demographics.age_group = age;
        set.records.push_back(std::move(r));
    };
    for (size_t i = 0; i < labels_a.size(); ++i) push(labels_a[i], scores_a[i], AgeGroup::GE75);
    for (size_t i = 0; i < labels_b.size(); ++i) push(labels_b[i], scores_b[i], AgeGroup::A45_64);
    return set;
}

Outcome criterion_fairness_grid() {
    // identical per-group data: every confusion cell (and the score ranking)
    // matches between groups, with all four confusion categories populated
    const std::vector<int> labels = {1, 1, 1, 0, 0, 0, 1, 0};
    const std::vector<double> scores = {0.9, 0.8, 0.3, 0.7, 0.2, 0.1, 0.6, 0.4};
    const PredictionSet parity = grouped_predictions(labels, scores, labels, scores);
    const FairnessReport report = fairness_report(parity);

    bool pass = true;
    std::ostringstream detail;
    int checked = 0;
    for (FairnessMetric metric : all_fairness_metrics()) {
        const FairnessCell& cell = report.grid.at(FairnessAttribute::AGE).at(metric);
        if (cell.status != CellStatus::OK || !cell.ratio) {
            pass = false;
            detail << to_string(metric) << " missing; ";
            continue;
        }
        if (*cell.ratio != 1.0) {
            pass = false;
            detail << to_string(metric) << " = " << *cell.ratio << "; ";
        }
        ++checked;
    }
    detail << checked << "/8 parity ratios exactly 1.0";

    // label swap inverts every defined ratio
    const std::vector<int> la = {1, 1, 0, 0, 0, 1};
    const std::vector<double> sa = {0.9, 0.4, 0.6, 0.2, 0.8, 0.7};
    const std::vector<int> lb = {1, 0, 1, 0, 1, 0};
    const std::vector<double> sb = {0.8, 0.3, 0.2, 0.6, 0.9, 0.1};
    const FairnessReport rab = fairness_report(grouped_predictions(la, sa, lb, sb));
    const FairnessReport rba = fairness_report(grouped_predictions(lb, sb, la, sa));
    int inverted = 0;
    for (FairnessMetric metric : all_fairness_metrics()) {
        const FairnessCell& c1 = rab.grid.at(FairnessAttribute::AGE).at(metric);
        const FairnessCell& c2 = rba.grid.at(FairnessAttribute::AGE).at(metric);
        if (c1.status == CellStatus::OK && c2.status == CellStatus::OK) {
            if (std::abs(*c1.ratio - 1.0 / *c2.ratio) > 1e-9) {
                pass = false;
                detail << "; swap identity broken for " << to_string(metric);
            }
            ++inverted;
        }
    }
    detail << "; swap inversion held on " << inverted << " defined cells";

    // zero-denominator sentinel: privileged group with FPR == 0
    const std::vector<int> lz = {1, 1, 0, 0};
    const std::vector<double> sz_priv = {0.9, 0.8, 0.1, 0.2};  // no false positives
    const std::vector<double> sz_prot = {0.9, 0.3, 0.8, 0.2};  // one fp, one fn
    const FairnessReport rz = fairness_report(grouped_predictions(lz, sz_prot, lz, sz_priv));
    const FairnessCell& fpr_cell = rz.grid.at(FairnessAttribute::AGE).at(FairnessMetric::FPR);
    if (fpr_cell.status != CellStatus::UNDEFINED) {
        pass = false;
        detail << "; zero-denominator FPR not UNDEFINED";
    } else {
        detail << "; zero-denominator cell UNDEFINED";
    }
    return {pass, detail.str()};
}

// --------------------------------------------------------------- 10 ----

Outcome criterion_split_fidelity() {
    std::vector<std::string> patients;
    for (int i = 0; i < 100; ++i) patients.push_back("P" + std::to_string(i));
    const SplitAssignment split = split_patients(patients, 0.8, {4, 1, 5}, 7);
    const auto counts = split.counts();
    bool pass = counts[0] == 80 && counts[1] == 8 && counts[2] == 2 && counts[3] == 10;

    // exhaustive leakage check: every patient in exactly one split
    std::set<std::string> seen;
    for (const auto& [patient, s] : split.by_patient)
        if (!seen.insert(patient).second) pass = false;
    pass = pass && seen.size() == 100;

    const SplitAssignment again = split_patients(patients, 0.8, {4, 1, 5}, 7);
    pass = pass && again.by_patient == split.by_patient;

    std::ostringstream detail;
    detail << "counts " << counts[0] << "/" << counts[1] << "/" << counts[2] << "/" << counts[3]
           << ", zero leakage, seed-deterministic";
    return {pass, detail.str()};
}

// --------------------------------------------------------------- 11 ----

struct E2eArtifacts {
    bool ran = false;
    Model model{desk_config(), desk_grid(), 1};
    std::vector<LabeledSample> ft_train;
    std::vector<EvaluatedSample> ft_test;
    std::vector<Mat> pretrained_params;
};

E2eArtifacts g_e2e;

Outcome criterion_end_to_end() {
    const auto t0 = Clock::now();

    // cohorts: 64 pretraining pairs plus 200/200 fine-tune train/test
    CohortConfig cc;
    cc.n_patients = 464;
    cc.prevalence = 0.5;
    const Cohort cohort = generate_cohort(cc, 2024);
    std::vector<PairedSample> pretrain_pairs;
    for (int i = 0; i < 64; ++i)
        pretrain_pairs.push_back(cohort.samples[static_cast<size_t>(i)].data.pair);
    auto labeled_of = [&](int i) {
        LabeledSample s;
        s.pair = cohort.samples[static_cast<size_t>(i)].data.pair;
        s.label = cohort.samples[static_cast<size_t>(i)].data.label;
        s.label.num_classes = 2;
        return s;
    };
    for (int i = 64; i < 264; ++i) g_e2e.ft_train.push_back(labeled_of(i));
    for (int i = 264; i < 464; ++i) {
        EvaluatedSample e;
        e.sample = labeled_of(i);
        e.demographics = cohort.samples[static_cast<size_t>(i)].demographics;
        g_e2e.ft_test.push_back(std::move(e));
    }

    // pretraining: 50 epochs over the 64 pairs at the desk configuration
    PretrainConfig pc;
    pc.epochs = 50;
    pc.batch_size = 8;
    pc.base_lr = 1e-3;
    pc.warmup_steps = 40;
    pc.checkpoint_every_epochs = 50;
    const std::filesystem::path out_dir =
        std::filesystem::temp_directory_path() / "ophmae_acceptance_e2e";
    std::filesystem::remove_all(out_dir);
    const PretrainResult pre = pretrain_loop(g_e2e.model, pretrain_pairs, pc, 7, out_dir, "e2e");

    const double initial = pre.steps.front().loss.l_total;
    const double final_loss = pre.steps.back().loss.l_total;
    const bool halved = final_loss < 0.5 * initial;

    // keep the pretrained state for the subset harness criterion
    for (const auto& [name, var] : g_e2e.model.params().ordered())
        g_e2e.pretrained_params.push_back(var->value);
    g_e2e.ran = true;

    // dual-mode fine-tune on the planted binary task
    FinetuneConfig fc;
    fc.num_classes = 2;
    fc.phase1_epochs = 2;
    fc.phase2_epochs = 4;
    fc.batch_size = 8;
    fc.base_lr = 3e-4;
    fc.warmup_steps = 10;
    fc.weight_decay = 0.05;
    ClassifierHead dual_head = attach_head(2 * 192, 2, 81);
    finetune(g_e2e.model, dual_head, g_e2e.ft_train, {}, fc, FinetuneMode::FEW_SHOT, {true, true},
             82);
    const PredictionSet dual_preds = predict_set(g_e2e.model, dual_head, g_e2e.ft_test, {true, true});
    const double dual_auroc = auroc(dual_preds.positive_scores(), dual_preds.labels());

    // en-face-only fine-tune from the same pretrained checkpoint
    {
        size_t i = 0;
        for (const auto& [name, var] : g_e2e.model.params().ordered())
            var->value = g_e2e.pretrained_params[i++];
    }
    ClassifierHead enface_head = attach_head(192, 2, 83);
    finetune(g_e2e.model, enface_head, g_e2e.ft_train, {}, fc, FinetuneMode::FEW_SHOT,
             {false, true}, 84);
    const PredictionSet enface_preds =
        predict_set(g_e2e.model, enface_head, g_e2e.ft_test, {false, true});
    const double enface_auroc = auroc(enface_preds.positive_scores(), enface_preds.labels());

    // restore the pretrained state for criterion 12
    {
        size_t i = 0;
        for (const auto& [name, var] : g_e2e.model.params().ordered())
            var->value = g_e2e.pretrained_params[i++];
    }

    const double elapsed = seconds_since(t0);
    // the 900 s budget is stated for a 4-core host; batch work parallelizes
    // across cores, so scale the cap by the core deficit when running on less
    const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
    const double budget = 900.0 * (cores >= 4 ? 1.0 : 4.0 / static_cast<double>(cores));
    std::ostringstream detail;
    detail << "l_total " << initial << " -> " << final_loss
           << (halved ? " (halved)" : " (NOT halved)") << "; dual auroc " << dual_auroc
           << " (>=0.90); enface auroc " << enface_auroc << " (>=0.75); runtime " << elapsed
           << "s on " << cores << " core(s), cap " << budget << "s";
    const bool pass = halved && dual_auroc >= 0.90 && enface_auroc >= 0.75 && elapsed < budget;
    return {pass, detail.str()};
}

// --------------------------------------------------------------- 12 ----

Outcome criterion_subset_harness() {
    if (!g_e2e.ran) return {false, "end-to-end criterion did not run"};

    FinetuneConfig fc;
    fc.num_classes = 2;
    fc.phase1_epochs = 2;
    fc.phase2_epochs = 0;  // frozen-encoder few-shot protocol
    fc.batch_size = 16;
    fc.base_lr = 5e-3;
    fc.warmup_steps = 2;

    const SubsetHarnessResult result = subset_harness(
        g_e2e.model, g_e2e.ft_train, g_e2e.ft_test, {200, 100, 50}, 10, fc, {true, true}, 99);

    // CI width at 10 seeds vs first 3 seeds of the same sweep, per the sd/sqrt(n) estimate
    auto width_for = [&result](size_t size, int first_n) {
        std::vector<double> vals;
        for (const auto& run : result.runs)
            if (run.size == size && static_cast<int>(vals.size()) < first_n)
                vals.push_back(run.auroc);
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(vals.size() - 1));
        return 2.0 * 1.96 * sd / std::sqrt(static_cast<double>(vals.size()));
    };

    bool pass = result.runs.size() == 30 && result.summaries.size() == 3;
    std::ostringstream detail;
    for (const auto& s : result.summaries)
        detail << "n=" << s.size << ": " << s.mean_auroc << " +- " << (s.ci_hi - s.mean_auroc)
               << "; ";
    const double w3 = width_for(50, 3);
    const double w10 = width_for(50, 10);
    detail << "CI width at n=50: 3 seeds " << w3 << " vs 10 seeds " << w10;
    pass = pass && w10 < w3;
    return {pass, detail.str()};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        std::string name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness (fd vs analytic, toy model)", criterion_gradients},
        {2, "mask mechanics (cardinality + overlap statistics)", criterion_mask_mechanics},
        {3, "mae contract (masked-only loss sensitivity)", criterion_mae_contract},
        {4, "loss fixed points", criterion_fixed_points},
        {5, "adaptive-inference purity", criterion_adaptive_purity},
        {6, "fusion residual identity", criterion_fusion_identity},
        {7, "freeze integrity", criterion_freeze_integrity},
        {8, "metric oracles", criterion_metric_oracles},
        {9, "fairness grid", criterion_fairness_grid},
        {10, "split fidelity", criterion_split_fidelity},
        {11, "end-to-end synthetic learning", criterion_end_to_end},
        {12, "subset harness", criterion_subset_harness},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        Outcome outcome;
        try {
            outcome = criterion.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %2d. %s — %s\n", outcome.pass ? "PASS" : "FAIL", criterion.id,
                    criterion.name.c_str(), outcome.detail.c_str());
        std::fflush(stdout);
        if (!outcome.pass) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    else std::printf("all 12 acceptance criteria passed\n");
    return failures == 0 ? 0 : 1;
}
