// Command-line front end: synth, split, pretrain, finetune, evaluate,
// fairness, subset-harness, gradcheck.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ophmae/io.hpp"
#include "ophmae/runner.hpp"

namespace fs = std::filesystem;
using namespace ophmae;

namespace {

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig{};
    return ExperimentConfig::from_json(nlohmann::json::parse(read_text_file(path)));
}

struct StoredCohort {
    std::vector<LabeledSample> labeled;
    std::vector<EvaluatedSample> evaluated;
    std::vector<std::string> patients;
};

// reads manifest.csv + labels.csv + demographics.csv + the array files
StoredCohort load_cohort(const fs::path& dir) {
    StoredCohort out;
    const auto manifest = read_csv(dir / "manifest.csv");
    if (manifest.size() < 2) throw EmptyDataset("manifest has no rows: " + dir.string());

    for (size_t i = 1; i < manifest.size(); ++i) {
        // columns: patient_id, scan_id, eye, oct_path, enface_path, n_frames,
        // modality_tag, acquisition_time
        const auto& row = manifest[i];
        if (row.size() < 8) throw IoError("bad manifest row");
        PairedSample pair;
        const F32Array vol = read_f32_array(dir / row[3]);
        if (vol.shape.size() != 3) throw IoError("volume must have 3 dims");
        pair.oct.height = vol.shape[0];
        pair.oct.width = vol.shape[1];
        pair.oct.depth = vol.shape[2];
        pair.oct.voxels = vol.values;
        pair.oct.patient_id = row[0];
        pair.oct.scan_id = row[1];
        pair.oct.eye = eye_from_string(row[2]);
        const F32Array img = read_f32_array(dir / row[4]);
        if (img.shape.size() != 2) throw IoError("image must have 2 dims");
        pair.enface.height = img.shape[0];
        pair.enface.width = img.shape[1];
        pair.enface.pixels = img.values;
        pair.enface.patient_id = row[0];
        pair.enface.scan_id = row[1];
        pair.enface.eye = pair.oct.eye;
        if (!row[7].empty()) pair.acquisition_time = row[7];

        LabeledSample sample;
        sample.pair = validate_pair(pair.oct, pair.enface);
        sample.pair.acquisition_time = pair.acquisition_time;
        out.labeled.push_back(sample);
        out.patients.push_back(row[0]);
    }

    const auto labels = read_csv(dir / "labels.csv");
    std::map<std::string, LabelRecord> label_map;
    for (size_t i = 1; i < labels.size(); ++i) {
        const auto& row = labels[i];  // scan_id, task_id, label, num_classes, laterality
        LabelRecord rec;
        rec.task_id = row[1];
        rec.label = std::stoi(row[2]);
        rec.num_classes = std::stoi(row[3]);
        rec.laterality = row[4] == "LEFT"    ? Laterality::LEFT
                         : row[4] == "RIGHT" ? Laterality::RIGHT
                                             : Laterality::BOTH;
        label_map[row[0]] = rec;
    }
    std::map<std::string, DemographicRecord> demo_map;
    if (fs::exists(dir / "demographics.csv")) {
        const auto demos = read_csv(dir / "demographics.csv");
        for (size_t i = 1; i < demos.size(); ++i) {
            const auto& row = demos[i];  // patient_id, age_group, sex, race_ethnicity
            DemographicRecord rec;
            rec.age_group = age_group_from_string(row[1]);
            rec.sex = sex_from_string(row[2]);
            rec.race_ethnicity = race_from_string(row[3]);
            demo_map[row[0]] = rec;
        }
    }
    for (auto& sample : out.labeled) {
        const auto it = label_map.find(sample.pair.oct.scan_id);
        if (it != label_map.end()) sample.label = it->second;
        EvaluatedSample ev;
        ev.sample = sample;
        const auto dit = demo_map.find(sample.pair.oct.patient_id);
        if (dit != demo_map.end()) ev.demographics = dit->second;
        out.evaluated.push_back(std::move(ev));
    }
    return out;
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
    fs::create_directories(dir / "arrays");
    std::vector<std::vector<std::string>> manifest_rows, label_rows, demo_rows;
    for (const auto& s : cohort.samples) {
        const auto& pair = s.data.pair;
        const std::string base = pair.oct.scan_id;
        const std::string oct_rel = "arrays/" + base + "_oct.f32";
        const std::string img_rel = "arrays/" + base + "_enface.f32";
        write_f32_array(dir / oct_rel,
                        {pair.oct.height, pair.oct.width, pair.oct.depth}, pair.oct.voxels);
        write_f32_array(dir / img_rel, {pair.enface.height, pair.enface.width},
                        pair.enface.pixels);
        manifest_rows.push_back({pair.oct.patient_id, pair.oct.scan_id, to_string(pair.oct.eye),
                                 oct_rel, img_rel, std::to_string(pair.oct.depth), "OCT+IR",
                                 ""});
        label_rows.push_back({pair.oct.scan_id, s.data.label.task_id,
                              std::to_string(s.data.label.label),
                              std::to_string(s.data.label.num_classes),
                              to_string(s.data.label.laterality)});
        demo_rows.push_back({pair.oct.patient_id, to_string(s.demographics.age_group),
                             to_string(s.demographics.sex),
                             to_string(s.demographics.race_ethnicity)});
    }
    write_csv(dir / "manifest.csv",
              {"patient_id", "scan_id", "eye", "oct_path", "enface_path", "n_frames",
               "modality_tag", "acquisition_time"},
              manifest_rows);
    write_csv(dir / "labels.csv", {"scan_id", "task_id", "label", "num_classes", "laterality"},
              label_rows);
    write_csv(dir / "demographics.csv", {"patient_id", "age_group", "sex", "race_ethnicity"},
              demo_rows);
}

std::vector<size_t> indices_in_split(const StoredCohort& cohort, const SplitAssignment& split,
                                     Split which) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < cohort.patients.size(); ++i) {
        const auto it = split.by_patient.find(cohort.patients[i]);
        if (it != split.by_patient.end() && it->second == which) idx.push_back(i);
    }
    return idx;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OphMAE: paired 3D/2D masked-autoencoder pretraining and evaluation"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic paired cohort");
    int synth_patients = 100;
    double synth_prevalence = 0.5;
    uint64_t synth_seed = 1;
    std::string synth_out = "data";
    double synth_noise = 0.02;
    synth->add_option("--patients", synth_patients, "number of patients");
    synth->add_option("--prevalence", synth_prevalence, "positive-class rate");
    synth->add_option("--seed", synth_seed, "rng seed");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--noise-sd", synth_noise, "additive noise sd");

    // ---- split ----
    auto* split_cmd = app.add_subcommand("split", "patient-level split of a manifest");
    std::string split_manifest;
    uint64_t split_seed = 1;
    std::string split_out;
    split_cmd->add_option("--manifest", split_manifest, "manifest.csv path")->required();
    split_cmd->add_option("--seed", split_seed, "rng seed");
    split_cmd->add_option("--out", split_out, "output split.json (default next to manifest)");

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "masked pretraining on the PRETRAIN split");
    std::string pre_config, pre_resume;
    pre->add_option("--config", pre_config, "experiment config JSON")->required();
    pre->add_option("--resume", pre_resume, "checkpoint to resume from");

    // ---- finetune ----
    auto* ft = app.add_subcommand("finetune", "two-phase fine-tuning from a checkpoint");
    std::string ft_task, ft_config, ft_mode = "dual", ft_subset = "full", ft_checkpoint;
    uint64_t ft_seed = 1;
    ft->add_option("--task", ft_task, "task id")->required();
    ft->add_option("--config", ft_config, "experiment config JSON")->required();
    ft->add_option("--mode", ft_mode, "dual|oct|enface");
    ft->add_option("--subset-n", ft_subset, "training subset size or 'full'");
    ft->add_option("--seed", ft_seed, "rng seed");
    ft->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint (default from config)");

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "metrics on the FT_TEST split");
    std::string ev_checkpoint, ev_config, ev_task, ev_mode = "dual";
    ev->add_option("--checkpoint", ev_checkpoint, "fine-tuned checkpoint")->required();
    ev->add_option("--config", ev_config, "experiment config JSON")->required();
    ev->add_option("--task", ev_task, "task id")->required();
    ev->add_option("--mode", ev_mode, "dual|oct|enface");

    // ---- fairness ----
    auto* fair = app.add_subcommand("fairness", "subgroup ratio grid on the FT_TEST split");
    std::string fair_checkpoint, fair_config, fair_task, fair_mode = "dual";
    fair->add_option("--checkpoint", fair_checkpoint, "fine-tuned checkpoint")->required();
    fair->add_option("--config", fair_config, "experiment config JSON")->required();
    fair->add_option("--task", fair_task, "task id")->required();
    fair->add_option("--mode", fair_mode, "dual|oct|enface");

    // ---- subset-harness ----
    auto* sub = app.add_subcommand("subset-harness", "data-efficiency sweep with seed repeats");
    std::string sub_checkpoint, sub_config, sub_task, sub_mode = "dual", sub_sizes = "200,100,50";
    int sub_seeds = 10;
    sub->add_option("--checkpoint", sub_checkpoint, "pretrained checkpoint")->required();
    sub->add_option("--config", sub_config, "experiment config JSON")->required();
    sub->add_option("--task", sub_task, "task id")->required();
    sub->add_option("--mode", sub_mode, "dual|oct|enface");
    sub->add_option("--sizes", sub_sizes, "comma-separated subset sizes");
    sub->add_option("--seeds", sub_seeds, "number of sampling seeds");

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all three objectives");
    double gc_eps = 1e-4;
    double gc_tol = 1e-4;
    gc->add_option("--epsilon", gc_eps, "central-difference step");
    gc->add_option("--tol", gc_tol, "relative-error tolerance");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            CohortConfig cc;
            cc.n_patients = synth_patients;
            cc.prevalence = synth_prevalence;
            cc.signal.noise_sd = synth_noise;
            const Cohort cohort = generate_cohort(cc, synth_seed);
            write_cohort(cohort, resolve_out_dir(synth_out));
            std::cout << "wrote " << cohort.samples.size() << " pairs to " << synth_out << "\n";
        } else if (*split_cmd) {
            const auto rows = read_csv(split_manifest);
            std::vector<std::string> patients;
            for (size_t i = 1; i < rows.size(); ++i) patients.push_back(rows[i][0]);
            std::sort(patients.begin(), patients.end());
            patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
            const SplitAssignment split = split_patients(patients, 0.8, {4, 1, 5}, split_seed);
            const fs::path out = split_out.empty()
                                     ? fs::path(split_manifest).parent_path() / "split.json"
                                     : fs::path(split_out);
            write_text_file(out, split.to_json().dump(2));
            const auto counts = split.counts();
            std::cout << "split " << patients.size() << " patients -> pretrain " << counts[0]
                      << ", train " << counts[1] << ", valid " << counts[2] << ", test "
                      << counts[3] << " (" << out << ")\n";
        } else if (*pre) {
            const ExperimentConfig config = load_config(pre_config);
            const StoredCohort cohort = load_cohort(config.data_dir);
            const SplitAssignment split = SplitAssignment::from_json(
                nlohmann::json::parse(read_text_file(fs::path(config.data_dir) / "split.json")));
            std::vector<PairedSample> data;
            for (size_t i : indices_in_split(cohort, split, Split::PRETRAIN))
                data.push_back(cohort.labeled[i].pair);
            Model model(config.model, config.grid_spec(), config.seeds.front());
            const fs::path out = resolve_out_dir(config.out_dir);
            const PretrainResult result =
                pretrain_loop(model, data, config.pretrain, config.seeds.front(), out,
                              config.config_hash(), pre_resume);
            nlohmann::json record = {{"config_hash", config.config_hash()},
                                     {"version", version_tag()},
                                     {"wall_seconds", result.wall_seconds},
                                     {"steps", result.global_step},
                                     {"config", config.to_json()}};
            write_text_file(out / "run_record.json", record.dump(2));
            std::cout << "pretrained " << result.global_step << " steps; final l_total "
                      << (result.steps.empty() ? 0.0 : result.steps.back().loss.l_total) << "\n";
        } else if (*ft) {
            const ExperimentConfig config = load_config(ft_config);
            const StoredCohort cohort = load_cohort(config.data_dir);
            const SplitAssignment split = SplitAssignment::from_json(
                nlohmann::json::parse(read_text_file(fs::path(config.data_dir) / "split.json")));
            const ModalityAvailability availability = availability_from_string(ft_mode);
            const fs::path out = resolve_out_dir(config.out_dir);
            const fs::path ckpt_path = ft_checkpoint.empty()
                                           ? out / "checkpoint_latest.ckpt"
                                           : fs::path(ft_checkpoint);
            RestoredModel restored = restore_model_checkpoint(ckpt_path);

            std::vector<LabeledSample> train, valid;
            for (size_t i : indices_in_split(cohort, split, Split::FT_TRAIN)) {
                if (cohort.labeled[i].label.task_id != ft_task) continue;
                train.push_back(cohort.labeled[i]);
            }
            for (size_t i : indices_in_split(cohort, split, Split::FT_VALID)) {
                if (cohort.labeled[i].label.task_id != ft_task) continue;
                valid.push_back(cohort.labeled[i]);
            }
            if (train.empty()) throw TaskNotFound(ft_task);
            if (ft_subset != "full") {
                const size_t n = static_cast<size_t>(std::stoul(ft_subset));
                std::vector<LabeledSample> subset;
                for (size_t idx : subset_sample(train.size(), n, ft_seed))
                    subset.push_back(train[idx]);
                train = std::move(subset);
            }

            const int feature_dim = availability.dual() ? 2 * config.model.embed_dim
                                                        : config.model.embed_dim;
            ClassifierHead head = attach_head(feature_dim, config.finetune.num_classes, ft_seed);
            const FinetuneMode mode =
                train.size() <= 500 ? FinetuneMode::FEW_SHOT : FinetuneMode::FULL;
            const FinetuneHistory history = finetune(restored.model, head, train, valid,
                                                     config.finetune, mode, availability, ft_seed);
            fs::create_directories(out);
            write_finetune_history_csv(out / ("finetune_" + ft_task + "_" + ft_mode + ".csv"),
                                       history, config.config_hash());
            nlohmann::json meta = {{"kind", "finetune"},
                                   {"task", ft_task},
                                   {"mode", ft_mode},
                                   {"config_hash", config.config_hash()}};
            save_model_checkpoint(out / ("finetuned_" + ft_task + "_" + ft_mode + ".ckpt"),
                                  restored.model, meta, &head);
            std::cout << "finetuned on " << train.size() << " samples over "
                      << history.rows.size() << " epochs\n";
        } else if (*ev || *fair) {
            const bool fairness_mode = static_cast<bool>(*fair);
            const std::string cfg_path = fairness_mode ? fair_config : ev_config;
            const std::string ckpt = fairness_mode ? fair_checkpoint : ev_checkpoint;
            const std::string task = fairness_mode ? fair_task : ev_task;
            const std::string mode = fairness_mode ? fair_mode : ev_mode;
            const ExperimentConfig config = load_config(cfg_path);
            const StoredCohort cohort = load_cohort(config.data_dir);
            const SplitAssignment split = SplitAssignment::from_json(
                nlohmann::json::parse(read_text_file(fs::path(config.data_dir) / "split.json")));
            RestoredModel restored = restore_model_checkpoint(ckpt);
            if (!restored.head) throw MissingCheckpoint("checkpoint lacks a classifier head");
            const ModalityAvailability availability = availability_from_string(mode);

            std::vector<EvaluatedSample> test;
            for (size_t i : indices_in_split(cohort, split, Split::FT_TEST)) {
                if (cohort.evaluated[i].sample.label.task_id != task) continue;
                test.push_back(cohort.evaluated[i]);
            }
            if (test.empty()) throw TaskNotFound(task);
            const fs::path out = resolve_out_dir(config.out_dir);
            fs::create_directories(out);
            if (fairness_mode) {
                const PredictionSet preds =
                    predict_set(restored.model, *restored.head, test, availability);
                const FairnessReport report = fairness_report(preds);
                write_fairness_csv(out / ("fairness_" + task + "_" + mode + ".csv"), report, task,
                                   mode, config.config_hash());
                std::cout << "fairness grid written for " << task << " (" << mode << ")\n";
            } else {
                const std::vector<MetricRow> rows =
                    evaluate_run(restored.model, *restored.head, test, task, availability);
                write_metrics_csv(out / ("metrics_" + task + "_" + mode + ".csv"), rows,
                                  config.config_hash());
                for (const auto& r : rows)
                    std::cout << r.task << " " << r.mode << " " << r.metric << " = " << r.value
                              << "\n";
            }
        } else if (*sub) {
            const ExperimentConfig config = load_config(sub_config);
            const StoredCohort cohort = load_cohort(config.data_dir);
            const SplitAssignment split = SplitAssignment::from_json(
                nlohmann::json::parse(read_text_file(fs::path(config.data_dir) / "split.json")));
            RestoredModel restored = restore_model_checkpoint(sub_checkpoint);
            const ModalityAvailability availability = availability_from_string(sub_mode);

            std::vector<LabeledSample> train;
            std::vector<EvaluatedSample> test;
            for (size_t i : indices_in_split(cohort, split, Split::FT_TRAIN))
                if (cohort.labeled[i].label.task_id == sub_task)
                    train.push_back(cohort.labeled[i]);
            for (size_t i : indices_in_split(cohort, split, Split::FT_TEST))
                if (cohort.evaluated[i].sample.label.task_id == sub_task)
                    test.push_back(cohort.evaluated[i]);
            if (train.empty() || test.empty()) throw TaskNotFound(sub_task);

            std::vector<size_t> sizes;
            std::stringstream ss(sub_sizes);
            std::string tok;
            while (std::getline(ss, tok, ',')) sizes.push_back(std::stoul(tok));

            const SubsetHarnessResult result =
                subset_harness(restored.model, train, test, sizes, sub_seeds, config.finetune,
                               availability, config.seeds.front());
            const fs::path out = resolve_out_dir(config.out_dir);
            fs::create_directories(out);
            write_subset_summary_csv(out / ("subset_" + sub_task + "_" + sub_mode + ".csv"),
                                     result, sub_task, config.config_hash());
            std::cout << result.advisory << "\n";
            for (const auto& s : result.summaries)
                std::cout << "size " << s.size << ": mean auroc " << s.mean_auroc << " +- "
                          << (s.ci_hi - s.mean_auroc) << " (95% CI over " << s.n_seeds
                          << " seeds)\n";
        } else if (*gc) {
            // toy model sized for a fast, dense check
            ModelConfig mc;
            mc.embed_dim = 16;
            mc.enc_depth_oct = 1;
            mc.enc_depth_ir = 1;
            mc.n_heads = 2;
            mc.dec_dim = 8;
            mc.dec_depth = 0;
            mc.k_views = 2;
            GridSpec grid;
            grid.vol = {4, 1, 2};  // 8 tokens
            grid.img = {3, 2, 1};  // 6 tokens
            Model model(mc, grid, 7);

            PairDims dims{64, 16, 10, 48, 32};
            SignalSpec spec;
            Rng data_rng(11);
            const SyntheticPair sample =
                generate_synthetic_pair(spec, dims, data_rng, "P0", "S0", Eye::LEFT, "task");

            bool all_ok = true;
            for (const auto& [label, lambdas] :
                 std::vector<std::pair<std::string, std::array<double, 3>>>{
                     {"l_recon", {1, 0, 0}},
                     {"l_cross_relation", {0, 1, 0}},
                     {"l_consistency", {0, 0, 1}}}) {
                ModelConfig cfg = mc;
                cfg.lambda_recon = lambdas[0];
                cfg.lambda_cross = lambdas[1];
                cfg.lambda_consistency = lambdas[2];
                if (lambdas[2] > 0.0) {
                    // depth-0 decoders pin the consistency loss at zero;
                    // check that leg on a one-block decoder instead
                    cfg.enc_depth_oct = 2;
                    cfg.enc_depth_ir = 2;
                    cfg.dec_depth = 1;
                }
                Model check_model(cfg, grid, 7);
                Rng fwd_rng(23);
                const PretrainOutputs base =
                    forward_pretrain(check_model, sample.pair, fwd_rng);
                ForwardOptions opts;
                opts.frozen_dense = &base.dense_relations;
                auto build = [&]() {
                    Rng rng(23);
                    return pretrain_loss(check_model,
                                         forward_pretrain(check_model, sample.pair, rng, opts))
                        .total;
                };
                Rng pick_rng(31);
                const FdReport report = finite_difference_check(
                    build, check_model.params(), gc_eps, gc_tol, 3, pick_rng);
                std::cout << label << ": checked " << report.entries.size()
                          << " coords, max rel err " << report.max_rel_err << " -> "
                          << (report.ok() ? "OK" : "FAIL") << "\n";
                all_ok = all_ok && report.ok();
            }
            return all_ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
