#include "ophmae/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "ophmae/io.hpp"
#include "ophmae/parallel.hpp"

namespace ophmae {

using ad::Mat;
using ad::Var;

std::string version_tag() { return "ophmae-0.1.0"; }

nlohmann::json PretrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"base_lr", base_lr},
            {"warmup_steps", warmup_steps},
            {"weight_decay", weight_decay},
            {"checkpoint_every_epochs", checkpoint_every_epochs}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
    PretrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.checkpoint_every_epochs = j.value("checkpoint_every_epochs", c.checkpoint_every_epochs);
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["model"] = model.to_json();
    j["pretrain"] = pretrain.to_json();
    j["finetune"] = finetune.to_json();
    j["dims"] = {{"vol_h", dims.vol_h},
                 {"vol_w", dims.vol_w},
                 {"vol_d", dims.vol_d},
                 {"img_h", dims.img_h},
                 {"img_w", dims.img_w}};
    j["data_dir"] = data_dir;
    j["out_dir"] = out_dir;
    j["tasks"] = tasks;
    j["seeds"] = seeds;
    j["mode"] = mode;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("pretrain")) c.pretrain = PretrainConfig::from_json(j.at("pretrain"));
    if (j.contains("finetune")) c.finetune = FinetuneConfig::from_json(j.at("finetune"));
    if (j.contains("dims")) {
        const auto& d = j.at("dims");
        c.dims.vol_h = d.value("vol_h", c.dims.vol_h);
        c.dims.vol_w = d.value("vol_w", c.dims.vol_w);
        c.dims.vol_d = d.value("vol_d", c.dims.vol_d);
        c.dims.img_h = d.value("img_h", c.dims.img_h);
        c.dims.img_w = d.value("img_w", c.dims.img_w);
    }
    c.data_dir = j.value("data_dir", c.data_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.tasks = j.value("tasks", c.tasks);
    c.seeds = j.value("seeds", c.seeds);
    c.mode = j.value("mode", c.mode);
    return c;
}

std::string ExperimentConfig::config_hash() const {
    // nlohmann keeps object keys sorted, so dump() is canonical
    const std::string text = to_json().dump();
    return to_hex(fnv1a64(text.data(), text.size()));
}

GridSpec ExperimentConfig::grid_spec() const {
    GridSpec g;
    g.vol = {dims.vol_h / 16, dims.vol_w / 16, dims.vol_d / 5};
    g.img = {dims.img_h / 16, dims.img_w / 16, 1};
    return g;
}

std::filesystem::path resolve_out_dir(const std::string& configured) {
    if (const char* root = std::getenv("OPHMAE_OUT_ROOT"))
        return std::filesystem::path(root) / configured;
    return configured;
}

namespace {

uint64_t sample_stream_seed(uint64_t run_seed, int global_step, int batch_index) {
    const uint64_t mixed = Rng::splitmix64(run_seed ^ 0x6f7068616d6165ULL);
    return Rng::splitmix64(mixed ^ (static_cast<uint64_t>(global_step) * 4096ULL +
                                    static_cast<uint64_t>(batch_index)));
}

std::vector<std::pair<std::string, Mat*>> param_blobs(Model& model, AdamW* optimizer) {
    std::vector<std::pair<std::string, Mat*>> blobs;
    for (const auto& [name, var] : model.params().ordered())
        blobs.emplace_back(name, &var->value);
    if (optimizer)
        for (auto& [name, mat] : optimizer->state_blobs()) blobs.emplace_back(name, mat);
    return blobs;
}

void load_params_into(const std::map<std::string, Mat>& blobs, ad::ParamStore& store,
                      const std::string& what) {
    for (const auto& [name, var] : store.ordered()) {
        const auto it = blobs.find(name);
        if (it == blobs.end()) throw CheckpointCorrupt("missing blob " + name + " in " + what);
        if (it->second.rows() != var->rows() || it->second.cols() != var->cols())
            throw CheckpointCorrupt("blob shape mismatch for " + name);
        var->value = it->second;
    }
}

}  // namespace

PretrainResult pretrain_loop(Model& model, const std::vector<PairedSample>& data,
                             const PretrainConfig& config, uint64_t seed,
                             const std::filesystem::path& out_dir, const std::string& config_hash,
                             const std::filesystem::path& resume_from) {
    if (data.empty()) throw EmptyDataset("pretraining requires samples");
    const auto t0 = std::chrono::steady_clock::now();

    const int n = static_cast<int>(data.size());
    const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const int total_steps = std::max(2, config.epochs * steps_per_epoch);
    const int warmup = std::min(config.warmup_steps, total_steps - 1);

    std::vector<std::pair<std::string, Var>> trainable;
    for (const auto& [name, var] : model.params().ordered()) trainable.emplace_back(name, var);
    AdamW optimizer(std::move(trainable), {.weight_decay = config.weight_decay});

    Rng shuffle_rng(Rng::splitmix64(seed ^ 0x5655f0f1ULL));
    int start_epoch = 0;
    int global_step = 0;

    if (!resume_from.empty()) {
        LoadedCheckpoint ckpt = load_checkpoint(resume_from);
        load_params_into(ckpt.blobs, model.params(), resume_from.string());
        for (auto& [name, mat] : optimizer.state_blobs()) {
            const auto it = ckpt.blobs.find(name);
            if (it == ckpt.blobs.end())
                throw CheckpointCorrupt("missing optimizer blob " + name);
            *mat = it->second;
        }
        optimizer.set_step_count(ckpt.meta.at("opt_t").get<int64_t>());
        global_step = ckpt.meta.at("step").get<int>();
        start_epoch = ckpt.meta.at("epoch").get<int>() + 1;
        shuffle_rng.deserialize(ckpt.meta.at("rng").get<std::string>());
    }

    PretrainResult result;
    std::ofstream log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto log_path = out_dir / "pretrain_log.csv";
        const bool fresh = resume_from.empty();
        log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (fresh)
            log << "step,epoch,l_recon,l_cross_relation,l_consistency,l_total,lr,config_hash\n";
    }

    std::vector<int> order(static_cast<size_t>(n));

    for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
        // identity before every shuffle: the per-epoch permutation is then a
        // pure function of the (checkpointed) rng state, which resume restores
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        shuffle_rng.shuffle(order);
        for (int at = 0; at < n; at += config.batch_size) {
            const int bsz = std::min(config.batch_size, n - at);
            const double lr =
                cosine_warmup_lr(std::min(global_step, total_steps), warmup, total_steps,
                                 config.base_lr);

            std::vector<std::unordered_map<const ad::Node*, Mat>> grads(
                static_cast<size_t>(bsz));
            std::vector<LossBreakdown> breakdowns(static_cast<size_t>(bsz));
            parallel_batch(bsz, [&](int bi) {
                Rng sample_rng(sample_stream_seed(seed, global_step, bi));
                const PairedSample& pair = data[static_cast<size_t>(order[static_cast<size_t>(at + bi)])];
                PretrainOutputs outputs = forward_pretrain(model, pair, sample_rng);
                PretrainLossGraph loss = pretrain_loss(model, outputs);
                breakdowns[static_cast<size_t>(bi)] = loss.breakdown;
                grads[static_cast<size_t>(bi)] = ad::backward(loss.total);
            });

            const double inv = 1.0 / static_cast<double>(bsz);
            std::unordered_map<const ad::Node*, Mat> merged;
            for (const auto& g : grads)
                for (const auto& [node, grad] : g) {
                    auto it = merged.find(node);
                    if (it == merged.end()) merged.emplace(node, grad * inv);
                    else it->second += grad * inv;
                }
            optimizer.step(merged, lr);

            LossBreakdown mean{};
            for (const auto& b : breakdowns) {
                mean.l_recon += b.l_recon * inv;
                mean.l_cross_relation += b.l_cross_relation * inv;
                mean.l_consistency += b.l_consistency * inv;
                mean.l_total += b.l_total * inv;
            }
            mean.lambda_recon = model.config().lambda_recon;
            mean.lambda_cross = model.config().lambda_cross;
            mean.lambda_consistency = model.config().lambda_consistency;

            ++global_step;
            result.steps.push_back({global_step, epoch, mean, lr});
            if (log.is_open())
                log << global_step << ',' << epoch << ',' << mean.l_recon << ','
                    << mean.l_cross_relation << ',' << mean.l_consistency << ',' << mean.l_total
                    << ',' << lr << ',' << config_hash << '\n';
        }

        const bool last = epoch + 1 == config.epochs;
        if (!out_dir.empty() &&
            (last || (epoch + 1) % std::max(1, config.checkpoint_every_epochs) == 0)) {
            nlohmann::json meta;
            meta["version"] = version_tag();
            meta["kind"] = "pretrain";
            meta["model_config"] = model.config().to_json();
            meta["grid"] = model.grids().to_json();
            meta["step"] = global_step;
            meta["epoch"] = epoch;
            meta["opt_t"] = optimizer.step_count();
            meta["rng"] = shuffle_rng.serialize();
            meta["config_hash"] = config_hash;
            const auto path = out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".ckpt");
            save_checkpoint(path, meta, param_blobs(model, &optimizer));
            result.final_checkpoint = path;
            std::filesystem::copy_file(path, out_dir / "checkpoint_latest.ckpt",
                                       std::filesystem::copy_options::overwrite_existing);
        }
    }

    result.global_step = global_step;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

void save_model_checkpoint(const std::filesystem::path& path, Model& model,
                           const nlohmann::json& extra_meta, ClassifierHead* head,
                           AdamW* optimizer) {
    nlohmann::json meta = extra_meta;
    meta["version"] = version_tag();
    meta["model_config"] = model.config().to_json();
    meta["grid"] = model.grids().to_json();
    if (head) {
        meta["head"] = {{"feature_dim", head->feature_dim}, {"num_classes", head->num_classes}};
    }
    auto blobs = param_blobs(model, optimizer);
    if (head)
        for (const auto& [name, var] : head->params.ordered())
            blobs.emplace_back(name, &var->value);
    save_checkpoint(path, meta, blobs);
}

RestoredModel restore_model_checkpoint(const std::filesystem::path& path) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    const ModelConfig config = ModelConfig::from_json(ckpt.meta.at("model_config"));
    const GridSpec grid = GridSpec::from_json(ckpt.meta.at("grid"));
    RestoredModel out{Model(config, grid, 0), std::nullopt, ckpt.meta};
    load_params_into(ckpt.blobs, out.model.params(), path.string());
    if (ckpt.meta.contains("head")) {
        const int fdim = ckpt.meta["head"].at("feature_dim").get<int>();
        const int ncls = ckpt.meta["head"].at("num_classes").get<int>();
        out.head = attach_head(fdim, ncls, 0);
        load_params_into(ckpt.blobs, out.head->params, path.string());
    }
    return out;
}

PredictionSet predict_set(const Model& model, const ClassifierHead& head,
                          const std::vector<EvaluatedSample>& samples,
                          const ModalityAvailability& availability) {
    if (samples.empty()) throw EmptyDataset("no samples to predict");
    PredictionSet set;
    set.num_classes = head.num_classes;
    set.records.resize(samples.size());
    parallel_batch(static_cast<int>(samples.size()), [&](int i) {
        const auto& s = samples[static_cast<size_t>(i)];
        const Mat probs = predict(model, head, s.sample.pair, availability);
        PredictionRecord rec;
        rec.scores.assign(probs.data(), probs.data() + probs.size());
        rec.label = s.sample.label.label;
        rec.patient_id = s.sample.pair.oct.patient_id;
        rec.demographics = s.demographics;
        set.records[static_cast<size_t>(i)] = std::move(rec);
    });
    return set;
}

std::vector<MetricRow> evaluate_run(const Model& model, const ClassifierHead& head,
                                    const std::vector<EvaluatedSample>& test_set,
                                    const std::string& task,
                                    const ModalityAvailability& availability) {
    const PredictionSet preds = predict_set(model, head, test_set, availability);
    std::vector<MetricRow> rows;
    for (const auto& [metric, value] : evaluate_predictions(preds))
        rows.push_back({task, to_string(availability), metric, value});
    return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows,
                       const std::string& config_hash) {
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows)
        body.push_back({r.task, r.mode, r.metric, std::to_string(r.value), config_hash});
    write_csv(path, {"task", "mode", "metric", "value", "config_hash"}, body);
}

void write_fairness_csv(const std::filesystem::path& path, const FairnessReport& report,
                        const std::string& task, const std::string& mode,
                        const std::string& config_hash) {
    std::vector<std::vector<std::string>> body;
    auto fmt = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("NA");
    };
    for (const auto& [attr, metrics] : report.grid)
        for (const auto& [metric, cell] : metrics)
            body.push_back({task, mode, to_string(attr), to_string(metric),
                            fmt(cell.protected_value), fmt(cell.privileged_value),
                            cell.ratio ? std::to_string(*cell.ratio) : "UNDEFINED",
                            to_string(cell.status), config_hash});
    write_csv(path,
              {"task", "mode", "attribute", "metric", "protected", "privileged", "ratio",
               "status", "config_hash"},
              body);
}

void write_finetune_history_csv(const std::filesystem::path& path, const FinetuneHistory& history,
                                const std::string& config_hash) {
    std::vector<std::vector<std::string>> body;
    for (const auto& r : history.rows)
        body.push_back({std::to_string(r.epoch), std::to_string(r.phase),
                        std::to_string(r.train_loss),
                        r.val_auroc ? std::to_string(*r.val_auroc) : "NA", std::to_string(r.lr),
                        config_hash});
    write_csv(path, {"epoch", "phase", "train_loss", "val_auroc", "lr", "config_hash"}, body);
}

SubsetHarnessResult subset_harness(Model& model, const std::vector<LabeledSample>& train,
                                   const std::vector<EvaluatedSample>& test,
                                   const std::vector<size_t>& sizes, int n_seeds,
                                   const FinetuneConfig& config,
                                   const ModalityAvailability& availability, uint64_t base_seed) {
    if (n_seeds < 1) throw InvalidConfig("need at least one seed");
    for (size_t size : sizes)
        if (size > train.size())
            throw SubsetTooLarge("subset " + std::to_string(size) + " exceeds train size " +
                                 std::to_string(train.size()));

    // snapshot so each run starts from the same pretrained state
    std::vector<Mat> snapshot;
    for (const auto& [name, var] : model.params().ordered()) snapshot.push_back(var->value);
    auto restore = [&]() {
        size_t i = 0;
        for (const auto& [name, var] : model.params().ordered()) var->value = snapshot[i++];
    };

    SubsetHarnessResult result;
    for (size_t size : sizes) {
        std::vector<double> aurocs;
        for (int s = 0; s < n_seeds; ++s) {
            const uint64_t seed = Rng::splitmix64(base_seed ^ (size * 131 + static_cast<size_t>(s)));
            const std::vector<size_t> picked = subset_sample(train.size(), size, seed);
            std::vector<LabeledSample> subset;
            subset.reserve(picked.size());
            for (size_t idx : picked) subset.push_back(train[idx]);

            restore();
            ClassifierHead head = attach_head(availability.dual() ? 2 * model.config().embed_dim
                                                                  : model.config().embed_dim,
                                              config.num_classes, seed);
            finetune(model, head, subset, {}, config, FinetuneMode::FEW_SHOT, availability, seed);
            const PredictionSet preds = predict_set(model, head, test, availability);
            const double a = auroc(preds.positive_scores(), preds.labels());
            aurocs.push_back(a);
            result.runs.push_back({size, seed, a});
        }
        SubsetSizeSummary summary;
        summary.size = size;
        summary.n_seeds = n_seeds;
        double mean = 0.0;
        for (double a : aurocs) mean += a;
        mean /= static_cast<double>(aurocs.size());
        double var = 0.0;
        for (double a : aurocs) var += (a - mean) * (a - mean);
        const double sd = aurocs.size() > 1
                              ? std::sqrt(var / static_cast<double>(aurocs.size() - 1))
                              : 0.0;
        // 95% CI from the seed spread: mean +/- 1.96 * sd / sqrt(n)
        const double half = 1.96 * sd / std::sqrt(static_cast<double>(aurocs.size()));
        summary.mean_auroc = mean;
        summary.sd = sd;
        summary.ci_lo = mean - half;
        summary.ci_hi = mean + half;
        result.summaries.push_back(summary);
    }
    restore();

    std::string advisory = "auroc by size:";
    for (const auto& s : result.summaries)
        advisory += " " + std::to_string(s.size) + "->" + std::to_string(s.mean_auroc);
    bool monotone = true;
    for (size_t i = 1; i < result.summaries.size(); ++i)
        if (result.summaries[i - 1].size > result.summaries[i].size &&
            result.summaries[i - 1].mean_auroc < result.summaries[i].mean_auroc)
            monotone = false;
    advisory += monotone ? " (no degradation anomaly)" : " (larger subsets not uniformly better)";
    result.advisory = advisory;
    return result;
}

void write_subset_summary_csv(const std::filesystem::path& path, const SubsetHarnessResult& result,
                              const std::string& task, const std::string& config_hash) {
    std::vector<std::vector<std::string>> body;
    for (const auto& s : result.summaries)
        body.push_back({task, std::to_string(s.size), std::to_string(s.n_seeds),
                        std::to_string(s.mean_auroc), std::to_string(s.sd),
                        std::to_string(s.ci_lo), std::to_string(s.ci_hi),
                        std::to_string(s.ci_width()), config_hash});
    write_csv(path,
              {"task", "size", "n_seeds", "mean_auroc", "sd", "ci_lo", "ci_hi", "ci_width",
               "config_hash"},
              body);
}

}  // namespace ophmae
