#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ophmae/adaptation.hpp"
#include "ophmae/backbone.hpp"
#include "ophmae/data_pipeline.hpp"
#include "ophmae/evaluation.hpp"
#include "ophmae/objectives.hpp"
#include "ophmae/optim.hpp"

namespace ophmae {

struct PretrainConfig {
    int epochs = 50;
    int batch_size = 8;
    double base_lr = 1e-3;
    int warmup_steps = 40;
    double weight_decay = 0.05;
    int checkpoint_every_epochs = 1;

    nlohmann::json to_json() const;
    static PretrainConfig from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
    ModelConfig model;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    PairDims dims;
    std::string data_dir;
    std::string out_dir = "out";
    std::vector<std::string> tasks = {"planted_blob"};
    std::vector<uint64_t> seeds = {1};
    std::string mode = "dual";

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    // stable under key reordering: canonical (sorted-key) dump is hashed
    std::string config_hash() const;
    GridSpec grid_spec() const;
};

// honors the output-root override from the environment
std::filesystem::path resolve_out_dir(const std::string& configured);

struct StepLog {
    int step = 0;
    int epoch = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

struct PretrainResult {
    std::vector<StepLog> steps;
    int global_step = 0;
    double wall_seconds = 0.0;
    std::filesystem::path final_checkpoint;
};

// Epoch-driven masked pretraining with AdamW and cosine warmup. Writes one
// CSV row per step and a checkpoint every checkpoint_every_epochs epochs when
// out_dir is non-empty; resumes bit-identically from a checkpoint produced by
// the same config.
PretrainResult pretrain_loop(Model& model, const std::vector<PairedSample>& data,
                             const PretrainConfig& config, uint64_t seed,
                             const std::filesystem::path& out_dir, const std::string& config_hash,
                             const std::filesystem::path& resume_from = {});

// checkpoint io for a model (+ optional head), shared by the CLI verbs
void save_model_checkpoint(const std::filesystem::path& path, Model& model,
                           const nlohmann::json& extra_meta, ClassifierHead* head = nullptr,
                           AdamW* optimizer = nullptr);
struct RestoredModel {
    Model model;
    std::optional<ClassifierHead> head;
    nlohmann::json meta;
};
RestoredModel restore_model_checkpoint(const std::filesystem::path& path);

struct EvaluatedSample {
    LabeledSample sample;
    DemographicRecord demographics;
};

PredictionSet predict_set(const Model& model, const ClassifierHead& head,
                          const std::vector<EvaluatedSample>& samples,
                          const ModalityAvailability& availability);

struct MetricRow {
    std::string task;
    std::string mode;
    std::string metric;
    double value = 0.0;
};

std::vector<MetricRow> evaluate_run(const Model& model, const ClassifierHead& head,
                                    const std::vector<EvaluatedSample>& test_set,
                                    const std::string& task,
                                    const ModalityAvailability& availability);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows,
                       const std::string& config_hash);
void write_fairness_csv(const std::filesystem::path& path, const FairnessReport& report,
                        const std::string& task, const std::string& mode,
                        const std::string& config_hash);
void write_finetune_history_csv(const std::filesystem::path& path, const FinetuneHistory& history,
                                const std::string& config_hash);

struct SubsetRun {
    size_t size = 0;
    uint64_t seed = 0;
    double auroc = 0.0;
};

struct SubsetSizeSummary {
    size_t size = 0;
    int n_seeds = 0;
    double mean_auroc = 0.0;
    double sd = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double ci_width() const { return ci_hi - ci_lo; }
};

struct SubsetHarnessResult {
    std::vector<SubsetRun> runs;
    std::vector<SubsetSizeSummary> summaries;  // one per requested size
    std::string advisory;                      // monotone-degradation note, informational
};

// Fine-tunes a fresh head per (size, seed) on a subset of train (model
// parameters restored between runs), evaluates AUROC on the fixed test set,
// and aggregates mean with a 95% normal-approximation CI per size.
SubsetHarnessResult subset_harness(Model& model, const std::vector<LabeledSample>& train,
                                   const std::vector<EvaluatedSample>& test,
                                   const std::vector<size_t>& sizes, int n_seeds,
                                   const FinetuneConfig& config,
                                   const ModalityAvailability& availability, uint64_t base_seed);

void write_subset_summary_csv(const std::filesystem::path& path, const SubsetHarnessResult& result,
                              const std::string& task, const std::string& config_hash);

std::string version_tag();

}  // namespace ophmae
