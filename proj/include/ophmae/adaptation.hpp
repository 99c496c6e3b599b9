#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ophmae/backbone.hpp"
#include "ophmae/core_types.hpp"
#include "ophmae/optim.hpp"

namespace ophmae {

struct ModalityAvailability {
    bool has_oct = true;
    bool has_enface = true;

    void validate() const {
        if (!has_oct && !has_enface) throw MissingModality("at least one modality required");
    }
    bool dual() const { return has_oct && has_enface; }
};

ModalityAvailability availability_from_string(const std::string& mode);  // dual|oct|enface
std::string to_string(const ModalityAvailability& a);

struct FinetuneConfig {
    int num_classes = 2;
    int phase1_epochs = 3;
    int phase2_epochs = 8;
    double base_lr = 1e-3;
    int warmup_steps = 20;
    int total_steps = 0;  // 0 -> derived from the dataset and epoch counts
    double weight_decay = 0.05;
    int batch_size = 8;

    void validate() const;
    nlohmann::json to_json() const;
    static FinetuneConfig from_json(const nlohmann::json& j);
};

enum class FinetuneMode { FEW_SHOT, FULL };

// linear classifier head over pooled features
struct ClassifierHead {
    ad::ParamStore params;
    ad::Var w;  // feature_dim x num_classes
    ad::Var b;  // 1 x num_classes
    int feature_dim = 0;
    int num_classes = 0;
};

ClassifierHead attach_head(int feature_dim, int num_classes, uint64_t seed);

// linear warmup then cosine annealing to zero
double cosine_warmup_lr(int step, int warmup_steps, int total_steps, double base_lr);

// Pooled feature vector for the routed forward pass. Dual mode concatenates
// the mean-pooled fused streams (1 x 2C); single mode runs only that
// modality's encoder (1 x C) and never touches the other input.
ad::Var forward_features(const Model& model, const PairedSample& sample,
                         const ModalityAvailability& availability);
ad::Mat forward_inference(const Model& model, const PairedSample& sample,
                          const ModalityAvailability& availability);

// softmax class probabilities
ad::Mat predict(const Model& model, const ClassifierHead& head, const PairedSample& sample,
                const ModalityAvailability& availability);

struct LabeledSample {
    PairedSample pair;
    LabelRecord label;
};

struct FinetuneHistoryRow {
    int epoch = 0;
    int phase = 0;
    double train_loss = 0.0;
    std::optional<double> val_auroc;
    double lr = 0.0;
};

struct FinetuneHistory {
    std::vector<FinetuneHistoryRow> rows;
};

// Two-phase fine-tuning with cross-entropy. Phase 1 updates only the head
// (encoders and fusion bit-identical before/after); phase 2 updates head,
// encoders and fusion with AdamW + cosine warmup. FEW_SHOT always runs phase
// 1; FULL runs it only when phase1_epochs > 0.
FinetuneHistory finetune(Model& model, ClassifierHead& head,
                         const std::vector<LabeledSample>& train,
                         const std::vector<LabeledSample>& valid, const FinetuneConfig& config,
                         FinetuneMode mode, const ModalityAvailability& availability,
                         uint64_t seed);

}  // namespace ophmae
