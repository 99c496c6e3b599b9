#include "ophmae/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ophmae/evaluation.hpp"
#include "ophmae/parallel.hpp"

namespace ophmae {

using ad::Mat;
using ad::Var;

ModalityAvailability availability_from_string(const std::string& mode) {
    if (mode == "dual") return {true, true};
    if (mode == "oct") return {true, false};
    if (mode == "enface") return {false, true};
    throw InvalidConfig("mode must be dual|oct|enface, got " + mode);
}

std::string to_string(const ModalityAvailability& a) {
    if (a.dual()) return "dual";
    return a.has_oct ? "oct" : "enface";
}

void FinetuneConfig::validate() const {
    if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
    if (phase1_epochs < 0 || phase2_epochs < 0) throw InvalidConfig("epoch counts must be >= 0");
    if (base_lr <= 0.0) throw InvalidConfig("base_lr must be positive");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be >= 0");
    if (warmup_steps < 0) throw InvalidSchedule("warmup_steps must be >= 0");
    if (total_steps > 0 && warmup_steps >= total_steps)
        throw InvalidSchedule("warmup_steps must be < total_steps");
}

nlohmann::json FinetuneConfig::to_json() const {
    return {{"num_classes", num_classes},   {"phase1_epochs", phase1_epochs},
            {"phase2_epochs", phase2_epochs}, {"base_lr", base_lr},
            {"warmup_steps", warmup_steps}, {"total_steps", total_steps},
            {"weight_decay", weight_decay}, {"batch_size", batch_size}};
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
    FinetuneConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.phase1_epochs = j.value("phase1_epochs", c.phase1_epochs);
    c.phase2_epochs = j.value("phase2_epochs", c.phase2_epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    return c;
}

ClassifierHead attach_head(int feature_dim, int num_classes, uint64_t seed) {
    if (num_classes < 2) throw InvalidConfig("head needs >= 2 classes");
    Rng rng(seed);
    ClassifierHead head;
    head.feature_dim = feature_dim;
    head.num_classes = num_classes;
    Mat w(feature_dim, num_classes);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.02 * rng.normal();
    head.w = head.params.add("head/w", std::move(w));
    head.b = head.params.add("head/b", Mat::Zero(1, num_classes));
    return head;
}

double cosine_warmup_lr(int step, int warmup_steps, int total_steps, double base_lr) {
    if (warmup_steps >= total_steps) throw InvalidSchedule("warmup must end before total");
    if (step < 0 || step > total_steps) throw InvalidSchedule("step outside [0, total_steps]");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

std::vector<int> iota_ids(int n) {
    std::vector<int> ids(static_cast<size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

}  // namespace

Var forward_features(const Model& model, const PairedSample& sample,
                     const ModalityAvailability& availability) {
    availability.validate();
    if (availability.dual()) {
        const PatchSet oct_set = partition_volume(sample.oct, PatchSpec::volume());
        const PatchSet img_set = partition_image(sample.enface, PatchSpec::image());
        Var oct_tokens = model.embed(Modality::OCT, oct_set.patches,
                                     iota_ids(oct_set.grid.count()));
        Var ir_tokens = model.embed(Modality::ENFACE, img_set.patches,
                                    iota_ids(img_set.grid.count()));
        Model::DualOut out = model.encode_dual(oct_tokens, ir_tokens);
        return ad::concat_cols({ad::mean_rows(out.z_oct), ad::mean_rows(out.z_ir)});
    }
    if (availability.has_oct) {
        const PatchSet oct_set = partition_volume(sample.oct, PatchSpec::volume());
        Var tokens = model.embed(Modality::OCT, oct_set.patches, iota_ids(oct_set.grid.count()));
        return ad::mean_rows(model.encode(Modality::OCT, tokens));
    }
    const PatchSet img_set = partition_image(sample.enface, PatchSpec::image());
    Var tokens = model.embed(Modality::ENFACE, img_set.patches, iota_ids(img_set.grid.count()));
    return ad::mean_rows(model.encode(Modality::ENFACE, tokens));
}

Mat forward_inference(const Model& model, const PairedSample& sample,
                      const ModalityAvailability& availability) {
    return forward_features(model, sample, availability)->value;
}

Mat predict(const Model& model, const ClassifierHead& head, const PairedSample& sample,
            const ModalityAvailability& availability) {
    const Mat features = forward_inference(model, sample, availability);
    Eigen::RowVectorXd logits;
    if (features.cols() == head.feature_dim) {
        logits = features * head.w->value + head.b->value;
    } else if (2 * features.cols() == head.feature_dim && !availability.dual()) {
        // dual-trained head on a single-modality route: the head weight rows
        // split into [oct block; enface block]; the available stream's block
        // digests the pooled features directly, no zero padding
        const Eigen::Index c = features.cols();
        const auto block = head.w->value.middleRows(availability.has_oct ? 0 : c, c);
        logits = features * block + head.b->value;
    } else {
        throw DimMismatch("head expects " + std::to_string(head.feature_dim) + " features, got " +
                          std::to_string(features.cols()));
    }
    const double mx = logits.maxCoeff();
    Eigen::RowVectorXd e = (logits.array() - mx).exp();
    return e / e.sum();
}

namespace {

struct Batch {
    std::vector<int> sample_ids;
};

std::vector<Batch> make_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order = iota_ids(n);
    rng.shuffle(order);
    std::vector<Batch> batches;
    for (int at = 0; at < n; at += batch_size) {
        Batch b;
        for (int i = at; i < std::min(n, at + batch_size); ++i)
            b.sample_ids.push_back(order[static_cast<size_t>(i)]);
        batches.push_back(std::move(b));
    }
    return batches;
}

std::optional<double> validation_auroc(const Model& model, const ClassifierHead& head,
                                       const std::vector<LabeledSample>& valid,
                                       const ModalityAvailability& availability) {
    if (valid.empty()) return std::nullopt;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : valid) {
        const Mat probs = predict(model, head, s.pair, availability);
        scores.push_back(probs(0, std::min<Eigen::Index>(1, probs.cols() - 1)));
        labels.push_back(s.label.label);
    }
    const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
    const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
    if (!has_pos || !has_neg) return std::nullopt;
    return auroc(scores, labels);
}

// one phase of optimization; build_logits(i) returns the (graph) logits for
// train sample i
template <typename LogitsFn>
void run_phase(int phase, int epochs, const std::vector<LabeledSample>& train,
               const FinetuneConfig& config, AdamW& optimizer, const LogitsFn& build_logits,
               const std::function<std::optional<double>()>& val_fn, Rng& rng,
               FinetuneHistory& history) {
    const int n = static_cast<int>(train.size());
    const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const int total = config.total_steps > 0 ? config.total_steps
                                             : std::max(2, epochs * steps_per_epoch);
    const int warmup = std::min(config.warmup_steps, total - 1);
    int step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double loss_sum = 0.0;
        long loss_count = 0;
        double lr = 0.0;
        for (const Batch& batch : make_batches(n, config.batch_size, rng)) {
            lr = cosine_warmup_lr(std::min(step, total), warmup, total, config.base_lr);
            const int bsz = static_cast<int>(batch.sample_ids.size());
            std::vector<std::unordered_map<const ad::Node*, Mat>> grads(
                static_cast<size_t>(bsz));
            std::vector<double> losses(static_cast<size_t>(bsz), 0.0);
            parallel_batch(bsz, [&](int bi) {
                const int si = batch.sample_ids[static_cast<size_t>(bi)];
                Var logits = build_logits(si);
                Var loss = ad::cross_entropy_logits(logits, train[static_cast<size_t>(si)].label.label);
                losses[static_cast<size_t>(bi)] = loss->value(0, 0);
                grads[static_cast<size_t>(bi)] = ad::backward(loss);
            });
            // fixed-order reduction keeps results independent of worker count
            const double inv_bsz = 1.0 / static_cast<double>(bsz);
            std::unordered_map<const ad::Node*, Mat> merged;
            for (const auto& g : grads)
                for (const auto& [node, grad] : g) {
                    auto it = merged.find(node);
                    if (it == merged.end()) merged.emplace(node, grad * inv_bsz);
                    else it->second += grad * inv_bsz;
                }
            optimizer.step(merged, lr);
            for (double l : losses) loss_sum += l;
            loss_count += bsz;
            ++step;
        }
        FinetuneHistoryRow row;
        row.epoch = epoch;
        row.phase = phase;
        row.train_loss = loss_count == 0 ? 0.0 : loss_sum / static_cast<double>(loss_count);
        row.val_auroc = val_fn();
        row.lr = lr;
        history.rows.push_back(row);
    }
}

}  // namespace

FinetuneHistory finetune(Model& model, ClassifierHead& head,
                         const std::vector<LabeledSample>& train,
                         const std::vector<LabeledSample>& valid, const FinetuneConfig& config,
                         FinetuneMode mode, const ModalityAvailability& availability,
                         uint64_t seed) {
    config.validate();
    availability.validate();
    if (train.empty()) throw EmptyDataset("finetune requires training samples");
    for (const auto& s : train) {
        s.label.validate();
        if (s.label.num_classes != config.num_classes)
            throw LabelOutOfRange("sample class count differs from config");
    }

    FinetuneHistory history;
    Rng rng(seed);
    auto val_fn = [&]() { return validation_auroc(model, head, valid, availability); };

    // phase 1: head only, encoders and fusion strictly frozen. Features are
    // computed once and cached; with the backbone frozen this is exact.
    const bool run_phase1 = mode == FinetuneMode::FEW_SHOT ? true : config.phase1_epochs > 0;
    if (run_phase1 && config.phase1_epochs > 0) {
        std::vector<Mat> features(train.size());
        parallel_batch(static_cast<int>(train.size()), [&](int i) {
            features[static_cast<size_t>(i)] =
                forward_inference(model, train[static_cast<size_t>(i)].pair, availability);
        });
        AdamW optimizer({{"head/w", head.w}, {"head/b", head.b}},
                        {.weight_decay = config.weight_decay});
        auto build_logits = [&](int si) {
            return ad::add_rowvec(
                ad::matmul(ad::constant(features[static_cast<size_t>(si)]), head.w), head.b);
        };
        run_phase(1, config.phase1_epochs, train, config, optimizer, build_logits, val_fn, rng,
                  history);
    }

    // phase 2: end-to-end over the inference path (encoders + fusion + head)
    if (config.phase2_epochs > 0) {
        std::vector<std::pair<std::string, Var>> trainable;
        for (const auto& name : model.inference_path_param_names())
            trainable.emplace_back(name, model.params().get(name));
        trainable.emplace_back("head/w", head.w);
        trainable.emplace_back("head/b", head.b);
        AdamW optimizer(std::move(trainable), {.weight_decay = config.weight_decay});
        auto build_logits = [&](int si) {
            Var feat = forward_features(model, train[static_cast<size_t>(si)].pair, availability);
            return ad::add_rowvec(ad::matmul(feat, head.w), head.b);
        };
        run_phase(2, config.phase2_epochs, train, config, optimizer, build_logits, val_fn, rng,
                  history);
    }
    return history;
}

}  // namespace ophmae
