#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ophmae/core_types.hpp"

namespace ophmae {

struct ConfusionCounts {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    long total() const { return tp + fp + tn + fn; }
};

// threshold rule: score >= threshold predicts positive
ConfusionCounts confusion_at_threshold(const std::vector<double>& scores,
                                       const std::vector<int>& labels, double threshold);

// tie-corrected rank statistic (ties count 1/2)
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// average precision (stepwise integration over distinct thresholds)
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct BasicMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // set when the corresponding 0/0 convention fired
    bool degenerate_precision = false;
    bool degenerate_recall = false;
    bool degenerate_f1 = false;
};
BasicMetrics classification_metrics(const ConfusionCounts& cc);

double mcc(const ConfusionCounts& cc);

double cohen_kappa(const ConfusionCounts& cc);
// multiclass confusion matrix: rows = true class, cols = predicted class
double cohen_kappa(const Eigen::MatrixXd& confusion);

double macro_average(const std::vector<double>& per_class);

struct PredictionRecord {
    std::vector<double> scores;  // one per class
    int label = 0;
    std::string patient_id;
    DemographicRecord demographics;
};

struct PredictionSet {
    std::vector<PredictionRecord> records;
    int num_classes = 2;

    std::vector<double> positive_scores() const;  // class-1 probability (binary)
    std::vector<int> labels() const;
};

// named metric rows for report emission; multiclass tasks use macro averaging
std::vector<std::pair<std::string, double>> evaluate_predictions(const PredictionSet& preds,
                                                                 double threshold = 0.5);

// ---- subgroup fairness ----

enum class FairnessMetric { PPV, FPR, TPR, NPV, FN_FP, FNR, ACC, AUROC };
std::string to_string(FairnessMetric m);
const std::vector<FairnessMetric>& all_fairness_metrics();

enum class FairnessAttribute { AGE, SEX, RACE };
std::string to_string(FairnessAttribute a);

enum class CellStatus { OK, UNDEFINED, EMPTY_GROUP };
std::string to_string(CellStatus s);

struct FairnessCell {
    std::optional<double> protected_value;
    std::optional<double> privileged_value;
    std::optional<double> ratio;  // protected / privileged when defined
    CellStatus status = CellStatus::OK;
};

// metric on the protected subset divided by metric on the privileged subset;
// binary predictions at threshold 0.5
FairnessCell subgroup_ratio(FairnessMetric metric, const PredictionSet& preds,
                            const std::function<bool(const DemographicRecord&)>& is_protected,
                            const std::function<bool(const DemographicRecord&)>& is_privileged,
                            double threshold = 0.5);

struct FairnessReport {
    // attribute -> metric -> cell; group definitions: age >=75 vs 45-64,
    // female vs male, NHB vs NHW; UNKNOWN rows excluded
    std::map<FairnessAttribute, std::map<FairnessMetric, FairnessCell>> grid;
};

FairnessReport fairness_report(const PredictionSet& preds, double threshold = 0.5);

}  // namespace ophmae
