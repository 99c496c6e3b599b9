#include "ophmae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ophmae {

namespace {

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeMismatch("scores/labels size mismatch");
    for (int l : labels)
        if (l != 0 && l != 1) throw NonBinaryLabels("label " + std::to_string(l));
}

}  // namespace

ConfusionCounts confusion_at_threshold(const std::vector<double>& scores,
                                       const std::vector<int>& labels, double threshold) {
    check_binary(scores, labels);
    ConfusionCounts cc;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred_pos = scores[i] >= threshold;  // ties classify positive
        if (labels[i] == 1) (pred_pos ? cc.tp : cc.fn)++;
        else (pred_pos ? cc.fp : cc.tn)++;
    }
    return cc;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels);
    const long n_pos = std::count(labels.begin(), labels.end(), 1);
    const long n_neg = static_cast<long>(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateLabels("need both classes for AUROC");

    // average ranks, ties shared
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t s = 0; s < labels.size(); ++s)
        if (labels[s] == 1) rank_sum_pos += rank[s];
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels);
    const long n_pos = std::count(labels.begin(), labels.end(), 1);
    if (n_pos == 0) throw NoPositives("AUPRC requires at least one positive");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

    // step integration over distinct thresholds: sum (dRecall * precision)
    double ap = 0.0;
    double prev_recall = 0.0;
    long tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) ++tp;
            else ++fp;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return ap;
}

BasicMetrics classification_metrics(const ConfusionCounts& cc) {
    BasicMetrics m;
    const long total = cc.total();
    m.accuracy = total == 0 ? 0.0 : static_cast<double>(cc.tp + cc.tn) / static_cast<double>(total);
    if (cc.tp + cc.fp == 0) {
        m.precision = 0.0;
        m.degenerate_precision = true;
    } else {
        m.precision = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fp);
    }
    if (cc.tp + cc.fn == 0) {
        m.recall = 0.0;
        m.degenerate_recall = true;
    } else {
        m.recall = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fn);
    }
    if (m.precision + m.recall <= 0.0) {
        m.f1 = 0.0;
        m.degenerate_f1 = true;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

double mcc(const ConfusionCounts& cc) {
    const double tp = static_cast<double>(cc.tp), fp = static_cast<double>(cc.fp);
    const double tn = static_cast<double>(cc.tn), fn = static_cast<double>(cc.fn);
    const double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / denom;
}

double cohen_kappa(const ConfusionCounts& cc) {
    Eigen::MatrixXd m(2, 2);
    // rows: true class (neg, pos); cols: predicted class
    m << static_cast<double>(cc.tn), static_cast<double>(cc.fp),
         static_cast<double>(cc.fn), static_cast<double>(cc.tp);
    return cohen_kappa(m);
}

double cohen_kappa(const Eigen::MatrixXd& confusion) {
    if (confusion.rows() != confusion.cols() || confusion.rows() < 2)
        throw ShapeMismatch("kappa requires a square confusion matrix");
    const double n = confusion.sum();
    if (n <= 0.0) return 0.0;
    const double po = confusion.trace() / n;
    double pe = 0.0;
    for (Eigen::Index c = 0; c < confusion.rows(); ++c)
        pe += (confusion.row(c).sum() / n) * (confusion.col(c).sum() / n);
    if (pe >= 1.0) return 0.0;  // degenerate marginals
    return (po - pe) / (1.0 - pe);
}

double macro_average(const std::vector<double>& per_class) {
    if (per_class.size() < 2) throw ShapeMismatch("macro average needs >= 2 classes");
    double s = 0.0;
    for (double v : per_class) s += v;
    return s / static_cast<double>(per_class.size());
}

std::vector<double> PredictionSet::positive_scores() const {
    std::vector<double> s;
    s.reserve(records.size());
    for (const auto& r : records) s.push_back(r.scores.size() > 1 ? r.scores[1] : r.scores[0]);
    return s;
}

std::vector<int> PredictionSet::labels() const {
    std::vector<int> l;
    l.reserve(records.size());
    for (const auto& r : records) l.push_back(r.label);
    return l;
}

namespace {

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<std::pair<std::string, double>> evaluate_predictions(const PredictionSet& preds,
                                                                 double threshold) {
    if (preds.records.empty()) throw EmptyDataset("no predictions to evaluate");
    std::vector<std::pair<std::string, double>> rows;
    if (preds.num_classes == 2) {
        const auto scores = preds.positive_scores();
        const auto labels = preds.labels();
        const ConfusionCounts cc = confusion_at_threshold(scores, labels, threshold);
        const BasicMetrics bm = classification_metrics(cc);
        rows.emplace_back("auroc", auroc(scores, labels));
        rows.emplace_back("auprc", auprc(scores, labels));
        rows.emplace_back("accuracy", bm.accuracy);
        rows.emplace_back("precision", bm.precision);
        rows.emplace_back("recall", bm.recall);
        rows.emplace_back("f1", bm.f1);
        rows.emplace_back("mcc", mcc(cc));
        rows.emplace_back("kappa", cohen_kappa(cc));
        return rows;
    }

    // multiclass: macro one-vs-rest for the score metrics, argmax for the rest
    const int k = preds.num_classes;
    std::vector<double> auroc_pc, auprc_pc, precision_pc, recall_pc, f1_pc;
    Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(k, k);
    for (const auto& r : preds.records) confusion(r.label, argmax(r.scores)) += 1.0;
    for (int c = 0; c < k; ++c) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& r : preds.records) {
            scores.push_back(r.scores[static_cast<size_t>(c)]);
            labels.push_back(r.label == c ? 1 : 0);
        }
        auroc_pc.push_back(auroc(scores, labels));
        auprc_pc.push_back(auprc(scores, labels));
        ConfusionCounts cc;
        cc.tp = static_cast<long>(confusion(c, c));
        cc.fp = static_cast<long>(confusion.col(c).sum() - confusion(c, c));
        cc.fn = static_cast<long>(confusion.row(c).sum() - confusion(c, c));
        cc.tn = static_cast<long>(confusion.sum()) - cc.tp - cc.fp - cc.fn;
        const BasicMetrics bm = classification_metrics(cc);
        precision_pc.push_back(bm.precision);
        recall_pc.push_back(bm.recall);
        f1_pc.push_back(bm.f1);
    }
    double correct = confusion.trace();
    rows.emplace_back("auroc", macro_average(auroc_pc));
    rows.emplace_back("auprc", macro_average(auprc_pc));
    rows.emplace_back("accuracy", correct / static_cast<double>(preds.records.size()));
    rows.emplace_back("precision", macro_average(precision_pc));
    rows.emplace_back("recall", macro_average(recall_pc));
    rows.emplace_back("f1", macro_average(f1_pc));
    rows.emplace_back("kappa", cohen_kappa(confusion));
    return rows;
}

// ---- fairness ----

std::string to_string(FairnessMetric m) {
    switch (m) {
        case FairnessMetric::PPV: return "PPV";
        case FairnessMetric::FPR: return "FPR";
        case FairnessMetric::TPR: return "TPR";
        case FairnessMetric::NPV: return "NPV";
        case FairnessMetric::FN_FP: return "FN_FP";
        case FairnessMetric::FNR: return "FNR";
        case FairnessMetric::ACC: return "ACC";
        default: return "AUROC";
    }
}

const std::vector<FairnessMetric>& all_fairness_metrics() {
    static const std::vector<FairnessMetric> metrics = {
        FairnessMetric::PPV, FairnessMetric::FPR, FairnessMetric::TPR, FairnessMetric::NPV,
        FairnessMetric::FN_FP, FairnessMetric::FNR, FairnessMetric::ACC, FairnessMetric::AUROC};
    return metrics;
}

std::string to_string(FairnessAttribute a) {
    switch (a) {
        case FairnessAttribute::AGE: return "AGE";
        case FairnessAttribute::SEX: return "SEX";
        default: return "RACE";
    }
}

std::string to_string(CellStatus s) {
    switch (s) {
        case CellStatus::OK: return "OK";
        case CellStatus::UNDEFINED: return "UNDEFINED";
        default: return "EMPTY_GROUP";
    }
}

namespace {

// metric value on one subgroup; nullopt when undefined on that group
std::optional<double> group_metric(FairnessMetric metric,
                                   const std::vector<const PredictionRecord*>& group,
                                   double threshold) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto* r : group) {
        scores.push_back(r->scores.size() > 1 ? r->scores[1] : r->scores[0]);
        labels.push_back(r->label);
    }
    if (metric == FairnessMetric::AUROC) {
        const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
        const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
        if (!has_pos || !has_neg) return std::nullopt;
        return auroc(scores, labels);
    }
    const ConfusionCounts cc = confusion_at_threshold(scores, labels, threshold);
    auto frac = [](long num, long den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    switch (metric) {
        case FairnessMetric::PPV: return frac(cc.tp, cc.tp + cc.fp);
        case FairnessMetric::FPR: return frac(cc.fp, cc.fp + cc.tn);
        case FairnessMetric::TPR: return frac(cc.tp, cc.tp + cc.fn);
        case FairnessMetric::NPV: return frac(cc.tn, cc.tn + cc.fn);
        case FairnessMetric::FN_FP: return frac(cc.fn, cc.fp);  // treatment equality
        case FairnessMetric::FNR: return frac(cc.fn, cc.tp + cc.fn);
        case FairnessMetric::ACC: return frac(cc.tp + cc.tn, cc.total());
        default: return std::nullopt;
    }
}

}  // namespace

FairnessCell subgroup_ratio(FairnessMetric metric, const PredictionSet& preds,
                            const std::function<bool(const DemographicRecord&)>& is_protected,
                            const std::function<bool(const DemographicRecord&)>& is_privileged,
                            double threshold) {
    std::vector<const PredictionRecord*> prot, priv;
    for (const auto& r : preds.records) {
        if (is_protected(r.demographics)) prot.push_back(&r);
        else if (is_privileged(r.demographics)) priv.push_back(&r);
    }
    FairnessCell cell;
    if (prot.empty() || priv.empty()) {
        cell.status = CellStatus::EMPTY_GROUP;
        return cell;
    }
    cell.protected_value = group_metric(metric, prot, threshold);
    cell.privileged_value = group_metric(metric, priv, threshold);
    if (!cell.protected_value || !cell.privileged_value || *cell.privileged_value == 0.0) {
        cell.status = CellStatus::UNDEFINED;
        return cell;
    }
    cell.ratio = *cell.protected_value / *cell.privileged_value;
    return cell;
}

FairnessReport fairness_report(const PredictionSet& preds, double threshold) {
    FairnessReport report;
    struct Def {
        FairnessAttribute attr;
        std::function<bool(const DemographicRecord&)> prot;
        std::function<bool(const DemographicRecord&)> priv;
    };
    const std::vector<Def> defs = {
        {FairnessAttribute::AGE,
         [](const DemographicRecord& d) { return d.age_group == AgeGroup::GE75; },
         [](const DemographicRecord& d) { return d.age_group == AgeGroup::A45_64; }},
        {FairnessAttribute::SEX,
         [](const DemographicRecord& d) { return d.sex == Sex::FEMALE; },
         [](const DemographicRecord& d) { return d.sex == Sex::MALE; }},
        {FairnessAttribute::RACE,
         [](const DemographicRecord& d) { return d.race_ethnicity == RaceEthnicity::NHB; },
         [](const DemographicRecord& d) { return d.race_ethnicity == RaceEthnicity::NHW; }},
    };
    for (const auto& def : defs)
        for (FairnessMetric metric : all_fairness_metrics())
            report.grid[def.attr][metric] =
                subgroup_ratio(metric, preds, def.prot, def.priv, threshold);
    return report;
}

}  // namespace ophmae
