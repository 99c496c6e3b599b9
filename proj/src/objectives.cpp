#include "ophmae/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace ophmae {

using ad::Mat;
using ad::Var;

double loss_recon(const Mat& pred, const Mat& target, const MaskView& view,
                  bool per_patch_norm) {
    const int m = view.masked_count();
    if (pred.rows() != m || target.rows() != m)
        throw IndexMismatch("pred/target rows must equal the masked count");
    if (pred.cols() != target.cols())
        throw IndexMismatch("pred/target patch lengths differ");
    if (m == 0) return 0.0;
    const Mat t = per_patch_norm ? normalize_patch_rows(target) : target;
    return (pred - t).array().square().mean();
}

std::pair<Mat, Mat> mask_relations(const Mat& dense, double ratio, Rng& rng) {
    if (ratio < 0.0 || ratio >= 1.0) throw InvalidRatio("relation mask ratio must lie in [0,1)");
    const Mat keep = sample_keep_matrix(static_cast<int>(dense.rows()),
                                        static_cast<int>(dense.cols()), ratio, rng);
    Mat indicator = Mat::Ones(dense.rows(), dense.cols()) - keep;
    return {dense.cwiseProduct(keep), std::move(indicator)};
}

double loss_cross_relation(const Mat& dense, const Mat& predicted) {
    if (dense.rows() != predicted.rows() || dense.cols() != predicted.cols())
        throw ShapeMismatch("relation matrices differ in shape");
    return (dense - predicted).array().square().mean();
}

double loss_consistency(const std::vector<Mat>& view_predictions, const MaskEnsemble& ensemble) {
    if (view_predictions.size() != static_cast<size_t>(ensemble.k()))
        throw IndexMismatch("one prediction matrix required per view");
    double total = 0.0;
    long count = 0;
    for (const auto& [pair, overlap] : ensemble.pairwise_overlap) {
        if (overlap.empty()) continue;
        const auto& [i, j] = pair;
        const std::vector<int> masked_i = ensemble.views[static_cast<size_t>(i)].masked_indices();
        const std::vector<int> masked_j = ensemble.views[static_cast<size_t>(j)].masked_indices();
        const Mat& pred_i = view_predictions[static_cast<size_t>(i)];
        const Mat& pred_j = view_predictions[static_cast<size_t>(j)];
        if (pred_i.rows() != static_cast<Eigen::Index>(masked_i.size()) ||
            pred_j.rows() != static_cast<Eigen::Index>(masked_j.size()))
            throw IndexMismatch("prediction rows do not match the view's masked set");
        size_t at_i = 0, at_j = 0;
        for (int token : overlap) {
            while (masked_i[at_i] != token) ++at_i;
            while (masked_j[at_j] != token) ++at_j;
            total += (pred_i.row(static_cast<Eigen::Index>(at_i)) -
                      pred_j.row(static_cast<Eigen::Index>(at_j)))
                         .array()
                         .square()
                         .mean();
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

LossBreakdown loss_total(double l_recon, double l_cross_relation, double l_consistency,
                         double lambda1, double lambda2, double lambda3) {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
        throw NegativeWeight("loss weights must be >= 0");
    LossBreakdown b;
    b.l_recon = l_recon;
    b.l_cross_relation = l_cross_relation;
    b.l_consistency = l_consistency;
    b.lambda_recon = lambda1;
    b.lambda_cross = lambda2;
    b.lambda_consistency = lambda3;
    b.l_total = lambda1 * l_recon + lambda2 * l_cross_relation + lambda3 * l_consistency;
    return b;
}

namespace {

// mean over element-wise squared differences, as a graph node
Var mse_var(const Var& pred, const Mat& target) {
    Var diff = ad::sub(pred, ad::constant(target));
    return ad::mean_all(ad::mul(diff, diff));
}

Var zero_var() { return ad::constant_scalar(0.0); }

Var average_vars(const std::vector<Var>& terms) {
    if (terms.empty()) return zero_var();
    Var acc = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

Mat gather_target_rows(const Mat& target, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), target.cols());
    for (size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = target.row(rows[i]);
    return out;
}

}  // namespace

PretrainLossGraph pretrain_loss(const Model& model, const PretrainOutputs& outputs) {
    const ModelConfig& cfg = model.config();

    // reconstruction: one MSE cell per (view, modality), averaged
    std::vector<Var> recon_cells;
    for (const auto& vo : outputs.views) {
        const std::vector<int> masked_oct = vo.view_oct.masked_indices();
        if (!masked_oct.empty())
            recon_cells.push_back(
                mse_var(vo.recon_oct, gather_target_rows(outputs.target_oct, masked_oct)));
        const std::vector<int> masked_ir = vo.view_ir.masked_indices();
        if (!masked_ir.empty())
            recon_cells.push_back(
                mse_var(vo.recon_ir, gather_target_rows(outputs.target_ir, masked_ir)));
    }
    Var recon = average_vars(recon_cells);

    // cross-modal relation: predicted vs detached dense target, all entries
    std::vector<Var> cross_cells;
    for (const auto& vo : outputs.views) {
        for (const auto& pr : vo.relations) {
            const RelationMatrix* dense = nullptr;
            for (const auto& d : outputs.dense_relations)
                if (d.layer == pr.layer && d.direction == pr.direction) dense = &d;
            if (!dense) throw InvalidConfig("dense relation missing for predicted matrix");
            cross_cells.push_back(mse_var(pr.values, dense->values));
        }
    }
    Var cross = average_vars(cross_cells);

    // multi-view consistency in the decoder's prediction space
    std::vector<Var> overlap_terms;
    long overlap_count = 0;
    auto add_overlap_terms = [&](const MaskEnsemble& ensemble, bool oct) {
        for (const auto& [pair, overlap] : ensemble.pairwise_overlap) {
            if (overlap.empty()) continue;
            const auto& [i, j] = pair;
            const ViewOutputs& vi = outputs.views[static_cast<size_t>(i)];
            const ViewOutputs& vj = outputs.views[static_cast<size_t>(j)];
            const std::vector<int> masked_i =
                (oct ? vi.view_oct : vi.view_ir).masked_indices();
            const std::vector<int> masked_j =
                (oct ? vj.view_oct : vj.view_ir).masked_indices();
            std::vector<int> rows_i, rows_j;
            size_t at_i = 0, at_j = 0;
            for (int token : overlap) {
                while (masked_i[at_i] != token) ++at_i;
                while (masked_j[at_j] != token) ++at_j;
                rows_i.push_back(static_cast<int>(at_i));
                rows_j.push_back(static_cast<int>(at_j));
            }
            const Var& pred_i = oct ? vi.recon_oct : vi.recon_ir;
            const Var& pred_j = oct ? vj.recon_oct : vj.recon_ir;
            Var diff = ad::sub(ad::gather_rows(pred_i, rows_i), ad::gather_rows(pred_j, rows_j));
            // per-index mean over patch elements = sum / patch_len
            overlap_terms.push_back(
                ad::scale(ad::sum_all(ad::mul(diff, diff)), 1.0 / static_cast<double>(diff->cols())));
            overlap_count += static_cast<long>(overlap.size());
        }
    };
    add_overlap_terms(outputs.ensemble_oct, true);
    add_overlap_terms(outputs.ensemble_ir, false);
    Var consistency = zero_var();
    if (overlap_count > 0) {
        Var acc = overlap_terms.front();
        for (size_t i = 1; i < overlap_terms.size(); ++i) acc = ad::add(acc, overlap_terms[i]);
        consistency = ad::scale(acc, 1.0 / static_cast<double>(overlap_count));
    }

    PretrainLossGraph g;
    g.recon = recon;
    g.cross = cross;
    g.consistency = consistency;
    g.total = ad::add(ad::add(ad::scale(recon, cfg.lambda_recon), ad::scale(cross, cfg.lambda_cross)),
                      ad::scale(consistency, cfg.lambda_consistency));
    g.breakdown = loss_total(recon->value(0, 0), cross->value(0, 0), consistency->value(0, 0),
                             cfg.lambda_recon, cfg.lambda_cross, cfg.lambda_consistency);
    return g;
}

FdReport finite_difference_check(const std::function<Var()>& build_loss, ad::ParamStore& params,
                                 double epsilon, double tol, int max_entries_per_param, Rng& rng) {
    if (epsilon < 1e-6 || epsilon > 1e-3)
        throw InvalidConfig("fd epsilon must lie in [1e-6, 1e-3]");

    Var root = build_loss();
    auto grads = ad::backward(root);

    FdReport report;
    for (const auto& [name, var] : params.ordered()) {
        const int total = static_cast<int>(var->value.size());
        std::vector<int> picks;
        if (total <= max_entries_per_param) {
            for (int i = 0; i < total; ++i) picks.push_back(i);
        } else {
            picks = rng.sample_without_replacement(total, max_entries_per_param);
            std::sort(picks.begin(), picks.end());
        }
        const auto git = grads.find(var.get());
        for (int flat : picks) {
            FdEntry entry;
            entry.param = name;
            entry.flat_index = flat;
            entry.analytic = git == grads.end() ? 0.0 : git->second(flat);

            double& w = var->value(flat);
            const double saved = w;
            w = saved + epsilon;
            const double up = build_loss()->value(0, 0);
            w = saved - epsilon;
            const double down = build_loss()->value(0, 0);
            w = saved;
            entry.fd = (up - down) / (2.0 * epsilon);

            const double mag = std::max(std::abs(entry.analytic), std::abs(entry.fd));
            const double diff = std::abs(entry.analytic - entry.fd);
            // floor keeps FD noise on near-zero gradients from dominating
            entry.rel_err = diff / std::max(mag, 1e-6);
            report.max_rel_err = std::max(report.max_rel_err, entry.rel_err);
            if (entry.rel_err >= tol) report.failures.push_back(entry);
            report.entries.push_back(std::move(entry));
        }
    }
    return report;
}

}  // namespace ophmae
