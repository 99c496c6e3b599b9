#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ophmae/autodiff.hpp"
#include "ophmae/backbone.hpp"
#include "ophmae/patching.hpp"
#include "ophmae/rng.hpp"

namespace ophmae {

struct LossBreakdown {
    double l_recon = 0.0;
    double l_cross_relation = 0.0;
    double l_consistency = 0.0;
    double l_total = 0.0;
    double lambda_recon = 1.0;
    double lambda_cross = 1.0;
    double lambda_consistency = 1.0;
};

// ---- standalone numeric ops (used directly by tests and reports) ----

// MSE over the masked patches only; pred and target both cover exactly the
// masked index set of `view` (rows in ascending masked-index order).
double loss_recon(const ad::Mat& pred, const ad::Mat& target, const MaskView& view,
                  bool per_patch_norm);

// Erases round(ratio*Nq*Nk) uniformly chosen entries: they become 0 in the
// returned matrix and 1 in the indicator.
std::pair<ad::Mat, ad::Mat> mask_relations(const ad::Mat& dense, double ratio, Rng& rng);

// MSE over all entries of the complete relation matrix.
double loss_cross_relation(const ad::Mat& dense, const ad::Mat& predicted);

// Mean over unordered view pairs and overlap indices of the per-patch mean
// squared difference between the two reconstructions. 0 when K = 1 or all
// overlaps are empty. view_predictions[i] holds view i's masked-row matrix.
double loss_consistency(const std::vector<ad::Mat>& view_predictions,
                        const MaskEnsemble& ensemble);

LossBreakdown loss_total(double l_recon, double l_cross_relation, double l_consistency,
                         double lambda1, double lambda2, double lambda3);

// ---- graph-building loss assembly over a pretraining forward ----

struct PretrainLossGraph {
    ad::Var recon;        // 1x1
    ad::Var cross;        // 1x1
    ad::Var consistency;  // 1x1
    ad::Var total;        // 1x1 weighted sum
    LossBreakdown breakdown;
};

PretrainLossGraph pretrain_loss(const Model& model, const PretrainOutputs& outputs);

// ---- finite-difference gradient checking ----

struct FdEntry {
    std::string param;
    int flat_index = 0;
    double analytic = 0.0;
    double fd = 0.0;
    double rel_err = 0.0;
};

struct FdReport {
    std::vector<FdEntry> entries;
    std::vector<FdEntry> failures;
    double max_rel_err = 0.0;
    bool ok() const { return failures.empty(); }
};

// Central differences against the analytic gradient of build_loss(), sampling
// up to max_entries_per_param coordinates of every parameter in the store.
// build_loss must be a pure function of the current parameter values.
FdReport finite_difference_check(const std::function<ad::Var()>& build_loss,
                                 ad::ParamStore& params, double epsilon, double tol,
                                 int max_entries_per_param, Rng& rng);

}  // namespace ophmae
