#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ophmae/errors.hpp"

// Reverse-mode autodiff over dense double matrices. Graphs are built eagerly
// (values computed at op construction) and torn down when the Vars holding
// them go out of scope. Parameters are long-lived leaf nodes shared between
// graphs; backward() returns their gradients in a map instead of mutating
// them, so per-sample graphs can run on worker threads and be reduced in a
// fixed order.
namespace ophmae::ad {

using Mat = Eigen::MatrixXd;

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Mat value;
    bool requires_grad = false;
    std::vector<Var> parents;
    // accumulates this node's out_grad into parent_grads entries
    std::function<void(const Mat& out_grad, std::vector<Mat*>& parent_grads)> backward_op;

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
};

Var constant(Mat value);
Var constant_scalar(double value);
Var leaf(Mat value);  // trainable parameter node

// ---- arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);             // elementwise
Var scale(const Var& a, double s);
Var add_rowvec(const Var& a, const Var& bias);   // bias is 1 x C, broadcast over rows
Var add_scalar_bias(const Var& a, const Var& bias);  // bias is 1 x 1, broadcast everywhere
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var hadamard_const(const Var& a, const Mat& mask);  // elementwise with a constant

// ---- structure ----
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const std::vector<int>& rows);
// n_rows x C output; rows listed in src_rows come from src (in order), rows in
// fill_rows all receive the single row of fill (broadcast). Every output row
// must be covered exactly once.
Var assemble_rows(int n_rows, const Var& src, const std::vector<int>& src_rows,
                  const Var& fill, const std::vector<int>& fill_rows);

// ---- nonlinearities / normalization ----
Var gelu(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// ---- reductions / losses ----
Var sum_all(const Var& a);        // 1x1
Var mean_all(const Var& a);       // 1x1
Var mean_rows(const Var& a);      // 1 x C, mean over rows
Var cross_entropy_logits(const Var& logits_1xk, int label);  // 1x1

// detached copy: same value, no gradient path
Var detach(const Var& a);

// Runs reverse-mode accumulation from a 1x1 root. Returns gradients for every
// reachable requires_grad leaf (keyed by node pointer). Interior gradients are
// scratch local to this call, so concurrent backward() over disjoint graphs
// sharing only leaves is safe.
std::unordered_map<const Node*, Mat> backward(const Var& root);

// Ordered named parameter collection; iteration order is registration order.
class ParamStore {
public:
    Var add(const std::string& name, Mat init);
    const Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::pair<std::string, Var>>& ordered() const { return items_; }
    size_t total_scalars() const;

private:
    std::vector<std::pair<std::string, Var>> items_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace ophmae::ad
