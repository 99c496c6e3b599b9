#include "ophmae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace ophmae::ad {

namespace {

Var make_node(Mat value, std::vector<Var> parents,
              std::function<void(const Mat&, std::vector<Mat*>&)> backward_op) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->parents = std::move(parents);
    node->requires_grad =
        std::any_of(node->parents.begin(), node->parents.end(),
                    [](const Var& p) { return p->requires_grad; });
    if (node->requires_grad) node->backward_op = std::move(backward_op);
    return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

}  // namespace

Var constant(Mat value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return node;
}

Var constant_scalar(double value) {
    Mat m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
}

Var leaf(Mat value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return node;
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_node(a->value + b->value, {a, b},
                     [](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g;
                         if (pg[1]) *pg[1] += g;
                     });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_node(a->value - b->value, {a, b},
                     [](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g;
                         if (pg[1]) *pg[1] -= g;
                     });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Mat av = a->value, bv = b->value;
    return make_node(a->value.cwiseProduct(b->value), {a, b},
                     [av, bv](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g.cwiseProduct(bv);
                         if (pg[1]) *pg[1] += g.cwiseProduct(av);
                     });
}

Var scale(const Var& a, double s) {
    return make_node(a->value * s, {a},
                     [s](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g * s;
                     });
}

Var add_rowvec(const Var& a, const Var& bias) {
    if (bias->rows() != 1 || bias->cols() != a->cols())
        throw ShapeMismatch("add_rowvec: bias must be 1 x cols(a)");
    Mat out = a->value;
    out.rowwise() += bias->value.row(0);
    return make_node(std::move(out), {a, bias},
                     [](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g;
                         if (pg[1]) pg[1]->row(0) += g.colwise().sum();
                     });
}

Var add_scalar_bias(const Var& a, const Var& bias) {
    if (bias->rows() != 1 || bias->cols() != 1)
        throw ShapeMismatch("add_scalar_bias: bias must be 1 x 1");
    Mat out = a->value.array() + bias->value(0, 0);
    return make_node(std::move(out), {a, bias},
                     [](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g;
                         if (pg[1]) (*pg[1])(0, 0) += g.sum();
                     });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Eigen::Index ak = trans_a ? a->rows() : a->cols();
    const Eigen::Index bk = trans_b ? b->cols() : b->rows();
    if (ak != bk) throw ShapeMismatch("matmul: inner dims differ");
    Mat av = a->value, bv = b->value;
    Mat out;
    if (!trans_a && !trans_b) out = av * bv;
    else if (trans_a && !trans_b) out = av.transpose() * bv;
    else if (!trans_a && trans_b) out = av * bv.transpose();
    else out = av.transpose() * bv.transpose();
    return make_node(std::move(out), {a, b},
                     [av, bv, trans_a, trans_b](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) {
                             if (!trans_a && !trans_b) *pg[0] += g * bv.transpose();
                             else if (trans_a && !trans_b) *pg[0] += bv * g.transpose();
                             else if (!trans_a && trans_b) *pg[0] += g * bv;
                             else *pg[0] += bv.transpose() * g.transpose();
                         }
                         if (pg[1]) {
                             if (!trans_a && !trans_b) *pg[1] += av.transpose() * g;
                             else if (trans_a && !trans_b) *pg[1] += av * g;
                             else if (!trans_a && trans_b) *pg[1] += g.transpose() * av;
                             else *pg[1] += g.transpose() * av.transpose();
                         }
                     });
}

Var hadamard_const(const Var& a, const Mat& mask) {
    if (a->rows() != mask.rows() || a->cols() != mask.cols())
        throw ShapeMismatch("hadamard_const: mask shape differs");
    Mat m = mask;
    return make_node(a->value.cwiseProduct(mask), {a},
                     [m](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g.cwiseProduct(m);
                     });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || n < 0 || start + n > a->cols())
        throw ShapeMismatch("slice_cols: range out of bounds");
    return make_node(a->value.middleCols(start, n), {a},
                     [start, n](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) pg[0]->middleCols(start, n) += g;
                     });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
    const Eigen::Index rows = parts.front()->rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
        cols += p->cols();
    }
    Mat out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p->cols()) = p->value;
        offsets.push_back(at);
        at += p->cols();
    }
    std::vector<Eigen::Index> widths;
    for (const auto& p : parts) widths.push_back(p->cols());
    return make_node(std::move(out), parts,
                     [offsets, widths](const Mat& g, std::vector<Mat*>& pg) {
                         for (size_t i = 0; i < pg.size(); ++i)
                             if (pg[i]) *pg[i] += g.middleCols(offsets[i], widths[i]);
                     });
}

Var gather_rows(const Var& a, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), a->cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a->rows()) throw IndexMismatch("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = a->value.row(rows[i]);
    }
    std::vector<int> idx = rows;
    return make_node(std::move(out), {a},
                     [idx](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0])
                             for (size_t i = 0; i < idx.size(); ++i)
                                 pg[0]->row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                     });
}

Var assemble_rows(int n_rows, const Var& src, const std::vector<int>& src_rows,
                  const Var& fill, const std::vector<int>& fill_rows) {
    if (static_cast<Eigen::Index>(src_rows.size()) != src->rows())
        throw IndexMismatch("assemble_rows: src rows do not match index list");
    if (fill->rows() != 1 || fill->cols() != src->cols())
        throw ShapeMismatch("assemble_rows: fill must be a single matching row");
    if (src_rows.size() + fill_rows.size() != static_cast<size_t>(n_rows))
        throw IndexMismatch("assemble_rows: indices do not cover output");
    Mat out(n_rows, src->cols());
    std::vector<char> seen(static_cast<size_t>(n_rows), 0);
    for (size_t i = 0; i < src_rows.size(); ++i) {
        out.row(src_rows[i]) = src->value.row(static_cast<Eigen::Index>(i));
        seen[static_cast<size_t>(src_rows[i])] = 1;
    }
    for (int r : fill_rows) {
        if (seen[static_cast<size_t>(r)]) throw IndexMismatch("assemble_rows: duplicate row");
        out.row(r) = fill->value.row(0);
        seen[static_cast<size_t>(r)] = 1;
    }
    for (char s : seen)
        if (!s) throw IndexMismatch("assemble_rows: uncovered row");
    std::vector<int> si = src_rows, fi = fill_rows;
    return make_node(std::move(out), {src, fill},
                     [si, fi](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0])
                             for (size_t i = 0; i < si.size(); ++i)
                                 pg[0]->row(static_cast<Eigen::Index>(i)) += g.row(si[i]);
                         if (pg[1])
                             for (int r : fi) pg[1]->row(0) += g.row(r);
                     });
}

Var gelu(const Var& a) {
    // exact form x * Phi(x); derivative Phi(x) + x * phi(x)
    const Mat& x = a->value;
    Mat out(x.rows(), x.cols());
    Mat dgelu(x.rows(), x.cols());
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x(i);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        out(i) = v * cdf;
        dgelu(i) = cdf + v * pdf;
    }
    return make_node(std::move(out), {a},
                     [dgelu](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) *pg[0] += g.cwiseProduct(dgelu);
                     });
}

Var softmax_rows(const Var& a) {
    Mat p(a->rows(), a->cols());
    for (Eigen::Index r = 0; r < a->rows(); ++r) {
        const double mx = a->value.row(r).maxCoeff();
        Eigen::RowVectorXd e = (a->value.row(r).array() - mx).exp();
        p.row(r) = e / e.sum();
    }
    return make_node(p, {a},
                     [p](const Mat& g, std::vector<Mat*>& pg) {
                         if (!pg[0]) return;
                         for (Eigen::Index r = 0; r < p.rows(); ++r) {
                             const double dot = g.row(r).dot(p.row(r));
                             pg[0]->row(r) +=
                                 (g.row(r).array() - dot).matrix().cwiseProduct(p.row(r));
                         }
                     });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (gamma->rows() != 1 || gamma->cols() != x->cols() || beta->rows() != 1 ||
        beta->cols() != x->cols())
        throw ShapeMismatch("layer_norm: gamma/beta must be 1 x cols(x)");
    const Eigen::Index n = x->rows(), c = x->cols();
    Mat normed(n, c);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mean = x->value.row(r).mean();
        const double var = (x->value.row(r).array() - mean).square().mean();
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std(r) = istd;
        normed.row(r) = (x->value.row(r).array() - mean).matrix() * istd;
    }
    Mat out = normed;
    for (Eigen::Index r = 0; r < n; ++r)
        out.row(r) = out.row(r).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
    Mat gamma_v = gamma->value;
    return make_node(std::move(out), {x, gamma, beta},
                     [normed, inv_std, gamma_v](const Mat& g, std::vector<Mat*>& pg) {
                         const Eigen::Index n = normed.rows(), c = normed.cols();
                         if (pg[1])
                             for (Eigen::Index r = 0; r < n; ++r)
                                 pg[1]->row(0) += g.row(r).cwiseProduct(normed.row(r));
                         if (pg[2]) pg[2]->row(0) += g.colwise().sum();
                         if (pg[0]) {
                             for (Eigen::Index r = 0; r < n; ++r) {
                                 Eigen::RowVectorXd dy = g.row(r).cwiseProduct(gamma_v.row(0));
                                 const double m1 = dy.mean();
                                 const double m2 = dy.cwiseProduct(normed.row(r)).mean();
                                 pg[0]->row(r) +=
                                     ((dy.array() - m1 - normed.row(r).array() * m2) * inv_std(r))
                                         .matrix();
                             }
                             (void)c;
                         }
                     });
}

Var sum_all(const Var& a) {
    Mat out(1, 1);
    out(0, 0) = a->value.sum();
    const Eigen::Index r = a->rows(), c = a->cols();
    return make_node(std::move(out), {a},
                     [r, c](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) pg[0]->array() += g(0, 0);
                     });
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a->value.size());
    Mat out(1, 1);
    out(0, 0) = a->value.sum() * inv;
    return make_node(std::move(out), {a},
                     [inv](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) pg[0]->array() += g(0, 0) * inv;
                     });
}

Var mean_rows(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a->rows());
    Mat out = a->value.colwise().mean();
    return make_node(std::move(out), {a},
                     [inv](const Mat& g, std::vector<Mat*>& pg) {
                         if (pg[0]) pg[0]->rowwise() += (g.row(0) * inv);
                     });
}

Var cross_entropy_logits(const Var& logits, int label) {
    if (logits->rows() != 1) throw ShapeMismatch("cross_entropy_logits: expects 1 x K logits");
    if (label < 0 || label >= logits->cols()) throw LabelOutOfRange("cross entropy label");
    const double mx = logits->value.row(0).maxCoeff();
    Eigen::RowVectorXd e = (logits->value.row(0).array() - mx).exp();
    const double z = e.sum();
    Eigen::RowVectorXd p = e / z;
    Mat out(1, 1);
    out(0, 0) = std::log(z) + mx - logits->value(0, label);
    return make_node(std::move(out), {logits},
                     [p, label](const Mat& g, std::vector<Mat*>& pg) {
                         if (!pg[0]) return;
                         pg[0]->row(0) += g(0, 0) * p;
                         (*pg[0])(0, label) -= g(0, 0);
                     });
}

Var detach(const Var& a) { return constant(a->value); }

std::unordered_map<const Node*, Mat> backward(const Var& root) {
    if (root->rows() != 1 || root->cols() != 1)
        throw ShapeMismatch("backward: root must be scalar");

    // iterative post-order DFS; order depends only on graph structure
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (!node->requires_grad || next >= node->parents.size()) {
            order.push_back(node);
            stack.pop_back();
            continue;
        }
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && visited.insert(parent).second)
            stack.emplace_back(parent, 0);
    }

    std::unordered_map<const Node*, Mat> grads;
    grads.reserve(order.size());
    auto grad_of = [&grads](Node* n) -> Mat& {
        auto it = grads.find(n);
        if (it == grads.end())
            it = grads.emplace(n, Mat::Zero(n->rows(), n->cols())).first;
        return it->second;
    };
    grad_of(root.get())(0, 0) = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward_op) continue;
        auto git = grads.find(node);
        if (git == grads.end()) continue;
        std::vector<Mat*> parent_grads(node->parents.size(), nullptr);
        for (size_t i = 0; i < node->parents.size(); ++i)
            if (node->parents[i]->requires_grad)
                parent_grads[i] = &grad_of(node->parents[i].get());
        node->backward_op(git->second, parent_grads);
    }

    // keep only leaf parameters
    std::unordered_map<const Node*, Mat> out;
    for (Node* n : order)
        if (n->requires_grad && !n->backward_op && grads.count(n)) out.emplace(n, std::move(grads[n]));
    return out;
}

Var ParamStore::add(const std::string& name, Mat init) {
    if (index_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
    Var v = leaf(std::move(init));
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
}

const Var& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("unknown parameter: " + name);
    return items_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

size_t ParamStore::total_scalars() const {
    size_t n = 0;
    for (const auto& [name, v] : items_) n += static_cast<size_t>(v->value.size());
    return n;
}

}  // namespace ophmae::ad
