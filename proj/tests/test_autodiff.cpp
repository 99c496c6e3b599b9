#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "ophmae/autodiff.hpp"
#include "ophmae/rng.hpp"

using namespace ophmae;
using ad::Mat;
using ad::Var;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed) {
    Rng rng(seed);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    return m;
}

// central-difference check of d(loss)/d(leaf) for every coordinate
void fd_check(const std::function<Var()>& loss_fn, const std::vector<Var>& leaves,
              double tol = 1e-7) {
    Var root = loss_fn();
    auto grads = ad::backward(root);
    const double eps = 1e-6;
    for (const Var& leaf : leaves) {
        REQUIRE(grads.count(leaf.get()) == 1);
        const Mat& g = grads.at(leaf.get());
        for (Eigen::Index i = 0; i < leaf->value.size(); ++i) {
            const double saved = leaf->value(i);
            leaf->value(i) = saved + eps;
            const double up = loss_fn()->value(0, 0);
            leaf->value(i) = saved - eps;
            const double down = loss_fn()->value(0, 0);
            leaf->value(i) = saved;
            const double fd = (up - down) / (2 * eps);
            CHECK(g(i) == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
    }
}

}  // namespace

TEST_CASE("matmul values and gradients, all transpose variants") {
    Var a = ad::leaf(random_mat(3, 4, 1));
    Var b = ad::leaf(random_mat(4, 2, 2));
    CHECK((ad::matmul(a, b)->value - a->value * b->value).cwiseAbs().maxCoeff() < 1e-14);

    fd_check([&] { return ad::mean_all(ad::matmul(a, b)); }, {a, b});

    Var at = ad::leaf(random_mat(4, 3, 3));
    fd_check([&] { return ad::mean_all(ad::matmul(at, b, true, false)); }, {at, b});
    Var bt = ad::leaf(random_mat(2, 4, 4));
    fd_check([&] { return ad::mean_all(ad::matmul(a, bt, false, true)); }, {a, bt});
    fd_check([&] { return ad::mean_all(ad::matmul(at, bt, true, true)); }, {at, bt});
}

TEST_CASE("elementwise ops gradients") {
    Var a = ad::leaf(random_mat(3, 3, 5));
    Var b = ad::leaf(random_mat(3, 3, 6));
    fd_check([&] { return ad::mean_all(ad::mul(a, b)); }, {a, b});
    fd_check([&] { return ad::mean_all(ad::add(a, b)); }, {a, b});
    fd_check([&] { return ad::mean_all(ad::sub(a, b)); }, {a, b});
    fd_check([&] { return ad::mean_all(ad::scale(a, -2.5)); }, {a});
    fd_check([&] { return ad::mean_all(ad::mul(a, a)); }, {a});  // shared-parent path
}

TEST_CASE("broadcast bias gradients") {
    Var a = ad::leaf(random_mat(4, 3, 7));
    Var bias = ad::leaf(random_mat(1, 3, 8));
    fd_check([&] { return ad::mean_all(ad::add_rowvec(a, bias)); }, {a, bias});
    Var s = ad::leaf(random_mat(1, 1, 9));
    fd_check([&] { return ad::mean_all(ad::add_scalar_bias(a, s)); }, {a, s});
}

TEST_CASE("softmax rows: values sum to 1, gradient matches fd") {
    Var a = ad::leaf(random_mat(3, 5, 10));
    Var p = ad::softmax_rows(a);
    for (int r = 0; r < 3; ++r) CHECK(p->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    Var w = ad::constant(random_mat(3, 5, 11));
    fd_check([&] { return ad::mean_all(ad::mul(ad::softmax_rows(a), w)); }, {a});
}

TEST_CASE("gelu gradient") {
    Var a = ad::leaf(random_mat(4, 4, 12));
    fd_check([&] { return ad::mean_all(ad::gelu(a)); }, {a});
}

TEST_CASE("layer_norm gradient for x, gamma, beta") {
    Var x = ad::leaf(random_mat(5, 6, 13));
    Var gamma = ad::leaf(random_mat(1, 6, 14));
    Var beta = ad::leaf(random_mat(1, 6, 15));
    Var w = ad::constant(random_mat(5, 6, 16));
    fd_check([&] { return ad::mean_all(ad::mul(ad::layer_norm(x, gamma, beta), w)); },
             {x, gamma, beta}, 1e-6);
}

TEST_CASE("structure ops: slice, concat, gather, assemble") {
    Var a = ad::leaf(random_mat(4, 6, 17));
    fd_check([&] { return ad::mean_all(ad::slice_cols(a, 2, 3)); }, {a});

    Var b = ad::leaf(random_mat(4, 2, 18));
    fd_check([&] { return ad::mean_all(ad::concat_cols({a, b})); }, {a, b});

    fd_check([&] { return ad::mean_all(ad::gather_rows(a, {3, 1, 1})); }, {a});

    Var src = ad::leaf(random_mat(2, 3, 19));
    Var fill = ad::leaf(random_mat(1, 3, 20));
    fd_check([&] { return ad::mean_all(ad::assemble_rows(5, src, {0, 3}, fill, {1, 2, 4})); },
             {src, fill});
}

TEST_CASE("assemble_rows validates coverage") {
    Var src = ad::leaf(random_mat(2, 3, 21));
    Var fill = ad::leaf(random_mat(1, 3, 22));
    CHECK_THROWS_AS(ad::assemble_rows(5, src, {0, 3}, fill, {1, 2}), IndexMismatch);
    CHECK_THROWS_AS(ad::assemble_rows(5, src, {0, 3}, fill, {1, 2, 3}), IndexMismatch);
}

TEST_CASE("cross entropy matches manual computation and gradient") {
    Var logits = ad::leaf(random_mat(1, 4, 23));
    Var loss = ad::cross_entropy_logits(logits, 2);
    double z = 0.0;
    for (int i = 0; i < 4; ++i) z += std::exp(logits->value(0, i));
    CHECK(loss->value(0, 0) ==
          doctest::Approx(std::log(z) - logits->value(0, 2)).epsilon(1e-12));
    fd_check([&] { return ad::cross_entropy_logits(logits, 2); }, {logits});
}

TEST_CASE("attention-style composite gradient") {
    // one full mini attention block wired from primitives
    Var x = ad::leaf(random_mat(5, 8, 24));
    Var wq = ad::leaf(0.3 * random_mat(8, 8, 25));
    Var wk = ad::leaf(0.3 * random_mat(8, 8, 26));
    Var wv = ad::leaf(0.3 * random_mat(8, 8, 27));
    auto build = [&] {
        Var q = ad::matmul(x, wq);
        Var k = ad::matmul(x, wk);
        Var v = ad::matmul(x, wv);
        Var probs = ad::softmax_rows(ad::scale(ad::matmul(q, k, false, true), 1.0 / std::sqrt(8.0)));
        return ad::mean_all(ad::matmul(probs, v));
    };
    fd_check(build, {x, wq, wk, wv}, 1e-6);
}

TEST_CASE("detach blocks gradient flow") {
    Var a = ad::leaf(random_mat(3, 3, 28));
    Var root = ad::mean_all(ad::mul(ad::detach(a), a));
    auto grads = ad::backward(root);
    REQUIRE(grads.count(a.get()) == 1);
    // only the non-detached factor contributes: d/da mean(c * a) = c / n
    const Mat expected = a->value / 9.0;
    CHECK((grads.at(a.get()) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward on a diamond graph accumulates both paths") {
    Var a = ad::leaf(random_mat(2, 2, 29));
    Var left = ad::scale(a, 2.0);
    Var right = ad::mul(a, a);
    Var root = ad::mean_all(ad::add(left, right));
    auto grads = ad::backward(root);
    const Mat expected = (Mat::Constant(2, 2, 2.0) + 2.0 * a->value) / 4.0;
    CHECK((grads.at(a.get()) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mean_rows averages over rows") {
    Var a = ad::leaf(random_mat(4, 3, 30));
    Var m = ad::mean_rows(a);
    CHECK(m->rows() == 1);
    CHECK(m->value(0, 1) == doctest::Approx(a->value.col(1).mean()).epsilon(1e-14));
    fd_check([&] { return ad::mean_all(ad::mul(ad::mean_rows(a), ad::mean_rows(a))); }, {a});
}
