#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"

#include "fedtgp/autodiff.hpp"
#include "fedtgp/errors.hpp"

using namespace fedtgp;

namespace {

Var param(Tape& t, Tensor& x) { return t.parameter(x); }

double max_rel_error_over(int instances, const std::function<double(Rng&)>& one) {
    Rng rng(77);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) worst = std::max(worst, one(rng));
    return worst;
}

}  // namespace

TEST(Matmul, IdentityTimesColumn) {
    Tape t;
    Var a = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    Var b = t.constant(Tensor::matrix(2, 1, {3, 4}));
    EXPECT_EQ(matmul(a, b).value(), Tensor::matrix(2, 1, {3, 4}));
}

TEST(Matmul, RowTimesColumn) {
    Tape t;
    Var a = t.constant(Tensor::matrix(1, 2, {1, 2}));
    Var b = t.constant(Tensor::matrix(2, 1, {3, 4}));
    EXPECT_EQ(matmul(a, b).value().item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tape t;
    Var a = t.constant(Tensor({2, 3}));
    Var b = t.constant(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2x3]", msg.find("[2x3]") + 1), std::string::npos) << msg;
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    Rng rng(1);
    Tensor a = gradcheck::random_tensor(rng, {3, 4});
    Tensor b = gradcheck::random_tensor(rng, {4, 2});
    Tensor w = gradcheck::random_tensor(rng, {3, 2});
    std::vector<Tensor*> ps{&a, &b};
    auto r = gradcheck::compare(ps, [&](Tape& t) { return gradcheck::project(t, matmul(param(t, a), param(t, b)), w); });
    EXPECT_LT(r.rel_error, 1e-6);
    EXPECT_EQ(r.entries, 20u);
}

TEST(Matmul, BackwardRulesAreTransposedProducts) {
    Tensor a = Tensor::matrix(1, 2, {1, 2});
    Tensor b = Tensor::matrix(2, 1, {3, 4});
    Tape t;
    Var out = matmul(t.parameter(a), t.parameter(b));
    t.backward(out);
    // dL/da = 1·bᵀ, dL/db = aᵀ·1
    EXPECT_EQ(a.grad()[0], 3.0);
    EXPECT_EQ(a.grad()[1], 4.0);
    EXPECT_EQ(b.grad()[0], 1.0);
    EXPECT_EQ(b.grad()[1], 2.0);
}

TEST(Relu, ClampsNegatives) {
    Tape t;
    EXPECT_EQ(relu(t.constant(Tensor::vector({-1, 0, 2}))).value(), Tensor::vector({0, 0, 2}));
}

TEST(Relu, AllNegativeGivesZeroOutputAndGradient) {
    Tensor x = Tensor::vector({-1, -2, -0.5});
    Tape t;
    Var y = relu(t.parameter(x));
    EXPECT_EQ(y.value(), Tensor::vector({0, 0, 0}));
    t.backward(sum(y));
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Relu, SubgradientAtZeroIsZero) {
    Tensor x = Tensor::vector({0.0, 1.0});
    Tape t;
    t.backward(sum(relu(t.parameter(x))));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 1.0);
}

TEST(Relu, GradientMatchesFiniteDifferencesAwayFromZero) {
    const double worst = max_rel_error_over(100, [](Rng& rng) {
        Tensor x = gradcheck::random_tensor(rng, {3, 4});
        for (auto& v : x.values())
            if (std::abs(v) <= 1e-3) v = 0.5;
        Tensor w = gradcheck::random_tensor(rng, {3, 4});
        std::vector<Tensor*> ps{&x};
        return gradcheck::compare(ps, [&](Tape& t) { return gradcheck::project(t, relu(param(t, x)), w); }).rel_error;
    });
    EXPECT_LT(worst, 1e-6);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogTwo) {
    Tape t;
    const std::vector<std::size_t> y{0};
    EXPECT_NEAR(softmax_cross_entropy(t.constant(Tensor::matrix(1, 2, {0, 0})), y).value().item(), std::log(2.0),
                1e-15);
}

TEST(SoftmaxCrossEntropy, ConfidentLogitsStayAccurate) {
    Tape t;
    const std::vector<std::size_t> y{0};
    const double got = softmax_cross_entropy(t.constant(Tensor::matrix(1, 2, {10, -10})), y).value().item();
    // −log softmax = log(1 + e^{−20})
    EXPECT_NEAR(got, 2.06e-9, 0.01e-9);
    EXPECT_NEAR(got, std::log1p(std::exp(-20.0)), 1e-22);
}

TEST(SoftmaxCrossEntropy, LargeLogitsDoNotOverflow) {
    Tape t;
    const std::vector<std::size_t> y{1};
    const double got = softmax_cross_entropy(t.constant(Tensor::matrix(1, 2, {1000, 0})), y).value().item();
    EXPECT_NEAR(got, 1000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
    Tensor logits = Tensor::matrix(2, 3, {0.5, -1.0, 2.0, 0.0, 0.3, -0.7});
    const std::vector<std::size_t> y{2, 0};
    Tape t;
    t.backward(softmax_cross_entropy(t.parameter(logits), y));
    for (std::size_t r = 0; r < 2; ++r) {
        double z = 0.0;
        for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits(r, k));
        for (std::size_t k = 0; k < 3; ++k) {
            const double want = (std::exp(logits(r, k)) / z - (k == y[r] ? 1.0 : 0.0)) / 2.0;
            EXPECT_NEAR(logits.grad()[r * 3 + k], want, 1e-15);
        }
    }
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
    const double worst = max_rel_error_over(100, [](Rng& rng) {
        Tensor x = gradcheck::random_tensor(rng, {4, 5}, 2.0);
        std::vector<std::size_t> y{0, 4, 2, 2};
        std::vector<Tensor*> ps{&x};
        return gradcheck::compare(ps, [&](Tape& t) { return softmax_cross_entropy(param(t, x), y); }).rel_error;
    });
    EXPECT_LT(worst, 1e-5);
}

TEST(SoftmaxCrossEntropy, SumReductionScalesByBatch) {
    Tape t;
    Var x = t.constant(Tensor::matrix(2, 2, {0, 1, 3, -1}));
    const std::vector<std::size_t> y{0, 1};
    EXPECT_NEAR(softmax_cross_entropy(x, y, Reduction::sum).value().item(),
                2.0 * softmax_cross_entropy(x, y).value().item(), 1e-14);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeIsRejected) {
    Tape t;
    const std::vector<std::size_t> y{2};
    EXPECT_THROW(softmax_cross_entropy(t.constant(Tensor::matrix(1, 2, {0, 0})), y), ValidationError);
}

TEST(EuclideanDistance, IdenticalPointsGiveZeroAndZeroGradient) {
    Tensor a = Tensor::vector({1, 2, 3});
    Tensor b = Tensor::vector({1, 2, 3});
    Tape t;
    Var d = euclidean_distance(t.parameter(a), t.parameter(b));
    EXPECT_EQ(d.value().item(), 0.0);
    t.backward(d);
    for (double g : a.grad()) EXPECT_EQ(g, 0.0);
    for (double g : b.grad()) EXPECT_EQ(g, 0.0);
}

TEST(EuclideanDistance, ThreeFourFive) {
    Tape t;
    EXPECT_EQ(euclidean_distance(t.constant(Tensor::vector({0, 0})), t.constant(Tensor::vector({3, 4}))).value().item(),
              5.0);
}

TEST(EuclideanDistance, LengthMismatchIsRejected) {
    Tape t;
    EXPECT_THROW(euclidean_distance(t.constant(Tensor::vector({0, 0})), t.constant(Tensor::vector({3, 4, 5}))),
                 DimensionError);
}

TEST(EuclideanDistance, GradientMatchesFiniteDifferences) {
    const double worst = max_rel_error_over(100, [](Rng& rng) {
        Tensor a = gradcheck::random_tensor(rng, {6});
        Tensor b = gradcheck::random_tensor(rng, {6});
        std::vector<Tensor*> ps{&a, &b};
        return gradcheck::compare(ps, [&](Tape& t) { return euclidean_distance(param(t, a), param(t, b)); })
            .rel_error;
    });
    EXPECT_LT(worst, 1e-5);
}

TEST(Distances, RowAndPairwiseAgreeWithScalarDistance) {
    Rng rng(3);
    Tensor a = gradcheck::random_tensor(rng, {3, 4});
    Tensor b = gradcheck::random_tensor(rng, {3, 4});
    Tape t;
    Var rows = row_distances(t.constant(a), t.constant(b));
    Var pairs = pairwise_distances(t.constant(a), t.constant(b));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            Tape s;
            auto ar = a.row(i), bc = b.row(j);
            const double d = euclidean_distance(s.constant(Tensor::vector({ar.begin(), ar.end()})),
                                                s.constant(Tensor::vector({bc.begin(), bc.end()})))
                                 .value()
                                 .item();
            EXPECT_DOUBLE_EQ(pairs.value()(i, j), d);
            if (i == j) {
                EXPECT_DOUBLE_EQ(rows.value()[i], d);
            }
        }
    }
}

TEST(Sgd, SingleStep) {
    Tensor p = Tensor::scalar(1.0);
    p.grad()[0] = 2.0;
    std::vector<Tensor*> ps{&p};
    sgd_step(ps, 0.1);
    EXPECT_DOUBLE_EQ(p.item(), 0.8);
    EXPECT_FALSE(p.has_grad());
}

TEST(Sgd, ZeroGradientLeavesParameter) {
    Tensor p = Tensor::scalar(1.5);
    p.grad();
    std::vector<Tensor*> ps{&p};
    sgd_step(ps, 0.1);
    EXPECT_EQ(p.item(), 1.5);
}

TEST(Sgd, TwoStepsOnSquare) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> ps{&p};
    for (int i = 0; i < 2; ++i) {
        Tape t;
        Var x = t.parameter(p);
        t.backward(mul(x, x));
        sgd_step(ps, 0.1);
    }
    EXPECT_NEAR(p.item(), 0.64, 1e-15);
}

TEST(Sgd, MissingGradientIsContractViolation) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> ps{&p};
    EXPECT_THROW(sgd_step(ps, 0.1), ContractError);
}

TEST(Sgd, NonPositiveLearningRateIsRejected) {
    Tensor p = Tensor::scalar(1.0);
    p.grad();
    std::vector<Tensor*> ps{&p};
    EXPECT_THROW(sgd_step(ps, 0.0), ValidationError);
}

TEST(Tape, SharedOperandGradientIsSumOfPaths) {
    Tensor x = Tensor::vector({1.5, -2.0, 0.25});
    Tape t;
    Var v = t.parameter(x);
    t.backward(sum(mul(v, v)));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Tape, FanOutAccumulates) {
    Tensor x = Tensor::scalar(2.0);
    Tape t;
    Var v = t.parameter(x);
    Var y = add(add(v, v), scale(v, 3.0));
    t.backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}

TEST(Tape, ParameterNotReachedGetsZeroGradient) {
    Tensor used = Tensor::scalar(2.0), unused = Tensor::scalar(3.0);
    Tape t;
    Var a = t.parameter(used);
    t.parameter(unused);
    t.backward(scale(a, 2.0));
    EXPECT_TRUE(unused.has_grad());
    EXPECT_EQ(unused.grad()[0], 0.0);
}

TEST(Tape, BackwardNeedsScalar) {
    Tape t;
    Var v = t.constant(Tensor::vector({1, 2}));
    EXPECT_THROW(t.backward(v), DimensionError);
}

TEST(Tape, UntrackedForwardIsBitIdentical) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor w1 = gradcheck::random_tensor(rng, {5, 4});
        Tensor b1 = gradcheck::random_tensor(rng, {4});
        Tensor x = gradcheck::random_tensor(rng, {3, 5});
        Tensor g = gradcheck::random_tensor(rng, {2, 4});
        const std::vector<std::size_t> y{0, 3, 1};
        auto build = [&](Tape& t) {
            Var h = relu(add_bias(matmul(t.constant(x), t.parameter(w1)), t.parameter(b1)));
            Var ce = softmax_cross_entropy(h, y);
            Var d = pairwise_distances(h, t.constant(g));
            return add(ce, mean(d));
        };
        Tape on(true), off(false);
        EXPECT_EQ(build(on).value(), build(off).value());
        EXPECT_GT(on.size(), 0u);
    }
}

TEST(Tape, MixingTapesIsRejected) {
    Tape a, b;
    Var x = a.constant(Tensor::scalar(1.0));
    Var y = b.constant(Tensor::scalar(1.0));
    EXPECT_ANY_THROW(add(x, y));
}
