#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ntklab/linalg.hpp"
#include "ntklab/ntk_theory.hpp"

using namespace ntklab;

namespace {

Eigen::MatrixXd equicorrelated(int n, double rho) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Constant(n, n, rho);
    g.diagonal().setOnes();
    return g;
}

}  // namespace

TEST(Fractions, EqualWidths) {
    const auto a = equal_width_fractions(4, InputLayer::activated, 100);
    EXPECT_EQ(a, std::vector<double>(4, 1.0));
    const auto b = equal_width_fractions(4, InputLayer::linear, 100);
    EXPECT_DOUBLE_EQ(b[0], 0.01);
    EXPECT_DOUBLE_EQ(width_alpha(a), 3.0);
    EXPECT_DOUBLE_EQ(width_alpha(b), 2.01);
    EXPECT_DOUBLE_EQ(width_alpha(std::vector<double>{0.5}), 0.5);
    EXPECT_THROW(width_alpha(std::vector<double>{}), ShapeError);
}

TEST(Kappas, UnitCorrelationGivesEqualKappas) {
    for (Activation act : {Activation::relu, Activation::erf, Activation::tanh}) {
        const auto t = run_trace(InitHyper(1.7, 0.4, act), 8, 1.0, 1.0);
        const auto k = compute_kappas(t, equal_width_fractions(8, InputLayer::activated, 1));
        EXPECT_NEAR(k.kappa1, k.kappa2, 1e-10 * k.kappa1) << to_string(act);
        EXPECT_NEAR(k.bias1, k.bias2, 1e-10 * k.bias1);
    }
}

TEST(Kappas, ReluEdgeOfChaosByHand) {
    // q_hat = 1/2 and p = 1 at every layer; five terms of (1/4)(1/2).
    const auto t = run_trace(InitHyper(2.0, 0.0, Activation::relu), 5, 1.0, 0.5);
    const auto k = compute_kappas(t, equal_width_fractions(5, InputLayer::activated, 1));
    EXPECT_DOUBLE_EQ(k.kappa1, 0.625);
    EXPECT_DOUBLE_EQ(k.bias1, 5.0);
    EXPECT_DOUBLE_EQ(k.kappa1_bar, k.kappa1);
}

TEST(Kappas, LengthMismatch) {
    const auto t = run_trace(InitHyper(1.0, 1.0, Activation::erf), 4, 1.0, 0.5);
    EXPECT_THROW(compute_kappas(t, std::vector<double>(3, 1.0)), ShapeError);
    EXPECT_THROW(compute_kappas(t, std::vector<double>{1.0, 0.0, 1.0, 1.0}), std::invalid_argument);
}

TEST(Kappas, DiagonalDominatesForNonNegativeCovariance) {
    for (Activation act : {Activation::relu, Activation::erf, Activation::tanh})
        for (double c0 : {0.0, 0.3, 0.9})
            for (double sw : {1.0, 3.0}) {
                const auto t = run_trace(InitHyper(sw, 1.0, act), 10, 1.0, c0);
                const auto k = compute_kappas(t, equal_width_fractions(10, InputLayer::activated, 1));
                EXPECT_GE(k.kappa1, k.kappa2);
            }
}

TEST(Kappas, OrderedErfRatioDecreasesTowardOne) {
    const InitHyper h(1.0, 1.0, Activation::erf);
    double prev = INFINITY;
    for (int depth = 1; depth <= 30; ++depth) {
        const auto k = compute_kappas(reference_trace(h, depth, 0.5),
                                      equal_width_fractions(depth, InputLayer::activated, 1));
        const double r = condition_ratio(k, 2).ratio;
        EXPECT_GT(r, 1.0);
        EXPECT_LT(r, prev) << depth;
        prev = r;
    }
    EXPECT_LT(prev, 1.05);
}

TEST(ConditionRatio, Limits) {
    KappaPair k;
    k.kappa1_bar = k.kappa2_bar = 2.0;
    EXPECT_DOUBLE_EQ(condition_ratio(k, 4).ratio, 1.0);
    EXPECT_TRUE(std::isinf(condition_ratio(k, 4).condition_number));
    k.kappa2_bar = 0.0;
    const auto c = condition_ratio(k, 4);
    EXPECT_TRUE(c.kappa2_zero);
    EXPECT_TRUE(std::isinf(c.ratio));
    EXPECT_DOUBLE_EQ(c.condition_number, 1.0);
}

TEST(ThetaStar, SingleSample) {
    const InitHyper h(3.0, 1.0, Activation::erf);
    const PairTraceTable table(h, 4, Eigen::MatrixXd::Ones(1, 1), InputLayer::linear);
    const auto fr = equal_width_fractions(4, InputLayer::linear, 50);
    const auto pk = pairwise_kappas(table, fr);
    const auto ref = compute_kappas(reference_trace(h, 4, 0.5, InputLayer::linear), fr);
    const auto t = build_theta_star(pk, 50, width_alpha(fr), ref);
    ASSERT_EQ(t.matrix.rows(), 1);
    EXPECT_DOUBLE_EQ(t.matrix(0, 0), t.scale * pk.kappa(0, 0) + pk.bias(0, 0));
    EXPECT_EQ(t.perturbation, Eigen::MatrixXd::Zero(1, 1));
}

TEST(ThetaStar, IdenticalInputsGiveRankOne) {
    const InitHyper h(1.0, 1.0, Activation::erf);
    const PairTraceTable table(h, 6, Eigen::MatrixXd::Ones(4, 4), InputLayer::activated);
    const auto fr = equal_width_fractions(6, InputLayer::activated, 100);
    const auto pk = pairwise_kappas(table, fr);
    EXPECT_NEAR((pk.kappa - Eigen::MatrixXd::Constant(4, 4, pk.kappa(0, 0))).norm(), 0.0, 1e-12);
    KappaPair ref;
    ref.kappa1_bar = ref.kappa2_bar = pk.kappa(0, 0);
    EXPECT_TRUE(std::isinf(condition_ratio(ref, 4).condition_number));
    const auto t = build_theta_star(pk, 100, width_alpha(fr), ref);
    EXPECT_EQ(t.perturbation.size(), 0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.matrix);
    EXPECT_LT(es.eigenvalues()(2) / es.eigenvalues()(3), 1e-12);
}

TEST(ThetaStar, ErfChaoticThreeSampleFixture) {
    // Frozen from an independent 30-digit evaluation of the same sums. The pairwise
    // covariances {0, 0.5, 0.9} are not realizable by three unit vectors, but the
    // kernel only consumes pairwise traces.
    Eigen::MatrixXd gram(3, 3);
    gram << 1, 0, 0.5, 0, 1, 0.9, 0.5, 0.9, 1;
    Eigen::MatrixXd expected(3, 3);
    expected << 7763.1121224917365, 1810.0919096583095, 2178.9936027606361, 1810.0919096583095, 7763.1121224917365,
        3686.1782633396712, 2178.9936027606361, 3686.1782633396712, 7763.1121224917365;
    const InitHyper h(3.0, 1.0, Activation::erf);
    const PairTraceTable table(h, 10, gram, InputLayer::linear, 2);
    const auto fr = equal_width_fractions(10, InputLayer::linear, 1000);
    const auto ref = compute_kappas(reference_trace(h, 10, 0.5, InputLayer::linear), fr);
    const auto t = build_theta_star(pairwise_kappas(table, fr), 1000, width_alpha(fr), ref);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(t.matrix(i, j), expected(i, j), 1e-10 * expected(i, j));
    EXPECT_TRUE(is_symmetric(t.matrix, 0.0));
    const Eigen::MatrixXd rebuilt = t.mean_part.matrix() * (Eigen::MatrixXd::Identity(3, 3) + t.perturbation);
    EXPECT_LT((rebuilt - t.matrix).norm(), 1e-10 * t.matrix.norm());
}

TEST(ThetaStar, DiagonalIsScaledKappa1) {
    const InitHyper h(2.0, 0.5, Activation::tanh);
    const PairTraceTable table(h, 5, equicorrelated(4, 0.3), InputLayer::activated);
    const auto fr = equal_width_fractions(5, InputLayer::activated, 64);
    const auto pk = pairwise_kappas(table, fr);
    const auto ref = compute_kappas(reference_trace(h, 5), fr);
    const auto t = build_theta_star(pk, 64, width_alpha(fr), ref);
    const auto single = compute_kappas(run_trace(h, 5, 1.0, 1.0), fr);
    for (int s = 0; s < 4; ++s) EXPECT_NEAR(t.matrix(s, s), t.scale * single.kappa1 + single.bias1, 1e-9);
}

TEST(Woodbury, ClosedFormInverse) {
    for (Eigen::Index s = 2; s <= 16; ++s)
        for (double k2 : {0.1, 0.5, 0.95}) {
            MeanPart m;
            m.theta1 = 3.0;
            m.theta2 = 3.0 * k2;
            m.size = s;
            const Eigen::MatrixXd prod = m.inverse() * m.matrix();
            EXPECT_LT((prod - Eigen::MatrixXd::Identity(s, s)).cwiseAbs().maxCoeff(), 1e-10);
        }
    MeanPart singular;
    singular.theta1 = singular.theta2 = 1.0;
    singular.size = 3;
    EXPECT_THROW(singular.inverse(), IllConditionedError);
}

TEST(Nngp, SingleInputAndReluEdgeOfChaos) {
    const PairTraceTable one(InitHyper(1.5, 0.5, Activation::erf), 7, Eigen::MatrixXd::Ones(1, 1),
                             InputLayer::activated);
    EXPECT_DOUBLE_EQ(nngp_matrix(one).matrix(0, 0), run_trace(InitHyper(1.5, 0.5, Activation::erf), 7, 1.0, 1.0).q[7]);
    for (int depth : {1, 5, 20}) {
        const PairTraceTable t(InitHyper(2.0, 0.0, Activation::relu), depth, equicorrelated(5, 0.4), InputLayer::activated);
        const auto k = nngp_matrix(t);
        for (int s = 0; s < 5; ++s) EXPECT_DOUBLE_EQ(k.matrix(s, s), 1.0);
        EXPECT_TRUE(is_psd(k.matrix));
    }
}

TEST(PairTraceTable, RejectsUnequalNorms) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Identity(2, 2);
    g(1, 1) = 2.0;
    EXPECT_THROW(PairTraceTable(InitHyper(1, 1, Activation::erf), 3, g, InputLayer::linear), std::invalid_argument);
    EXPECT_THROW(PairTraceTable(InitHyper(1, 1, Activation::erf), 3, Eigen::MatrixXd::Ones(2, 3), InputLayer::linear),
                 ShapeError);
}

TEST(SolveSpd, JitterEscalation) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 3);
    const auto sol = solve_spd(a, Eigen::VectorXd::Ones(3));
    EXPECT_GT(sol.jitter, 0.0);
    Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(3, 3);
    try {
        solve_spd(neg, Eigen::VectorXd::Ones(3));
        FAIL();
    } catch (const IllConditionedError& e) {
        EXPECT_NEAR(e.final_jitter(), 1e-4, 1e-12);
    }
    const auto ok = solve_spd(Eigen::MatrixXd::Identity(2, 2) * 4.0, Eigen::VectorXd::Ones(2));
    EXPECT_EQ(ok.jitter, 0.0);
    EXPECT_DOUBLE_EQ(ok.solution(0), 0.25);
}

TEST(TrainedOutput, InterpolatesTrainingLabels) {
    const InitHyper h(3.0, 1.0, Activation::erf);
    for (int s : {4, 16, 64}) {
        const PairTraceTable table(h, 6, equicorrelated(s, 0.3), InputLayer::linear);
        const auto fr = equal_width_fractions(6, InputLayer::linear, 128);
        const auto ref = compute_kappas(reference_trace(h, 6, 0.5, InputLayer::linear), fr);
        const Eigen::MatrixXd theta = build_theta_star(pairwise_kappas(table, fr), 128, width_alpha(fr), ref).matrix;
        RandomStream rng(9, s);
        Eigen::VectorXd y(s), f0(s);
        for (int i = 0; i < s; ++i) {
            y(i) = rng.normal();
            f0(i) = rng.normal();
        }
        for (int i = 0; i < s; ++i) {
            const double out = trained_output(theta, theta.col(i), f0(i), f0, y);
            EXPECT_NEAR(out, y(i), 1e-8 * std::max(1.0, std::abs(y(i))));
        }
    }
}

TEST(TrainedOutput, HandInverted2x2) {
    Eigen::MatrixXd theta(2, 2);
    theta << 4, 1, 1, 3;
    const Eigen::Vector2d tx(2, 1), y(1, -1), f0(0.5, 0.25);
    // inverse = [3 -1; -1 4] / 11
    const Eigen::Vector2d r = y - f0;
    const Eigen::Vector2d v((3 * r(0) - r(1)) / 11, (-r(0) + 4 * r(1)) / 11);
    EXPECT_NEAR(trained_output(theta, tx, 0.1, f0, y), tx.dot(v) + 0.1, 1e-12);
    EXPECT_NEAR(trained_output(theta, tx, 0.0, Eigen::Vector2d::Zero(), y),
                tx.dot(Eigen::Vector2d((3 * y(0) - y(1)) / 11, (-y(0) + 4 * y(1)) / 11)), 1e-12);
    EXPECT_THROW(trained_output(theta, Eigen::VectorXd::Ones(3), 0.0, f0, y), ShapeError);
}

TEST(PredictVariance, Limits) {
    const auto ordered = predict_variance(1.0, 2.0, 1.5, 10);
    EXPECT_DOUBLE_EQ(ordered.A, 1.0);
    EXPECT_DOUBLE_EQ(ordered.variance, (1.0 + 1.0 / 10) * 0.5);
    const auto chaotic = predict_variance(INFINITY, 2.0, 1.5, 10);
    EXPECT_DOUBLE_EQ(chaotic.A, 0.0);
    EXPECT_DOUBLE_EQ(chaotic.variance, 2.0);
    const auto p = predict_variance(5.0, 2.0, 1.5, 128);
    EXPECT_DOUBLE_EQ(p.A, 128.0 / 132.0);
    const double a = 128.0 / 132.0;
    EXPECT_DOUBLE_EQ(p.variance, (1 + a * a / 128) * 0.5 + (a - 1) * (a - 1) * 1.5);
    // A large finite ratio approaches the chaotic limit.
    EXPECT_NEAR(predict_variance(1e12, 2.0, 1.5, 10).variance, 2.0, 1e-10);
}

TEST(PredictVariance, Preconditions) {
    EXPECT_THROW(predict_variance(0.9, 2.0, 1.5, 10), std::invalid_argument);
    EXPECT_THROW(predict_variance(2.0, 1.0, 1.5, 10), std::invalid_argument);
    EXPECT_THROW(predict_variance(2.0, 1.0, -0.5, 10), std::invalid_argument);
    EXPECT_THROW(predict_variance(2.0, 2.0, 1.0, 0), std::invalid_argument);
}

TEST(MonteCarlo, ZeroCovarianceGivesZero) {
    const auto r = variance_oracle_mc(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(3),
                                      Eigen::MatrixXd::Zero(4, 4), 5000, 1);
    EXPECT_EQ(r.variance, 0.0);
}

TEST(MonteCarlo, SingleSampleClosedForm) {
    // out = f(x) - (t / T) f(x1); Var = K00 - 2 (t/T) K01 + (t/T)^2 K11 with x1 first.
    Eigen::MatrixXd theta(1, 1);
    theta << 5.0;
    Eigen::VectorXd tx(1);
    tx << 2.0;
    Eigen::MatrixXd k(2, 2);
    k << 1.2, 0.7, 0.7, 1.5;
    const double w = 2.0 / 5.0;
    const double exact = 1.5 - 2 * w * 0.7 + w * w * 1.2;
    const auto r = variance_oracle_mc(theta, tx, k, 100000, 77);
    EXPECT_NEAR(r.variance, exact, 3 * r.standard_error);
    EXPECT_FALSE(r.psd_warning);
}

TEST(MonteCarlo, ThreadCountDoesNotChangeResult) {
    Eigen::MatrixXd theta = equicorrelated(4, 0.2) * 10;
    Eigen::VectorXd tx = Eigen::VectorXd::Constant(4, 2.0);
    const Eigen::MatrixXd k = equicorrelated(5, 0.4);
    const auto a = variance_oracle_mc(theta, tx, k, 20000, 5, 1);
    const auto b = variance_oracle_mc(theta, tx, k, 20000, 5, 3);
    EXPECT_EQ(a.variance, b.variance);
}

TEST(MonteCarlo, IndefiniteCovarianceIsClipped) {
    Eigen::MatrixXd k(2, 2);
    k << 1.0, 1.1, 1.1, 1.0;
    const auto r = variance_oracle_mc(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), k, 4096, 1);
    EXPECT_TRUE(r.psd_warning);
    EXPECT_LT(r.min_eigenvalue, 0.0);
    EXPECT_GT(r.variance, 0.0);
}

TEST(MonteCarlo, AgreesWithPredictionForChaoticErf) {
    const InitHyper h(3.0, 1.0, Activation::erf);
    const int depth = 8, width = 1024, s = 16;
    const PairTraceTable table(h, depth, equicorrelated(s + 1, 0.5), InputLayer::linear);
    const auto fr = equal_width_fractions(depth, InputLayer::linear, width);
    const auto ref_trace = reference_trace(h, depth, 0.5, InputLayer::linear);
    const auto ref = compute_kappas(ref_trace, fr);
    const auto t = build_theta_star(pairwise_kappas(table, fr), width, width_alpha(fr), ref);
    const auto pred = predict_variance(t.mean_part.effective_ratio(), ref_trace.q[depth], ref_trace.q_sr[depth], s);
    const auto mc = variance_oracle_mc(t.matrix.topLeftCorner(s, s), t.matrix.col(s).head(s), nngp_matrix(table).matrix,
                                       40000, 3);
    EXPECT_GE(t.mean_part.effective_ratio(), 2.0);
    EXPECT_LT(std::abs(pred.variance - mc.variance) / mc.variance, 0.1);
}
