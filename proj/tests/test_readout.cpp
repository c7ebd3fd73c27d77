#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bhgcn/readout.hpp"
#include "bhgcn/selftest.hpp"

using namespace bhgcn;
using namespace bhgcn::readout;

namespace {

Tensor stack(const std::vector<LorentzPoint>& pts) {
    const std::size_t c = static_cast<std::size_t>(pts.front().coords.size());
    Tensor t(Shape{pts.size(), c});
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) t(i, j) = pts[i].coords[static_cast<Eigen::Index>(j)];
    return t;
}

}  // namespace

TEST(Karcher, SinglePointIsFixed) {
    std::mt19937_64 rng(1);
    const auto p = selftest::random_point(rng, 4, 1.0);
    EXPECT_LT((karcher_flow({p}, 5, 0.1).coords - p.coords).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((karcher_flow({p, p, p}, 5, 0.1).coords - p.coords).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(karcher_flow({}, 5, 0.1), Error);
}

TEST(Karcher, TwoPointsReachGeodesicMidpoint) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = selftest::random_point(rng, 3, 1.0), y = selftest::random_point(rng, 3, 1.0);
        const auto mu = karcher_flow({x, y}, 50, 0.5);
        EXPECT_NEAR(lorentz::geodesic_distance(mu, x), lorentz::geodesic_distance(mu, y), 1e-6);
        const auto oracle = selftest::geodesic_midpoint_oracle(x, y);
        const double fo = frechet_objective({x, y}, oracle), fm = frechet_objective({x, y}, mu);
        EXPECT_LE(fm, fo + 1e-9);
    }
}

TEST(Karcher, ObjectiveNonIncreasingAndMidpointSuite) {
    const auto r = selftest::karcher_suite(3);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Karcher, PermutationInvariant) {
    std::mt19937_64 rng(4);
    std::vector<LorentzPoint> pts;
    for (int i = 0; i < 8; ++i) pts.push_back(selftest::random_point(rng, 5, 2.0));
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto a = karcher_flow(pts, 5, 0.1), b = karcher_flow(shuffled, 5, 0.1);
    EXPECT_LT((a.coords - b.coords).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Karcher, BatchedMatchesPoint) {
    std::mt19937_64 rng(5);
    std::vector<LorentzPoint> pts;
    for (int i = 0; i < 9; ++i) pts.push_back(selftest::random_point(rng, 4, 0.7));
    for (auto init : {KarcherInit::mean_projection, KarcherInit::first_node}) {
        ad::Tape t;
        ReadoutConfig cfg;
        cfg.init = init;
        const Tensor mu = batched::karcher_flow(t.constant(stack(pts)), t.constant(0.7), cfg).value();
        const auto ref = karcher_flow(pts, 5, 0.1, init);
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(mu[j], ref.coords[static_cast<Eigen::Index>(j)], 1e-10);
    }
}

TEST(TangentPool, Examples) {
    std::mt19937_64 rng(6);
    const auto mu = selftest::random_point(rng, 3, 1.0);
    EXPECT_EQ(tangent_pool({mu, mu}, mu), Vec::Zero(4));
    const Vec v = selftest::random_tangent(rng, mu, 0.8);
    const auto plus = lorentz::exp_map(mu, v), minus = lorentz::exp_map(mu, Vec(-v));
    EXPECT_LT(tangent_pool({plus, minus}, mu).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_TRUE(lorentz::is_tangent(mu, tangent_pool({plus, selftest::random_point(rng, 3, 1.0)}, mu)));
}

TEST(Classifier, Examples) {
    ClassifierParams p;
    p.W = Eigen::MatrixXd::Zero(2, 3);
    const auto l0 = classify(Vec::Zero(3), p);
    EXPECT_EQ(l0, Eigen::Vector2d(0, 0));
    EXPECT_EQ(softmax(l0), Eigen::Vector2d(0.5, 0.5));
    p.b = Eigen::Vector2d(0.3, -1.1);
    EXPECT_EQ(classify(Vec::Constant(3, 9.0), p), p.b);
    const auto s = softmax(Eigen::Vector2d(std::log(3.0), 0));
    EXPECT_NEAR(s[0], 0.75, 1e-15);
    EXPECT_NEAR(s[1], 0.25, 1e-15);
    EXPECT_THROW(classify(Vec::Zero(4), p), ShapeError);
}

TEST(CrossEntropy, Examples) {
    EXPECT_NEAR(cross_entropy(Eigen::Vector2d(0, 0), 0), 0.693147, 1e-6);
    EXPECT_NEAR(cross_entropy(Eigen::Vector2d(0, 0), 1), std::log(2.0), 1e-15);
    EXPECT_LT(cross_entropy(Eigen::Vector2d(30, -30), 0), 1e-12);
    EXPECT_NEAR(cross_entropy(Eigen::Vector2d(std::log(3.0), 0), 1), std::log(4.0), 1e-14);
    EXPECT_THROW(cross_entropy(Eigen::Vector2d(0, 0), 2), Error);

    ad::Tape t;
    EXPECT_NEAR(batched::cross_entropy(t.constant(Tensor::matrix({{std::log(3.0), 0}})), 1).item(), std::log(4.0), 1e-14);
    EXPECT_LT(batched::cross_entropy(t.constant(Tensor::matrix({{30, -30}})), 0).item(), 1e-12);
}

TEST(Readout, ConfigValidation) {
    ReadoutConfig c;
    c.validate();
    c.karcher_iters = 0;
    EXPECT_THROW(c.validate(), Error);
    c.karcher_iters = 5;
    c.eta = 0;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Readout, BatchedPoolGradients) {
    std::mt19937_64 rng(7);
    std::vector<LorentzPoint> pts;
    for (int i = 0; i < 6; ++i) pts.push_back(selftest::random_point(rng, 3, 1.0));
    const Tensor X = stack(pts);
    const Tensor W = Tensor::matrix({{0.3, -0.2, 0.5, 0.1}, {-0.4, 0.6, 0.2, -0.3}});
    const auto rep = ad::check_gradients(
        [&](ad::Tape& t, const std::vector<ad::Var>& p) {
            ad::Var K = p[1] * p[1] + 0.5;
            ad::Var x = lorentz::rows::project(p[0], K);
            ad::Var mu = batched::karcher_flow(x, K, ReadoutConfig{});
            ad::Var z = batched::tangent_pool(x, mu, K);
            return batched::cross_entropy(batched::classify(z, t.constant(W), t.constant(Tensor::matrix({{0.1, 0}}))), 1);
        },
        {X, Tensor::scalar(0.8)}, 1e-5, 1e-5);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}
