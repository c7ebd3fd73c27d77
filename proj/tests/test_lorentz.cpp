#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bhgcn/lorentz.hpp"
#include "bhgcn/selftest.hpp"

using namespace bhgcn;
using namespace bhgcn::lorentz;

namespace {

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

LorentzPoint pt(double a, double b, double c, double K) { return {v3(a, b, c), K}; }

}  // namespace

TEST(Lorentz, InnerProductExamples) {
    EXPECT_EQ(lorentz_inner(v3(1, 0, 0), v3(1, 0, 0)), -1.0);
    EXPECT_EQ(lorentz_inner(v3(1, 0, 0), v3(0, 1, 0)), 0.0);
    EXPECT_EQ(lorentz_inner(v3(2, 1, 1), v3(3, 2, 2)), -2.0);
    EXPECT_THROW(lorentz_inner(v3(1, 0, 0), Vec::Zero(2)), ShapeError);
}

TEST(Lorentz, DistanceExamples) {
    const auto x = pt(1, 0, 0, 1);
    EXPECT_EQ(geodesic_distance(x, x), 0.0);
    EXPECT_NEAR(geodesic_distance(x, pt(std::cosh(1.0), std::sinh(1.0), 0, 1)), 1.0, 1e-12);
    EXPECT_NEAR(geodesic_distance(pt(2, 0, 0, 4), pt(2 * std::cosh(1.0), 2 * std::sinh(1.0), 0, 4)), 1.0, 1e-12);
    EXPECT_THROW(geodesic_distance(x, pt(2, 0, 0, 4)), GeometryError);
}

TEST(Lorentz, ExpMapExamples) {
    const auto x = pt(1, 0, 0, 1);
    EXPECT_EQ(exp_map(x, Vec::Zero(3)).coords, x.coords);
    const auto y = exp_map(x, v3(0, 1, 0));
    EXPECT_NEAR(y.coords[0], 1.543081, 1e-6);
    EXPECT_NEAR(y.coords[1], 1.175201, 1e-6);
    EXPECT_EQ(y.coords[2], 0.0);
    const auto z = exp_map(pt(2, 0, 0, 4), v3(0, 2, 0));
    EXPECT_NEAR(z.coords[0], 2 * std::cosh(1.0), 1e-12);
    EXPECT_NEAR(z.coords[1], 2 * std::sinh(1.0), 1e-12);
    EXPECT_THROW(exp_map(x, v3(1, 0, 0)), GeometryError);
}

TEST(Lorentz, LogMapExamples) {
    const auto x = pt(1, 0, 0, 1);
    EXPECT_EQ(log_map(x, x).coords, Vec::Zero(3));
    const auto v = log_map(x, pt(std::cosh(1.0), std::sinh(1.0), 0, 1)).coords;
    EXPECT_NEAR(v[0], 0.0, 1e-12);
    EXPECT_NEAR(v[1], 1.0, 1e-12);
    EXPECT_NEAR(v[2], 0.0, 1e-12);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto a = selftest::random_point(rng, 4, 1.5), b = selftest::random_point(rng, 4, 1.5);
        const auto back = exp_map(log_map(a, b));
        EXPECT_LT((back.coords - b.coords).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Lorentz, TransportExamples) {
    const auto x = pt(1, 0, 0, 1), y = pt(std::cosh(1.0), std::sinh(1.0), 0, 1);
    const TangentVector v{v3(0, 1, 0), x};
    EXPECT_EQ(parallel_transport(x, x, v).coords, v.coords);
    const auto r = parallel_transport(x, y, v).coords;
    EXPECT_NEAR(lorentz_inner(r, r), 1.0, 1e-12);
    EXPECT_NEAR(lorentz_inner(r, y.coords), 0.0, 1e-12);

    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
        const auto a = selftest::random_point(rng, 3, 0.7), b = selftest::random_point(rng, 3, 0.7);
        const TangentVector u{selftest::random_tangent(rng, a, 1.3), a};
        EXPECT_NEAR(lorentz_inner(parallel_transport(a, b, u).coords, b.coords), 0.0, 1e-10);
    }
}

TEST(Lorentz, ProjectionExamples) {
    EXPECT_EQ(project_to_hyperboloid(v3(0.9, 0, 0), 1).coords, v3(1, 0, 0));
    const auto p = project_to_hyperboloid(v3(5, 3, 4), 1);
    EXPECT_EQ(p.coords, v3(std::sqrt(26.0), 3, 4));
    const auto q = project_to_hyperboloid(p.coords, 1);
    EXPECT_LT((q.coords - p.coords).cwiseAbs().maxCoeff(), 1e-15);

    const auto x = pt(1, 0, 0, 1);
    EXPECT_EQ(project_to_tangent(x, v3(0, 2, 3)).coords, v3(0, 2, 3));
    EXPECT_LT(project_to_tangent(x, x.coords).coords.cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(project_to_tangent(x, v3(1, 1, 0)).coords, v3(0, 1, 0));
}

TEST(Lorentz, TimelikeNormIsAnError) { EXPECT_THROW(lorentz_norm(v3(1, 0, 0)), GeometryError); }

TEST(Lorentz, DistanceSymmetryAndTriangle) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto a = selftest::random_point(rng, 3, 1.0), b = selftest::random_point(rng, 3, 1.0),
                   c = selftest::random_point(rng, 3, 1.0);
        EXPECT_EQ(geodesic_distance(a, b), geodesic_distance(b, a));
        EXPECT_LE(geodesic_distance(a, c), geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-9);
    }
}

TEST(Lorentz, ExpOutputOnManifold) {
    std::mt19937_64 rng(6);
    for (double K : {0.5, 1.0, 2.0})
        for (int i = 0; i < 100; ++i) {
            const auto x = selftest::random_point(rng, 5, K);
            const auto y = exp_map(x, selftest::random_tangent(rng, x, 3.0));
            EXPECT_TRUE(on_hyperboloid(y, 1e-9));
        }
}

TEST(Lorentz, PropertySuites) {
    for (const auto& r : {selftest::round_trip_suite(11), selftest::norm_identity_suite(12),
                          selftest::transport_suite(13), selftest::batched_agreement_suite(14)})
        EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(Lorentz, ManifoldOpGradients) {
    const auto r = selftest::primitive_gradient_suite(15);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Lorentz, BatchedLogNearCoincidentPoints) {
    ad::Tape t;
    std::mt19937_64 rng(1);
    const auto x = selftest::random_point(rng, 2, 1.0);
    Vec dir = v3(0, 1e-5, -2e-5);
    const auto y = exp_map(x, project_to_tangent(x, dir).coords);
    Tensor X(Shape{1, 3}), Y(Shape{1, 3});
    for (int i = 0; i < 3; ++i) {
        X[static_cast<std::size_t>(i)] = x.coords[i];
        Y[static_cast<std::size_t>(i)] = y.coords[i];
    }
    const Tensor v = rows::log(t.constant(X), t.constant(Y), t.constant(1.0)).value();
    const Vec ref = log_map(x, y).coords;
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(v[static_cast<std::size_t>(i)], ref[i], 1e-12);
}
