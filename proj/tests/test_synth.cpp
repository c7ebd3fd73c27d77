#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "bhgcn/synth.hpp"

using namespace bhgcn;
using namespace bhgcn::synth;

namespace {

SynthSpec tiny() {
    SynthSpec s;
    s.subjects_per_class = 3;
    s.roi_count = 12;
    s.time_points = 40;
    return s;
}

double mean_abs_offdiag(const Eigen::MatrixXd& c) {
    double s = 0;
    for (Eigen::Index i = 0; i < c.rows(); ++i)
        for (Eigen::Index j = 0; j < c.cols(); ++j)
            if (i != j) s += std::abs(c(i, j));
    return s / static_cast<double>(c.rows() * (c.rows() - 1));
}

EdgeList path(std::size_t n) {
    EdgeList e;
    for (std::size_t i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
    return e;
}

}  // namespace

TEST(Synth, SameSeedSameSeries) {
    const auto a = generate_dataset(tiny()), b = generate_dataset(tiny());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].series, b[i].series);
        EXPECT_EQ(a[i].label, b[i].label);
    }
    auto other = tiny();
    other.seed = 43;
    EXPECT_NE(generate_dataset(other)[0].series, a[0].series);
}

TEST(Synth, BalancedAndLabelled) {
    const auto d = generate_dataset(tiny());
    int ones = 0;
    for (const auto& s : d) ones += *s.label;
    EXPECT_EQ(d.size(), 6u);
    EXPECT_EQ(ones, 3);
    EXPECT_EQ(d[0].series.rows(), 12);
    EXPECT_EQ(d[0].series.cols(), 40);
}

TEST(Synth, LargeNoiseDecorrelates) {
    auto s = tiny();
    s.noise = 100;
    s.time_points = 400;
    std::mt19937_64 rng(1);
    EXPECT_LT(mean_abs_offdiag(graph::pearson_correlation(generate_subject(s, 0, rng).series)), 0.1);
}

TEST(Synth, TreeNeighboursCorrelateMore) {
    auto s = tiny();
    s.noise = 0;
    s.rewire = 0;
    s.time_points = 4000;
    for (int cls : {0, 1}) {
        std::mt19937_64 rng(2);
        const auto c = graph::pearson_correlation(generate_subject(s, cls, rng).series);
        const auto tree = latent_tree(s.roi_count, cls ? 3 : 2);
        std::set<std::pair<std::size_t, std::size_t>> adj(tree.begin(), tree.end());
        double in = 0, out = 0;
        int nin = 0, nout = 0;
        for (std::size_t i = 0; i < s.roi_count; ++i)
            for (std::size_t j = i + 1; j < s.roi_count; ++j) {
                const double v = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (adj.count({i, j}) || adj.count({j, i})) {
                    in += v;
                    ++nin;
                } else {
                    out += v;
                    ++nout;
                }
            }
        EXPECT_GT(in / nin, out / nout) << "class " << cls;
    }
}

TEST(Synth, LatentTreeShape) {
    const auto t = latent_tree(13, 3);
    EXPECT_EQ(t.size(), 12u);
    const auto d = hop_distances(t, 13);
    EXPECT_EQ(d[0][12], 2.0);
    const auto limited = latent_tree(10, 2, 1);
    for (const auto& [p, c] : limited) EXPECT_LE(hop_distances(limited, 10)[0][c], 2.0);
}

TEST(Synth, InvalidSpecRejected) {
    auto s = tiny();
    s.roi_count = 3;
    EXPECT_THROW(generate_dataset(s), Error);
    s = tiny();
    s.coupling = 5;
    std::mt19937_64 rng(0);
    EXPECT_THROW(generate_subject(s, 0, rng), Error);
}

TEST(Distortion, TwoNodesExact) {
    for (auto geo : {Geometry::hyperbolic, Geometry::euclidean}) {
        EmbedOptions o;
        o.geometry = geo;
        o.iters = 500;
        EXPECT_LT(embed_tree_distortion({{0, 1}}, 2, o).average, 1e-3);
    }
}

TEST(Distortion, EuclideanPathIsNearIsometric) {
    EmbedOptions o;
    o.geometry = Geometry::euclidean;
    EXPECT_LT(embed_tree_distortion(path(8), 8, o).average, 0.05);
}

TEST(Distortion, DisconnectedRejected) {
    EXPECT_THROW(embed_tree_distortion({{0, 1}}, 3, EmbedOptions{}), Error);
}

TEST(Distortion, RelabellingInvariant) {
    // reverse a path: same tree, different labels
    EdgeList rev;
    for (auto [a, b] : path(6)) rev.push_back({5 - a, 5 - b});
    EmbedOptions o;
    o.geometry = Geometry::euclidean;
    EXPECT_NEAR(embed_tree_distortion(path(6), 6, o).average, embed_tree_distortion(rev, 6, o).average, 0.02);
}

TEST(Distortion, HyperbolicBeatsEuclideanOnBinaryTree) {
    const auto tree = binary_tree(5);
    EmbedOptions o;
    const auto h = embed_tree_distortion(tree, 63, o);
    o.geometry = Geometry::euclidean;
    const auto e = embed_tree_distortion(tree, 63, o);
    EXPECT_LT(h.average, e.average) << h.average << " vs " << e.average;
}
