#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "bhgcn/graph.hpp"

using namespace bhgcn;
using namespace bhgcn::graph;

namespace {

Eigen::MatrixXd random_correlation(std::mt19937_64& rng, int n, int t = 12) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd s(n, t);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < t; ++j) s(i, j) = g(rng);
    return pearson_correlation(s);
}

using EdgeSet = std::set<std::tuple<std::size_t, std::size_t, double>>;

EdgeSet as_set(const std::vector<Edge>& es) {
    EdgeSet out;
    for (const auto& e : es) out.insert({e.i, e.j, e.w});
    return out;
}

// Rank-counting reference: j is selected by i iff fewer than k rivals beat it.
EdgeSet brute_force(const Eigen::MatrixXd& c, std::size_t k, int sign) {
    const auto n = static_cast<std::size_t>(c.rows());
    auto val = [&](std::size_t i, std::size_t j) {
        return std::max(0.0, sign * c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    };
    EdgeSet out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || val(i, j) <= 0) continue;
            std::size_t beaten_by = 0;
            for (std::size_t l = 0; l < n; ++l)
                if (l != i && l != j && (val(i, l) > val(i, j) || (val(i, l) == val(i, j) && l < j))) ++beaten_by;
            if (beaten_by < k) {
                out.insert({i, j, val(i, j)});
                out.insert({j, i, val(i, j)});
            }
        }
    return out;
}

SubjectTimeSeries parse(const std::string& text) {
    std::istringstream in(text);
    return parse_time_series(in, "test.csv");
}

}  // namespace

TEST(Pearson, Examples) {
    Eigen::MatrixXd s(3, 4);
    s << 1, 2, 4, 3,  //
        1, 2, 4, 3,   //
        -1, -2, -4, -3;
    const auto c = pearson_correlation(s);
    EXPECT_NEAR(c(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(c(0, 2), -1.0, 1e-15);
    EXPECT_EQ(c(1, 1), 1.0);

    Eigen::MatrixXd d(2, 3);
    d << 5, 5, 5, 1, 2, 3;
    const auto cd = pearson_correlation(d);
    EXPECT_EQ(cd(0, 1), 0.0);
    EXPECT_EQ(cd(1, 0), 0.0);
    EXPECT_EQ(cd(0, 0), 1.0);
}

TEST(Pearson, RejectsNonFiniteAndShortSeries) {
    Eigen::MatrixXd s(2, 3);
    s << 1, 2, std::nan(""), 1, 2, 3;
    EXPECT_THROW(pearson_correlation(s), Error);
    EXPECT_THROW(pearson_correlation(Eigen::MatrixXd::Ones(2, 2)), Error);
}

TEST(Pearson, BoundedSymmetric) {
    std::mt19937_64 rng(1);
    const auto c = random_correlation(rng, 10, 5);
    EXPECT_EQ(c, c.transpose());
    EXPECT_LE(c.cwiseAbs().maxCoeff(), 1.0);
}

TEST(SignedGraph, ThreeNodeExample) {
    Eigen::MatrixXd c(3, 3);
    c << 1, .5, -.3, .5, 1, -.2, -.3, -.2, 1;
    const auto g = build_signed_graph(c, 1);
    EXPECT_EQ(as_set(g.pos_edges), (EdgeSet{{0, 1, .5}, {1, 0, .5}}));
    EXPECT_EQ(as_set(g.neg_edges), (EdgeSet{{0, 2, .3}, {2, 0, .3}, {1, 2, .2}, {2, 1, .2}}));
}

TEST(SignedGraph, ZeroCorrelationsGiveNoEdges) {
    const auto g = build_signed_graph(Eigen::MatrixXd::Identity(4, 4), 2);
    EXPECT_TRUE(g.pos_edges.empty());
    EXPECT_TRUE(g.neg_edges.empty());
}

TEST(SignedGraph, FullBudgetGivesCompleteGraph) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(5, 5, 0.4);
    c.diagonal().setOnes();
    const auto g = build_signed_graph(c, 4);
    EXPECT_EQ(g.pos_edges.size(), 20u);
    EXPECT_TRUE(g.neg_edges.empty());
}

TEST(SignedGraph, KOutOfRange) {
    const Eigen::MatrixXd c = Eigen::MatrixXd::Identity(4, 4);
    EXPECT_THROW(build_signed_graph(c, 0), Error);
    EXPECT_THROW(build_signed_graph(c, 4), Error);
}

TEST(SignedGraph, MatchesBruteForce) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 7;
        Eigen::MatrixXd c = random_correlation(rng, n);
        if (trial % 3 == 0) {
            // quantise to force ties
            c = (c * 4).array().round() / 4;
            c.diagonal().setOnes();
        }
        for (std::size_t k = 1; k < static_cast<std::size_t>(n); ++k) {
            const auto g = build_signed_graph(c, k);
            EXPECT_EQ(as_set(g.pos_edges), brute_force(c, k, +1)) << "n=" << n << " k=" << k;
            EXPECT_EQ(as_set(g.neg_edges), brute_force(c, k, -1)) << "n=" << n << " k=" << k;
        }
    }
}

TEST(SignedGraph, EdgeInvariants) {
    std::mt19937_64 rng(3);
    const std::size_t k = 3;
    const auto c = random_correlation(rng, 20);
    const auto g = build_signed_graph(c, k);
    std::vector<std::size_t> pdeg(20), ndeg(20);
    for (const auto& e : g.pos_edges) {
        EXPECT_GT(c(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)), 0);
        EXPECT_EQ(e.w, std::abs(c(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j))));
        ++pdeg[e.i];
    }
    for (const auto& e : g.neg_edges) {
        EXPECT_LT(c(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)), 0);
        ++ndeg[e.i];
    }
    // a hub may be picked by many nodes, so only the mean degree is bounded by 2k
    for (std::size_t i = 0; i < 20; ++i) EXPECT_GE(pdeg[i], 1u);
    EXPECT_LE(g.pos_edges.size(), 20 * 2 * k);
    EXPECT_LE(g.neg_edges.size(), 20 * 2 * k);
}

TEST(SignedGraph, PermutationEquivariance) {
    std::mt19937_64 rng(4);
    const int n = 12;
    const auto c = random_correlation(rng, n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd pc(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            pc(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]),
               static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)])) = c(i, j);
    const auto g = build_signed_graph(c, 3), pg = build_signed_graph(pc, 3);
    auto relabel = [&](const std::vector<Edge>& es) {
        EdgeSet out;
        for (const auto& e : es) out.insert({perm[e.i], perm[e.j], e.w});
        return out;
    };
    EXPECT_EQ(relabel(g.pos_edges), as_set(pg.pos_edges));
    EXPECT_EQ(relabel(g.neg_edges), as_set(pg.neg_edges));
}

TEST(TimeSeriesCsv, ParsesHeaderAndRows) {
    const auto ts = parse("# subject=s01 label=1\n1,2,3\n4,5,6.5\n");
    EXPECT_EQ(ts.subject_id, "s01");
    EXPECT_EQ(ts.label, 1);
    EXPECT_EQ(ts.roi_count(), 2u);
    EXPECT_EQ(ts.series(1, 2), 6.5);
}

TEST(TimeSeriesCsv, RaggedRowNamesTheRow) {
    try {
        parse("1,2,3\n4,5,6\n7,8\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("ROI row 3"), std::string::npos) << e.what();
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(TimeSeriesCsv, EmptyFile) {
    try {
        parse("");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("no ROI rows"), std::string::npos);
    }
}

TEST(TimeSeriesCsv, RejectsGarbage) {
    EXPECT_THROW(parse("1,x,3\n"), ParseError);
    EXPECT_THROW(parse("# color=red\n1,2,3\n"), ParseError);
}

TEST(GraphFile, RoundTripIsExact) {
    std::mt19937_64 rng(5);
    SubjectTimeSeries ts;
    ts.subject_id = "rt";
    ts.label = 0;
    ts.series = Eigen::MatrixXd::Random(9, 7);
    const auto g = subject_graph(ts, 2);
    const auto path = std::filesystem::temp_directory_path() / "bhgcn_graph_roundtrip.json";
    save_graph(g, path);
    EXPECT_EQ(load_graph(path), g);
    std::filesystem::remove(path);
}

TEST(GraphFile, RejectsUnknownVersion) {
    auto j = graph_to_json(build_signed_graph(Eigen::MatrixXd::Identity(3, 3), 1));
    j["version"] = 99;
    EXPECT_THROW(graph_from_json(j), ParseError);
}

TEST(Manifest, ParsesAndResolvesPaths) {
    std::istringstream in("# comment\na.json 0\n\n/abs/b.json 1\n");
    const auto m = parse_manifest(in, "/data");
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].path, std::filesystem::path("/data/a.json"));
    EXPECT_EQ(m[1].label, 1);
    std::istringstream bad("a.json 2\n");
    EXPECT_THROW(parse_manifest(bad, "/data"), ParseError);
}

TEST(ZScore, ConstantRowBecomesZero) {
    Eigen::MatrixXd x(2, 4);
    x << 3, 3, 3, 3, 1, 2, 3, 4;
    const auto z = zscore_rows(x);
    EXPECT_EQ(z.row(0).norm(), 0.0);
    EXPECT_NEAR(z.row(1).mean(), 0.0, 1e-15);
    EXPECT_NEAR(z.row(1).squaredNorm() / 4, 1.0, 1e-12);
}
