#pragma once

// Subject-wise signed functional-connectivity graphs: Pearson correlation,
// per-node top-k selection per sign, union symmetrisation, and the on-disk
// formats (time-series CSV, versioned graph JSON, dataset manifest).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "bhgcn/tensor.hpp"

namespace bhgcn::graph {

/// Malformed input file; carries the 1-based line number when one applies.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// N x T matrix of ROI time series for one subject.
struct SubjectTimeSeries {
    std::string subject_id;
    std::optional<int> label;
    Eigen::MatrixXd series;

    std::size_t roi_count() const { return static_cast<std::size_t>(series.rows()); }
    std::size_t time_points() const { return static_cast<std::size_t>(series.cols()); }
};

struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double w = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Weighted signed graph. Edge lists hold both directions of every undirected edge,
/// sorted by (i, j); negative edges store the magnitude of the correlation.
struct SignedGraph {
    std::size_t n = 0;
    Eigen::MatrixXd features;
    std::vector<Edge> pos_edges;
    std::vector<Edge> neg_edges;
    std::optional<int> label;
    std::string subject_id;

    friend bool operator==(const SignedGraph& a, const SignedGraph& b) {
        return a.n == b.n && a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
               a.features == b.features && a.pos_edges == b.pos_edges && a.neg_edges == b.neg_edges &&
               a.label == b.label && a.subject_id == b.subject_id;
    }
};

inline constexpr double kDegenerateStd = 1e-12;

/// Pearson correlation between rows. Rows with standard deviation below 1e-12 are
/// uncorrelated with everything else; the diagonal is exactly 1.
inline Eigen::MatrixXd pearson_correlation(const Eigen::MatrixXd& series) {
    const Eigen::Index n = series.rows(), t = series.cols();
    if (t < 3) throw Error("pearson_correlation: need at least 3 time points, got " + std::to_string(t));
    if (!series.allFinite()) throw Error("pearson_correlation: non-finite input");
    Eigen::MatrixXd centered = series.colwise() - series.rowwise().mean();
    Eigen::VectorXd norms = centered.rowwise().norm();
    std::vector<bool> degenerate(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sd = norms[i] / std::sqrt(static_cast<double>(t));
        degenerate[static_cast<std::size_t>(i)] = sd < kDegenerateStd;
        if (!degenerate[static_cast<std::size_t>(i)]) centered.row(i) /= norms[i];
    }
    Eigen::MatrixXd c = centered * centered.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (degenerate[static_cast<std::size_t>(i)] || degenerate[static_cast<std::size_t>(j)]) c(i, j) = 0.0;
            c(i, j) = std::clamp(c(i, j), -1.0, 1.0);
        }
        c(i, i) = 1.0;
    }
    // exact symmetry
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) c(j, i) = c(i, j);
    return c;
}

namespace detail {

// Indices of the k largest strictly positive values of `row` (self excluded); ties by lower index.
inline std::vector<std::size_t> top_k(const std::vector<std::pair<double, std::size_t>>& cands, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> c = cands;
    std::sort(c.begin(), c.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < c.size() && r < k; ++r) out.push_back(c[r].second);
    return out;
}

inline std::vector<Edge> both_directions(const std::set<std::pair<std::size_t, std::size_t>>& pairs,
                                         const Eigen::MatrixXd& c) {
    std::vector<Edge> out;
    for (auto [i, j] : pairs) {
        const double w = std::abs(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        out.push_back({i, j, w});
        out.push_back({j, i, w});
    }
    std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    return out;
}

}  // namespace detail

/// Keep, per node, its k strongest positive and k strongest negative correlations and
/// symmetrise by union. Zero correlations never become edges.
inline SignedGraph build_signed_graph(const Eigen::MatrixXd& c, std::size_t k) {
    const std::size_t n = static_cast<std::size_t>(c.rows());
    if (c.rows() != c.cols()) throw ShapeError("build_signed_graph: correlation matrix must be square");
    if (k < 1 || k >= n)
        throw Error("k out of range: k=" + std::to_string(k) + " must satisfy 1 <= k < N=" + std::to_string(n));
    std::set<std::pair<std::size_t, std::size_t>> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> pc, nc;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double v = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (v > 0) pc.emplace_back(v, j);
            if (v < 0) nc.emplace_back(-v, j);
        }
        for (std::size_t j : detail::top_k(pc, k)) pos.insert({std::min(i, j), std::max(i, j)});
        for (std::size_t j : detail::top_k(nc, k)) neg.insert({std::min(i, j), std::max(i, j)});
    }
    SignedGraph g;
    g.n = n;
    g.pos_edges = detail::both_directions(pos, c);
    g.neg_edges = detail::both_directions(neg, c);
    return g;
}

/// Row-wise z-scoring; constant rows become zero.
inline Eigen::MatrixXd zscore_rows(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out = x.colwise() - x.rowwise().mean();
    const double t = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double sd = out.row(i).norm() / std::sqrt(t);
        if (sd < kDegenerateStd)
            out.row(i).setZero();
        else
            out.row(i) /= sd;
    }
    return out;
}

/// Full subject pipeline: correlation -> signed graph, node features = (optionally z-scored) series.
inline SignedGraph subject_graph(const SubjectTimeSeries& ts, std::size_t k, bool zscore = true) {
    SignedGraph g = build_signed_graph(pearson_correlation(ts.series), k);
    g.features = zscore ? zscore_rows(ts.series) : ts.series;
    g.label = ts.label;
    g.subject_id = ts.subject_id;
    return g;
}

// ---------------------------------------------------------------------------
// Time-series CSV: optional "# subject=<id> label=<int>" header, one row per ROI.

inline SubjectTimeSeries parse_time_series(std::istream& in, const std::string& source = "<stream>") {
    SubjectTimeSeries ts;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string tok;
            while (hs >> tok) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos) throw ParseError(source + ": malformed header token '" + tok + "'", lineno);
                const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
                if (key == "subject") {
                    ts.subject_id = val;
                } else if (key == "label") {
                    try {
                        std::size_t used = 0;
                        ts.label = std::stoi(val, &used);
                        if (used != val.size()) throw std::invalid_argument(val);
                    } catch (const std::exception&) {
                        throw ParseError(source + ": label must be an integer, got '" + val + "'", lineno);
                    }
                } else {
                    throw ParseError(source + ": unknown header key '" + key + "'", lineno);
                }
            }
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
                if (!std::isfinite(v)) throw std::invalid_argument(cell);
                row.push_back(v);
            } catch (const std::exception&) {
                throw ParseError(source + ": invalid number '" + cell + "' in ROI row " + std::to_string(rows.size() + 1),
                                 lineno);
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(source + ": ROI row " + std::to_string(rows.size() + 1) + " has " +
                                 std::to_string(row.size()) + " values, expected " +
                                 std::to_string(rows.front().size()),
                             lineno);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(source + ": no ROI rows");
    if (rows.front().size() < 3)
        throw ParseError(source + ": need at least 3 time points, got " + std::to_string(rows.front().size()));
    ts.series.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            ts.series(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return ts;
}

inline SubjectTimeSeries load_time_series(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return parse_time_series(in, path.string());
}

inline void write_time_series(std::ostream& out, const SubjectTimeSeries& ts) {
    out << "# subject=" << (ts.subject_id.empty() ? "unnamed" : ts.subject_id);
    if (ts.label) out << " label=" << *ts.label;
    out << '\n';
    std::ostringstream row;
    row.precision(17);
    for (Eigen::Index i = 0; i < ts.series.rows(); ++i) {
        row.str("");
        for (Eigen::Index j = 0; j < ts.series.cols(); ++j) {
            if (j) row << ',';
            row << ts.series(i, j);
        }
        out << row.str() << '\n';
    }
}

inline void save_time_series(const SubjectTimeSeries& ts, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_time_series(out, ts);
}

// ---------------------------------------------------------------------------
// Graph JSON, version 1. Undirected edges are stored once with i < j.

inline constexpr int kGraphFormatVersion = 1;

inline nlohmann::json graph_to_json(const SignedGraph& g) {
    nlohmann::json j;
    j["version"] = kGraphFormatVersion;
    j["n"] = g.n;
    auto feats = nlohmann::json::array();
    for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index t = 0; t < g.features.cols(); ++t) row.push_back(g.features(i, t));
        feats.push_back(std::move(row));
    }
    j["features"] = std::move(feats);
    auto edges = [](const std::vector<Edge>& es) {
        auto arr = nlohmann::json::array();
        for (const Edge& e : es)
            if (e.i < e.j) arr.push_back(nlohmann::json::array({e.i, e.j, e.w}));
        return arr;
    };
    j["pos_edges"] = edges(g.pos_edges);
    j["neg_edges"] = edges(g.neg_edges);
    j["label"] = g.label ? nlohmann::json(*g.label) : nlohmann::json(nullptr);
    if (!g.subject_id.empty()) j["subject"] = g.subject_id;
    return j;
}

inline SignedGraph graph_from_json(const nlohmann::json& j, const std::string& source = "<json>") {
    auto fail = [&](const std::string& m) { throw ParseError(source + ": " + m); };
    if (!j.is_object()) fail("graph file must be a JSON object");
    if (!j.contains("version")) fail("missing field 'version'");
    if (j["version"] != kGraphFormatVersion) fail("unknown version " + j["version"].dump());
    for (const char* f : {"n", "features", "pos_edges", "neg_edges"})
        if (!j.contains(f)) fail(std::string("missing field '") + f + "'");
    SignedGraph g;
    g.n = j["n"].get<std::size_t>();
    const auto& feats = j["features"];
    if (!feats.is_array() || feats.size() != g.n) fail("features must have n rows");
    const std::size_t t = g.n ? feats[0].size() : 0;
    g.features.resize(static_cast<Eigen::Index>(g.n), static_cast<Eigen::Index>(t));
    for (std::size_t i = 0; i < g.n; ++i) {
        if (feats[i].size() != t) fail("feature row " + std::to_string(i) + " has inconsistent length");
        for (std::size_t c = 0; c < t; ++c)
            g.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = feats[i][c].get<double>();
    }
    auto read_edges = [&](const nlohmann::json& arr, const char* name) {
        std::vector<Edge> out;
        for (const auto& e : arr) {
            if (!e.is_array() || e.size() != 3) fail(std::string(name) + ": edges must be [i, j, w]");
            const auto i = e[0].get<std::size_t>(), k = e[1].get<std::size_t>();
            const double w = e[2].get<double>();
            if (i >= k || k >= g.n) fail(std::string(name) + ": edge indices must satisfy i < j < n");
            if (!(w > 0 && w <= 1)) fail(std::string(name) + ": edge weight outside (0, 1]");
            out.push_back({i, k, w});
            out.push_back({k, i, w});
        }
        std::sort(out.begin(), out.end(),
                  [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
        return out;
    };
    g.pos_edges = read_edges(j["pos_edges"], "pos_edges");
    g.neg_edges = read_edges(j["neg_edges"], "neg_edges");
    if (j.contains("label") && !j["label"].is_null()) g.label = j["label"].get<int>();
    if (j.contains("subject")) g.subject_id = j["subject"].get<std::string>();
    return g;
}

inline void save_graph(const SignedGraph& g, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << graph_to_json(g).dump() << '\n';
}

inline SignedGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return graph_from_json(j, path.string());
}

// ---------------------------------------------------------------------------
// Dataset manifest: one "<path> <label>" entry per line; '#' starts a comment.
// Relative paths are resolved against the manifest's directory.

struct ManifestEntry {
    std::filesystem::path path;
    int label = 0;
};

inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::filesystem::path& base,
                                                 const std::string& source = "<manifest>") {
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        std::string path, extra;
        int label = 0;
        if (!(ls >> path >> label)) throw ParseError(source + ": expected '<path> <label>'", lineno);
        if (ls >> extra) throw ParseError(source + ": trailing content '" + extra + "'", lineno);
        if (label != 0 && label != 1) throw ParseError(source + ": label must be 0 or 1", lineno);
        std::filesystem::path p(path);
        if (p.is_relative()) p = base / p;
        out.push_back({p, label});
    }
    return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return parse_manifest(in, path.parent_path(), path.string());
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    const auto base = path.parent_path();
    for (const auto& e : entries) {
        std::filesystem::path p = e.path;
        if (!base.empty()) {
            auto rel = std::filesystem::relative(p, base);
            if (!rel.empty()) p = rel;
        }
        out << p.string() << ' ' << e.label << '\n';
    }
}

}  // namespace bhgcn::graph
