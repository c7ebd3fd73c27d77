// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on stderr.
// Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bhgcn/selftest.hpp"
#include "bhgcn/synth.hpp"
#include "bhgcn/train.hpp"

namespace fs = std::filesystem;
using namespace bhgcn;
using nlohmann::json;

namespace {

struct Outcome {
    int id = 0;
    bool passed = false;
    double seconds = 0;
    std::string detail;
};

std::string fmt(double x, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << x;
    return s.str();
}

class Runner {
public:
    Runner(fs::path out, std::size_t jobs) : out_(std::move(out)), jobs_(jobs) { fs::create_directories(out_); }

    Outcome suite(int id, const selftest::SuiteResult& r, double max_seconds = 0) {
        Outcome o{id, r.passed, r.seconds,
                  "max error " + fmt(r.max_error, 3) + " (tol " + fmt(r.tolerance, 3) + "), " + std::to_string(r.cases) +
                      " cases, " + fmt(r.seconds, 3) + " s"};
        if (!r.detail.empty()) o.detail += "; " + r.detail;
        if (max_seconds > 0 && r.seconds >= max_seconds) {
            o.passed = false;
            o.detail += "; runtime " + fmt(r.seconds) + " s exceeds " + fmt(max_seconds) + " s";
        }
        return o;
    }

    Outcome classification() {
        const auto t0 = clock();
        full_ = run("full", {}, out_ / "run1");
        Outcome o{6, false, since(t0), ""};
        const double acc = full_->report.acc.mean;
        o.passed = acc >= 85.0 && o.seconds < 600.0;
        o.detail = "mean test ACC " + fmt(acc) + "% (need >= 85), AUC " + fmt(full_->report.auc.mean) + "%, runtime " +
                   fmt(o.seconds) + " s (limit 600)";
        return o;
    }

    Outcome ablations() {
        const auto t0 = clock();
        if (!full_) full_ = run("full", {}, out_ / "run1");
        std::vector<std::pair<std::string, double>> aucs{{"full", full_->report.auc.mean}};
        for (const char* flag : {"euclidean_geometry", "fixed_base_readout", "euclidean_attention", "unsigned_aggregation"}) {
            model::Ablation a;
            a.set(flag);
            aucs.emplace_back(flag, run(flag, a, out_ / ("ablation_" + std::string(flag)))->report.auc.mean);
        }
        constexpr double kSlack = 1.0;
        bool ok = true;
        const double full = aucs[0].second, euc = aucs[1].second;
        for (std::size_t i = 1; i < aucs.size(); ++i) ok = ok && full + kSlack >= aucs[i].second;
        for (std::size_t i = 0; i < aucs.size(); ++i)
            if (i != 1) ok = ok && euc < aucs[i].second + kSlack;
        std::string detail = "AUC";
        for (const auto& [n, v] : aucs) detail += " " + n + "=" + fmt(v);
        return {7, ok, since(t0), detail};
    }

    Outcome distortion() {
        const auto t0 = clock();
        const auto tree = synth::binary_tree(5);
        synth::EmbedOptions o;
        o.dim = 2;
        const auto h = synth::embed_tree_distortion(tree, tree.size() + 1, o);
        o.geometry = synth::Geometry::euclidean;
        const auto e = synth::embed_tree_distortion(tree, tree.size() + 1, o);
        const double secs = since(t0);
        return {8, h.average < e.average && secs < 120.0, secs,
                "average distortion hyperbolic " + fmt(h.average) + " vs euclidean " + fmt(e.average) + " (worst " +
                    fmt(h.worst) + " vs " + fmt(e.worst) + "), runtime " + fmt(secs) + " s (limit 120)"};
    }

    Outcome determinism() {
        const auto t0 = clock();
        if (!full_) full_ = run("full", {}, out_ / "run1");
        run("full (repeat)", {}, out_ / "run2");
        const std::string a = slurp(out_ / "run1" / "metrics.json"), b = slurp(out_ / "run2" / "metrics.json");
        return {9, !a.empty() && a == b, since(t0),
                a == b ? "metrics.json identical (" + std::to_string(a.size()) + " bytes)"
                       : "metrics.json differs between runs"};
    }

private:
    using Clock = std::chrono::steady_clock;
    static Clock::time_point clock() { return Clock::now(); }
    static double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    }

    const std::vector<graph::SignedGraph>& graphs() {
        if (graphs_.empty()) {
            synth::SynthSpec spec;  // 100 per class, seed 42
            for (const auto& ts : synth::generate_dataset(spec)) graphs_.push_back(graph::subject_graph(ts, 10));
        }
        return graphs_;
    }

    std::optional<train::CrossValResult> run(const std::string& name, const model::Ablation& ablation,
                                             const fs::path& dir) {
        model::ModelConfig mc;
        mc.input_dim = static_cast<std::size_t>(graphs().front().features.cols());
        mc.ablation = ablation;
        train::TrainConfig tc;
        tc.epochs = 30;
        tc.folds = 5;
        tc.seed = 42;
        tc.jobs = jobs_;
        std::vector<model::GraphInput> data;
        for (const auto& g : graphs()) data.push_back(model::prepare(g, mc));
        std::cerr << "[acceptance] training " << name << " (" << data.size() << " graphs, " << tc.folds << " folds, "
                  << tc.epochs << " epochs)\n";
        auto cv = train::cross_validate(mc, tc, data, [&](std::size_t f, std::size_t e, double loss) {
            if ((e + 1) % 10 == 0) std::cerr << "  fold " << f << " epoch " << e + 1 << " loss " << loss << "\n";
        });
        fs::create_directories(dir);
        std::ofstream(dir / "metrics.json") << train::metrics_json(mc, tc, cv).dump(2) << '\n';
        std::ofstream curve(dir / "loss_curve.csv");
        train::write_loss_curve(curve, cv);
        std::cerr << "  ACC " << cv.report.acc.mean << " AUC " << cv.report.auc.mean << "\n";
        return cv;
    }

    fs::path out_;
    std::size_t jobs_;
    std::vector<graph::SignedGraph> graphs_;
    std::optional<train::CrossValResult> full_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string out = "acceptance_out";
    std::vector<int> only;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--out", out, "Directory for metrics files");
    app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
    app.add_option("--jobs", jobs, "Folds trained in parallel")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    const std::set<int> wanted = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());
    Runner r(out, jobs);
    const std::uint64_t seed = 20240601;
    json report = json::array();
    bool all = true;
    auto record = [&](const Outcome& o) {
        std::printf("%s criterion %d: %s\n", o.passed ? "PASS" : "FAIL", o.id, o.detail.c_str());
        std::fflush(stdout);
        report.push_back({{"criterion", o.id}, {"passed", o.passed}, {"seconds", o.seconds}, {"detail", o.detail}});
        all = all && o.passed;
    };
    if (wanted.count(1)) record(r.suite(1, selftest::round_trip_suite(seed), 5.0));
    if (wanted.count(2)) record(r.suite(2, selftest::norm_identity_suite(seed + 1)));
    if (wanted.count(3)) record(r.suite(3, selftest::transport_suite(seed + 2)));
    if (wanted.count(4)) record(r.suite(4, selftest::karcher_suite(seed + 3)));
    if (wanted.count(5)) record(r.suite(5, selftest::model_gradient_suite(seed + 4), 60.0));
    if (wanted.count(6)) record(r.classification());
    if (wanted.count(7)) record(r.ablations());
    if (wanted.count(8)) record(r.distortion());
    if (wanted.count(9)) record(r.determinism());

    std::ofstream(fs::path(out) / "acceptance.json") << report.dump(2) << '\n';
    return all ? 0 : 1;
}
