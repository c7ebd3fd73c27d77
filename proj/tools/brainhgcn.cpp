// brainhgcn: data generation, graph construction, training, evaluation,
// geometry self-tests and the tree distortion experiment.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bhgcn/graph.hpp"
#include "bhgcn/metrics.hpp"
#include "bhgcn/model.hpp"
#include "bhgcn/selftest.hpp"
#include "bhgcn/synth.hpp"
#include "bhgcn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bhgcn;

namespace {

// Bad arguments detected after parsing; exits with the usage status.
struct UsageError : Error {
    using Error::Error;
};

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Globals {
    bool json = false;
    std::optional<std::uint64_t> seed;

    std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
};

// Shortest round-trip text for a double, identical to what the JSON output carries.
std::string num(double x) { return json(x).dump(); }

void emit(const Globals& g, const json& j, const std::string& human) {
    if (g.json)
        std::cout << j.dump(2) << '\n';
    else
        std::cout << human;
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw Error("cannot create directory " + p.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    synth::SynthSpec spec;
    bool full_size = false;
};

int run_synth(const Globals& g, SynthArgs a) {
    if (a.full_size) {
        const auto fs_spec = synth::SynthSpec::full_size();
        a.spec.roi_count = fs_spec.roi_count;
        a.spec.time_points = fs_spec.time_points;
    }
    a.spec.seed = g.seed_or(a.spec.seed);
    try {
        a.spec.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const auto data = synth::generate_dataset(a.spec);
    const fs::path out(a.out);
    ensure_dir(out);
    std::vector<graph::ManifestEntry> manifest;
    for (const auto& ts : data) {
        const fs::path p = out / (ts.subject_id + ".csv");
        graph::save_time_series(ts, p);
        manifest.push_back({p, ts.label.value_or(0)});
    }
    graph::save_manifest(manifest, out / "manifest.txt");
    const json j{{"subjects", data.size()},
                 {"roi_count", a.spec.roi_count},
                 {"time_points", a.spec.time_points},
                 {"seed", a.spec.seed},
                 {"manifest", (out / "manifest.txt").string()}};
    emit(g, j,
         "wrote " + std::to_string(data.size()) + " subjects (" + std::to_string(a.spec.roi_count) + " ROIs x " +
             std::to_string(a.spec.time_points) + " time points, seed " + std::to_string(a.spec.seed) + ") to " +
             (out / "manifest.txt").string() + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct BuildArgs {
    std::string manifest;
    std::string out;
    std::size_t k = 10;
    bool no_zscore = false;
};

int run_build_graphs(const Globals& g, const BuildArgs& a) {
    const auto entries = graph::load_manifest(a.manifest);
    if (entries.empty()) throw Error("manifest " + a.manifest + " lists no subjects");
    const fs::path out(a.out);
    ensure_dir(out);
    std::vector<graph::ManifestEntry> built;
    std::size_t edges_pos = 0, edges_neg = 0;
    for (const auto& e : entries) {
        auto ts = graph::load_time_series(e.path);
        const std::size_t n = ts.roi_count();
        if (a.k < 1 || a.k >= n)
            throw UsageError("k out of range: k=" + std::to_string(a.k) + " must satisfy 1 <= k < N=" +
                             std::to_string(n));
        ts.label = e.label;
        if (ts.subject_id.empty()) ts.subject_id = e.path.stem().string();
        const auto sg = graph::subject_graph(ts, a.k, !a.no_zscore);
        edges_pos += sg.pos_edges.size() / 2;
        edges_neg += sg.neg_edges.size() / 2;
        const fs::path p = out / (e.path.stem().string() + ".json");
        graph::save_graph(sg, p);
        built.push_back({p, e.label});
    }
    graph::save_manifest(built, out / "manifest.txt");
    const double m = static_cast<double>(built.size());
    const json j{{"graphs", built.size()},
                 {"k", a.k},
                 {"mean_pos_edges", static_cast<double>(edges_pos) / m},
                 {"mean_neg_edges", static_cast<double>(edges_neg) / m},
                 {"manifest", (out / "manifest.txt").string()}};
    emit(g, j,
         "built " + std::to_string(built.size()) + " graphs (k=" + std::to_string(a.k) + ", mean edges +" +
             num(static_cast<double>(edges_pos) / m) + " / -" + num(static_cast<double>(edges_neg) / m) +
             ") -> " + (out / "manifest.txt").string() + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct ModelArgs {
    model::ModelConfig mc;
    std::string activation = "relu";
    std::string head_maps = "hyperbolic";
    std::string karcher_init = "mean_projection";
    std::vector<std::string> ablate;
    bool no_self_loops = false;

    void add_to(CLI::App* sub) {
        sub->add_option("--layers", mc.layers, "Hyperbolic graph layers")->capture_default_str();
        sub->add_option("--dim", mc.layer.d, "Hidden dimension d")->capture_default_str();
        sub->add_option("--heads", mc.layer.heads, "Attention heads")->capture_default_str();
        sub->add_option("--tau0", mc.layer.tau0, "Base attention temperature")->capture_default_str();
        sub->add_option("--activation", activation, "relu | identity")
            ->check(CLI::IsMember({"relu", "identity"}))
            ->capture_default_str();
        sub->add_option("--head-maps", head_maps, "hyperbolic | ambient")
            ->check(CLI::IsMember({"hyperbolic", "ambient"}))
            ->capture_default_str();
        sub->add_flag("--no-self-loops", no_self_loops, "Drop the node itself from its positive neighbourhood");
        sub->add_option("--karcher-iters", mc.readout.karcher_iters, "Karcher flow iterations")->capture_default_str();
        sub->add_option("--eta", mc.readout.eta, "Karcher flow step size")->capture_default_str();
        sub->add_option("--karcher-init", karcher_init, "mean_projection | first_node")
            ->check(CLI::IsMember({"mean_projection", "first_node"}))
            ->capture_default_str();
        sub->add_option("--init-curvature", mc.init_curvature, "Initial curvature scale K")->capture_default_str();
        sub->add_option("--ablate", ablate,
                        "euclidean_geometry | fixed_base_readout | euclidean_attention | unsigned_aggregation "
                        "(repeatable)")
            ->check(CLI::IsMember(
                {"euclidean_geometry", "fixed_base_readout", "euclidean_attention", "unsigned_aggregation"}));
    }

    model::ModelConfig finish() const {
        model::ModelConfig c = mc;
        c.layer.activation = activation == "relu" ? layers::Activation::relu : layers::Activation::identity;
        c.layer.head_maps =
            head_maps == "hyperbolic" ? layers::HeadMapMode::hyperbolic : layers::HeadMapMode::ambient;
        c.layer.self_loops = !no_self_loops;
        c.readout.init =
            karcher_init == "mean_projection" ? readout::KarcherInit::mean_projection : readout::KarcherInit::first_node;
        for (const auto& f : ablate) c.ablation.set(f);
        return c;
    }
};

struct TrainArgs {
    std::string manifest;
    std::string out;
    ModelArgs model;
    train::TrainConfig tc;
};

std::string summary_line(const char* name, const metrics::Summary& s) {
    return std::string(name) + " " + num(s.mean) + " +- " + num(s.std) + "\n";
}

int run_train(const Globals& g, TrainArgs a) {
    model::ModelConfig mc = a.model.finish();
    a.tc.seed = g.seed_or(a.tc.seed);
    const auto entries = graph::load_manifest(a.manifest);
    if (entries.empty()) throw Error("manifest " + a.manifest + " lists no graphs");
    // input_dim follows the data
    mc.input_dim = static_cast<std::size_t>(graph::load_graph(entries.front().path).features.cols());
    try {
        mc.validate();
        a.tc.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const auto data = train::load_dataset(a.manifest, mc);
    std::size_t per_class[2] = {0, 0};
    for (const auto& d : data) ++per_class[d.label];
    if (per_class[0] < a.tc.folds || per_class[1] < a.tc.folds)
        throw UsageError("need at least " + std::to_string(a.tc.folds) + " graphs per class for " +
                         std::to_string(a.tc.folds) + "-fold cross-validation (have " +
                         std::to_string(per_class[0]) + " and " + std::to_string(per_class[1]) +
                         "); use fewer folds (--folds)");

    const auto cv = train::cross_validate(mc, a.tc, data);
    const json j = train::metrics_json(mc, a.tc, cv);
    if (!a.out.empty()) {
        const fs::path out(a.out);
        ensure_dir(out);
        std::ofstream(out / "metrics.json") << j.dump(2) << '\n';
        std::ofstream curve(out / "loss_curve.csv");
        train::write_loss_curve(curve, cv);
        for (std::size_t f = 0; f < cv.folds.size(); ++f)
            train::save_checkpoint({mc, a.tc.seed, cv.folds[f].params}, out / ("fold" + std::to_string(f) + ".ckpt"));
    }
    std::string human = "model " + mc.ablation.name() + ", " + std::to_string(a.tc.folds) + " folds, " +
                        std::to_string(a.tc.epochs) + " epochs, seed " + std::to_string(a.tc.seed) + "\n";
    human += summary_line("ACC", cv.report.acc) + summary_line("SEN", cv.report.sen) +
             summary_line("SPE", cv.report.spe) + summary_line("AUC", cv.report.auc);
    emit(g, j, human);
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
};

int run_eval(const Globals& g, const EvalArgs& a) {
    const auto ck = train::load_checkpoint(a.checkpoint);
    const auto data = train::load_dataset(a.manifest, ck.config);
    std::vector<const model::GraphInput*> ptrs;
    std::vector<int> labels;
    for (const auto& d : data) {
        ptrs.push_back(&d);
        labels.push_back(d.label);
    }
    const auto scores = train::predict_all(ck.config, ck.params, ptrs);
    const auto m = metrics::compute_metrics(scores, labels);
    json j = metrics::to_json(m);
    j["graphs"] = data.size();
    j["model"] = train::to_json(ck.config);
    emit(g, j,
         "ACC " + num(m.acc) + "\nSEN " + num(m.sen) + "\nSPE " + num(m.spe) + "\nAUC " + num(m.auc) + "\n(" +
             std::to_string(data.size()) + " graphs)\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------

int run_selftest(const Globals& g) {
    const std::uint64_t seed = g.seed_or(7);
    const auto suites = selftest::run_all(seed);
    bool ok = true;
    json list = json::array();
    std::string human;
    for (const auto& s : suites) {
        ok = ok && s.passed;
        list.push_back(selftest::to_json(s));
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-4s %-22s max_error %-12s tol %-8s %6.2fs  %s\n", s.passed ? "PASS" : "FAIL",
                      s.name.c_str(), num(s.max_error).c_str(), num(s.tolerance).c_str(), s.seconds,
                      s.detail.c_str());
        human += buf;
    }
    emit(g, json{{"seed", seed}, {"passed", ok}, {"suites", list}}, human);
    return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

struct DistortionArgs {
    std::size_t depth = 5;
    synth::EmbedOptions opt;
};

json to_json(const synth::DistortionReport& r) {
    return {{"average", r.average}, {"worst", r.worst}, {"final_stress", r.final_stress}, {"dim", r.dim},
            {"curvature", r.curvature}};
}

int run_distortion(const Globals& g, DistortionArgs a) {
    if (a.depth > 10) throw UsageError("depth must be <= 10");
    if (a.opt.dim < 2) throw UsageError("dim must be >= 2");
    if (!(a.opt.curvature > 0)) throw UsageError("curvature must be positive");
    a.opt.seed = g.seed_or(0);
    const auto tree = synth::binary_tree(a.depth);
    const std::size_t n = tree.size() + 1;
    auto hyp = a.opt, euc = a.opt;
    hyp.geometry = synth::Geometry::hyperbolic;
    euc.geometry = synth::Geometry::euclidean;
    const auto rh = synth::embed_tree_distortion(tree, n, hyp);
    const auto re = synth::embed_tree_distortion(tree, n, euc);
    const json j{{"tree", {{"depth", a.depth}, {"nodes", n}}},
                 {"iters", a.opt.iters},
                 {"seed", a.opt.seed},
                 {"hyperbolic", to_json(rh)},
                 {"euclidean", to_json(re)}};
    emit(g, j,
         "binary tree depth " + std::to_string(a.depth) + " (" + std::to_string(n) + " nodes), dim " +
             std::to_string(a.opt.dim) + "\n" + "hyperbolic average " + num(rh.average) + " worst " + num(rh.worst) +
             "\n" + "euclidean  average " + num(re.average) + " worst " + num(re.worst) + "\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyperbolic graph convolution for brain connectivity classification"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI file; [subcommand] sections hold option values");

    Globals g;
    app.add_flag("--json", g.json, "Machine-readable JSON on stdout");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Random seed")->envname("BRAINHGCN_SEED");

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-class time-series dataset");
    synth_cmd->add_option("--out", sa.out, "Output directory")->required();
    synth_cmd->add_option("--per-class", sa.spec.subjects_per_class, "Subjects per class")->capture_default_str();
    synth_cmd->add_option("--roi", sa.spec.roi_count, "ROIs per subject")->capture_default_str();
    synth_cmd->add_option("--time-points", sa.spec.time_points, "Time points per series")->capture_default_str();
    synth_cmd->add_option("--depth", sa.spec.depth, "Latent tree depth limit (0: none)")->capture_default_str();
    synth_cmd->add_option("--branching0", sa.spec.branching_class0, "Class 0 branching")->capture_default_str();
    synth_cmd->add_option("--branching1", sa.spec.branching_class1, "Class 1 branching")->capture_default_str();
    synth_cmd->add_option("--noise", sa.spec.noise, "White noise standard deviation")->capture_default_str();
    synth_cmd->add_option("--rewire", sa.spec.rewire, "Edge rewiring probability")->capture_default_str();
    synth_cmd->add_option("--coupling", sa.spec.coupling, "Resolvent coupling lambda")->capture_default_str();
    synth_cmd->add_flag("--full-size", sa.full_size, "116 ROIs x 150 time points");

    BuildArgs ba;
    auto* build_cmd = app.add_subcommand("build-graphs", "Time series -> signed top-k graphs");
    build_cmd->add_option("--manifest", ba.manifest, "Time-series manifest")->required();
    build_cmd->add_option("--out", ba.out, "Output directory")->required();
    build_cmd->add_option("--k", ba.k, "Neighbours kept per node and sign")->capture_default_str();
    build_cmd->add_flag("--no-zscore", ba.no_zscore, "Keep raw series as node features");

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Cross-validated training");
    train_cmd->add_option("--manifest", ta.manifest, "Graph manifest")->required();
    train_cmd->add_option("--out", ta.out, "Directory for metrics.json, loss_curve.csv and checkpoints");
    train_cmd->add_option("--lr", ta.tc.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--weight-decay", ta.tc.weight_decay, "Decoupled weight decay")->capture_default_str();
    train_cmd->add_option("--batch-size", ta.tc.batch_size, "Graphs per step")->capture_default_str();
    train_cmd->add_option("--epochs", ta.tc.epochs, "Epochs per fold")->capture_default_str();
    train_cmd->add_option("--folds", ta.tc.folds, "Cross-validation folds")->capture_default_str();
    train_cmd->add_option("--jobs", ta.tc.jobs, "Folds trained in parallel")->capture_default_str();
    ta.model.add_to(train_cmd);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a graph manifest");
    eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--manifest", ea.manifest, "Graph manifest")->required();

    auto* selftest_cmd = app.add_subcommand("geom-selftest", "Manifold and gradient property suites");

    DistortionArgs da;
    auto* dist_cmd = app.add_subcommand("distortion", "Embed a binary tree in hyperbolic and Euclidean space");
    dist_cmd->add_option("--depth", da.depth, "Tree depth")->capture_default_str();
    dist_cmd->add_option("--dim", da.opt.dim, "Embedding dimension")->capture_default_str();
    dist_cmd->add_option("--iters", da.opt.iters, "Optimiser iterations")->capture_default_str();
    dist_cmd->add_option("--lr", da.opt.lr, "Adam learning rate")->capture_default_str();
    dist_cmd->add_option("--curvature", da.opt.curvature, "Curvature scale K")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (seed_opt->count() > 0) g.seed = seed_value;

    try {
        if (*synth_cmd) return run_synth(g, sa);
        if (*build_cmd) return run_build_graphs(g, ba);
        if (*train_cmd) return run_train(g, ta);
        if (*eval_cmd) return run_eval(g, ea);
        if (*selftest_cmd) return run_selftest(g);
        if (*dist_cmd) return run_distortion(g, da);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
