#pragma once

// Training harness: stratified k-fold cross-validation, AdamW with gradient
// accumulation over batches of independent graphs, metrics, checkpoints.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "bhgcn/graph.hpp"
#include "bhgcn/metrics.hpp"
#include "bhgcn/model.hpp"
#include "bhgcn/optim.hpp"

namespace bhgcn::train {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::size_t folds = 10;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void validate() const {
        if (!(lr > 0)) throw Error("train: lr must be positive");
        if (weight_decay < 0) throw Error("train: weight_decay must be non-negative");
        if (folds < 2) throw Error("train: folds must be >= 2");
        if (batch_size < 1) throw Error("train: batch_size must be >= 1");
        if (jobs < 1) throw Error("train: jobs must be >= 1");
    }
};

/// SplitMix64 finaliser; derives independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Fold id per subject: each class is shuffled with the seed and dealt round-robin.
inline std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds,
                                                 std::uint64_t seed) {
    std::vector<std::size_t> fold(labels.size(), 0);
    std::mt19937_64 rng(mix_seed(seed ^ 0x5f0f));
    for (int cls : {0, 1}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) members.push_back(i);
        if (members.size() < folds)
            throw Error("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                        " subjects, fewer than " + std::to_string(folds) +
                        " folds; some fold would lack it. Use fewer folds (--folds)");
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t r = 0; r < members.size(); ++r) fold[members[r]] = r % folds;
    }
    return fold;
}

struct FoldResult {
    metrics::FoldMetrics test;
    double train_accuracy = 0.0;
    std::vector<double> epoch_loss;
    std::vector<double> test_scores;
    model::ParameterSet params;
    std::size_t hyperbolic_evaluations = 0;
};

inline std::vector<double> predict_all(const model::ModelConfig& mc, const model::ParameterSet& ps,
                                       const std::vector<const model::GraphInput*>& graphs) {
    std::vector<double> out;
    out.reserve(graphs.size());
    for (const auto* g : graphs) out.push_back(model::predict(mc, ps, *g));
    return out;
}

inline double accuracy(const std::vector<double>& scores, const std::vector<const model::GraphInput*>& graphs) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) ok += (scores[i] >= 0.5) == (graphs[i]->label == 1);
    return graphs.empty() ? 0.0 : 100.0 * static_cast<double>(ok) / static_cast<double>(graphs.size());
}

/// Called after every epoch with (fold, epoch, mean training loss); may run on worker threads.
using EpochHook = std::function<void(std::size_t, std::size_t, double)>;

/// Train one model from scratch on `train_set` and score it on `test_set`.
inline FoldResult train_fold(const model::ModelConfig& mc, const TrainConfig& tc,
                             const std::vector<const model::GraphInput*>& train_set,
                             const std::vector<const model::GraphInput*>& test_set, std::uint64_t seed,
                             const EpochHook& hook = {}, std::size_t fold = 0) {
    FoldResult r;
    r.params = model::init_parameters(mc, mix_seed(seed));
    optim::AdamWState state;
    const optim::AdamWConfig oc{tc.lr, tc.weight_decay};
    std::mt19937_64 rng(mix_seed(seed + 1));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            std::vector<Tensor> acc;
            for (std::size_t k = start; k < end; ++k) {
                auto lg = model::loss_and_grad(mc, r.params, *train_set[order[k]]);
                epoch_loss += lg.loss;
                r.hyperbolic_evaluations += lg.hyperbolic_evaluations;
                if (acc.empty()) {
                    acc = std::move(lg.grads);
                } else {
                    for (std::size_t b = 0; b < acc.size(); ++b)
                        for (std::size_t i = 0; i < acc[b].size(); ++i) acc[b][i] += lg.grads[b][i];
                }
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            for (auto& t : acc)
                for (std::size_t i = 0; i < t.size(); ++i) t[i] *= scale;
            optim::adamw_step(r.params.values, acc, state, oc);
        }
        r.epoch_loss.push_back(train_set.empty() ? 0.0 : epoch_loss / static_cast<double>(train_set.size()));
        if (hook) hook(fold, epoch, r.epoch_loss.back());
    }
    r.train_accuracy = accuracy(predict_all(mc, r.params, train_set), train_set);
    r.test_scores = predict_all(mc, r.params, test_set);
    std::vector<int> labels;
    for (const auto* g : test_set) labels.push_back(g->label);
    r.test = metrics::compute_metrics(r.test_scores, labels);
    return r;
}

struct CrossValResult {
    metrics::MetricsReport report;
    std::vector<FoldResult> folds;
    std::vector<std::size_t> fold_of;
    std::size_t hyperbolic_evaluations = 0;
};

/// Stratified k-fold cross-validation; folds run on up to `jobs` threads and are
/// independent, so the result does not depend on the thread count.
inline CrossValResult cross_validate(const model::ModelConfig& mc, const TrainConfig& tc,
                                     const std::vector<model::GraphInput>& data, const EpochHook& hook = {}) {
    mc.validate();
    tc.validate();
    std::vector<int> labels;
    for (const auto& g : data) labels.push_back(g.label);
    CrossValResult cv;
    cv.fold_of = stratified_folds(labels, tc.folds, tc.seed);
    cv.folds.resize(tc.folds);
    auto run = [&](std::size_t f) {
        std::vector<const model::GraphInput*> tr, te;
        for (std::size_t i = 0; i < data.size(); ++i) (cv.fold_of[i] == f ? te : tr).push_back(&data[i]);
        cv.folds[f] = train_fold(mc, tc, tr, te, tc.seed * 1000003ULL + f, hook, f);
    };
    if (tc.jobs <= 1) {
        for (std::size_t f = 0; f < tc.folds; ++f) run(f);
    } else {
        std::size_t next = 0;
        while (next < tc.folds) {
            std::vector<std::thread> pool;
            for (std::size_t j = 0; j < tc.jobs && next < tc.folds; ++j) pool.emplace_back(run, next++);
            for (auto& t : pool) t.join();
        }
    }
    for (const auto& f : cv.folds) {
        cv.report.folds.push_back(f.test);
        cv.hyperbolic_evaluations += f.hyperbolic_evaluations;
    }
    cv.report.finalize();
    return cv;
}

// ---------------------------------------------------------------------------
// Configuration <-> JSON

inline nlohmann::json to_json(const model::ModelConfig& c) {
    return {{"input_dim", c.input_dim},
            {"layers", c.layers},
            {"d", c.layer.d},
            {"heads", c.layer.heads},
            {"tau0", c.layer.tau0},
            {"activation", c.layer.activation == layers::Activation::relu ? "relu" : "identity"},
            {"self_loops", c.layer.self_loops},
            {"head_maps", c.layer.head_maps == layers::HeadMapMode::hyperbolic ? "hyperbolic" : "ambient"},
            {"karcher_iters", c.readout.karcher_iters},
            {"eta", c.readout.eta},
            {"karcher_init", c.readout.init == readout::KarcherInit::mean_projection ? "mean" : "first"},
            {"init_curvature", c.init_curvature},
            {"classifier_spatial_only", c.classifier_spatial_only},
            {"ablation",
             {{"euclidean_geometry", c.ablation.euclidean_geometry},
              {"fixed_base_readout", c.ablation.fixed_base_readout},
              {"euclidean_attention", c.ablation.euclidean_attention},
              {"unsigned_aggregation", c.ablation.unsigned_aggregation}}}};
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
    model::ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.layer.d = j.at("d").get<std::size_t>();
    c.layer.heads = j.at("heads").get<std::size_t>();
    c.layer.tau0 = j.at("tau0").get<double>();
    c.layer.activation = j.at("activation") == "relu" ? layers::Activation::relu : layers::Activation::identity;
    c.layer.self_loops = j.at("self_loops").get<bool>();
    c.layer.head_maps = j.at("head_maps") == "hyperbolic" ? layers::HeadMapMode::hyperbolic : layers::HeadMapMode::ambient;
    c.readout.karcher_iters = j.at("karcher_iters").get<std::size_t>();
    c.readout.eta = j.at("eta").get<double>();
    c.readout.init = j.at("karcher_init") == "mean" ? readout::KarcherInit::mean_projection : readout::KarcherInit::first_node;
    c.init_curvature = j.at("init_curvature").get<double>();
    c.classifier_spatial_only = j.at("classifier_spatial_only").get<bool>();
    const auto& a = j.at("ablation");
    c.ablation.euclidean_geometry = a.at("euclidean_geometry").get<bool>();
    c.ablation.fixed_base_readout = a.at("fixed_base_readout").get<bool>();
    c.ablation.euclidean_attention = a.at("euclidean_attention").get<bool>();
    c.ablation.unsigned_aggregation = a.at("unsigned_aggregation").get<bool>();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"lr", t.lr},         {"weight_decay", t.weight_decay}, {"batch_size", t.batch_size},
            {"epochs", t.epochs}, {"folds", t.folds},               {"seed", t.seed}};
}

// ---------------------------------------------------------------------------
// Checkpoints: 8-byte magic, u32 version, u64 header length, JSON header,
// then every parameter block as little-endian f64 in header order.

inline constexpr char kCheckpointMagic[8] = {'B', 'H', 'G', 'C', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    model::ModelConfig config;
    std::uint64_t seed = 0;
    model::ParameterSet params;
};

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64(std::istream& in, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == EOF) throw graph::ParseError("checkpoint: truncated file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    nlohmann::json header;
    header["format"] = "bhgcn-checkpoint";
    header["config"] = to_json(ck.config);
    header["seed"] = ck.seed;
    auto blocks = nlohmann::json::array();
    for (std::size_t b = 0; b < ck.params.size(); ++b)
        blocks.push_back({{"name", ck.params.names[b]}, {"shape", ck.params.values[b].shape()}});
    header["blocks"] = blocks;
    const std::string h = header.dump();
    out.write(kCheckpointMagic, 8);
    detail::put_u64(out, kCheckpointVersion, 4);
    detail::put_u64(out, h.size(), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : ck.params.values)
        for (double v : t.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            detail::put_u64(out, bits, 8);
        }
}

inline Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw graph::ParseError("checkpoint: bad magic");
    const auto version = detail::get_u64(in, 4);
    if (version != kCheckpointVersion)
        throw graph::ParseError("checkpoint: unsupported version " + std::to_string(version));
    const auto len = detail::get_u64(in, 8);
    std::string h(len, '\0');
    if (!in.read(h.data(), static_cast<std::streamsize>(len))) throw graph::ParseError("checkpoint: truncated header");
    Checkpoint ck;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(h);
        ck.config = model_config_from_json(header.at("config"));
        ck.seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw graph::ParseError(std::string("checkpoint: bad header: ") + e.what());
    }
    // shapes must match what the stored configuration implies
    const model::ParameterSet expected = model::init_parameters(ck.config, 0);
    const auto& blocks = header.at("blocks");
    if (blocks.size() != expected.size()) throw graph::ParseError("checkpoint: block count does not match config");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto name = blocks[b].at("name").get<std::string>();
        const auto shape = blocks[b].at("shape").get<Shape>();
        if (name != expected.names[b] || shape != expected.values[b].shape())
            throw graph::ParseError("checkpoint: block '" + name + "' shape " + shape_str(shape) +
                                    " does not match config (" + expected.names[b] + " " +
                                    shape_str(expected.values[b].shape()) + ")");
        Tensor t(shape);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const std::uint64_t bits = detail::get_u64(in, 8);
            std::memcpy(&t[i], &bits, sizeof bits);
        }
        ck.params.names.push_back(name);
        ck.params.values.push_back(std::move(t));
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw graph::ParseError("cannot open " + path.string());
    return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Dataset loading and report files

inline std::vector<model::GraphInput> load_dataset(const std::filesystem::path& manifest, const model::ModelConfig& mc) {
    std::vector<model::GraphInput> out;
    for (const auto& e : graph::load_manifest(manifest)) {
        graph::SignedGraph g = graph::load_graph(e.path);
        g.label = e.label;
        out.push_back(model::prepare(g, mc));
    }
    if (out.empty()) throw Error("manifest " + manifest.string() + " lists no graphs");
    return out;
}

/// metrics.json payload; contains no timestamps so identical runs give identical bytes.
inline nlohmann::json metrics_json(const model::ModelConfig& mc, const TrainConfig& tc, const CrossValResult& cv) {
    nlohmann::json j;
    j["model"] = to_json(mc);
    j["train"] = to_json(tc);
    j["metrics"] = metrics::to_json(cv.report);
    auto tr = nlohmann::json::array();
    for (const auto& f : cv.folds) tr.push_back(f.train_accuracy);
    j["train_accuracy"] = tr;
    return j;
}

inline void write_loss_curve(std::ostream& out, const CrossValResult& cv) {
    out << "epoch,fold,loss\n";
    out.precision(17);
    for (std::size_t f = 0; f < cv.folds.size(); ++f)
        for (std::size_t e = 0; e < cv.folds[f].epoch_loss.size(); ++e)
            out << e << ',' << f << ',' << cv.folds[f].epoch_loss[e] << '\n';
}

}  // namespace bhgcn::train
