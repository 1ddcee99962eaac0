#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <thread>
#include <unordered_map>

#include "rgbx/augment.hpp"
#include "rgbx/config_json.hpp"
#include "rgbx/image_io.hpp"
#include "rgbx/losses.hpp"
#include "rgbx/metrics.hpp"
#include "rgbx/net.hpp"
#include "rgbx/optim.hpp"
#include "rgbx/synth.hpp"

namespace rgbx {

struct Sample {
    RgbField rgb;
    DepthField gt;
};
using Dataset = std::vector<Sample>;

struct TrainConfig {
    AdamWConfig optim;
    int epochs = 20;
    int batch_size = 8;
    uint64_t seed = 0;
    LossConfig loss;
    AugmentConfig augment;

    void validate() const {
        optim.validate();
        augment.validate();
        if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    }
};

struct EvalConfig {
    std::vector<double> sparsity_levels{0.0, 0.001, 0.01, 0.1, 1.0};
    uint64_t seed = 0;
    size_t oe_pairs = 50000;
    int target_height = 64;
    double depth_scale = 0.0; // 0: per-sample max, else fixed divisor

    void validate() const {
        if (depth_scale < 0) throw std::invalid_argument("eval: negative depth scale");

        if (sparsity_levels.empty()) throw std::invalid_argument("eval: no sparsity levels");
        for (size_t i = 0; i < sparsity_levels.size(); ++i) {
            if (sparsity_levels[i] < 0.0 || sparsity_levels[i] > 1.0)
                throw std::invalid_argument("eval: levels must lie in [0, 1]");
            if (i > 0 && !(sparsity_levels[i] > sparsity_levels[i - 1]))
                throw std::invalid_argument("eval: levels must be strictly increasing");
        }
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_rmse = 0.0;
    double val_srmse = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double best_val_rmse = std::numeric_limits<double>::infinity();
    int64_t skipped_steps = 0;
    std::vector<std::string> events;
};

struct LevelReport {
    double sparsity = 0.0;
    double oe = 0.0;
    double srmse = 0.0;
    double rmse = 0.0;
    double abs_rel = 0.0;
    size_t pixel_count = 0;
    size_t pair_count = 0;
    int samples = 0;
};

// Geometric preparation shared by evaluation and inference: depth divided
// by the fixed scale (or the sample's max valid depth when the scale is 0),
// sizes snapped to the grid the encoder needs. No degradation and no flips.
inline Sample prepare_eval_sample(const Sample& in, int target_height, double depth_scale = 0.0) {
    const double zmax = in.gt.max_valid();
    if (in.gt.valid_count() == 0 || zmax <= 0.0)
        throw std::invalid_argument("prepare_eval_sample: no valid depth");
    const double divisor = depth_scale > 0.0 ? depth_scale : zmax;
    Sample out;
    out.gt = in.gt;
    for (size_t i = 0; i < out.gt.size(); ++i)
        if (out.gt.valid[i]) out.gt.values[i] /= divisor;
    const int tw = std::max(16, int(int64_t(in.gt.width) * target_height / in.gt.height) / 16 * 16);
    out.gt = resize_nearest(out.gt, target_height, tw);
    out.rgb = resize_bilinear(in.rgb, target_height, tw);
    return out;
}

namespace detail {

inline std::vector<size_t> seeded_permutation(size_t n, uint64_t seed) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (size_t i = n; i > 1; --i) {
        const size_t j = size_t(rng.uniform_int(0, int64_t(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

// Accumulates this graph's parameter-leaf gradients into `grads` (aligned
// with the net's parameter order).
inline void accumulate_param_grads(Graph& g,
                                   const std::unordered_map<const Buffer*, size_t>& index,
                                   std::vector<Buffer>& grads) {
    for (size_t id = 0; id < g.node_count(); ++id) {
        const auto& n = g.node(int(id));
        if (n.forward || n.grad.empty()) continue;
        auto it = index.find(n.value.get());
        if (it == index.end()) continue;
        Buffer& dst = grads[it->second];
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
    }
}

} // namespace detail

// Minimizes the unified loss over the network parameters with AdamW and a
// cosine learning-rate schedule. Samples are augmented on the fly with
// per-(epoch, sample) seeds. Writes the best-validation checkpoint to
// `ckpt_path`; with zero epochs the checkpoint equals the initialization.
// Fully deterministic given (config, seed, data).
inline TrainResult train(UNet& net, const Dataset& train_split, const Dataset& val_split,
                         const TrainConfig& cfg, const std::string& ckpt_path) {
    cfg.validate();
    if (train_split.empty() || val_split.empty())
        throw std::invalid_argument("train: empty split");
    if (train_split.size() < size_t(cfg.batch_size))
        throw std::invalid_argument("train: fewer samples than one batch");
    const bool bn = net.config().block_kind == BlockKind::BatchNorm;
    if (bn && cfg.batch_size < 2)
        throw std::invalid_argument("train: bn variant needs batch size >= 2");

    TrainResult result;
    std::vector<std::shared_ptr<Buffer>> param_bufs;
    std::unordered_map<const Buffer*, size_t> param_index;
    for (size_t i = 0; i < net.params().size(); ++i) {
        param_bufs.push_back(net.params()[i].data);
        param_index[net.params()[i].data.get()] = i;
    }
    AdamW optimizer(param_bufs, cfg.optim);

    // Fixed validation conditions: sparsity 0.1 with per-sample seeds.
    std::vector<Sample> val_prepared;
    std::vector<DepthField> val_x;
    for (size_t i = 0; i < val_split.size(); ++i) {
        val_prepared.push_back(prepare_eval_sample(val_split[i], cfg.augment.target_height,
                                                   cfg.augment.depth_scale));
        val_x.push_back(sparsify(val_prepared.back().gt, 0.1, derive_seed(cfg.seed, 0x7a1, i)));
    }
    auto run_validation = [&](EpochLog& log) {
        double rmse = 0, srmse = 0;
        for (size_t i = 0; i < val_prepared.size(); ++i) {
            Buffer d = net.infer(val_prepared[i].rgb, val_x[i]);
            for (double& v : d) v = std::max(v, 0.0);
            rmse += metric_rmse(d, val_prepared[i].gt);
            srmse += metric_srmse(d, val_prepared[i].gt);
        }
        log.val_rmse = rmse / double(val_prepared.size());
        log.val_srmse = srmse / double(val_prepared.size());
    };

    save_checkpoint(net, ckpt_path);

    const size_t n = train_split.size();
    const int steps_per_epoch = int(n) / cfg.batch_size;
    const int64_t total_steps = int64_t(cfg.epochs) * steps_per_epoch;
    int64_t global_step = 0;

    std::vector<Buffer> grads(param_bufs.size());
    for (size_t i = 0; i < param_bufs.size(); ++i) grads[i].assign(param_bufs[i]->size(), 0.0);
    const int chunk_count = 2;
    std::vector<std::vector<Buffer>> chunk_grads(chunk_count);
    for (auto& cg : chunk_grads) {
        cg.resize(param_bufs.size());
        for (size_t i = 0; i < param_bufs.size(); ++i) cg[i].assign(param_bufs[i]->size(), 0.0);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = detail::seeded_permutation(n, derive_seed(cfg.seed, 0xe90c, uint64_t(epoch)));
        double epoch_loss = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            for (auto& gbuf : grads) std::fill(gbuf.begin(), gbuf.end(), 0.0);
            double batch_loss = 0.0;

            if (!bn) {
                // Per-sample graphs in two fixed half-batch chunks; the
                // chunks are accumulated in index order, then combined in
                // chunk order, independent of thread scheduling.
                std::vector<double> chunk_loss(chunk_count, 0.0);
                std::vector<std::string> chunk_error(chunk_count);
                for (auto& cg : chunk_grads)
                    for (auto& b : cg) std::fill(b.begin(), b.end(), 0.0);
                auto work = [&](int chunk) {
                    const int lo = chunk * cfg.batch_size / chunk_count;
                    const int hi = (chunk + 1) * cfg.batch_size / chunk_count;
                    for (int b = lo; b < hi; ++b) {
                        const size_t scene = order[size_t(step) * cfg.batch_size + b];
                        const uint64_t sample_seed =
                            derive_seed(derive_seed(cfg.seed, 0x5a3e, uint64_t(epoch)), scene);
                        try {
                            TrainingSample ts =
                                make_training_sample(train_split[scene].rgb, train_split[scene].gt,
                                                     cfg.augment, sample_seed);
                            Graph g;
                            Tensor in = UNet::assemble_input(g, ts.rgb, ts.x);
                            Tensor out = net.forward(g, in, false);
                            Tensor loss = unified_loss(out, ts.gt, ts.x, cfg.loss).first;
                            chunk_loss[chunk] += loss.item();
                            g.backward(loss);
                            detail::accumulate_param_grads(g, param_index, chunk_grads[chunk]);
                        } catch (const std::exception& e) {
                            chunk_error[chunk] = e.what();
                            return;
                        }
                    }
                };
                std::thread worker(work, 1);
                work(0);
                worker.join();
                for (int c = 0; c < chunk_count; ++c)
                    if (!chunk_error[c].empty())
                        throw std::runtime_error("train: sample failed: " + chunk_error[c]);
                for (int c = 0; c < chunk_count; ++c) {
                    batch_loss += chunk_loss[c];
                    for (size_t i = 0; i < grads.size(); ++i)
                        for (size_t j = 0; j < grads[i].size(); ++j)
                            grads[i][j] += chunk_grads[c][i][j];
                }
            } else {
                // One batched graph so batch statistics exist.
                Graph g;
                std::vector<TrainingSample> batch;
                for (int b = 0; b < cfg.batch_size; ++b) {
                    const size_t scene = order[size_t(step) * cfg.batch_size + b];
                    const uint64_t sample_seed =
                        derive_seed(derive_seed(cfg.seed, 0x5a3e, uint64_t(epoch)), scene);
                    batch.push_back(make_training_sample(train_split[scene].rgb,
                                                         train_split[scene].gt, cfg.augment,
                                                         sample_seed));
                }
                const int h = batch[0].gt.height, w = batch[0].gt.width;
                const size_t plane = size_t(h) * w;
                Buffer in_data(size_t(cfg.batch_size) * 5 * plane);
                for (int b = 0; b < cfg.batch_size; ++b) {
                    if (batch[size_t(b)].gt.height != h || batch[size_t(b)].gt.width != w)
                        throw std::invalid_argument("train: bn path needs equal sample sizes");
                    Graph tmp;
                    Tensor one = UNet::assemble_input(tmp, batch[size_t(b)].rgb, batch[size_t(b)].x);
                    std::copy(one.value().begin(), one.value().end(),
                              in_data.begin() + int64_t(b) * 5 * int64_t(plane));
                }
                Tensor in = g.leaf(Shape{cfg.batch_size, 5, h, w}, std::move(in_data), false);
                Tensor out = net.forward(g, in, true);
                Tensor total = g.scalar(0.0);
                for (int b = 0; b < cfg.batch_size; ++b) {
                    std::vector<size_t> idx(plane);
                    for (size_t j = 0; j < plane; ++j) idx[j] = size_t(b) * plane + j;
                    Tensor slice = gather(out, std::move(idx));
                    total = add(total, unified_loss(slice, batch[size_t(b)].gt, batch[size_t(b)].x,
                                                    cfg.loss).first);
                }
                batch_loss = total.item();
                g.backward(total);
                detail::accumulate_param_grads(g, param_index, grads);
            }

            batch_loss /= cfg.batch_size;
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            for (auto& gbuf : grads)
                for (double& v : gbuf) v /= double(cfg.batch_size);
            if (!optimizer.step(grads, cosine_factor(global_step, total_steps)))
                result.events.push_back("step " + std::to_string(global_step) +
                                        " skipped: non-finite gradient");
            ++global_step;
            epoch_loss += batch_loss;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / std::max(1, steps_per_epoch);
        run_validation(log);
        result.epochs.push_back(log);
        if (log.val_rmse < result.best_val_rmse) {
            result.best_val_rmse = log.val_rmse;
            result.best_epoch = epoch;
            save_checkpoint(net, ckpt_path);
        }
    }
    result.skipped_steps = optimizer.skipped_count();
    return result;
}

// Evaluation with a caller-supplied inference function, so reference
// oracles can drive the same table as a trained network. For each sparsity
// level, X is regenerated by sparsify(GT, level) with zero noise and a
// per-sample seed fixed across levels (masks are nested).
inline std::vector<LevelReport> evaluate_with(
    const std::function<Buffer(const RgbField&, const DepthField&)>& infer_fn,
    const Dataset& test, const EvalConfig& cfg) {
    cfg.validate();
    if (test.empty()) throw std::invalid_argument("evaluate: empty test split");
    std::vector<Sample> prepared;
    for (const Sample& s : test)
        prepared.push_back(prepare_eval_sample(s, cfg.target_height, cfg.depth_scale));
    std::vector<LevelReport> table;
    for (const double level : cfg.sparsity_levels) {
        LevelReport rep;
        rep.sparsity = level;
        for (size_t i = 0; i < prepared.size(); ++i) {
            const DepthField x = sparsify(prepared[i].gt, level, derive_seed(cfg.seed, 0x5eed, i));
            Buffer d = infer_fn(prepared[i].rgb, x);
            for (double& v : d) v = std::max(v, 0.0); // clamp for metrics
            MetricReport m = compute_metrics(d, prepared[i].gt, cfg.oe_pairs,
                                             derive_seed(cfg.seed, 0x0e0e, i));
            rep.oe += m.oe;
            rep.srmse += m.srmse;
            rep.rmse += m.rmse;
            rep.abs_rel += m.abs_rel;
            rep.pixel_count += m.pixel_count;
            rep.pair_count += m.pair_count;
        }
        const double inv = 1.0 / double(prepared.size());
        rep.oe *= inv;
        rep.srmse *= inv;
        rep.rmse *= inv;
        rep.abs_rel *= inv;
        rep.samples = int(prepared.size());
        table.push_back(rep);
    }
    return table;
}

inline std::vector<LevelReport> evaluate(UNet& net, const Dataset& test, const EvalConfig& cfg) {
    return evaluate_with([&net](const RgbField& rgb, const DepthField& x) {
        return net.infer(rgb, x);
    }, test, cfg);
}

// Identity oracle for harness self-tests: copies X where valid, fills the
// rest with 0.5. Independent of any trained model.
inline Buffer fill_oracle(const RgbField&, const DepthField& x) {
    Buffer d(x.size());
    for (size_t i = 0; i < x.size(); ++i) d[i] = x.valid[i] ? x.values[i] : 0.5;
    return d;
}

// ---- Dataset directory I/O ----
// A sample k is stored as NNNNNN_rgb.ppm + NNNNNN_gt.pfm, plus
// NNNNNN_x.pfm for augmented triples. Invalid pixels carry non-positive
// PFM values.

namespace detail {

inline std::string sample_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

} // namespace detail

inline void save_pair(const std::string& dir, int index, const RgbField& rgb,
                      const DepthField& gt) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string stem = dir + "/" + detail::sample_stem(index);
    write_ppm(stem + "_rgb.ppm", rgb);
    write_pfm(stem + "_gt.pfm", gt);
}

inline void save_triple(const std::string& dir, int index, const TrainingSample& s) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string stem = dir + "/" + detail::sample_stem(index);
    write_ppm(stem + "_rgb.ppm", s.rgb);
    write_pfm(stem + "_gt.pfm", s.gt);
    write_pfm(stem + "_x.pfm", s.x);
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 8 && name.ends_with("_rgb.ppm"))
            stems.push_back(name.substr(0, name.size() - 8));
    }
    std::sort(stems.begin(), stems.end());
    Dataset out;
    for (const std::string& stem : stems) {
        Sample s;
        s.rgb = read_ppm(dir + "/" + stem + "_rgb.ppm");
        s.gt = read_pfm(dir + "/" + stem + "_gt.pfm");
        if (s.rgb.height != s.gt.height || s.rgb.width != s.gt.width)
            throw IoError("sample size mismatch: " + stem);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("no samples found in " + dir);
    return out;
}

// X map for a stored triple, if present.
inline DepthField load_triple_x(const std::string& dir, int index) {
    return read_pfm(dir + "/" + detail::sample_stem(index) + "_x.pfm");
}

// ---- Report / log serialization ----

inline json to_json(const std::vector<LevelReport>& table) {
    json rows = json::array();
    for (const auto& r : table)
        rows.push_back({{"sparsity", r.sparsity},
                        {"oe", r.oe},
                        {"srmse", r.srmse},
                        {"rmse", r.rmse},
                        {"abs_rel", r.abs_rel},
                        {"pixel_count", r.pixel_count},
                        {"pair_count", r.pair_count},
                        {"samples", r.samples}});
    return rows;
}

inline json to_json(const EvalConfig& c) {
    return {{"sparsity_levels", c.sparsity_levels},
            {"seed", c.seed},
            {"oe_pairs", c.oe_pairs},
            {"target_height", c.target_height},
            {"depth_scale", c.depth_scale}};
}

inline void write_eval_report(const std::string& path, const EvalConfig& cfg,
                              const std::vector<LevelReport>& table) {
    json j = {{"config", to_json(cfg)}, {"levels", to_json(table)}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot open report for writing: " + path);
    os << j.dump(2) << "\n";
}

inline json to_json(const TrainConfig& c) {
    return {{"optim", to_json(c.optim)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"loss", to_json(c.loss)},
            {"augment", to_json(c.augment)}};
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    if (j.contains("optim")) c.optim = adamw_config_from_json(j["optim"]);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) c.loss = loss_config_from_json(j["loss"]);
    if (j.contains("augment")) c.augment = augment_config_from_json(j["augment"]);
    return c;
}

// Self-describing run log: full config echo plus per-epoch entries. No
// wall-clock fields, so logs are byte-deterministic.
inline void write_train_log(const std::string& path, const TrainConfig& cfg,
                            const NetConfig& net_cfg, const TrainResult& result) {
    json epochs = json::array();
    for (const auto& e : result.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_rmse", e.val_rmse},
                          {"val_srmse", e.val_srmse}});
    json j = {{"config", to_json(cfg)},
              {"net", to_json(net_cfg)},
              {"epochs", epochs},
              {"events", result.events},
              {"best_epoch", result.best_epoch},
              {"best_val_rmse", result.best_val_rmse},
              {"skipped_steps", result.skipped_steps}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot open log for writing: " + path);
    os << j.dump(2) << "\n";
}

// ---- Single-image inference ----

// Reads an RGB (PPM) and optional X (PFM); a missing X means zero valid
// pixels. Inputs are resized to the nearest valid size, the prediction is
// resized back to the input dimensions and written as PFM.
inline void infer_file(UNet& net, const std::string& rgb_path, const std::string& x_path,
                       const std::string& out_path) {
    RgbField rgb = read_ppm(rgb_path);
    DepthField x;
    if (!x_path.empty()) {
        x = read_pfm(x_path);
        if (x.height != rgb.height || x.width != rgb.width)
            throw std::invalid_argument("infer: x size differs from rgb");
    } else {
        x = DepthField(rgb.height, rgb.width, 0.0, 0);
    }
    const int div = net.config().divisor();
    auto snap = [div](int v) {
        int r = (v + div / 2) / div * div;
        return std::max(div, r);
    };
    const int h = snap(rgb.height), w = snap(rgb.width);
    RgbField rgb_r = resize_bilinear(rgb, h, w);
    DepthField x_r = resize_nearest(x, h, w);
    Buffer pred = net.infer(rgb_r, x_r);
    DepthField out(h, w);
    for (size_t i = 0; i < pred.size(); ++i) out.values[i] = std::max(pred[i], 1e-6);
    DepthField restored = resize_nearest(out, rgb.height, rgb.width);
    write_pfm(out_path, restored);
}

} // namespace rgbx
