// Command-line driver: synthetic scene generation, offline augmentation,
// training, evaluation, single-image inference, and self tests.
//
// Exit codes: 0 success, 1 validation failure, 2 I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rgbx/selfcheck.hpp"
#include "rgbx/trainer.hpp"

using namespace rgbx;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw std::invalid_argument("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

int cmd_synth(int n, const std::string& out, uint64_t seed, int height, int width) {
    auto scenes = generate_split(n, seed, height, width);
    for (int i = 0; i < n; ++i) save_pair(out, i, scenes[size_t(i)].rgb, scenes[size_t(i)].depth);
    std::cout << "wrote " << n << " rgb+depth pairs to " << out << "\n";
    return 0;
}

int cmd_augment(const std::string& in, const std::string& out, const std::string& config,
                uint64_t seed) {
    AugmentConfig cfg;
    if (!config.empty()) {
        json j = read_json_file(config);
        cfg = augment_config_from_json(j.contains("augment") ? j["augment"] : j);
    }
    cfg.validate();
    Dataset data = load_dataset(in);
    for (size_t i = 0; i < data.size(); ++i) {
        TrainingSample s = make_training_sample(data[i].rgb, data[i].gt, cfg, derive_seed(seed, i));
        save_triple(out, int(i), s);
    }
    std::cout << "wrote " << data.size() << " rgb+gt+x triples to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& val_dir, const std::string& config,
              const std::string& ckpt, const std::string& log_path) {
    TrainConfig cfg;
    NetConfig net_cfg;
    if (!config.empty()) {
        json j = read_json_file(config);
        cfg = train_config_from_json(j);
        if (j.contains("net")) net_cfg = net_config_from_json(j["net"]);
    }
    Dataset all = load_dataset(data_dir);
    Dataset train_split, val_split;
    if (!val_dir.empty()) {
        train_split = std::move(all);
        val_split = load_dataset(val_dir);
    } else {
        // hold out every 8th sample for validation
        for (size_t i = 0; i < all.size(); ++i)
            (i % 8 == 7 ? val_split : train_split).push_back(std::move(all[i]));
        if (val_split.empty()) throw std::invalid_argument("train: need >= 8 samples or --val");
    }
    UNet net(net_cfg);
    net.init_weights(derive_seed(cfg.seed, 0x1717));
    TrainResult result = train(net, train_split, val_split, cfg, ckpt);
    write_train_log(log_path.empty() ? ckpt + ".log.json" : log_path, cfg, net_cfg, result);
    std::cout << "trained " << cfg.epochs << " epochs on " << train_split.size()
              << " samples; best val rmse " << result.best_val_rmse << " at epoch "
              << result.best_epoch << "\ncheckpoint: " << ckpt << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& sparsity_csv, const std::string& report, uint64_t seed) {
    EvalConfig cfg;
    cfg.seed = seed;
    if (!sparsity_csv.empty()) {
        cfg.sparsity_levels.clear();
        std::stringstream ss(sparsity_csv);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) cfg.sparsity_levels.push_back(std::stod(tok));
    }
    UNet net = load_checkpoint(ckpt);
    Dataset test = load_dataset(data_dir);
    auto table = evaluate(net, test, cfg);
    std::printf("%10s %10s %10s %10s %10s\n", "sparsity", "OE", "SRMSE", "RMSE", "Abs");
    for (const auto& r : table)
        std::printf("%10.4g %10.4f %10.4f %10.4f %10.4f\n", r.sparsity, r.oe, r.srmse, r.rmse,
                    r.abs_rel);
    if (!report.empty()) write_eval_report(report, cfg, table);
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& rgb, const std::string& x,
              const std::string& out) {
    UNet net = load_checkpoint(ckpt);
    infer_file(net, rgb, x, out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_selftest() {
    int failures = 0;
    auto report = [&](const selfcheck::CheckItem& item) {
        std::printf("[%s] %-28s err %.3g (tol %.1g)\n", item.pass ? "PASS" : "FAIL",
                    item.name.c_str(), item.err, item.tol);
        failures += item.pass ? 0 : 1;
    };
    for (const auto& i : selfcheck::op_gradient_suite()) report(i);
    for (const auto& i : selfcheck::loss_gradient_suite()) report(i);
    report(selfcheck::toy_net_gradient_check());
    for (const auto& i : selfcheck::metric_oracle_suite(25)) report(i);
    std::printf("%s\n", failures == 0 ? "selftest passed" : "selftest FAILED");
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified monocular depth inference from RGB plus raw depth"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate synthetic rgb+depth pairs");
    int n = 16, height = 64, width = 64;
    std::string out_dir, in_dir, config, ckpt, rgb_path, x_path, out_path, report, val_dir,
        log_path, sparsity = "";
    uint64_t seed = 0;
    synth->add_option("--n", n, "number of scenes")->required();
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--seed", seed, "rng seed");
    synth->add_option("--height", height, "scene height");
    synth->add_option("--width", width, "scene width");

    auto* augment = app.add_subcommand("augment", "degrade gt depth into raw x maps");
    augment->add_option("--in", in_dir, "directory of rgb+gt pairs")->required();
    augment->add_option("--out", out_dir, "output directory")->required();
    augment->add_option("--config", config, "JSON config file");
    augment->add_option("--seed", seed, "rng seed");

    auto* train = app.add_subcommand("train", "train the network");
    train->add_option("--data", in_dir, "directory of rgb+gt pairs")->required();
    train->add_option("--val", val_dir, "validation directory (default: held-out 1/8)");
    train->add_option("--config", config, "JSON config file");
    train->add_option("--out", ckpt, "checkpoint path")->required();
    train->add_option("--log", log_path, "log path (default <ckpt>.log.json)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint across sparsity levels");
    eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval->add_option("--data", in_dir, "directory of rgb+gt pairs")->required();
    eval->add_option("--sparsity", sparsity, "comma-separated levels (default 0,0.001,0.01,0.1,1)");
    eval->add_option("--report", report, "write JSON report here");
    eval->add_option("--seed", seed, "rng seed");

    auto* infer = app.add_subcommand("infer", "predict depth for one image");
    infer->add_option("--ckpt", ckpt, "checkpoint path")->required();
    infer->add_option("--rgb", rgb_path, "input RGB (PPM)")->required();
    infer->add_option("--x", x_path, "optional raw depth (PFM)");
    infer->add_option("--out", out_path, "output depth (PFM)")->required();

    app.add_subcommand("selftest", "run gradient checks and metric oracles");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("synth")) return cmd_synth(n, out_dir, seed, height, width);
        if (app.got_subcommand("augment")) return cmd_augment(in_dir, out_dir, config, seed);
        if (app.got_subcommand("train")) return cmd_train(in_dir, val_dir, config, ckpt, log_path);
        if (app.got_subcommand("eval")) return cmd_eval(ckpt, in_dir, sparsity, report, seed);
        if (app.got_subcommand("infer")) return cmd_infer(ckpt, rgb_path, x_path, out_path);
        if (app.got_subcommand("selftest")) return cmd_selftest();
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
