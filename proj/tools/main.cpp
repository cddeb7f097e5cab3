#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "relight/checkpoint.hpp"
#include "relight/image_io.hpp"
#include "relight/pipeline.hpp"
#include "relight/sampler.hpp"

using namespace relight;

namespace {

Config load_config_or_default(const std::string& path) {
    return path.empty() ? default_config() : read_config(path);
}

std::unique_ptr<ModelBundle<float>> bundle_from_checkpoint(const std::string& path, Config* cfg_out) {
    auto ck = load_checkpoint(path);
    if (cfg_out) *cfg_out = ck.config;
    return std::move(ck.bundle);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"relight: Retinex- and semantics-conditioned diffusion for low-light image enhancement"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, checkpoint_path, resume_path, log_path;
    std::string in_path, out_dir, low_dir, high_dir, jsonl_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int64_t steps = 0;

    auto* pre = app.add_subcommand("pretrain-dnet", "Pre-train the decomposition network");
    pre->add_option("--data", data_dir, "dataset root with low/ and high/")->required();
    pre->add_option("--config", config_path, "config file");
    pre->add_option("--out", out_path, "output checkpoint")->required();

    auto* tr = app.add_subcommand("train", "Joint training of ANet, UNet and RNet");
    tr->add_option("--data", data_dir, "dataset root with low/ and high/")->required();
    tr->add_option("--config", config_path, "config file");
    tr->add_option("--out", out_path, "output checkpoint")->required();
    tr->add_option("--resume", resume_path, "checkpoint to resume from");
    tr->add_option("--pretrained", checkpoint_path, "checkpoint carrying the pre-trained DNet");
    tr->add_option("--log", log_path, "JSON-lines training log");

    auto* en = app.add_subcommand("enhance", "Enhance one low-light image");
    en->add_option("input", in_path, "input PNG")->required();
    en->add_option("output", out_path, "output PNG")->required();
    en->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    auto* seed_opt = en->add_option("--seed", seed, "sampler seed");
    en->add_option("--steps", steps, "sampling steps");

    auto* de = app.add_subcommand("decompose", "Write the DNet reflectance and illumination maps");
    de->add_option("input", in_path, "input PNG")->required();
    de->add_option("outdir", out_dir, "output directory")->required();
    de->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();

    auto* ev = app.add_subcommand("evaluate", "Score enhanced low images against references");
    ev->add_option("low", low_dir, "directory of low-light PNGs")->required();
    ev->add_option("high", high_dir, "directory of reference PNGs")->required();
    ev->add_option("--checkpoint", checkpoint_path, "model checkpoint (omit to score the inputs)");
    ev->add_option("--jsonl", jsonl_path, "JSON-lines sidecar path");
    ev->add_option("--steps", steps, "sampling steps");

    CLI11_PARSE(app, argc, argv);
    seed_set = seed_opt->count() > 0;

    try {
        if (pre->parsed()) {
            Config cfg = load_config_or_default(config_path);
            auto bundle = std::make_unique<ModelBundle<float>>(cfg.model);
            auto data = load_pairs(data_dir);
            Rng rng(cfg.train.seed);
            double loss = pretrain_dnet(data, *bundle, cfg, rng, &std::cout);
            save_checkpoint(out_path, *bundle, cfg, 0, rng.serialize());
            std::cout << "pre-trained DNet (final loss " << loss << ") -> " << out_path << "\n";
        } else if (tr->parsed()) {
            Config cfg = load_config_or_default(config_path);
            std::unique_ptr<ModelBundle<float>> bundle;
            std::unique_ptr<LoadedCheckpoint> resume;
            if (!resume_path.empty()) {
                resume = std::make_unique<LoadedCheckpoint>(load_checkpoint(resume_path));
                cfg = resume->config;
                bundle = std::move(resume->bundle);
                std::cout << "resuming at iteration " << resume->iteration << "\n";
            } else if (!checkpoint_path.empty()) {
                bundle = bundle_from_checkpoint(checkpoint_path, nullptr);
            } else {
                std::cout << "no pre-trained DNet given; pre-training first\n";
                bundle = std::make_unique<ModelBundle<float>>(cfg.model);
                auto data = load_pairs(data_dir);
                Rng rng(cfg.train.seed);
                pretrain_dnet(data, *bundle, cfg, rng, &std::cout);
            }
            bundle->freeze_dnet();
            auto data = load_pairs(data_dir);
            TrainOptions opts;
            opts.checkpoint_path = out_path;
            opts.log_path = log_path;
            opts.progress = &std::cout;
            auto rep = train(data, *bundle, cfg, opts, resume.get());
            std::cout << "done: l_all " << rep.l_all << " -> " << out_path << "\n";
        } else if (en->parsed()) {
            Config cfg;
            auto bundle = bundle_from_checkpoint(checkpoint_path, &cfg);
            SamplerConfig sc = cfg.sampler;
            if (seed_set) sc.seed = seed;
            if (steps > 0) sc.steps = steps;
            Tensor<float> y = io::read_png(in_path);
            io::write_png(out_path, enhance(y, *bundle, sc));
            std::cout << "enhanced " << in_path << " -> " << out_path << "\n";
        } else if (de->parsed()) {
            Config cfg;
            auto bundle = bundle_from_checkpoint(checkpoint_path, &cfg);
            Tensor<float> y = io::read_png(in_path);
            auto dec = bundle->dnet.decompose(y, y);
            std::filesystem::create_directories(out_dir);
            io::write_png((std::filesystem::path(out_dir) / "reflectance.png").string(),
                          dec.reflectance->value);
            io::write_png((std::filesystem::path(out_dir) / "illumination.png").string(),
                          dec.illumination->value);
            std::cout << "decomposed " << in_path << " -> " << out_dir << "\n";
        } else if (ev->parsed()) {
            Config cfg;
            std::unique_ptr<ModelBundle<float>> bundle;
            if (!checkpoint_path.empty()) bundle = bundle_from_checkpoint(checkpoint_path, &cfg);
            SamplerConfig sc = cfg.sampler;
            if (steps > 0) sc.steps = steps;
            auto rows = evaluate_dirs(low_dir, high_dir, bundle.get(), sc, jsonl_path);
            std::cout << format_eval_table(rows);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
