#include "relight/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "relight/image_io.hpp"
#include "relight/metrics.hpp"
#include "relight/sampler.hpp"
#include "relight/trainer.hpp"

namespace fs = std::filesystem;

namespace relight {

namespace {

using Pair = std::pair<Tensor<float>, Tensor<float>>;

std::vector<Pair> preload(const PairedDataset& data) {
    std::vector<Pair> out;
    out.reserve(data.entries.size());
    for (const auto& e : data.entries) out.push_back(load_pair(e));
    return out;
}

std::vector<Pair> sample_batch(const std::vector<Pair>& images, int64_t batch, int64_t patch, Rng& rng) {
    std::vector<Pair> out;
    out.reserve(static_cast<size_t>(batch));
    for (int64_t i = 0; i < batch; ++i) {
        const auto& [low, high] = images[static_cast<size_t>(rng.index(static_cast<int64_t>(images.size())))];
        out.push_back(random_patch(low, high, patch, rng));
    }
    return out;
}

} // namespace

double pretrain_dnet(const PairedDataset& data, ModelBundle<float>& bundle, const Config& cfg,
                     Rng& rng, std::ostream* progress) {
    auto images = preload(data);
    bundle.dnet.set_trainable(true);
    nn::ParamList<float> params;
    bundle.dnet.collect(params);
    Adam<float> adam(params);
    double loss = 0;
    for (int64_t it = 0; it < cfg.train.dnet_iterations; ++it) {
        auto batch = sample_batch(images, cfg.train.batch_size, cfg.train.patch_size, rng);
        loss = dnet_pretrain_step(batch, bundle.dnet, adam, cfg.train.dnet_lr);
        if (progress && (it % cfg.train.log_interval == 0 || it + 1 == cfg.train.dnet_iterations))
            *progress << "dnet iter " << it << " loss " << loss << "\n";
    }
    bundle.freeze_dnet();
    return loss;
}

LossReport train(const PairedDataset& data, ModelBundle<float>& bundle, const Config& cfg,
                 const TrainOptions& opts, const LoadedCheckpoint* resume) {
    cfg.train.validate();
    auto images = preload(data);

    Rng rng(cfg.train.seed);
    Adam<float> adam(bundle.trainable_params());
    int64_t start = 0;
    if (resume) {
        rng.deserialize(resume->rng_state);
        restore_adam(adam, *resume);
        start = resume->iteration;
    }

    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, resume ? std::ios::app : std::ios::trunc);
        if (!log) throw IoError("cannot open log file " + opts.log_path);
    }

    LossReport rep;
    for (int64_t it = start; it < cfg.train.iterations; ++it) {
        auto batch = sample_batch(images, cfg.train.batch_size, cfg.train.patch_size, rng);
        double lr = lr_at(it, cfg.train);
        rep = train_step(batch, bundle, cfg.train, rng, adam, lr);
        bool last = it + 1 == cfg.train.iterations;
        if (log && (it % cfg.train.log_interval == 0 || last)) {
            nlohmann::json rec{{"iter", it},
                               {"l_all", rep.l_all},
                               {"l_unet", rep.l_unet},
                               {"l_rnet", rep.l_rnet},
                               {"l_anet", rep.l_anet},
                               {"lr", lr}};
            log << rec.dump() << "\n";
            log.flush();
        }
        if (opts.progress && (it % cfg.train.log_interval == 0 || last))
            *opts.progress << "iter " << it << " l_all " << rep.l_all << " lr " << lr << "\n";
        if (!opts.checkpoint_path.empty() &&
            ((it + 1) % cfg.train.checkpoint_interval == 0 || last))
            save_checkpoint(opts.checkpoint_path, bundle, cfg, it + 1, rng.serialize(), &adam);
    }
    return rep;
}

std::vector<EvalRow> evaluate_dirs(const std::string& low_dir, const std::string& high_dir,
                                   const ModelBundle<float>* bundle, const SamplerConfig& sampler_cfg,
                                   const std::string& jsonl_path) {
    if (!fs::is_directory(low_dir) || !fs::is_directory(high_dir))
        throw IoError("evaluate wants two directories: " + low_dir + ", " + high_dir);
    std::set<std::string> highs;
    for (const auto& e : fs::directory_iterator(high_dir))
        if (e.path().extension() == ".png") highs.insert(e.path().filename().string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(low_dir))
        if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("no .png images under " + low_dir);

    std::ofstream jsonl;
    if (!jsonl_path.empty()) {
        jsonl.open(jsonl_path, std::ios::trunc);
        if (!jsonl) throw IoError("cannot open " + jsonl_path);
    }

    std::vector<EvalRow> rows;
    for (const auto& name : names) {
        if (!highs.count(name))
            throw IoError("unpaired low image: " + (fs::path(low_dir) / name).string());
        Tensor<float> low = io::read_png((fs::path(low_dir) / name).string());
        Tensor<float> high = io::read_png((fs::path(high_dir) / name).string());
        if (!low.same_shape(high))
            throw IoError("pair " + name + " decodes to mismatched sizes");
        Tensor<float> candidate = bundle ? enhance(low, *bundle, sampler_cfg) : low;
        EvalRow row;
        row.name = name;
        row.psnr = metrics::psnr(candidate, high);
        row.ssim = metrics::ssim(candidate, high);
        row.hist_l1 = metrics::hist_l1(metrics::luminance(candidate), metrics::luminance(high), 64);
        rows.push_back(row);
        if (jsonl) {
            nlohmann::json rec{{"name", row.name},
                               {"psnr", row.psnr},
                               {"ssim", row.ssim},
                               {"hist_l1", row.hist_l1}};
            jsonl << rec.dump() << "\n";
        }
    }
    return rows;
}

std::string format_eval_table(const std::vector<EvalRow>& rows) {
    size_t width = 4;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-*s  %9s  %7s  %8s\n", static_cast<int>(width), "name",
                  "PSNR", "SSIM", "Hist-L1");
    out += buf;
    double ps = 0, ss = 0, hs = 0;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %9.3f  %7.4f  %8.4f\n", static_cast<int>(width),
                      r.name.c_str(), r.psnr, r.ssim, r.hist_l1);
        out += buf;
        ps += r.psnr;
        ss += r.ssim;
        hs += r.hist_l1;
    }
    double n = static_cast<double>(rows.size());
    std::snprintf(buf, sizeof buf, "%-*s  %9.3f  %7.4f  %8.4f\n", static_cast<int>(width), "mean",
                  ps / n, ss / n, hs / n);
    out += buf;
    return out;
}

} // namespace relight
