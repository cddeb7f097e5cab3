#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "relight/checkpoint.hpp"
#include "relight/config.hpp"
#include "relight/dataset.hpp"

namespace relight {

// End-to-end runs used by the CLI and the acceptance suite: DNet
// pre-training, joint training with logging/checkpointing, and evaluation.

struct TrainOptions {
    std::string checkpoint_path; // written every checkpoint_interval when set
    std::string log_path;        // JSON-lines, one record per log_interval
    std::ostream* progress = nullptr;
};

// Pre-trains DNet on random patches from the dataset, then freezes it.
// Returns the final pre-training loss.
double pretrain_dnet(const PairedDataset& data, ModelBundle<float>& bundle, const Config& cfg,
                     Rng& rng, std::ostream* progress = nullptr);

// Joint ANet/UNet/RNet optimization. `resume` restores parameters, optimizer
// moments, RNG and the iteration counter so the run continues bit-for-bit.
LossReport train(const PairedDataset& data, ModelBundle<float>& bundle, const Config& cfg,
                 const TrainOptions& opts, const LoadedCheckpoint* resume = nullptr);

struct EvalRow {
    std::string name;
    double psnr = 0, ssim = 0, hist_l1 = 0;
};

// Scores each low/high pair; when a bundle is given the low image is enhanced
// first, otherwise the inputs themselves are scored (baseline). Optionally
// writes a JSON-lines sidecar.
std::vector<EvalRow> evaluate_dirs(const std::string& low_dir, const std::string& high_dir,
                                   const ModelBundle<float>* bundle, const SamplerConfig& sampler_cfg,
                                   const std::string& jsonl_path = "");

// Renders the aligned PSNR/SSIM/Hist-L1 table (a mean row at the bottom).
std::string format_eval_table(const std::vector<EvalRow>& rows);

} // namespace relight
