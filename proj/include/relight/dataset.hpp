#pragma once

#include <string>
#include <utility>
#include <vector>

#include "relight/rng.hpp"
#include "relight/tensor.hpp"

namespace relight {

// Paired low/normal-light dataset rooted at a directory with `low/` and
// `high/` subdirectories; pairs are matched by filename.
struct PairedDataset {
    struct Entry {
        std::string name;
        std::string low_path;
        std::string high_path;
    };
    std::string root;
    std::vector<Entry> entries;

    size_t size() const { return entries.size(); }
};

// Scans root/low and root/high; throws IoError naming any low image that has
// no same-named high counterpart.
PairedDataset load_pairs(const std::string& root);

// Decodes one pair and checks the two images agree on H,W.
std::pair<Tensor<float>, Tensor<float>> load_pair(const PairedDataset::Entry& entry);

// Same random crop and horizontal flip applied to both images.
std::pair<Tensor<float>, Tensor<float>> random_patch(const Tensor<float>& low,
                                                     const Tensor<float>& high,
                                                     int64_t patch, Rng& rng);

} // namespace relight
