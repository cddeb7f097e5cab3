#include "relight/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "relight/errors.hpp"
#include "relight/image_io.hpp"

namespace fs = std::filesystem;

namespace relight {

PairedDataset load_pairs(const std::string& root) {
    fs::path low_dir = fs::path(root) / "low";
    fs::path high_dir = fs::path(root) / "high";
    if (!fs::is_directory(low_dir) || !fs::is_directory(high_dir))
        throw IoError("dataset root " + root + " must contain low/ and high/ directories");

    std::set<std::string> highs;
    for (const auto& e : fs::directory_iterator(high_dir))
        if (e.path().extension() == ".png") highs.insert(e.path().filename().string());

    PairedDataset ds;
    ds.root = root;
    std::vector<std::string> lows;
    for (const auto& e : fs::directory_iterator(low_dir))
        if (e.path().extension() == ".png") lows.push_back(e.path().filename().string());
    std::sort(lows.begin(), lows.end());

    for (const auto& name : lows) {
        if (!highs.count(name))
            throw IoError("unpaired low image: " + (low_dir / name).string() + " has no high/ counterpart");
        ds.entries.push_back({name, (low_dir / name).string(), (high_dir / name).string()});
    }
    if (ds.entries.empty()) throw IoError("dataset " + root + " contains no paired .png images");
    return ds;
}

std::pair<Tensor<float>, Tensor<float>> load_pair(const PairedDataset::Entry& entry) {
    Tensor<float> low = io::read_png(entry.low_path);
    Tensor<float> high = io::read_png(entry.high_path);
    if (!low.same_shape(high))
        throw IoError("pair " + entry.name + " decodes to mismatched sizes " +
                      low.shape_str() + " vs " + high.shape_str());
    return {std::move(low), std::move(high)};
}

std::pair<Tensor<float>, Tensor<float>> random_patch(const Tensor<float>& low,
                                                     const Tensor<float>& high,
                                                     int64_t patch, Rng& rng) {
    check_same_shape(low, high, "random_patch");
    int64_t H = low.shape()[1], W = low.shape()[2];
    if (H < patch || W < patch)
        throw ParamError("image smaller than patch size " + std::to_string(patch));
    int64_t y0 = H == patch ? 0 : rng.index(H - patch + 1);
    int64_t x0 = W == patch ? 0 : rng.index(W - patch + 1);
    bool flip = rng.coin();
    auto crop = [&](const Tensor<float>& src) {
        Tensor<float> out({src.shape()[0], patch, patch});
        for (int64_t c = 0; c < src.shape()[0]; ++c)
            for (int64_t y = 0; y < patch; ++y)
                for (int64_t x = 0; x < patch; ++x)
                    out.at(c, y, x) = src.at(c, y0 + y, flip ? x0 + patch - 1 - x : x0 + x);
        return out;
    };
    return {crop(low), crop(high)};
}

} // namespace relight
