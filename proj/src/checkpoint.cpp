#include "relight/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "relight/errors.hpp"

namespace relight {

namespace {

void put_u32(std::string& out, uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::string& out, uint64_t v) {
    out.append(reinterpret_cast<const char*>(&v), 8);
}
void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string path;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated checkpoint " + path);
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string encode_params(nn::ParamList<float>& ps) {
    std::string out;
    put_u32(out, static_cast<uint32_t>(ps.size()));
    for (auto& p : ps) {
        put_str(out, p.name);
        put_u32(out, static_cast<uint32_t>(p.var->value.rank()));
        for (int64_t d : p.var->value.shape()) put_u64(out, static_cast<uint64_t>(d));
        out.append(reinterpret_cast<const char*>(p.var->value.data()),
                   static_cast<size_t>(p.var->value.numel()) * sizeof(float));
    }
    return out;
}

void decode_params(const std::string& blob, const std::string& path, nn::ParamList<float>& ps) {
    Reader r{blob, 0, path};
    uint32_t n = r.u32();
    std::map<std::string, Tensor<float>> loaded;
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        uint32_t rank = r.u32();
        std::vector<int64_t> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int64_t>(r.u64()));
        Tensor<float> t(shape);
        size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
        r.need(bytes);
        std::memcpy(t.data(), blob.data() + r.pos, bytes);
        r.pos += bytes;
        loaded[name] = std::move(t);
    }
    for (auto& p : ps) {
        auto it = loaded.find(p.name);
        if (it == loaded.end()) throw IoError("checkpoint " + path + " missing parameter " + p.name);
        check_same_shape(p.var->value, it->second, "checkpoint load");
        p.var->value = it->second;
    }
}

std::string encode_tensor_list(const std::vector<Tensor<float>>& ts) {
    std::string out;
    put_u32(out, static_cast<uint32_t>(ts.size()));
    for (const auto& t : ts) {
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
        out.append(reinterpret_cast<const char*>(t.data()),
                   static_cast<size_t>(t.numel()) * sizeof(float));
    }
    return out;
}

std::vector<Tensor<float>> decode_tensor_list(Reader& r) {
    uint32_t n = r.u32();
    std::vector<Tensor<float>> out;
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t rank = r.u32();
        std::vector<int64_t> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int64_t>(r.u64()));
        Tensor<float> t(shape);
        size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
        r.need(bytes);
        std::memcpy(t.data(), r.buf.data() + r.pos, bytes);
        r.pos += bytes;
        out.push_back(std::move(t));
    }
    return out;
}

constexpr char kMagic[4] = {'R', 'L', 'C', 'K'};

} // namespace

void save_checkpoint(const std::string& path, ModelBundle<float>& bundle, const Config& config,
                     int64_t iteration, const std::string& rng_state, Adam<float>* adam) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, static_cast<uint64_t>(iteration));

    std::vector<std::pair<std::string, std::string>> sections;
    sections.emplace_back("config", config_to_text(config));
    sections.emplace_back("rng", rng_state);
    {
        nn::ParamList<float> ps;
        bundle.dnet.collect(ps);
        sections.emplace_back("dnet", encode_params(ps));
        ps.clear();
        bundle.anet.collect(ps);
        sections.emplace_back("anet", encode_params(ps));
        ps.clear();
        bundle.unet.collect(ps);
        sections.emplace_back("unet", encode_params(ps));
        ps.clear();
        bundle.rnet.collect(ps);
        sections.emplace_back("rnet", encode_params(ps));
        ps.clear();
        bundle.backbone.collect(ps);
        sections.emplace_back("seg_backbone", encode_params(ps));
    }
    if (adam) {
        std::string blob;
        put_u64(blob, static_cast<uint64_t>(adam->step_count()));
        blob += encode_tensor_list(adam->moment1());
        blob += encode_tensor_list(adam->moment2());
        sections.emplace_back("adam", blob);
    }

    put_u32(out, static_cast<uint32_t>(sections.size()));
    for (auto& [name, payload] : sections) {
        put_str(out, name);
        put_u64(out, payload.size());
        out.append(payload);
    }

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot create " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf, 0, path};
    r.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw IoError(path + " is not a checkpoint");
    r.pos = 4;
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError("checkpoint " + path + " has version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));

    LoadedCheckpoint ck;
    ck.iteration = static_cast<int64_t>(r.u64());
    uint32_t nsec = r.u32();
    std::map<std::string, std::string> sections;
    for (uint32_t i = 0; i < nsec; ++i) {
        std::string name = r.str();
        uint64_t len = r.u64();
        r.need(len);
        sections[name] = buf.substr(r.pos, len);
        r.pos += len;
    }
    auto need_section = [&sections, &path](const std::string& name) -> const std::string& {
        auto it = sections.find(name);
        if (it == sections.end()) throw IoError("checkpoint " + path + " missing entry '" + name + "'");
        return it->second;
    };

    ck.config = parse_config_text(need_section("config"));
    ck.rng_state = need_section("rng");
    ck.bundle = std::make_unique<ModelBundle<float>>(ck.config.model);
    {
        nn::ParamList<float> ps;
        ck.bundle->dnet.collect(ps);
        decode_params(need_section("dnet"), path, ps);
        ps.clear();
        ck.bundle->anet.collect(ps);
        decode_params(need_section("anet"), path, ps);
        ps.clear();
        ck.bundle->unet.collect(ps);
        decode_params(need_section("unet"), path, ps);
        ps.clear();
        ck.bundle->rnet.collect(ps);
        decode_params(need_section("rnet"), path, ps);
        ps.clear();
        ck.bundle->backbone.collect(ps);
        decode_params(need_section("seg_backbone"), path, ps);
    }
    ck.bundle->freeze_dnet();

    if (sections.count("adam")) {
        const std::string& blob = sections["adam"];
        Reader ar{blob, 0, path};
        ck.adam_steps = static_cast<int64_t>(ar.u64());
        ck.adam_m = decode_tensor_list(ar);
        ck.adam_v = decode_tensor_list(ar);
        ck.has_optimizer = true;
    }
    return ck;
}

void restore_adam(Adam<float>& adam, const LoadedCheckpoint& ck) {
    if (!ck.has_optimizer) throw IoError("checkpoint carries no optimizer state");
    if (adam.moment1().size() != ck.adam_m.size())
        throw IoError("optimizer state size mismatch on restore");
    adam.step_count() = ck.adam_steps;
    for (size_t i = 0; i < ck.adam_m.size(); ++i) {
        check_same_shape(adam.moment1()[i], ck.adam_m[i], "restore_adam");
        adam.moment1()[i] = ck.adam_m[i];
        adam.moment2()[i] = ck.adam_v[i];
    }
}

} // namespace relight
