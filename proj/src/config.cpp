#include "relight/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "relight/errors.hpp"

namespace relight {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Binder {
    std::map<std::string, std::function<void(const std::string&)>> setters;
    std::vector<std::pair<std::string, std::function<std::string()>>> getters;

    void number(const std::string& key, double* p) {
        setters[key] = [p](const std::string& v) { *p = std::stod(v); };
        getters.emplace_back(key, [p] { return fmt_double(*p); });
    }
    void integer(const std::string& key, int64_t* p) {
        setters[key] = [p](const std::string& v) { *p = std::stoll(v); };
        getters.emplace_back(key, [p] { return std::to_string(*p); });
    }
    void unsigned64(const std::string& key, uint64_t* p) {
        setters[key] = [p](const std::string& v) { *p = std::stoull(v); };
        getters.emplace_back(key, [p] { return std::to_string(*p); });
    }
    void boolean(const std::string& key, bool* p) {
        setters[key] = [key, p](const std::string& v) {
            if (v == "true" || v == "1") *p = true;
            else if (v == "false" || v == "0") *p = false;
            else throw ParamError("config key " + key + " wants true/false, got '" + v + "'");
        };
        getters.emplace_back(key, [p] { return *p ? std::string("true") : std::string("false"); });
    }
};

Binder make_binder(Config& c) {
    Binder b;
    b.number("lr", &c.train.lr);
    b.number("lr_decay", &c.train.lr_decay);
    b.integer("lr_decay_interval", &c.train.lr_decay_interval);
    b.integer("iterations", &c.train.iterations);
    b.integer("batch_size", &c.train.batch_size);
    b.integer("patch_size", &c.train.patch_size);
    b.number("lambda_unet", &c.train.lambda_unet);
    b.number("lambda_rnet", &c.train.lambda_rnet);
    b.number("lambda_anet", &c.train.lambda_anet);
    b.number("lambda_ja", &c.train.lambda_ja);
    b.number("lambda_je", &c.train.lambda_je);
    b.integer("hist_bins", &c.train.hist_bins);
    b.unsigned64("seed", &c.train.seed);
    b.integer("log_interval", &c.train.log_interval);
    b.integer("checkpoint_interval", &c.train.checkpoint_interval);
    b.integer("dnet_iterations", &c.train.dnet_iterations);
    b.number("dnet_lr", &c.train.dnet_lr);
    b.integer("sample_steps", &c.train.sample_steps);

    b.integer("steps", &c.sampler.steps);
    b.unsigned64("sampler_seed", &c.sampler.seed);
    b.boolean("use_retinex_cond", &c.sampler.use_retinex_cond);
    b.boolean("use_semantic_cond", &c.sampler.use_semantic_cond);
    b.boolean("use_frcm", &c.sampler.use_frcm);
    b.boolean("use_ircm", &c.sampler.use_ircm);
    b.boolean("use_anet", &c.sampler.use_anet);

    b.integer("schedule_steps", &c.model.schedule_steps);
    b.number("beta_start", &c.model.beta_start);
    b.number("beta_end", &c.model.beta_end);
    b.unsigned64("init_seed", &c.model.init_seed);
    b.integer("dnet_base_channels", &c.model.dnet.base_channels);
    b.integer("dnet_depth", &c.model.dnet.depth);
    b.integer("anet_base_channels", &c.model.anet.base_channels);
    b.integer("anet_depth", &c.model.anet.depth);
    b.integer("unet_base_channels", &c.model.unet.base_channels);
    b.integer("attn_heads", &c.model.unet.attn_heads);
    b.integer("retinex_dim", &c.model.unet.retinex_dim);
    b.integer("semantic_dim", &c.model.unet.semantic_dim);
    return b;
}

} // namespace

Config default_config() {
    return Config{};
}

Config parse_config_text(const std::string& text) {
    Config cfg;
    Binder b = make_binder(cfg);
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto z = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, z - a + 1);
        };
        std::string entry = trim(line);
        if (entry.empty()) continue;
        auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw ParamError("config line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(entry.substr(0, eq));
        std::string value = trim(entry.substr(eq + 1));
        auto it = b.setters.find(key);
        if (it == b.setters.end())
            throw ParamError("unknown config key '" + key + "' on line " + std::to_string(lineno));
        it->second(value);
    }
    return cfg;
}

Config read_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_text(const Config& cfg) {
    Config copy = cfg;
    Binder b = make_binder(copy);
    std::string out;
    for (const auto& [key, get] : b.getters) {
        out += key;
        out += " = ";
        out += get();
        out += "\n";
    }
    return out;
}

} // namespace relight
