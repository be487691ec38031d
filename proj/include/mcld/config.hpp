#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mcld/tensor.hpp"

namespace mcld {

// Flat run configuration. Key names are the public config-file vocabulary;
// unknown keys are rejected. Defaults correspond to the `train64` preset.
struct RunConfig {
    int canvas = 64;           // square canvas side, divisible by f
    int parts = 10;            // body part count K
    int tile = 32;             // atlas tile side P
    int f = 4;                 // autoencoder downsample factor
    int latent_channels = 4;   // C_z
    int embed_dim = 64;        // d
    int embed_tokens = 1;      // tokens per image/atlas embedding (square number)
    double lambda_s = 1.0;     // MFCA switcher-branch scale
    double lambda_f = 0.5;     // MFCA face-branch scale
    int T = 1000;              // diffusion steps
    double beta_start = 8.5e-4;
    double beta_end = 1.2e-2;
    double cfg_scale = 3.5;
    double cond_drop_prob = 0.1;
    double lr = 1e-3;          // toy-scale stand-in for the reference 1e-5
    int steps = 6000;
    uint64_t seed = 0;
    std::string preset = "train64";
};

// Architecture constants derived from the preset (not part of the public
// config vocabulary).
struct ModelDims {
    int unet_w1 = 48;
    int unet_w2 = 96;
    int attn_dim = 64;
    int temb_dim = 64;
    int sin_dim = 32;
    int embedder_width = 16;
    int face_width = 16;
    int face_size = 16;
    int pose_hidden = 16;
    int autoenc_width = 32;
    int batch = 8;
};

inline RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "train64") {
        // tile 16 rather than the module-default 32: at a 64px canvas the
        // figure parts span ~10-20px, so a 16-texel tile keeps the atlas
        // dense enough that different poses share texels.
        c.tile = 16;
    } else if (name == "tiny") {
        c.canvas = 32;
        c.tile = 8;
        c.steps = 2000;
    } else if (name == "micro") {
        c.canvas = 8;
        c.f = 2;
        c.tile = 8;
        c.latent_channels = 2;
        c.embed_dim = 8;
        c.steps = 10;
    } else {
        throw std::runtime_error("config: unknown preset: " + name);
    }
    return c;
}

inline ModelDims dims_for(const RunConfig& cfg) {
    ModelDims d;
    if (cfg.preset == "train64") {
        // defaults
    } else if (cfg.preset == "tiny") {
        d.unet_w1 = 32;
        d.unet_w2 = 64;
        d.autoenc_width = 24;
    } else if (cfg.preset == "micro") {
        d.unet_w1 = 8;
        d.unet_w2 = 12;
        d.attn_dim = 8;
        d.temb_dim = 8;
        d.sin_dim = 8;
        d.embedder_width = 6;
        d.face_width = 6;
        d.face_size = 8;
        d.pose_hidden = 6;
        d.autoenc_width = 8;
        d.batch = 1;
    } else {
        throw std::runtime_error("config: unknown preset: " + cfg.preset);
    }
    return d;
}

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

template <class T>
T parse_num(const std::string& key, const std::string& v);

template <>
inline int parse_num<int>(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int r = std::stoi(v, &pos);
        check(pos == v.size(), "");
        return r;
    } catch (...) {
        throw std::runtime_error("config: invalid integer for key '" + key + "': " + v);
    }
}

template <>
inline uint64_t parse_num<uint64_t>(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(v, &pos);
        check(pos == v.size(), "");
        return r;
    } catch (...) {
        throw std::runtime_error("config: invalid integer for key '" + key + "': " + v);
    }
}

template <>
inline double parse_num<double>(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        check(pos == v.size(), "");
        return r;
    } catch (...) {
        throw std::runtime_error("config: invalid number for key '" + key + "': " + v);
    }
}

}  // namespace detail

inline void apply_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_num;
    if (key == "canvas")
        c.canvas = parse_num<int>(key, value);
    else if (key == "parts")
        c.parts = parse_num<int>(key, value);
    else if (key == "tile")
        c.tile = parse_num<int>(key, value);
    else if (key == "f")
        c.f = parse_num<int>(key, value);
    else if (key == "latent_channels")
        c.latent_channels = parse_num<int>(key, value);
    else if (key == "embed_dim")
        c.embed_dim = parse_num<int>(key, value);
    else if (key == "embed_tokens")
        c.embed_tokens = parse_num<int>(key, value);
    else if (key == "lambda_s")
        c.lambda_s = parse_num<double>(key, value);
    else if (key == "lambda_f")
        c.lambda_f = parse_num<double>(key, value);
    else if (key == "T")
        c.T = parse_num<int>(key, value);
    else if (key == "beta_start")
        c.beta_start = parse_num<double>(key, value);
    else if (key == "beta_end")
        c.beta_end = parse_num<double>(key, value);
    else if (key == "cfg_scale")
        c.cfg_scale = parse_num<double>(key, value);
    else if (key == "cond_drop_prob")
        c.cond_drop_prob = parse_num<double>(key, value);
    else if (key == "lr")
        c.lr = parse_num<double>(key, value);
    else if (key == "steps")
        c.steps = parse_num<int>(key, value);
    else if (key == "seed")
        c.seed = parse_num<uint64_t>(key, value);
    else if (key == "preset")
        throw std::logic_error("config: preset must be resolved before other keys");
    else
        throw std::runtime_error("config: unknown key: " + key);
}

inline void validate_config(const RunConfig& c) {
    check(c.canvas >= 4, "config: canvas too small");
    check(c.f == 2 || c.f == 4, "config: f must be 2 or 4");
    check(c.canvas % c.f == 0, "config: canvas must be divisible by f");
    check(c.parts >= 1, "config: parts must be >= 1");
    check(c.tile >= 2, "config: tile must be >= 2");
    check(c.latent_channels >= 1, "config: latent_channels must be >= 1");
    check(c.embed_dim >= 1, "config: embed_dim must be >= 1");
    check(c.embed_tokens >= 1, "config: embed_tokens must be >= 1");
    int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(c.embed_tokens))));
    check(g * g == c.embed_tokens, "config: embed_tokens must be a square number");
    check(c.T >= 1, "config: T must be >= 1");
    check(c.beta_start > 0 && c.beta_start < c.beta_end && c.beta_end < 1,
          "config: beta range must satisfy 0 < beta_start < beta_end < 1");
    check(c.cond_drop_prob >= 0 && c.cond_drop_prob < 1, "config: cond_drop_prob must be in [0,1)");
    check(c.steps >= 0, "config: steps must be >= 0");
    check(c.cfg_scale > 0, "config: cfg_scale must be > 0");
}

// Key/value pairs from a config file; '#' starts a comment, blank lines ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        check(eq != std::string::npos,
              "config: line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        check(!key.empty(), "config: empty key at line " + std::to_string(lineno));
        kv.emplace_back(key, value);
    }
    return kv;
}

// Resolution order: preset defaults, then file keys, then overrides
// (command line). The preset itself may come from either source, with the
// override winning.
inline RunConfig load_config(const std::string& path_or_empty,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    std::vector<std::pair<std::string, std::string>> file_kv;
    if (!path_or_empty.empty()) {
        std::ifstream f(path_or_empty);
        check(static_cast<bool>(f), "config: cannot open: " + path_or_empty);
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        file_kv = parse_config_text(text);
    }
    std::string preset = "train64";
    for (const auto& [k, v] : file_kv)
        if (k == "preset") preset = v;
    for (const auto& [k, v] : overrides)
        if (k == "preset") preset = v;
    RunConfig cfg = preset_config(preset);
    for (const auto& [k, v] : file_kv)
        if (k != "preset") apply_config_key(cfg, k, v);
    for (const auto& [k, v] : overrides)
        if (k != "preset") apply_config_key(cfg, k, v);
    validate_config(cfg);
    return cfg;
}

inline std::map<std::string, std::string> config_to_map(const RunConfig& c) {
    std::map<std::string, std::string> m;
    auto num = [](double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        return o.str();
    };
    m["canvas"] = std::to_string(c.canvas);
    m["parts"] = std::to_string(c.parts);
    m["tile"] = std::to_string(c.tile);
    m["f"] = std::to_string(c.f);
    m["latent_channels"] = std::to_string(c.latent_channels);
    m["embed_dim"] = std::to_string(c.embed_dim);
    m["embed_tokens"] = std::to_string(c.embed_tokens);
    m["lambda_s"] = num(c.lambda_s);
    m["lambda_f"] = num(c.lambda_f);
    m["T"] = std::to_string(c.T);
    m["beta_start"] = num(c.beta_start);
    m["beta_end"] = num(c.beta_end);
    m["cfg_scale"] = num(c.cfg_scale);
    m["cond_drop_prob"] = num(c.cond_drop_prob);
    m["lr"] = num(c.lr);
    m["steps"] = std::to_string(c.steps);
    m["seed"] = std::to_string(c.seed);
    m["preset"] = c.preset;
    return m;
}

inline RunConfig config_from_map(const std::map<std::string, std::string>& m) {
    std::vector<std::pair<std::string, std::string>> kv(m.begin(), m.end());
    RunConfig cfg = preset_config(m.count("preset") ? m.at("preset") : "train64");
    for (const auto& [k, v] : kv)
        if (k != "preset") apply_config_key(cfg, k, v);
    validate_config(cfg);
    return cfg;
}

}  // namespace mcld
