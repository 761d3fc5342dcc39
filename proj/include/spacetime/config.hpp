#pragma once

// Flat key=value run configuration: parsing, validation, canonical
// serialization and fingerprinting. The canonical text (every field, fixed
// order) is what gets hashed and embedded in checkpoints, so two configs
// with the same effective values always match.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spacetime {

struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(const std::string& field_, const std::string& what_)
        : std::runtime_error("invalid config: " + field_ + ": " + what_), field(field_) {}
};

enum class EdgeVariant { Fixed, Random, Topology };

inline const char* edge_variant_name(EdgeVariant v) {
    switch (v) {
        case EdgeVariant::Fixed: return "fixed";
        case EdgeVariant::Random: return "random";
        default: return "topology";
    }
}

struct RunConfig {
    // graph geometry
    int grid_rows = 7, grid_cols = 7;
    int patch_size = 8;
    int window_rows = 3, window_cols = 3;

    // encoder
    int embed_dim = 16;
    int feat_hw = 4;
    int hidden = 24;

    // training
    double tau = 0.05;
    int clip_len = 6;  // steps per direction; a clip has clip_len + 1 frames
    double dropout_threshold = 0.2;
    int min_keep = 4;
    double lr_phase1 = 1e-3;
    double lr_phase2 = 3e-4;
    int warmup_steps = 200;  // linear lr ramp; full-size early steps collapse the embeddings
    int epochs_phase1 = 80;
    int epochs_phase2 = 20;
    int batch_size = 8;
    uint64_t seed = 1;
    EdgeVariant edge_variant = EdgeVariant::Topology;
    bool renormalize = true;
    bool subcycle_mean = false;  // average Eq-style sub-cycle sum instead of summing

    // inference
    int topk = 10;
    int context_frames = 4;  // m
    int radius = 2;          // r, grid cells, Chebyshev
    bool topk_presoftmax = false;

    // data
    std::string data_dir;
    std::string eval_dir;

    // synthetic generator
    int num_clips = 200;
    int canvas = 56;
    int sprites = 2;
    int sprite_cells = 3;
    int max_speed = 1;
    double bg_level = 0.5;
    double bg_noise = 0.08;    // per-cell background tint spread
    double bg_flicker = 0.0;   // per-frame per-cell background wobble
    double sprite_noise = 0.15;
    double chroma_spread = 0.15;
    double sprite_jitter = 0.03;
    double global_jitter = 0.015;
    double frame_noise = 0.01;
    bool confusable = false;

    int node_count() const { return grid_rows * grid_cols; }

    void validate() const {
        auto need = [](bool ok, const char* field, const char* msg) {
            if (!ok) throw ConfigError(field, msg);
        };
        need(grid_rows >= 1 && grid_cols >= 1, "grid_shape", "grid must be at least 1x1");
        need(patch_size >= 1, "patch_size", "must be positive");
        need(window_rows >= 1 && window_cols >= 1 && window_rows % 2 == 1 && window_cols % 2 == 1, "window_shape",
             "window dimensions must be odd");
        need(embed_dim >= 2, "embed_dim", "must be at least 2");
        need(feat_hw >= 1 && patch_size % feat_hw == 0, "feat_hw", "must divide patch_size");
        need(hidden >= 1, "hidden", "must be positive");
        need(tau > 0.0, "tau", "must be positive");
        need(clip_len >= 1, "clip_len", "must be at least 1");
        need(dropout_threshold >= 0.0 && dropout_threshold <= 2.0, "dropout_threshold", "must be in [0, 2]");
        need(min_keep >= 2, "min_keep", "must be at least 2");
        need(lr_phase1 > 0.0, "lr_phase1", "must be positive");
        need(lr_phase2 > 0.0, "lr_phase2", "must be positive");
        need(warmup_steps >= 0, "warmup_steps", "must be non-negative");
        need(epochs_phase1 >= 0, "epochs_phase1", "must be non-negative");
        need(epochs_phase2 >= 0, "epochs_phase2", "must be non-negative");
        need(batch_size >= 1, "batch_size", "must be positive");
        need(topk >= 1, "topk", "must be at least 1");
        need(context_frames >= 0, "context_frames", "must be non-negative");
        need(radius >= 1, "radius", "must be at least 1");
        need(num_clips >= 1, "num_clips", "must be positive");
        need(canvas >= patch_size, "canvas", "must be at least patch_size");
        need(sprites >= 0, "sprites", "must be non-negative");
        need(sprite_cells >= 1, "sprite_cells", "must be positive");
        need(max_speed >= 0, "max_speed", "must be non-negative");
        need(bg_flicker >= 0.0, "bg_flicker", "must be non-negative");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline void parse_shape(const std::string& field, const std::string& v, int& rows, int& cols) {
    size_t x = v.find('x');
    if (x == std::string::npos) throw ConfigError(field, "expected ROWSxCOLS, e.g. 3x3");
    try {
        rows = std::stoi(v.substr(0, x));
        cols = std::stoi(v.substr(x + 1));
    } catch (const std::exception&) {
        throw ConfigError(field, "expected ROWSxCOLS, e.g. 3x3");
    }
}

inline double parse_real(const std::string& field, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError(field, "expected a real number");
    }
}

inline long long parse_int(const std::string& field, const std::string& v) {
    try {
        size_t pos = 0;
        long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError(field, "expected an integer");
    }
}

inline bool parse_bool(const std::string& field, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError(field, "expected 0/1");
}

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void apply_config_line(RunConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "grid_shape") parse_shape(key, value, c.grid_rows, c.grid_cols);
    else if (key == "window_shape") parse_shape(key, value, c.window_rows, c.window_cols);
    else if (key == "patch_size") c.patch_size = static_cast<int>(parse_int(key, value));
    else if (key == "embed_dim") c.embed_dim = static_cast<int>(parse_int(key, value));
    else if (key == "feat_hw") c.feat_hw = static_cast<int>(parse_int(key, value));
    else if (key == "hidden") c.hidden = static_cast<int>(parse_int(key, value));
    else if (key == "tau") c.tau = parse_real(key, value);
    else if (key == "clip_len") c.clip_len = static_cast<int>(parse_int(key, value));
    else if (key == "dropout_threshold") c.dropout_threshold = parse_real(key, value);
    else if (key == "min_keep") c.min_keep = static_cast<int>(parse_int(key, value));
    else if (key == "lr_phase1") c.lr_phase1 = parse_real(key, value);
    else if (key == "lr_phase2") c.lr_phase2 = parse_real(key, value);
    else if (key == "warmup_steps") c.warmup_steps = static_cast<int>(parse_int(key, value));
    else if (key == "epochs_phase1") c.epochs_phase1 = static_cast<int>(parse_int(key, value));
    else if (key == "epochs_phase2") c.epochs_phase2 = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "edge_variant") {
        if (value == "fixed") c.edge_variant = EdgeVariant::Fixed;
        else if (value == "random") c.edge_variant = EdgeVariant::Random;
        else if (value == "topology") c.edge_variant = EdgeVariant::Topology;
        else throw ConfigError(key, "must be one of fixed|random|topology");
    }
    else if (key == "renormalize") c.renormalize = parse_bool(key, value);
    else if (key == "subcycle_mean") c.subcycle_mean = parse_bool(key, value);
    else if (key == "topk") c.topk = static_cast<int>(parse_int(key, value));
    else if (key == "context_frames") c.context_frames = static_cast<int>(parse_int(key, value));
    else if (key == "radius") c.radius = static_cast<int>(parse_int(key, value));
    else if (key == "topk_presoftmax") c.topk_presoftmax = parse_bool(key, value);
    else if (key == "data_dir") c.data_dir = value;
    else if (key == "eval_dir") c.eval_dir = value;
    else if (key == "num_clips") c.num_clips = static_cast<int>(parse_int(key, value));
    else if (key == "canvas") c.canvas = static_cast<int>(parse_int(key, value));
    else if (key == "sprites") c.sprites = static_cast<int>(parse_int(key, value));
    else if (key == "sprite_cells") c.sprite_cells = static_cast<int>(parse_int(key, value));
    else if (key == "max_speed") c.max_speed = static_cast<int>(parse_int(key, value));
    else if (key == "bg_level") c.bg_level = parse_real(key, value);
    else if (key == "bg_noise") c.bg_noise = parse_real(key, value);
    else if (key == "bg_flicker") c.bg_flicker = parse_real(key, value);
    else if (key == "sprite_noise") c.sprite_noise = parse_real(key, value);
    else if (key == "chroma_spread") c.chroma_spread = parse_real(key, value);
    else if (key == "sprite_jitter") c.sprite_jitter = parse_real(key, value);
    else if (key == "global_jitter") c.global_jitter = parse_real(key, value);
    else if (key == "frame_noise") c.frame_noise = parse_real(key, value);
    else if (key == "confusable") c.confusable = parse_bool(key, value);
    else throw ConfigError(key, "unknown config key");
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno), "expected key=value");
        apply_config_line(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// Every field, fixed order. Parsing this text reproduces the config exactly.
inline std::string canonical_config_text(const RunConfig& c) {
    using detail::fmt_real;
    std::ostringstream o;
    o << "grid_shape=" << c.grid_rows << "x" << c.grid_cols << "\n";
    o << "patch_size=" << c.patch_size << "\n";
    o << "window_shape=" << c.window_rows << "x" << c.window_cols << "\n";
    o << "embed_dim=" << c.embed_dim << "\n";
    o << "feat_hw=" << c.feat_hw << "\n";
    o << "hidden=" << c.hidden << "\n";
    o << "tau=" << fmt_real(c.tau) << "\n";
    o << "clip_len=" << c.clip_len << "\n";
    o << "dropout_threshold=" << fmt_real(c.dropout_threshold) << "\n";
    o << "min_keep=" << c.min_keep << "\n";
    o << "lr_phase1=" << fmt_real(c.lr_phase1) << "\n";
    o << "lr_phase2=" << fmt_real(c.lr_phase2) << "\n";
    o << "warmup_steps=" << c.warmup_steps << "\n";
    o << "epochs_phase1=" << c.epochs_phase1 << "\n";
    o << "epochs_phase2=" << c.epochs_phase2 << "\n";
    o << "batch_size=" << c.batch_size << "\n";
    o << "seed=" << c.seed << "\n";
    o << "edge_variant=" << edge_variant_name(c.edge_variant) << "\n";
    o << "renormalize=" << (c.renormalize ? 1 : 0) << "\n";
    o << "subcycle_mean=" << (c.subcycle_mean ? 1 : 0) << "\n";
    o << "topk=" << c.topk << "\n";
    o << "context_frames=" << c.context_frames << "\n";
    o << "radius=" << c.radius << "\n";
    o << "topk_presoftmax=" << (c.topk_presoftmax ? 1 : 0) << "\n";
    o << "data_dir=" << c.data_dir << "\n";
    o << "eval_dir=" << c.eval_dir << "\n";
    o << "num_clips=" << c.num_clips << "\n";
    o << "canvas=" << c.canvas << "\n";
    o << "sprites=" << c.sprites << "\n";
    o << "sprite_cells=" << c.sprite_cells << "\n";
    o << "max_speed=" << c.max_speed << "\n";
    o << "bg_level=" << fmt_real(c.bg_level) << "\n";
    o << "bg_noise=" << fmt_real(c.bg_noise) << "\n";
    o << "bg_flicker=" << fmt_real(c.bg_flicker) << "\n";
    o << "sprite_noise=" << fmt_real(c.sprite_noise) << "\n";
    o << "chroma_spread=" << fmt_real(c.chroma_spread) << "\n";
    o << "sprite_jitter=" << fmt_real(c.sprite_jitter) << "\n";
    o << "global_jitter=" << fmt_real(c.global_jitter) << "\n";
    o << "frame_noise=" << fmt_real(c.frame_noise) << "\n";
    o << "confusable=" << (c.confusable ? 1 : 0) << "\n";
    return o.str();
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string config_fingerprint(const RunConfig& c) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config_text(c))));
    return buf;
}

}  // namespace spacetime
