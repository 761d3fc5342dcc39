#pragma once

// Text checkpoints: model tensors, optimizer state, step counter, and the
// full config (plus its fingerprint) that produced them. %.17g round-trips
// doubles exactly, so save/load is bitwise.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "spacetime/config.hpp"
#include "spacetime/tensor.hpp"
#include "spacetime/walk.hpp"

namespace spacetime {

struct CheckpointState {
    RunConfig cfg;
    Model model;
    AdamState opt;
    long long step = 0;
};

namespace detail {

inline void write_tensor(std::ostream& o, const std::string& keyword, const std::string& name, const Tensor2& t) {
    o << keyword << " " << name << " " << t.rows << " " << t.cols << "\n";
    char buf[40];
    for (int i = 0; i < t.rows; ++i) {
        for (int j = 0; j < t.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", t.at(i, j));
            o << (j ? " " : "") << buf;
        }
        o << "\n";
    }
}

inline Tensor2 read_tensor(std::istream& in, int rows, int cols) {
    Tensor2 t(rows, cols);
    for (double& v : t.data)
        if (!(in >> v)) throw std::runtime_error("checkpoint: truncated tensor data");
    return t;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointState& st) {
    std::ostringstream o;
    o << "spacetime-checkpoint 1\n";
    o << "fingerprint " << config_fingerprint(st.cfg) << "\n";
    o << "step " << st.step << "\n";
    o << "config-begin\n" << canonical_config_text(st.cfg) << "config-end\n";
    for (const auto& [name, tensor] : st.model.learnable()) detail::write_tensor(o, "tensor", name, *tensor);
    if (!st.model.edge.learnable) detail::write_tensor(o, "tensor", "edge.logits", st.model.edge.logits);
    o << "adam " << st.opt.t << "\n";
    for (const auto& [name, t] : st.opt.m) detail::write_tensor(o, "adam-m", name, t);
    for (const auto& [name, t] : st.opt.v) detail::write_tensor(o, "adam-v", name, t);
    o << "end\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << o.str();
}

// Loads a checkpoint; if expect_cfg is given, its fingerprint must match the
// stored one unless allow_mismatch overrides (the stored config still wins).
inline CheckpointState load_checkpoint(const std::string& path, const RunConfig* expect_cfg = nullptr,
                                       bool allow_mismatch = false) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "spacetime-checkpoint" || version != 1)
        throw std::runtime_error("not a checkpoint file: " + path);

    CheckpointState st;
    std::string stored_fingerprint;
    std::string word;
    if (!(in >> word >> stored_fingerprint) || word != "fingerprint")
        throw std::runtime_error("checkpoint: missing fingerprint");
    if (!(in >> word >> st.step) || word != "step") throw std::runtime_error("checkpoint: missing step");
    if (!(in >> word) || word != "config-begin") throw std::runtime_error("checkpoint: missing config");
    in.ignore();
    std::string cfg_text, line;
    while (std::getline(in, line) && line != "config-end") cfg_text += line + "\n";
    st.cfg = parse_config_text(cfg_text);
    if (config_fingerprint(st.cfg) != stored_fingerprint)
        throw std::runtime_error("checkpoint: fingerprint does not match stored config");
    if (expect_cfg && config_fingerprint(*expect_cfg) != stored_fingerprint && !allow_mismatch)
        throw std::runtime_error("checkpoint fingerprint mismatch: checkpoint was trained under a different config");

    st.model = init_model(st.cfg);
    auto find_tensor = [&](const std::string& name) -> Tensor2* {
        for (auto& [n, t] : st.model.learnable())
            if (n == name) return t;
        if (name == "edge.logits") return &st.model.edge.logits;
        return nullptr;
    };

    while (in >> word && word != "end") {
        if (word == "tensor" || word == "adam-m" || word == "adam-v") {
            std::string name;
            int rows, cols;
            if (!(in >> name >> rows >> cols)) throw std::runtime_error("checkpoint: malformed tensor header");
            Tensor2 t = detail::read_tensor(in, rows, cols);
            if (word == "tensor") {
                Tensor2* dst = find_tensor(name);
                if (!dst) throw std::runtime_error("checkpoint: unknown tensor " + name);
                if (dst->rows != rows || dst->cols != cols)
                    throw std::runtime_error("checkpoint: tensor shape mismatch for " + name);
                *dst = std::move(t);
            } else if (word == "adam-m") {
                st.opt.m[name] = std::move(t);
            } else {
                st.opt.v[name] = std::move(t);
            }
        } else if (word == "adam") {
            if (!(in >> st.opt.t)) throw std::runtime_error("checkpoint: malformed adam record");
        } else {
            throw std::runtime_error("checkpoint: unknown record '" + word + "'");
        }
    }
    if (word != "end") throw std::runtime_error("checkpoint: truncated file");
    return st;
}

}  // namespace spacetime
