#pragma once

// Inference-time label propagation: restricted top-k transition matrices
// over a context window (source frame plus the last m frames), label
// transport, and the Jaccard / keypoint metrics.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "spacetime/config.hpp"
#include "spacetime/diffmath.hpp"
#include "spacetime/tensor.hpp"
#include "spacetime/video_graph.hpp"
#include "spacetime/walk.hpp"

namespace spacetime {

// Per-node distribution over label channels. Hard fields are one-hot.
struct LabelField {
    Tensor2 rows;  // nodes x channels, entries in [0,1]

    int nodes() const { return rows.rows; }
    int channels() const { return rows.cols; }

    static LabelField one_hot(const std::vector<int>& channel_per_node, int channels) {
        LabelField f;
        f.rows = Tensor2(static_cast<int>(channel_per_node.size()), channels);
        for (size_t i = 0; i < channel_per_node.size(); ++i) {
            int c = channel_per_node[i];
            if (c < 0 || c >= channels) throw std::out_of_range("LabelField: channel out of range");
            f.rows.at(static_cast<int>(i), c) = 1.0;
        }
        return f;
    }

    // Argmax per node, ties to the lowest channel index.
    std::vector<int> hard() const {
        std::vector<int> out(rows.rows);
        for (int i = 0; i < rows.rows; ++i) {
            int best = 0;
            for (int j = 1; j < rows.cols; ++j)
                if (rows.at(i, j) > rows.at(i, best)) best = j;
            out[i] = best;
        }
        return out;
    }
};

// Row-sparse transition K_t^s from target nodes to stacked context nodes.
struct TransitionMatrix {
    Tensor2 k;            // target nodes x (context frames * nodes per frame)
    int context_frames = 0;
    int nodes_per_frame = 0;
};

// Per target node: collect context nodes within Chebyshev grid distance
// <= radius (same mask in every context frame), softmax over the gathered
// similarities, keep the top-k weights, renormalize. With topk_presoftmax
// the k largest similarities are kept first and softmaxed directly.
inline TransitionMatrix build_transition(const Tensor2& target, const std::vector<const Tensor2*>& context,
                                         double tau, int radius, int k, int grid_rows, int grid_cols,
                                         bool topk_presoftmax = false) {
    if (tau <= 0.0) throw std::invalid_argument("build_transition: tau must be positive");
    if (k < 1) throw std::invalid_argument("build_transition: k must be at least 1");
    if (radius < 1) throw std::invalid_argument("build_transition: radius must be at least 1");
    if (context.empty()) throw std::invalid_argument("build_transition: empty context");
    int n = grid_rows * grid_cols;
    if (target.rows != n) throw std::invalid_argument("build_transition: target rows do not match grid");
    for (const Tensor2* c : context) {
        if (c->rows != n) throw std::invalid_argument("build_transition: context rows do not match grid");
        if (c->cols != target.cols) throw std::invalid_argument("build_transition: embedding dims differ");
    }
    int m1 = static_cast<int>(context.size());

    TransitionMatrix out;
    out.context_frames = m1;
    out.nodes_per_frame = n;
    out.k = Tensor2(n, m1 * n);

    std::vector<int> cand;          // flat context indices within radius
    std::vector<double> sim, w;
    for (int i = 0; i < n; ++i) {
        int ir = i / grid_cols, ic = i % grid_cols;
        cand.clear();
        sim.clear();
        for (int j = 0; j < n; ++j) {
            int jr = j / grid_cols, jc = j % grid_cols;
            if (std::max(std::abs(ir - jr), std::abs(ic - jc)) > radius) continue;
            for (int f = 0; f < m1; ++f) cand.push_back(f * n + j);
        }
        if (cand.empty()) throw std::invalid_argument("build_transition: node has no in-radius context");
        for (int c : cand) {
            const Tensor2& emb = *context[c / n];
            int j = c % n;
            double d = 0.0;
            for (int x = 0; x < target.cols; ++x) d += target.at(i, x) * emb.at(j, x);
            sim.push_back(d);
        }

        int keep = std::min<int>(k, static_cast<int>(cand.size()));
        std::vector<int> order(cand.size());
        for (size_t x = 0; x < order.size(); ++x) order[x] = static_cast<int>(x);

        if (topk_presoftmax) {
            // ties resolved to the lower flat index for determinism
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim[a] > sim[b]; });
            order.resize(keep);
            double mx = sim[order[0]];
            double z = 0.0;
            w.assign(keep, 0.0);
            for (int x = 0; x < keep; ++x) z += (w[x] = std::exp((sim[order[x]] - mx) / tau));
            for (int x = 0; x < keep; ++x) out.k.at(i, cand[order[x]]) = w[x] / z;
        } else {
            double mx = *std::max_element(sim.begin(), sim.end());
            double z = 0.0;
            w.assign(sim.size(), 0.0);
            for (size_t x = 0; x < sim.size(); ++x) z += (w[x] = std::exp((sim[x] - mx) / tau));
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w[a] > w[b]; });
            order.resize(keep);
            double kept_mass = 0.0;
            for (int x : order) kept_mass += w[x];
            for (int x : order) out.k.at(i, cand[x]) = w[x] / kept_mass;
        }
    }
    return out;
}

// L_t = K_t^s L_s over the stacked context labels; rows clipped to [0,1].
inline LabelField propagate_labels(const TransitionMatrix& k, const std::vector<const LabelField*>& context) {
    if (static_cast<int>(context.size()) != k.context_frames)
        throw std::invalid_argument("propagate_labels: context frame count mismatch");
    int channels = context.empty() ? 0 : context[0]->channels();
    Tensor2 stacked(k.context_frames * k.nodes_per_frame, channels);
    for (int f = 0; f < k.context_frames; ++f) {
        const LabelField& lf = *context[f];
        if (lf.nodes() != k.nodes_per_frame || lf.channels() != channels)
            throw std::invalid_argument("propagate_labels: label shape mismatch");
        for (int i = 0; i < lf.nodes(); ++i)
            for (int j = 0; j < channels; ++j) stacked.at(f * k.nodes_per_frame + i, j) = lf.rows.at(i, j);
    }
    LabelField out;
    out.rows = matmul(k.k, stacked);
    for (double& v : out.rows.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

// IoU of one channel between two hard fields; empty union reports nothing.
inline std::optional<double> jaccard(const std::vector<int>& pred, const std::vector<int>& truth, int channel) {
    if (pred.size() != truth.size()) throw std::invalid_argument("jaccard: node count mismatch");
    int inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] == channel, t = truth[i] == channel;
        inter += (p && t);
        uni += (p || t);
    }
    if (uni == 0) return std::nullopt;
    return static_cast<double>(inter) / uni;
}

struct PixelPoint {
    double y = 0.0, x = 0.0;
};

// Fraction of keypoints within alpha * max(H, W) pixels (closed threshold).
inline double pck(const std::vector<PixelPoint>& pred, const std::vector<PixelPoint>& truth, double alpha, int frame_h,
                  int frame_w) {
    if (pred.size() != truth.size()) throw std::invalid_argument("pck: keypoint count mismatch");
    if (alpha <= 0.0) throw std::invalid_argument("pck: alpha must be positive");
    if (pred.empty()) return 1.0;
    double thr = alpha * std::max(frame_h, frame_w);
    int ok = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double dy = pred[i].y - truth[i].y, dx = pred[i].x - truth[i].x;
        if (std::sqrt(dy * dy + dx * dx) <= thr) ++ok;
    }
    return static_cast<double>(ok) / pred.size();
}

// Context frame indices for target t: source frame 0 plus the last m frames.
inline std::vector<int> context_frame_indices(int t, int m) {
    std::vector<int> idx = {0};
    for (int f = std::max(1, t - m); f < t; ++f) idx.push_back(f);
    return idx;
}

struct PropagationRun {
    std::vector<LabelField> fields;          // per frame; [0] is the seed
    std::vector<std::vector<int>> hard;      // per frame argmax decisions
};

// Full inference pass: frame-0 labels transported through every later frame.
inline PropagationRun propagate_clip(const Clip& clip, const Model& model, const RunConfig& cfg,
                                     const LabelField& labels0) {
    NeighborTable table = neighborhood_indices(cfg.grid_rows, cfg.grid_cols, cfg.window_rows, cfg.window_cols);
    std::vector<Tensor2> embeds;
    embeds.reserve(clip.frame_count());
    for (const Image& frame : clip.frames) embeds.push_back(embed_frame(frame, model, cfg, table));

    if (labels0.nodes() != cfg.node_count()) throw std::invalid_argument("propagate_clip: labels0 node count mismatch");
    PropagationRun run;
    run.fields.push_back(labels0);
    run.hard.push_back(labels0.hard());
    for (int t = 1; t < clip.frame_count(); ++t) {
        std::vector<int> ctx = context_frame_indices(t, cfg.context_frames);
        std::vector<const Tensor2*> ctx_embeds;
        std::vector<const LabelField*> ctx_labels;
        for (int f : ctx) {
            ctx_embeds.push_back(&embeds[f]);
            ctx_labels.push_back(&run.fields[f]);
        }
        TransitionMatrix k = build_transition(embeds[t], ctx_embeds, cfg.tau, cfg.radius, cfg.topk, cfg.grid_rows,
                                              cfg.grid_cols, cfg.topk_presoftmax);
        LabelField lf = propagate_labels(k, ctx_labels);
        run.hard.push_back(lf.hard());
        run.fields.push_back(std::move(lf));
    }
    return run;
}

}  // namespace spacetime
