#pragma once

// Inter-frame similarity graph and the palindrome cycle objective: pairwise
// temperature-softmax affinities, Markov chains over consecutive frames,
// pixel-discrepancy node dropout, the sub-cycle cross-entropy loss, and the
// full optimizer step over a batch of clips.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "spacetime/config.hpp"
#include "spacetime/diffmath.hpp"
#include "spacetime/encoder.hpp"
#include "spacetime/neighbor.hpp"
#include "spacetime/tensor.hpp"
#include "spacetime/video_graph.hpp"

namespace spacetime {

// Row-stochastic transition A_src^dst between two frames' node sets.
struct AffinityMatrix {
    Tensor2 a;
    int src_frame = 0;
    int dst_frame = 0;

    bool row_stochastic(double tol = 1e-7) const {
        for (int i = 0; i < a.rows; ++i) {
            double sum = 0.0;
            for (int j = 0; j < a.cols; ++j) {
                if (a.at(i, j) < 0.0) return false;
                sum += a.at(i, j);
            }
            if (std::abs(sum - 1.0) > tol) return false;
        }
        return true;
    }
};

inline AffinityMatrix pairwise_affinity(const Tensor2& f_src, const Tensor2& f_dst, double tau, int src_frame = 0,
                                        int dst_frame = 1) {
    if (tau <= 0.0) throw std::invalid_argument("pairwise_affinity: tau must be positive");
    if (f_src.cols != f_dst.cols) throw std::invalid_argument("pairwise_affinity: embedding dims differ");
    return {row_softmax(matmul_nt(f_src, f_dst), tau), src_frame, dst_frame};
}

// Fresh softmax over swapped roles. Not the transpose of the forward matrix:
// the normalization runs along the other axis of the same similarity table.
inline AffinityMatrix backward_affinity(const Tensor2& f_src, const Tensor2& f_dst, double tau, int src_frame = 1,
                                        int dst_frame = 0) {
    return pairwise_affinity(f_src, f_dst, tau, src_frame, dst_frame);
}

inline AffinityMatrix chain_affinity(const std::vector<AffinityMatrix>& steps) {
    if (steps.empty()) throw std::invalid_argument("chain_affinity: empty chain");
    for (size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].dst_frame != steps[i].src_frame + 1)
            throw std::invalid_argument("chain_affinity: step is not a one-frame transition");
        if (i + 1 < steps.size()) {
            if (steps[i + 1].src_frame != steps[i].dst_frame)
                throw std::invalid_argument("chain_affinity: frame indices not consecutive");
            if (steps[i + 1].a.rows != steps[i].a.cols)
                throw std::invalid_argument("chain_affinity: shape mismatch between steps");
        }
    }
    Tensor2 prod = steps[0].a;
    for (size_t i = 1; i < steps.size(); ++i) prod = matmul(prod, steps[i].a);
    return {std::move(prod), steps[0].src_frame, steps.back().dst_frame};
}

// delta = 1 - mean of all pairwise dot products among a node's unit pixel
// rows (diagonal included), which collapses to 1 - |mean row|^2.
inline double pixel_discrepancy(const Tensor2& pixel_rows) {
    if (pixel_rows.rows < 1) throw std::invalid_argument("pixel_discrepancy: no pixel rows");
    double sq = 0.0;
    for (int j = 0; j < pixel_rows.cols; ++j) {
        double m = 0.0;
        for (int i = 0; i < pixel_rows.rows; ++i) m += pixel_rows.at(i, j);
        m /= pixel_rows.rows;
        sq += m * m;
    }
    // identical unit rows can round ‖mean‖² above 1; the value is [0,1] by
    // Cauchy-Schwarz, and threshold 0 must keep every node
    return std::clamp(1.0 - sq, 0.0, 1.0);
}

// Per-node deltas from the stacked pixel rows of a whole frame, `cells`
// consecutive rows per node.
inline std::vector<double> node_discrepancies(const Tensor2& pixel_rows, int cells) {
    if (cells < 1 || pixel_rows.rows % cells != 0)
        throw std::invalid_argument("node_discrepancies: row count not a multiple of cells");
    int n = pixel_rows.rows / cells;
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        Tensor2 block(cells, pixel_rows.cols);
        for (int r = 0; r < cells; ++r)
            for (int j = 0; j < pixel_rows.cols; ++j) block.at(r, j) = pixel_rows.at(i * cells + r, j);
        out[i] = pixel_discrepancy(block);
    }
    return out;
}

// Keeps nodes with delta >= threshold; falls back to the min_keep highest
// deltas (ties to the lower index) so the graph never degenerates.
inline std::vector<int> apply_node_dropout(const std::vector<double>& deltas, double threshold, int min_keep) {
    if (min_keep < 2) throw std::invalid_argument("apply_node_dropout: min_keep must be at least 2");
    std::vector<int> kept;
    for (int i = 0; i < static_cast<int>(deltas.size()); ++i)
        if (deltas[i] >= threshold) kept.push_back(i);
    if (static_cast<int>(kept.size()) < min_keep) {
        std::vector<int> order(deltas.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return deltas[a] > deltas[b]; });
        int take = std::min<int>(min_keep, static_cast<int>(deltas.size()));
        kept.assign(order.begin(), order.begin() + take);
        std::sort(kept.begin(), kept.end());
    }
    return kept;
}

// One palindrome training instance: frames t..t+T with per-frame kept nodes
// and their (aggregated) embeddings; targets are the identity over frame t's
// kept nodes.
struct PalindromeBatch {
    std::vector<int> frames;
    std::vector<std::vector<int>> kept;
    std::vector<Tensor2> embeds;  // per frame, kept rows only
    std::vector<int> targets;

    int steps() const { return static_cast<int>(frames.size()) - 1; }

    void validate() const {
        if (frames.size() < 2) throw std::invalid_argument("palindrome: need at least 2 frames");
        if (kept.size() != frames.size() || embeds.size() != frames.size())
            throw std::invalid_argument("palindrome: per-frame field sizes disagree");
        for (size_t f = 0; f < frames.size(); ++f) {
            if (kept[f].size() < 2) throw std::invalid_argument("palindrome: fewer than 2 kept nodes in a frame");
            if (embeds[f].rows != static_cast<int>(kept[f].size()))
                throw std::invalid_argument("palindrome: embedding rows do not match kept nodes");
        }
        if (targets.size() != kept[0].size()) throw std::invalid_argument("palindrome: target count mismatch");
        for (size_t i = 0; i < targets.size(); ++i)
            if (targets[i] != static_cast<int>(i)) throw std::invalid_argument("palindrome: targets must be identity");
    }
};

inline PalindromeBatch make_palindrome_batch(const std::vector<Tensor2>& frame_embeds,
                                             const std::vector<std::vector<int>>& keeps) {
    if (frame_embeds.size() != keeps.size()) throw std::invalid_argument("palindrome: frames/keeps size mismatch");
    PalindromeBatch b;
    for (size_t f = 0; f < frame_embeds.size(); ++f) {
        b.frames.push_back(static_cast<int>(f));
        b.kept.push_back(keeps[f]);
        const Tensor2& full = frame_embeds[f];
        Tensor2 rows(static_cast<int>(keeps[f].size()), full.cols);
        for (size_t r = 0; r < keeps[f].size(); ++r) {
            int src = keeps[f][r];
            if (src < 0 || src >= full.rows) throw std::out_of_range("palindrome: kept index out of range");
            for (int j = 0; j < full.cols; ++j) rows.at(static_cast<int>(r), j) = full.at(src, j);
        }
        b.embeds.push_back(std::move(rows));
    }
    b.targets.resize(b.kept[0].size());
    std::iota(b.targets.begin(), b.targets.end(), 0);
    b.validate();
    return b;
}

// Sum over sub-cycles k=1..T of CE(B^k, I) with B^k = A_t^{t+k} A_{t+k}^t.
// Forward chains extend by right-multiplication, backward chains by
// left-multiplication, so each sub-cycle reuses the previous one's product.
inline Tape::Id build_cycle_loss(Tape& tape, const std::vector<Tape::Id>& frame_embeds, double tau,
                                 bool subcycle_mean = false, std::vector<Tape::Id>* per_k = nullptr) {
    if (frame_embeds.size() < 2) throw std::invalid_argument("cycle loss: need at least 2 frames");
    if (tau <= 0.0) throw std::invalid_argument("cycle loss: tau must be positive");
    int T = static_cast<int>(frame_embeds.size()) - 1;
    for (Tape::Id id : frame_embeds)
        if (tape.val(id).rows < 2) throw std::invalid_argument("cycle loss: fewer than 2 kept nodes in a frame");

    std::vector<int> targets(tape.val(frame_embeds[0]).rows);
    std::iota(targets.begin(), targets.end(), 0);

    Tape::Id fwd_chain = -1, bwd_chain = -1, total = -1;
    for (int k = 1; k <= T; ++k) {
        Tape::Id fwd_step = tape.row_softmax(tape.matmul_nt(frame_embeds[k - 1], frame_embeds[k]), tau);
        Tape::Id bwd_step = tape.row_softmax(tape.matmul_nt(frame_embeds[k], frame_embeds[k - 1]), tau);
        fwd_chain = (k == 1) ? fwd_step : tape.matmul(fwd_chain, fwd_step);
        bwd_chain = (k == 1) ? bwd_step : tape.matmul(bwd_step, bwd_chain);
        Tape::Id round_trip = tape.matmul(fwd_chain, bwd_chain);
        Tape::Id ce = tape.cross_entropy_rows(round_trip, targets);
        if (per_k) per_k->push_back(ce);
        total = (k == 1) ? ce : tape.add(total, ce);
    }
    if (subcycle_mean) total = tape.scale(total, 1.0 / T);
    return total;
}

// Loss and gradients w.r.t. each frame's kept embeddings (partials keyed
// "frame0".."frameT"). per_k, if given, receives the T sub-cycle losses.
inline GradRecord cycle_loss(const PalindromeBatch& batch, double tau, bool subcycle_mean = false,
                             std::vector<double>* per_k = nullptr) {
    batch.validate();
    Tape tape;
    std::vector<Tape::Id> ids;
    for (size_t f = 0; f < batch.embeds.size(); ++f)
        ids.push_back(tape.param("frame" + std::to_string(f), batch.embeds[f]));
    std::vector<Tape::Id> per_k_ids;
    Tape::Id loss = build_cycle_loss(tape, ids, tau, subcycle_mean, &per_k_ids);
    if (per_k)
        for (Tape::Id id : per_k_ids) per_k->push_back(tape.val(id).at(0, 0));
    return tape.backward(loss);
}

// Trainable state: the shared encoder plus the neighbor-relation edge.
struct Model {
    EncoderParams enc;
    EdgeLogits edge;

    std::vector<std::pair<std::string, Tensor2*>> learnable() {
        std::vector<std::pair<std::string, Tensor2*>> out = {
            {"enc.w1", &enc.w1}, {"enc.b1", &enc.b1}, {"enc.w2", &enc.w2}, {"enc.b2", &enc.b2},
            {"enc.proj", &enc.proj}};
        if (edge.learnable) out.emplace_back("edge.logits", &edge.logits);
        return out;
    }

    std::vector<std::pair<std::string, const Tensor2*>> learnable() const {
        std::vector<std::pair<std::string, const Tensor2*>> out = {
            {"enc.w1", &enc.w1}, {"enc.b1", &enc.b1}, {"enc.w2", &enc.w2}, {"enc.b2", &enc.b2},
            {"enc.proj", &enc.proj}};
        if (edge.learnable) out.emplace_back("edge.logits", &edge.logits);
        return out;
    }
};

inline Model init_model(const RunConfig& cfg) {
    EncoderConfig ec;
    ec.patch_size = cfg.patch_size;
    ec.channels = 3;
    ec.feat_hw = cfg.feat_hw;
    ec.hidden = cfg.hidden;
    ec.embed_dim = cfg.embed_dim;
    ec.seed = cfg.seed;
    Model m;
    m.enc = init_encoder(ec);
    switch (cfg.edge_variant) {
        case EdgeVariant::Fixed:
            m.edge = init_topology_logits(cfg.window_rows, cfg.window_cols, false);
            break;
        case EdgeVariant::Random:
            m.edge = init_random_logits(cfg.window_rows, cfg.window_cols, cfg.seed ^ 0x9e3779b97f4a7c15ull);
            break;
        case EdgeVariant::Topology:
            m.edge = init_topology_logits(cfg.window_rows, cfg.window_cols, true);
            break;
    }
    return m;
}

// Value-path node embeddings for a whole frame: one stacked encoder pass,
// then per-node mean + renormalize. Mirrors the tape graph bit for bit.
inline Tensor2 encode_grid_nodes(const NodeGrid& grid, const EncoderParams& p, Tensor2* pixel_rows_out = nullptr) {
    std::vector<const Image*> patches;
    patches.reserve(grid.nodes.size());
    for (const Node& n : grid.nodes) patches.push_back(&n.patch);
    Tensor2 px = encode_pixels_from_cells(stack_patch_cells(patches, p.cfg), p);
    int cells = p.cfg.cells();
    int n = grid.count();
    Tensor2 pooled(n, px.cols);
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < cells; ++r)
            for (int j = 0; j < px.cols; ++j) pooled.at(i, j) += px.at(i * cells + r, j) / cells;
    if (pixel_rows_out) *pixel_rows_out = std::move(px);
    return l2_normalize_rows(pooled);
}

// Frame to aggregated node embeddings, inference path.
inline Tensor2 embed_frame(const Image& frame, const Model& m, const RunConfig& cfg, const NeighborTable& table) {
    NodeGrid grid = sample_node_grid(frame, cfg.grid_rows, cfg.grid_cols, cfg.patch_size);
    Tensor2 nodes = encode_grid_nodes(grid, m.enc);
    return aggregate_neighbors(nodes, m.edge, table, cfg.renormalize);
}

struct TrainAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Forward + backward for one clip on its own tape.
struct ClipResult {
    double loss = 0.0;
    std::vector<double> per_k;
    double kept_fraction = 1.0;
    std::map<std::string, Tensor2> grads;
};

inline ClipResult clip_forward(const Clip& clip, const Model& model, const RunConfig& cfg, double dropout_threshold,
                               const NeighborTable& table) {
    int frames_needed = cfg.clip_len + 1;
    if (clip.frame_count() < frames_needed) throw std::invalid_argument("clip_forward: clip shorter than clip_len+1");
    int cells = model.enc.cfg.cells();

    Tape tape;
    EncoderBinding enc = bind_encoder(tape, model.enc);
    Tape::Id edge_id = model.edge.learnable ? tape.param("edge.logits", model.edge.logits)
                                            : tape.input(model.edge.logits);

    std::vector<Tape::Id> gathered;
    double kept_sum = 0.0;
    for (int f = 0; f < frames_needed; ++f) {
        NodeGrid grid = sample_node_grid(clip.frames[f], cfg.grid_rows, cfg.grid_cols, cfg.patch_size);
        std::vector<const Image*> patches;
        patches.reserve(grid.nodes.size());
        for (const Node& n : grid.nodes) patches.push_back(&n.patch);
        Tensor2 cells_mat = stack_patch_cells(patches, model.enc.cfg);

        // Dropout selection runs off-tape on current params; the choice of
        // kept nodes is data, not a differentiable quantity.
        Tensor2 px = encode_pixels_from_cells(cells_mat, model.enc);
        std::vector<int> kept = apply_node_dropout(node_discrepancies(px, cells), dropout_threshold, cfg.min_keep);
        kept_sum += static_cast<double>(kept.size()) / grid.count();

        EncodedNodes enc_nodes = build_encode(tape, cells_mat, enc, cells);
        Tape::Id agg = build_aggregate(tape, enc_nodes.node_rows, edge_id, table, cfg.renormalize);
        gathered.push_back(tape.gather_rows(agg, kept));
    }

    std::vector<Tape::Id> per_k_ids;
    Tape::Id loss = build_cycle_loss(tape, gathered, cfg.tau, cfg.subcycle_mean, &per_k_ids);

    ClipResult out;
    out.loss = tape.val(loss).at(0, 0);
    if (!std::isfinite(out.loss)) throw TrainAbort("non-finite clip loss");
    for (Tape::Id id : per_k_ids) out.per_k.push_back(tape.val(id).at(0, 0));
    out.kept_fraction = kept_sum / frames_needed;
    out.grads = tape.backward(loss).partials;
    return out;
}

inline int thread_limit() {
    if (const char* s = std::getenv("SPACETIME_THREADS")) {
        int n = std::atoi(s);
        if (n >= 1) return n;
    }
    return 1;
}

// First-order adaptive optimizer with bias correction.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;
    std::map<std::string, Tensor2> m, v;
};

inline void adam_update(Model& model, const std::map<std::string, Tensor2>& grads, double lr, AdamState& st) {
    st.t += 1;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (auto& [name, tensor] : model.learnable()) {
        auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("adam_update: missing gradient for " + name);
        const Tensor2& g = git->second;
        Tensor2& m = st.m.try_emplace(name, Tensor2(g.rows, g.cols)).first->second;
        Tensor2& v = st.v.try_emplace(name, Tensor2(g.rows, g.cols)).first->second;
        for (size_t i = 0; i < g.data.size(); ++i) {
            m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * g.data[i];
            v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * g.data[i] * g.data[i];
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            tensor->data[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

struct TrainStepResult {
    double loss = 0.0;
    std::vector<double> per_k;
    double kept_fraction = 1.0;
};

// One optimizer step on the batch-mean cycle loss. Per-clip passes may run
// on worker threads; gradients merge in clip order so results are identical
// at any thread count.
inline TrainStepResult train_step(const std::vector<const Clip*>& batch, Model& model, const RunConfig& cfg,
                                  double dropout_threshold, double lr, AdamState& opt,
                                  const NeighborTable& table) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    int n = static_cast<int>(batch.size());
    std::vector<ClipResult> results(n);
    std::vector<std::string> errors(n);

    int workers = std::min(thread_limit(), n);
    auto run_clip = [&](int i) {
        try {
            results[i] = clip_forward(*batch[i], model, cfg, dropout_threshold, table);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    };
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) run_clip(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int i = w; i < n; i += workers) run_clip(i);
            });
        for (auto& th : pool) th.join();
    }
    for (int i = 0; i < n; ++i)
        if (!errors[i].empty()) throw TrainAbort("clip " + std::to_string(i) + ": " + errors[i]);

    TrainStepResult out;
    out.per_k.assign(results[0].per_k.size(), 0.0);
    out.kept_fraction = 0.0;
    std::map<std::string, Tensor2> grads;
    for (int i = 0; i < n; ++i) {
        out.loss += results[i].loss / n;
        out.kept_fraction += results[i].kept_fraction / n;
        for (size_t k = 0; k < out.per_k.size(); ++k) out.per_k[k] += results[i].per_k[k] / n;
        for (const auto& [name, g] : results[i].grads) {
            auto it = grads.try_emplace(name, Tensor2(g.rows, g.cols)).first;
            for (size_t j = 0; j < g.data.size(); ++j) it->second.data[j] += g.data[j] / n;
        }
    }
    if (!std::isfinite(out.loss)) throw TrainAbort("non-finite batch loss");
    adam_update(model, grads, lr, opt);
    return out;
}

}  // namespace spacetime
