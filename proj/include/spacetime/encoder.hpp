#pragma once

// Patch encoder: a small stack of learned per-cell linear filters with tanh
// nonlinearities, a linear projection to the embedding dimension, and l2
// normalization. The patch is split into an h x w grid of cells; each cell
// yields one projected, unit-norm pixel embedding, and the node embedding is
// the renormalized mean of those pixel embeddings. Pooling therefore shares
// every parameter with the pixel path.

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spacetime/diffmath.hpp"
#include "spacetime/video_graph.hpp"

namespace spacetime {

struct EncoderConfig {
    int patch_size = 16;
    int channels = 3;
    int feat_hw = 4;  // cells per patch side; pixel-embedding grid is feat_hw x feat_hw
    int hidden = 24;
    int embed_dim = 16;
    uint64_t seed = 1;

    int cell_px() const {
        if (feat_hw < 1 || patch_size % feat_hw != 0)
            throw std::invalid_argument("EncoderConfig: feat_hw must divide patch_size");
        return patch_size / feat_hw;
    }
    int cell_inputs() const { return cell_px() * cell_px() * channels; }
    int cells() const { return feat_hw * feat_hw; }
};

struct EncoderParams {
    EncoderConfig cfg;
    Tensor2 w1, b1;   // cell_inputs x hidden, 1 x hidden
    Tensor2 w2, b2;   // hidden x hidden, 1 x hidden
    Tensor2 proj;     // hidden x embed_dim
};

inline EncoderParams init_encoder(const EncoderConfig& cfg) {
    if (cfg.embed_dim < 2) throw std::invalid_argument("init_encoder: embed_dim must be >= 2");
    std::mt19937_64 rng(cfg.seed);
    auto fan = [&rng](int rows, int cols, int in) {
        double s = 1.0 / std::sqrt(static_cast<double>(in));
        return random_uniform(rows, cols, -s, s, rng);
    };
    EncoderParams p;
    p.cfg = cfg;
    p.w1 = fan(cfg.cell_inputs(), cfg.hidden, cfg.cell_inputs());
    p.b1 = fan(1, cfg.hidden, cfg.cell_inputs());
    p.w2 = fan(cfg.hidden, cfg.hidden, cfg.hidden);
    p.b2 = fan(1, cfg.hidden, cfg.hidden);
    p.proj = fan(cfg.hidden, cfg.embed_dim, cfg.hidden);
    return p;
}

// One row per cell (row-major over the cell grid), flattened cell pixels.
inline Tensor2 patch_cells(const Image& patch, const EncoderConfig& cfg) {
    if (patch.h != cfg.patch_size || patch.w != cfg.patch_size || patch.c != cfg.channels)
        throw std::invalid_argument("patch_cells: wrong patch shape");
    const int cell = cfg.cell_px();
    Tensor2 x(cfg.cells(), cfg.cell_inputs());
    for (int cy = 0; cy < cfg.feat_hw; ++cy)
        for (int cx = 0; cx < cfg.feat_hw; ++cx) {
            int row = cy * cfg.feat_hw + cx;
            int k = 0;
            for (int y = 0; y < cell; ++y)
                for (int x2 = 0; x2 < cell; ++x2)
                    for (int ch = 0; ch < cfg.channels; ++ch)
                        x.at(row, k++) = patch.at(cy * cell + y, cx * cell + x2, ch);
        }
    return x;
}

// Stacks the cell rows of many patches into one matrix (patches * cells rows).
inline Tensor2 stack_patch_cells(const std::vector<const Image*>& patches, const EncoderConfig& cfg) {
    Tensor2 x(static_cast<int>(patches.size()) * cfg.cells(), cfg.cell_inputs());
    for (size_t p = 0; p < patches.size(); ++p) {
        Tensor2 one = patch_cells(*patches[p], cfg);
        for (int r = 0; r < one.rows; ++r)
            for (int c = 0; c < one.cols; ++c) x.at(static_cast<int>(p) * cfg.cells() + r, c) = one.at(r, c);
    }
    return x;
}

namespace detail {
inline Tensor2 add_bias(Tensor2 x, const Tensor2& b) {
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) x.at(i, j) += b.at(0, j);
    return x;
}
inline Tensor2 tanh_map(Tensor2 x) {
    for (auto& v : x.data) v = std::tanh(v);
    return x;
}
}  // namespace detail

// Fixed input whitening: [0,1] pixel values map to [-1,1]. Without it the
// shared brightness level dominates every cell and all embeddings start out
// nearly parallel, which flattens the early training signal.
inline Tensor2 center_cells(Tensor2 cells) {
    for (auto& v : cells.data) v = 2.0 * (v - 0.5);
    return cells;
}

// Pixel embeddings for a stack of cell rows: one unit-norm row per cell.
inline Tensor2 encode_pixels_from_cells(const Tensor2& cells, const EncoderParams& p) {
    Tensor2 h1 = detail::tanh_map(detail::add_bias(matmul(center_cells(cells), p.w1), p.b1));
    Tensor2 h2 = detail::tanh_map(detail::add_bias(matmul(h1, p.w2), p.b2));
    return l2_normalize_rows(matmul(h2, p.proj));
}

inline Tensor2 encode_pixels(const Image& patch, const EncoderParams& p) {
    return encode_pixels_from_cells(patch_cells(patch, p.cfg), p);
}

// Node embedding: renormalized mean of the patch's pixel embeddings.
inline Tensor2 encode(const Image& patch, const EncoderParams& p) {
    Tensor2 px = encode_pixels(patch, p);
    Tensor2 mean(1, px.cols);
    for (int i = 0; i < px.rows; ++i)
        for (int j = 0; j < px.cols; ++j) mean.at(0, j) += px.at(i, j) / px.rows;
    return l2_normalize_rows(mean);
}

// Ids of the encoder parameter leaves on a tape.
struct EncoderBinding {
    Tape::Id w1, b1, w2, b2, proj;
};

inline EncoderBinding bind_encoder(Tape& tape, const EncoderParams& p, const std::string& prefix = "enc.") {
    EncoderBinding b;
    b.w1 = tape.param(prefix + "w1", p.w1);
    b.b1 = tape.param(prefix + "b1", p.b1);
    b.w2 = tape.param(prefix + "w2", p.w2);
    b.b2 = tape.param(prefix + "b2", p.b2);
    b.proj = tape.param(prefix + "proj", p.proj);
    return b;
}

struct EncodedNodes {
    Tape::Id pixel_rows;  // (patches * cells) x d, unit rows
    Tape::Id node_rows;   // patches x d, unit rows
};

// Tape forward shared by training and gradient checks: same math as
// encode_pixels/encode, batched over patches. Whitening happens on the leaf
// input, so both paths see identical numbers.
inline EncodedNodes build_encode(Tape& tape, const Tensor2& stacked_cells, const EncoderBinding& b, int cells) {
    Tape::Id x = tape.input(center_cells(stacked_cells));
    Tape::Id h1 = tape.tanh(tape.add_row_bias(tape.matmul(x, b.w1), b.b1));
    Tape::Id h2 = tape.tanh(tape.add_row_bias(tape.matmul(h1, b.w2), b.b2));
    Tape::Id px = tape.l2_normalize_rows(tape.matmul(h2, b.proj));
    Tape::Id pooled = tape.group_mean_rows(px, cells);
    Tape::Id node = tape.l2_normalize_rows(pooled);
    return {px, node};
}

}  // namespace spacetime
