#pragma once

// Neighbor relation graph: one shared, learnable logit per window slot, and
// attention aggregation of neighboring embeddings into the central node.
//
// Edge logits are stored in log space as ln(occurrence count), so an
// unmasked softmax reproduces the normalized topology counts exactly. For
// boundary nodes the softmax is renormalized over the present slots only,
// which keeps every node's aggregation weights a proper distribution.

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "spacetime/diffmath.hpp"
#include "spacetime/video_graph.hpp"

namespace spacetime {

struct EdgeLogits {
    Tensor2 logits;  // 1 x n, one value per window slot, shared by all nodes
    bool learnable = true;
    int win_rows = 0, win_cols = 0;

    int slot_count() const { return win_rows * win_cols; }
};

// Per-slot occurrence counts over the three window structures: horizontal
// (center row), vertical (center column) and square (all slots). A structure
// participates only when it has more than one slot. A window where no
// structure qualifies (1x1) falls back to a uniform count of 1.
inline std::vector<double> topology_slot_counts(int win_rows, int win_cols) {
    if (win_rows < 1 || win_cols < 1 || win_rows % 2 == 0 || win_cols % 2 == 0)
        throw std::invalid_argument("topology_slot_counts: window dimensions must be odd");
    const int n = win_rows * win_cols;
    const int cr = win_rows / 2;
    const int cc = win_cols / 2;
    const bool horizontal = win_cols > 1;
    const bool vertical = win_rows > 1;
    const bool square = n > 1;
    std::vector<double> counts(n, 0.0);
    for (int r = 0; r < win_rows; ++r) {
        for (int c = 0; c < win_cols; ++c) {
            double k = 0.0;
            if (horizontal && r == cr) k += 1.0;
            if (vertical && c == cc) k += 1.0;
            if (square) k += 1.0;
            counts[r * win_cols + c] = k;
        }
    }
    if (!square)
        for (auto& k : counts) k = 1.0;
    return counts;
}

inline EdgeLogits init_topology_logits(int win_rows, int win_cols, bool learnable = true) {
    EdgeLogits e;
    e.win_rows = win_rows;
    e.win_cols = win_cols;
    e.learnable = learnable;
    auto counts = topology_slot_counts(win_rows, win_cols);
    e.logits = Tensor2(1, static_cast<int>(counts.size()));
    for (size_t j = 0; j < counts.size(); ++j) e.logits.at(0, static_cast<int>(j)) = std::log(counts[j]);
    return e;
}

inline EdgeLogits init_random_logits(int win_rows, int win_cols, uint64_t seed) {
    EdgeLogits e;
    e.win_rows = win_rows;
    e.win_cols = win_cols;
    e.learnable = true;
    std::mt19937_64 rng(seed);
    e.logits = random_uniform(1, win_rows * win_cols, -0.5, 0.5, rng);
    return e;
}

inline BoolMask presence_mask(const NeighborTable& table) {
    BoolMask m(table.node_count(), table.slot_count(), false);
    for (int i = 0; i < table.node_count(); ++i)
        for (int j = 0; j < table.slot_count(); ++j)
            if (table.slots[i][j] != NeighborTable::kAbsent) m.set(i, j, true);
    return m;
}

// N x n matrix of per-node aggregation weights: the shared logits pushed
// through a softmax masked to each node's present slots.
inline Tensor2 slot_weight_matrix(const EdgeLogits& edge, const NeighborTable& table) {
    if (edge.win_rows != table.win_rows || edge.win_cols != table.win_cols)
        throw std::invalid_argument("slot_weight_matrix: window shape mismatch");
    const int n_nodes = table.node_count();
    Tensor2 tiled(n_nodes, edge.slot_count());
    for (int i = 0; i < n_nodes; ++i)
        for (int j = 0; j < edge.slot_count(); ++j) tiled.at(i, j) = edge.logits.at(0, j);
    BoolMask mask = presence_mask(table);
    return row_softmax(tiled, 1.0, &mask);
}

// f_i = sum_j w_ij * phi(neighbor_j(i)) over present slots, optionally
// re-normalized to unit rows afterwards.
inline Tensor2 aggregate_neighbors(const Tensor2& embeddings, const EdgeLogits& edge, const NeighborTable& table,
                                   bool renormalize = true) {
    if (embeddings.rows != table.node_count())
        throw std::invalid_argument("aggregate_neighbors: embedding count must match grid nodes");
    for (int i = 0; i < table.node_count(); ++i)
        if (table.present_slots(i) == 0) throw std::invalid_argument("aggregate_neighbors: node with no present slots");
    Tensor2 weights = slot_weight_matrix(edge, table);
    Tensor2 out(embeddings.rows, embeddings.cols);
    for (int i = 0; i < table.node_count(); ++i) {
        for (int j = 0; j < table.slot_count(); ++j) {
            int src = table.slots[i][j];
            if (src == NeighborTable::kAbsent) continue;
            double w = weights.at(i, j);
            for (int d = 0; d < embeddings.cols; ++d) out.at(i, d) += w * embeddings.at(src, d);
        }
    }
    return renormalize ? l2_normalize_rows(out) : out;
}

// Tape version of aggregate_neighbors; gradients reach both the embeddings
// and (when learnable) the shared edge logits.
inline Tape::Id build_aggregate(Tape& tape, Tape::Id embeddings, Tape::Id edge_logits, const NeighborTable& table,
                                bool renormalize) {
    const int n_nodes = table.node_count();
    Tape::Id tiled = tape.tile_rows(edge_logits, n_nodes);
    Tape::Id weights = tape.row_softmax_masked(tiled, 1.0, presence_mask(table));
    Tape::Id mixing = tape.slot_scatter(weights, table.slots, n_nodes);
    Tape::Id mixed = tape.matmul(mixing, embeddings);
    return renormalize ? tape.l2_normalize_rows(mixed) : mixed;
}

}  // namespace spacetime
