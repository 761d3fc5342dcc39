#pragma once

// Clip data model, grid-node sampling and sliding-window neighbor tables.
// Nodes are patches sampled on a regular grid; the neighbor table records,
// for every node, which node sits at each window offset (row-major over the
// window, center slot = the node itself). Offsets that fall outside the grid
// are marked absent rather than clamped, so border content is never
// duplicated into the aggregation.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "spacetime/tensor.hpp"

namespace spacetime {

struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> px;  // row-major, channel-minor, values in [0,1]

    Image() = default;
    Image(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

struct Clip {
    std::vector<Image> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }

    void validate() const {
        if (frames.empty()) throw std::invalid_argument("Clip: no frames");
        for (const auto& f : frames)
            if (f.h != frames[0].h || f.w != frames[0].w || f.c != frames[0].c)
                throw std::invalid_argument("Clip: frames must share dimensions");
    }
};

struct GridCoord {
    int row = 0;
    int col = 0;
};

// Node centers for a grid over an H x W frame. Placement rule:
// center_k = round((k + 0.5) * dim / grid_dim), with the patch start clamped
// so every patch lies inside the frame.
struct GridGeometry {
    int grid_rows = 0, grid_cols = 0;
    int frame_h = 0, frame_w = 0;
    std::vector<int> center_y;  // per grid row
    std::vector<int> center_x;  // per grid col

    int node_count() const { return grid_rows * grid_cols; }
    int node_index(int r, int c) const { return r * grid_cols + c; }
    GridCoord node_coord(int idx) const { return {idx / grid_cols, idx % grid_cols}; }
};

inline GridGeometry grid_geometry(int frame_h, int frame_w, int grid_rows, int grid_cols) {
    if (grid_rows < 1 || grid_cols < 1) throw std::invalid_argument("grid_geometry: grid must be at least 1x1");
    GridGeometry g;
    g.grid_rows = grid_rows;
    g.grid_cols = grid_cols;
    g.frame_h = frame_h;
    g.frame_w = frame_w;
    g.center_y.resize(grid_rows);
    g.center_x.resize(grid_cols);
    for (int r = 0; r < grid_rows; ++r) g.center_y[r] = static_cast<int>(std::lround((r + 0.5) * frame_h / grid_rows));
    for (int c = 0; c < grid_cols; ++c) g.center_x[c] = static_cast<int>(std::lround((c + 0.5) * frame_w / grid_cols));
    return g;
}

struct Node {
    GridCoord coord;
    int center_y = 0, center_x = 0;
    Image patch;  // patch_size x patch_size x C, copied pixels
};

struct NodeGrid {
    int grid_rows = 0, grid_cols = 0;
    int patch_size = 0;
    std::vector<Node> nodes;  // row-major over the grid

    int count() const { return static_cast<int>(nodes.size()); }
};

inline NodeGrid sample_node_grid(const Image& frame, int grid_rows, int grid_cols, int patch_size) {
    if (patch_size > frame.h || patch_size > frame.w)
        throw std::invalid_argument("sample_node_grid: patch larger than frame");
    if (patch_size < 1) throw std::invalid_argument("sample_node_grid: patch_size must be positive");
    GridGeometry g = grid_geometry(frame.h, frame.w, grid_rows, grid_cols);

    NodeGrid out;
    out.grid_rows = grid_rows;
    out.grid_cols = grid_cols;
    out.patch_size = patch_size;
    out.nodes.reserve(static_cast<size_t>(grid_rows) * grid_cols);
    for (int r = 0; r < grid_rows; ++r) {
        for (int c = 0; c < grid_cols; ++c) {
            Node node;
            node.coord = {r, c};
            node.center_y = g.center_y[r];
            node.center_x = g.center_x[c];
            int y0 = std::clamp(node.center_y - patch_size / 2, 0, frame.h - patch_size);
            int x0 = std::clamp(node.center_x - patch_size / 2, 0, frame.w - patch_size);
            node.patch = Image(patch_size, patch_size, frame.c);
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int ch = 0; ch < frame.c; ++ch) node.patch.at(y, x, ch) = frame.at(y0 + y, x0 + x, ch);
            out.nodes.push_back(std::move(node));
        }
    }
    return out;
}

struct NeighborTable {
    static constexpr int kAbsent = -1;

    int grid_rows = 0, grid_cols = 0;
    int win_rows = 0, win_cols = 0;
    std::vector<std::vector<int>> slots;  // [node][slot] -> node index or kAbsent

    int slot_count() const { return win_rows * win_cols; }
    int node_count() const { return grid_rows * grid_cols; }

    int present_slots(int node) const {
        int n = 0;
        for (int s : slots[node])
            if (s != kAbsent) ++n;
        return n;
    }
};

inline NeighborTable neighborhood_indices(int grid_rows, int grid_cols, int win_rows, int win_cols) {
    if (win_rows < 1 || win_cols < 1 || win_rows % 2 == 0 || win_cols % 2 == 0)
        throw std::invalid_argument("neighborhood_indices: window dimensions must be odd and >= 1");
    NeighborTable t;
    t.grid_rows = grid_rows;
    t.grid_cols = grid_cols;
    t.win_rows = win_rows;
    t.win_cols = win_cols;
    t.slots.assign(static_cast<size_t>(grid_rows) * grid_cols, {});
    const int hr = win_rows / 2;
    const int hc = win_cols / 2;
    for (int r = 0; r < grid_rows; ++r) {
        for (int c = 0; c < grid_cols; ++c) {
            auto& slots = t.slots[static_cast<size_t>(r) * grid_cols + c];
            slots.reserve(static_cast<size_t>(win_rows) * win_cols);
            for (int dr = -hr; dr <= hr; ++dr) {
                for (int dc = -hc; dc <= hc; ++dc) {
                    int nr = r + dr;
                    int nc = c + dc;
                    bool inside = nr >= 0 && nr < grid_rows && nc >= 0 && nc < grid_cols;
                    slots.push_back(inside ? nr * grid_cols + nc : NeighborTable::kAbsent);
                }
            }
        }
    }
    return t;
}

}  // namespace spacetime
