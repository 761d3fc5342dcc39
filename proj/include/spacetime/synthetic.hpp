#pragma once

// Synthetic clip generator with exact node-level ground truth: noise-textured
// sprites translating by whole grid cells over a near-constant background.
// Appearance nuisance is channel-uniform (per-sprite brightness jitter plus a
// per-frame illumination ramp across the canvas), so correspondence is
// carried by channel-contrast texture that a model has to learn to isolate.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spacetime/config.hpp"
#include "spacetime/image_io.hpp"
#include "spacetime/propagation.hpp"
#include "spacetime/tensor.hpp"
#include "spacetime/video_graph.hpp"

namespace spacetime {

struct Sprite {
    Image texture;                    // (cells*stride_y) x (cells*stride_x) x C
    std::vector<GridCoord> cell_pos;  // per frame, top-left cell
    int cells = 1;
};

struct SpriteScene {
    int canvas_h = 0, canvas_w = 0, channels = 3;
    int grid_rows = 0, grid_cols = 0;
    int frame_count = 0;
    Image background;
    std::vector<Sprite> sprites;                     // painted in order
    std::vector<std::vector<double>> sprite_offset;  // [sprite][frame], channel-uniform
    std::vector<std::vector<double>> ramp;           // [frame] = {c, a, b}
    std::vector<std::vector<double>> bg_flicker;     // [frame][node] tint shift; empty = steady
    double frame_noise = 0.0;
    uint64_t noise_seed = 0;

    int stride_y() const { return canvas_h / grid_rows; }
    int stride_x() const { return canvas_w / grid_cols; }
    int node_index(int row, int col) const { return row * grid_cols + col; }
};

// For each (frame, node): the node in the next frame holding the same scene
// content. Background and occluded nodes are kNone.
struct CorrespondenceMap {
    static constexpr int kNone = -1;
    int node_count = 0;
    std::vector<std::vector<int>> next;  // [frame 0..F-2][node]
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Owner sprite per grid cell at one frame; -1 where background shows.
inline std::vector<int> cell_owners(const SpriteScene& s, int frame) {
    std::vector<int> owner(static_cast<size_t>(s.grid_rows) * s.grid_cols, -1);
    for (size_t sp = 0; sp < s.sprites.size(); ++sp) {
        GridCoord p = s.sprites[sp].cell_pos[frame];
        for (int r = 0; r < s.sprites[sp].cells; ++r)
            for (int c = 0; c < s.sprites[sp].cells; ++c)
                owner[s.node_index(p.row + r, p.col + c)] = static_cast<int>(sp);
    }
    return owner;
}

}  // namespace detail

inline void validate_scene(const SpriteScene& s) {
    if (s.grid_rows < 1 || s.grid_cols < 1) throw std::invalid_argument("scene: empty grid");
    if (s.canvas_h % s.grid_rows != 0 || s.canvas_w % s.grid_cols != 0)
        throw std::invalid_argument("scene: canvas not divisible by grid");
    for (const Sprite& sp : s.sprites) {
        if (static_cast<int>(sp.cell_pos.size()) != s.frame_count)
            throw std::invalid_argument("scene: trajectory length mismatch");
        for (const GridCoord& p : sp.cell_pos)
            if (p.row < 0 || p.col < 0 || p.row + sp.cells > s.grid_rows || p.col + sp.cells > s.grid_cols)
                throw std::invalid_argument("scene: sprite trajectory exits canvas");
    }
    if (!s.bg_flicker.empty()) {
        bool shaped = static_cast<int>(s.bg_flicker.size()) == s.frame_count;
        for (const auto& row : s.bg_flicker)
            shaped = shaped && static_cast<int>(row.size()) == s.grid_rows * s.grid_cols;
        if (!shaped) throw std::invalid_argument("scene: flicker table shape mismatch");
    }
}

inline Clip render_scene(const SpriteScene& s) {
    validate_scene(s);
    std::mt19937_64 noise_rng(s.noise_seed);
    Clip clip;
    for (int f = 0; f < s.frame_count; ++f) {
        Image img = s.background;
        if (!s.bg_flicker.empty()) {
            // Tile-uniform wobble: background keeps zero within-node contrast,
            // it just stops being steady across frames. Sprites stamp over it.
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    double shift = s.bg_flicker[f][s.node_index(y / s.stride_y(), x / s.stride_x())];
                    for (int ch = 0; ch < s.channels; ++ch) img.at(y, x, ch) += shift;
                }
        }
        for (size_t sp = 0; sp < s.sprites.size(); ++sp) {
            const Sprite& spr = s.sprites[sp];
            int y0 = spr.cell_pos[f].row * s.stride_y();
            int x0 = spr.cell_pos[f].col * s.stride_x();
            double off = s.sprite_offset[sp][f];
            for (int y = 0; y < spr.texture.h; ++y)
                for (int x = 0; x < spr.texture.w; ++x)
                    for (int ch = 0; ch < s.channels; ++ch)
                        img.at(y0 + y, x0 + x, ch) = spr.texture.at(y, x, ch) + off;
        }
        double rc = s.ramp[f][0], ra = s.ramp[f][1], rb = s.ramp[f][2];
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double ramp = rc + ra * (2.0 * x / (img.w - 1) - 1.0) + rb * (2.0 * y / (img.h - 1) - 1.0);
                for (int ch = 0; ch < s.channels; ++ch) {
                    double v = img.at(y, x, ch) + ramp + detail::uniform(noise_rng, -s.frame_noise, s.frame_noise);
                    img.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
                }
            }
        clip.frames.push_back(std::move(img));
    }
    return clip;
}

inline CorrespondenceMap scene_correspondence(const SpriteScene& s) {
    CorrespondenceMap map;
    map.node_count = s.grid_rows * s.grid_cols;
    for (int f = 0; f + 1 < s.frame_count; ++f) {
        std::vector<int> owner = detail::cell_owners(s, f);
        std::vector<int> row(map.node_count, CorrespondenceMap::kNone);
        for (int i = 0; i < map.node_count; ++i) {
            if (owner[i] < 0) continue;
            const Sprite& spr = s.sprites[owner[i]];
            int dr = spr.cell_pos[f + 1].row - spr.cell_pos[f].row;
            int dc = spr.cell_pos[f + 1].col - spr.cell_pos[f].col;
            row[i] = s.node_index(i / s.grid_cols + dr, i % s.grid_cols + dc);
        }
        map.next.push_back(std::move(row));
    }
    return map;
}

// Hard per-node labels at one frame: channel 0 background, s+1 for sprite s.
inline std::vector<int> scene_labels(const SpriteScene& s, int frame) {
    std::vector<int> owner = detail::cell_owners(s, frame);
    std::vector<int> labels(owner.size());
    for (size_t i = 0; i < owner.size(); ++i) labels[i] = owner[i] + 1;
    return labels;
}

struct GeneratedClip {
    SpriteScene scene;
    Clip clip;
    CorrespondenceMap corr;
    LabelField labels0;
    std::vector<std::vector<PixelPoint>> keypoints;  // [frame][sprite], sprite centers
    std::vector<std::vector<int>> keypoint_nodes;    // [frame][sprite]
};

// Deterministic in (config, seed). Draw order is fixed: background, per-sprite
// texture, per-sprite trajectory, per-sprite offsets, per-frame ramps, the
// render-noise seed, then flicker shifts (skipped entirely at zero, so steady
// configs keep their historical streams).
inline GeneratedClip gen_translating_sprites(const RunConfig& cfg, uint64_t seed) {
    if (cfg.canvas % cfg.grid_rows != 0 || cfg.canvas % cfg.grid_cols != 0)
        throw ConfigError("canvas", "must be divisible by the grid dimensions");
    std::mt19937_64 rng(seed);

    SpriteScene s;
    s.canvas_h = s.canvas_w = cfg.canvas;
    s.grid_rows = cfg.grid_rows;
    s.grid_cols = cfg.grid_cols;
    s.frame_count = cfg.clip_len + 1;
    s.frame_noise = cfg.frame_noise;

    // One flat tint per grid cell and channel: background patches stay
    // uniform inside (low pixel discrepancy) yet differ from one another.
    // The tints follow a smooth per-scene field, so neighboring cells look
    // alike (features aggregated across a moving boundary stay stable, as in
    // natural footage) while distant cells remain distinguishable; a small
    // per-cell jitter breaks exact ties.
    s.background = Image(s.canvas_h, s.canvas_w, s.channels);
    std::vector<double> tile(static_cast<size_t>(s.grid_rows) * s.grid_cols * s.channels);
    {
        std::vector<std::array<double, 3>> coef(s.channels);
        for (auto& c : coef)
            for (double& v : c) v = detail::uniform(rng, -1.0, 1.0);
        for (int r = 0; r < s.grid_rows; ++r)
            for (int c = 0; c < s.grid_cols; ++c) {
                double rn = s.grid_rows > 1 ? 2.0 * r / (s.grid_rows - 1) - 1.0 : 0.0;
                double cn = s.grid_cols > 1 ? 2.0 * c / (s.grid_cols - 1) - 1.0 : 0.0;
                for (int ch = 0; ch < s.channels; ++ch) {
                    double field = (coef[ch][0] * rn + coef[ch][1] * cn + coef[ch][2] * rn * cn) / 3.0;
                    tile[static_cast<size_t>(s.node_index(r, c)) * s.channels + ch] =
                        cfg.bg_noise * field + detail::uniform(rng, -0.15 * cfg.bg_noise, 0.15 * cfg.bg_noise);
                }
            }
    }
    for (int y = 0; y < s.canvas_h; ++y)
        for (int x = 0; x < s.canvas_w; ++x) {
            int node = s.node_index(y / s.stride_y(), x / s.stride_x());
            for (int ch = 0; ch < s.channels; ++ch)
                s.background.at(y, x, ch) = cfg.bg_level + tile[static_cast<size_t>(node) * s.channels + ch];
        }

    int side_y = s.stride_y() * cfg.sprite_cells;
    int side_x = s.stride_x() * cfg.sprite_cells;
    for (int sp = 0; sp < cfg.sprites; ++sp) {
        Sprite spr;
        spr.cells = cfg.sprite_cells;
        if (cfg.confusable && sp > 0) {
            spr.texture = s.sprites[0].texture;
        } else {
            std::vector<double> chroma(s.channels);
            for (double& c : chroma) c = detail::uniform(rng, -cfg.chroma_spread, cfg.chroma_spread);
            spr.texture = Image(side_y, side_x, s.channels);
            for (int y = 0; y < side_y; ++y)
                for (int x = 0; x < side_x; ++x)
                    for (int ch = 0; ch < s.channels; ++ch)
                        spr.texture.at(y, x, ch) =
                            cfg.bg_level + chroma[ch] + detail::uniform(rng, -cfg.sprite_noise, cfg.sprite_noise);
        }
        s.sprites.push_back(std::move(spr));
    }

    // Per-frame-disjoint placement: occupancy is tracked per frame so no two
    // sprites ever overlap, which keeps cell ownership and the obtained
    // correspondence map unambiguous. Trajectories use a constant integer
    // velocity with reflection at the borders, so any clip length stays
    // feasible; speed is clamped to the per-axis slack so every reflected
    // step lands inside the grid. A failed round redraws all trajectories:
    // one sweeping path can make the remaining sprites unplaceable.
    bool scene_placed = false;
    for (int round = 0; round < 200 && !scene_placed; ++round) {
        std::vector<std::vector<int>> occupied(s.frame_count);
        for (auto& o : occupied) o.assign(static_cast<size_t>(s.grid_rows) * s.grid_cols, 0);
        scene_placed = true;
        for (int sp = 0; sp < cfg.sprites && scene_placed; ++sp) {
            Sprite& spr = s.sprites[sp];
            int room_r = s.grid_rows - spr.cells;
            int room_c = s.grid_cols - spr.cells;
            int speed_r = std::min(cfg.max_speed, room_r);
            int speed_c = std::min(cfg.max_speed, room_c);
            bool placed = false;
            for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
                if (room_r < 0 || room_c < 0) break;
                int vy = std::uniform_int_distribution<int>(-speed_r, speed_r)(rng);
                int vx = std::uniform_int_distribution<int>(-speed_c, speed_c)(rng);
                if (cfg.max_speed > 0 && vy == 0 && vx == 0 && (speed_r > 0 || speed_c > 0)) continue;
                int r0 = std::uniform_int_distribution<int>(0, room_r)(rng);
                int c0 = std::uniform_int_distribution<int>(0, room_c)(rng);

                std::vector<std::pair<int, int>> path;
                int r = r0, c = c0, dy = vy, dx = vx;
                for (int f = 0; f < s.frame_count; ++f) {
                    path.emplace_back(r, c);
                    r += dy;
                    if (r < 0 || r > room_r) {
                        dy = -dy;
                        r = r < 0 ? -r : 2 * room_r - r;
                    }
                    c += dx;
                    if (c < 0 || c > room_c) {
                        dx = -dx;
                        c = c < 0 ? -c : 2 * room_c - c;
                    }
                }

                bool free = true;
                for (int f = 0; f < s.frame_count && free; ++f)
                    for (int rr = 0; rr < spr.cells && free; ++rr)
                        for (int cc = 0; cc < spr.cells && free; ++cc)
                            free = !occupied[f][s.node_index(path[f].first + rr, path[f].second + cc)];
                if (!free) continue;

                spr.cell_pos.clear();
                for (int f = 0; f < s.frame_count; ++f) {
                    spr.cell_pos.push_back({path[f].first, path[f].second});
                    for (int rr = 0; rr < spr.cells; ++rr)
                        for (int cc = 0; cc < spr.cells; ++cc)
                            occupied[f][s.node_index(path[f].first + rr, path[f].second + cc)] = 1;
                }
                placed = true;
            }
            scene_placed = placed;
        }
    }
    if (!scene_placed) throw std::runtime_error("gen_translating_sprites: cannot place sprites without overlap");

    for (int sp = 0; sp < cfg.sprites; ++sp) {
        std::vector<double> offs(s.frame_count);
        for (double& o : offs) o = detail::uniform(rng, -cfg.sprite_jitter, cfg.sprite_jitter);
        s.sprite_offset.push_back(std::move(offs));
    }
    for (int f = 0; f < s.frame_count; ++f)
        s.ramp.push_back({detail::uniform(rng, -cfg.global_jitter, cfg.global_jitter),
                          detail::uniform(rng, -cfg.global_jitter, cfg.global_jitter),
                          detail::uniform(rng, -cfg.global_jitter, cfg.global_jitter)});
    s.noise_seed = rng();
    if (cfg.bg_flicker > 0.0)
        for (int f = 0; f < s.frame_count; ++f) {
            std::vector<double> shifts(static_cast<size_t>(s.grid_rows) * s.grid_cols);
            for (double& v : shifts) v = detail::uniform(rng, -cfg.bg_flicker, cfg.bg_flicker);
            s.bg_flicker.push_back(std::move(shifts));
        }

    GeneratedClip out;
    out.clip = render_scene(s);
    out.corr = scene_correspondence(s);
    out.labels0 = LabelField::one_hot(scene_labels(s, 0), cfg.sprites + 1);
    for (int f = 0; f < s.frame_count; ++f) {
        std::vector<PixelPoint> pts;
        std::vector<int> nodes;
        for (const Sprite& spr : s.sprites) {
            double cy = (spr.cell_pos[f].row + spr.cells / 2.0) * s.stride_y();
            double cx = (spr.cell_pos[f].col + spr.cells / 2.0) * s.stride_x();
            pts.push_back({cy, cx});
            int nr = std::min(spr.cell_pos[f].row + spr.cells / 2, s.grid_rows - 1);
            int nc = std::min(spr.cell_pos[f].col + spr.cells / 2, s.grid_cols - 1);
            nodes.push_back(s.node_index(nr, nc));
        }
        out.keypoints.push_back(std::move(pts));
        out.keypoint_nodes.push_back(std::move(nodes));
    }
    out.scene = std::move(s);
    return out;
}

struct AccuracyCount {
    int matched = 0, counted = 0;
    bool defined() const { return counted > 0; }
    double value() const { return counted > 0 ? static_cast<double>(matched) / counted : 0.0; }
};

// Fraction of truth-defined nodes whose predicted next-frame node matches.
inline AccuracyCount correspondence_accuracy(const std::vector<std::vector<int>>& predicted,
                                             const CorrespondenceMap& truth) {
    if (predicted.size() != truth.next.size())
        throw std::invalid_argument("correspondence_accuracy: frame count mismatch");
    AccuracyCount acc;
    for (size_t f = 0; f < truth.next.size(); ++f) {
        if (predicted[f].size() != truth.next[f].size())
            throw std::invalid_argument("correspondence_accuracy: node count mismatch");
        for (size_t i = 0; i < truth.next[f].size(); ++i) {
            if (truth.next[f][i] == CorrespondenceMap::kNone) continue;
            ++acc.counted;
            acc.matched += (predicted[f][i] == truth.next[f][i]);
        }
    }
    return acc;
}

// Ground truth reloaded from a clip directory's sidecar.
struct ClipTruth {
    int frames = 0, h = 0, w = 0, c = 0;
    int grid_rows = 0, grid_cols = 0;
    int sprite_count = 0;
    std::vector<int> sprite_cells;                   // per sprite
    std::vector<std::vector<GridCoord>> traj;        // [sprite][frame]
    CorrespondenceMap corr;
    std::vector<int> labels0;                        // channel per node
    std::vector<std::vector<PixelPoint>> keypoints;  // [frame][sprite]
    std::vector<std::vector<int>> keypoint_nodes;

    int node_count() const { return grid_rows * grid_cols; }

    // Hard labels at any frame, rebuilt from the trajectories.
    std::vector<int> labels_at(int frame) const {
        std::vector<int> out(node_count(), 0);
        for (int sp = 0; sp < sprite_count; ++sp) {
            GridCoord p = traj[sp][frame];
            for (int r = 0; r < sprite_cells[sp]; ++r)
                for (int cc = 0; cc < sprite_cells[sp]; ++cc)
                    out[(p.row + r) * grid_cols + (p.col + cc)] = sp + 1;
        }
        return out;
    }
};

// Sidecar: line-oriented text, integers decimal, reals 9 significant digits.
//   format 1
//   frames F / size H W C / grid R C / sprites S
//   sprite <id> <cells>
//   traj <sprite> <frame> <cell_row> <cell_col>
//   corr <frame> <node> <next_node or -1>
//   label <node> <channel>
//   keypoint <frame> <sprite> <y> <x> <node>
inline std::string sidecar_text(const GeneratedClip& g) {
    const SpriteScene& s = g.scene;
    std::ostringstream o;
    char buf[64];
    o << "format 1\n";
    o << "frames " << s.frame_count << "\n";
    o << "size " << s.canvas_h << " " << s.canvas_w << " " << s.channels << "\n";
    o << "grid " << s.grid_rows << " " << s.grid_cols << "\n";
    o << "sprites " << s.sprites.size() << "\n";
    for (size_t sp = 0; sp < s.sprites.size(); ++sp)
        o << "sprite " << sp << " " << s.sprites[sp].cells << "\n";
    for (size_t sp = 0; sp < s.sprites.size(); ++sp)
        for (int f = 0; f < s.frame_count; ++f)
            o << "traj " << sp << " " << f << " " << s.sprites[sp].cell_pos[f].row << " "
              << s.sprites[sp].cell_pos[f].col << "\n";
    for (size_t f = 0; f < g.corr.next.size(); ++f)
        for (size_t i = 0; i < g.corr.next[f].size(); ++i)
            o << "corr " << f << " " << i << " " << g.corr.next[f][i] << "\n";
    std::vector<int> labels = scene_labels(s, 0);
    for (size_t i = 0; i < labels.size(); ++i) o << "label " << i << " " << labels[i] << "\n";
    for (size_t f = 0; f < g.keypoints.size(); ++f)
        for (size_t sp = 0; sp < g.keypoints[f].size(); ++sp) {
            std::snprintf(buf, sizeof(buf), "keypoint %zu %zu %.9g %.9g %d\n", f, sp, g.keypoints[f][sp].y,
                          g.keypoints[f][sp].x, g.keypoint_nodes[f][sp]);
            o << buf;
        }
    return o.str();
}

inline void save_generated(const std::string& dir, const GeneratedClip& g) {
    std::filesystem::create_directories(dir);
    for (int f = 0; f < g.clip.frame_count(); ++f)
        write_ppm(dir + "/" + frame_filename(f), g.clip.frames[f]);
    std::ofstream out(dir + "/sidecar.txt", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write sidecar: " + dir);
    out << sidecar_text(g);
}

inline ClipTruth load_truth(const std::string& dir) {
    std::ifstream in(dir + "/sidecar.txt");
    if (!in) throw std::runtime_error("missing sidecar: " + dir);
    ClipTruth t;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
        if (tag == "format") {
            int v;
            ls >> v;
            if (v != 1) throw std::runtime_error("unsupported sidecar format in " + dir);
        } else if (tag == "frames") {
            ls >> t.frames;
        } else if (tag == "size") {
            ls >> t.h >> t.w >> t.c;
        } else if (tag == "grid") {
            ls >> t.grid_rows >> t.grid_cols;
            t.corr.node_count = t.node_count();
            t.corr.next.assign(std::max(0, t.frames - 1), std::vector<int>(t.node_count(), CorrespondenceMap::kNone));
            t.labels0.assign(t.node_count(), 0);
        } else if (tag == "sprites") {
            ls >> t.sprite_count;
            t.sprite_cells.assign(t.sprite_count, 1);
            t.traj.assign(t.sprite_count, std::vector<GridCoord>(t.frames));
            t.keypoints.assign(t.frames, std::vector<PixelPoint>(t.sprite_count));
            t.keypoint_nodes.assign(t.frames, std::vector<int>(t.sprite_count, 0));
        } else if (tag == "sprite") {
            int id, cells;
            ls >> id >> cells;
            t.sprite_cells.at(id) = cells;
        } else if (tag == "traj") {
            int sp, f, r, c;
            ls >> sp >> f >> r >> c;
            t.traj.at(sp).at(f) = {r, c};
        } else if (tag == "corr") {
            int f, node, nxt;
            ls >> f >> node >> nxt;
            t.corr.next.at(f).at(node) = nxt;
        } else if (tag == "label") {
            int node, ch;
            ls >> node >> ch;
            t.labels0.at(node) = ch;
        } else if (tag == "keypoint") {
            int f, sp, node;
            double y, x;
            ls >> f >> sp >> y >> x >> node;
            t.keypoints.at(f).at(sp) = {y, x};
            t.keypoint_nodes.at(f).at(sp) = node;
        } else {
            throw std::runtime_error("unknown sidecar record '" + tag + "' in " + dir);
        }
        if (ls.fail()) throw std::runtime_error("malformed sidecar record '" + tag + "' in " + dir);
    }
    return t;
}

// Clip subdirectories of a dataset directory, sorted by name.
inline std::vector<std::string> list_clip_dirs(const std::string& dataset_dir) {
    std::vector<std::string> dirs;
    if (std::filesystem::is_directory(dataset_dir))
        for (const auto& e : std::filesystem::directory_iterator(dataset_dir))
            if (e.is_directory() && std::filesystem::exists(e.path() / "sidecar.txt"))
                dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no clips found in " + dataset_dir);
    return dirs;
}

}  // namespace spacetime
