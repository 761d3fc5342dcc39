#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "spacetime/synthetic.hpp"
#include "spacetime/walk.hpp"

using namespace spacetime;

namespace {

RunConfig gen_cfg() {
    RunConfig cfg;
    cfg.grid_rows = cfg.grid_cols = 7;
    cfg.canvas = 56;
    cfg.patch_size = 8;
    cfg.clip_len = 4;
    cfg.sprites = 2;
    cfg.sprite_cells = 2;
    cfg.max_speed = 1;
    cfg.validate();
    return cfg;
}

std::string temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("spacetime_synth_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("generation is bitwise deterministic per seed") {
    RunConfig cfg = gen_cfg();
    GeneratedClip a = gen_translating_sprites(cfg, 3);
    GeneratedClip b = gen_translating_sprites(cfg, 3);
    GeneratedClip c = gen_translating_sprites(cfg, 4);
    REQUIRE(a.clip.frame_count() == b.clip.frame_count());
    for (int f = 0; f < a.clip.frame_count(); ++f) CHECK(a.clip.frames[f].px == b.clip.frames[f].px);
    CHECK(a.corr.next == b.corr.next);
    CHECK(a.labels0.rows.data == b.labels0.rows.data);
    bool same = true;
    for (int f = 0; f < a.clip.frame_count() && same; ++f) same = a.clip.frames[f].px == c.clip.frames[f].px;
    CHECK_FALSE(same);
}

TEST_CASE("clips expose one more frame than the training step count") {
    RunConfig cfg = gen_cfg();
    GeneratedClip g = gen_translating_sprites(cfg, 1);
    CHECK(g.clip.frame_count() == cfg.clip_len + 1);
    CHECK(g.corr.next.size() == static_cast<size_t>(cfg.clip_len));
    CHECK(g.keypoints.size() == static_cast<size_t>(cfg.clip_len + 1));
    for (const Image& f : g.clip.frames) {
        CHECK(f.h == cfg.canvas);
        CHECK(f.w == cfg.canvas);
        for (double v : f.px) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("zero speed produces the identity correspondence on sprite nodes") {
    RunConfig cfg = gen_cfg();
    cfg.max_speed = 0;
    GeneratedClip g = gen_translating_sprites(cfg, 11);
    int sprite_nodes = 0;
    for (const auto& frame_map : g.corr.next)
        for (size_t i = 0; i < frame_map.size(); ++i)
            if (frame_map[i] != CorrespondenceMap::kNone) {
                CHECK(frame_map[i] == static_cast<int>(i));
                ++sprite_nodes;
            }
    CHECK(sprite_nodes == cfg.clip_len * cfg.sprites * cfg.sprite_cells * cfg.sprite_cells);
}

TEST_CASE("hand-built scene: one-cell sprite moving one column right") {
    SpriteScene s;
    s.canvas_h = s.canvas_w = 24;
    s.grid_rows = s.grid_cols = 3;
    s.frame_count = 3;
    s.background = Image(24, 24, 3, 0.5);
    Sprite spr;
    spr.cells = 1;
    spr.texture = Image(8, 8, 3, 0.9);
    spr.cell_pos = {{1, 0}, {1, 1}, {1, 2}};
    s.sprites.push_back(spr);
    s.sprite_offset = {{0.0, 0.0, 0.0}};
    s.ramp = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

    CorrespondenceMap corr = scene_correspondence(s);
    REQUIRE(corr.next.size() == 2);
    CHECK(corr.next[0][s.node_index(1, 0)] == s.node_index(1, 1));
    CHECK(corr.next[1][s.node_index(1, 1)] == s.node_index(1, 2));
    CHECK(corr.next[0][s.node_index(0, 0)] == CorrespondenceMap::kNone);
    CHECK(corr.next[0][s.node_index(1, 1)] == CorrespondenceMap::kNone);

    CHECK(scene_labels(s, 0)[s.node_index(1, 0)] == 1);
    CHECK(scene_labels(s, 1)[s.node_index(1, 1)] == 1);
    CHECK(scene_labels(s, 0)[s.node_index(0, 0)] == 0);

    Clip clip = render_scene(s);
    CHECK(clip.frames[0].at(12, 4, 0) == 0.9);
    CHECK(clip.frames[0].at(12, 12, 0) == 0.5);
    CHECK(clip.frames[1].at(12, 12, 0) == 0.9);
}

TEST_CASE("trajectories leaving the canvas are rejected") {
    SpriteScene s;
    s.canvas_h = s.canvas_w = 24;
    s.grid_rows = s.grid_cols = 3;
    s.frame_count = 2;
    s.background = Image(24, 24, 3, 0.5);
    Sprite spr;
    spr.cells = 1;
    spr.texture = Image(8, 8, 3, 0.9);
    spr.cell_pos = {{2, 2}, {2, 3}};
    s.sprites.push_back(spr);
    s.sprite_offset = {{0.0, 0.0}};
    s.ramp = {{0, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_WITH(render_scene(s), Catch::Matchers::ContainsSubstring("exits canvas"));
}

TEST_CASE("sprites never overlap in any frame") {
    RunConfig cfg = gen_cfg();
    cfg.sprites = 3;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        GeneratedClip g = gen_translating_sprites(cfg, seed);
        for (int f = 0; f < g.scene.frame_count; ++f) {
            std::set<int> used;
            for (const Sprite& spr : g.scene.sprites)
                for (int r = 0; r < spr.cells; ++r)
                    for (int c = 0; c < spr.cells; ++c) {
                        int idx = g.scene.node_index(spr.cell_pos[f].row + r, spr.cell_pos[f].col + c);
                        CHECK(used.insert(idx).second);
                    }
        }
    }
}

TEST_CASE("impossible placements fail with a clear error") {
    RunConfig cfg = gen_cfg();
    cfg.grid_rows = cfg.grid_cols = 3;
    cfg.canvas = 24;
    cfg.sprites = 2;
    cfg.sprite_cells = 3;  // one sprite fills the grid; the second cannot fit
    cfg.max_speed = 0;
    CHECK_THROWS_WITH(gen_translating_sprites(cfg, 1), Catch::Matchers::ContainsSubstring("cannot place"));
}

TEST_CASE("canvas must be divisible by the grid") {
    RunConfig cfg = gen_cfg();
    cfg.canvas = 50;
    cfg.patch_size = 5;
    CHECK_THROWS_AS(gen_translating_sprites(cfg, 1), ConfigError);
}

TEST_CASE("confusable clips share one texture across sprites") {
    RunConfig cfg = gen_cfg();
    cfg.confusable = true;
    GeneratedClip g = gen_translating_sprites(cfg, 13);
    REQUIRE(g.scene.sprites.size() == 2);
    CHECK(g.scene.sprites[0].texture.px == g.scene.sprites[1].texture.px);
    RunConfig plain = gen_cfg();
    GeneratedClip h = gen_translating_sprites(plain, 13);
    CHECK(h.scene.sprites[0].texture.px != h.scene.sprites[1].texture.px);
}

TEST_CASE("background flicker wobbles whole tiles between frames") {
    RunConfig cfg = gen_cfg();
    cfg.bg_flicker = 0.2;
    cfg.frame_noise = 0.0;
    cfg.global_jitter = 0.0;
    cfg.sprite_jitter = 0.0;
    GeneratedClip g = gen_translating_sprites(cfg, 31);
    REQUIRE_FALSE(g.scene.bg_flicker.empty());
    int sy = g.scene.stride_y(), sx = g.scene.stride_x();
    bool moved = false;
    for (int f = 0; f < g.clip.frame_count(); ++f) {
        std::vector<int> labels = scene_labels(g.scene, f);
        for (int node = 0; node < 49; ++node) {
            if (labels[node] != 0) continue;
            int y0 = node / 7 * sy, x0 = node % 7 * sx;
            // tiles stay flat: the shift moves every pixel of the node together
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < sy; ++y)
                    for (int x = 0; x < sx; ++x)
                        CHECK(g.clip.frames[f].at(y0 + y, x0 + x, ch) == g.clip.frames[f].at(y0, x0, ch));
            if (f > 0 && scene_labels(g.scene, f - 1)[node] == 0)
                moved = moved || std::abs(g.clip.frames[f].at(y0, x0, 0) - g.clip.frames[f - 1].at(y0, x0, 0)) > 1e-6;
        }
    }
    CHECK(moved);
    CHECK(gen_translating_sprites(gen_cfg(), 31).scene.bg_flicker.empty());
}

TEST_CASE("keypoints sit at sprite centers and map into the grid") {
    RunConfig cfg = gen_cfg();
    GeneratedClip g = gen_translating_sprites(cfg, 17);
    for (int f = 0; f < g.scene.frame_count; ++f) {
        for (int sp = 0; sp < cfg.sprites; ++sp) {
            const Sprite& spr = g.scene.sprites[sp];
            double cy = (spr.cell_pos[f].row + spr.cells / 2.0) * 8.0;
            CHECK(g.keypoints[f][sp].y == Catch::Approx(cy).margin(1e-12));
            int node = g.keypoint_nodes[f][sp];
            CHECK(node >= 0);
            CHECK(node < 49);
            // the node's cell is inside the sprite's footprint
            int nr = node / 7, nc = node % 7;
            CHECK(nr >= spr.cell_pos[f].row);
            CHECK(nr < spr.cell_pos[f].row + spr.cells);
            CHECK(nc >= spr.cell_pos[f].col);
            CHECK(nc < spr.cell_pos[f].col + spr.cells);
        }
    }
}

TEST_CASE("correspondence accuracy counts only truth-defined nodes") {
    RunConfig cfg = gen_cfg();
    GeneratedClip g = gen_translating_sprites(cfg, 19);
    // predicting the truth scores 1
    AccuracyCount perfect = correspondence_accuracy(g.corr.next, g.corr);
    CHECK(perfect.defined());
    CHECK(perfect.value() == 1.0);
    CHECK(perfect.counted == cfg.clip_len * cfg.sprites * cfg.sprite_cells * cfg.sprite_cells);

    // a constant prediction scores the truth-marginal hit rate
    std::vector<std::vector<int>> constant(g.corr.next.size(), std::vector<int>(49, 0));
    AccuracyCount rnd = correspondence_accuracy(constant, g.corr);
    CHECK(rnd.value() < 0.2);

    std::vector<std::vector<int>> wrong_shape(1, std::vector<int>(49, 0));
    CHECK_THROWS_AS(correspondence_accuracy(wrong_shape, g.corr), std::invalid_argument);
}

TEST_CASE("accuracy of a constant prediction approaches one over the node count") {
    RunConfig cfg = gen_cfg();
    cfg.sprite_cells = 1;
    cfg.sprites = 3;
    int matched = 0, counted = 0;
    for (uint64_t seed = 0; seed < 60; ++seed) {
        GeneratedClip g = gen_translating_sprites(cfg, 500 + seed);
        std::vector<std::vector<int>> constant(g.corr.next.size(), std::vector<int>(49, 24));
        AccuracyCount acc = correspondence_accuracy(constant, g.corr);
        matched += acc.matched;
        counted += acc.counted;
    }
    double rate = static_cast<double>(matched) / counted;
    // sprite targets are near-uniform over the grid, so a constant guess
    // lands close to 1/49
    CHECK(rate == Catch::Approx(1.0 / 49.0).margin(0.05));
}

TEST_CASE("an empty scene has no defined correspondences") {
    RunConfig cfg = gen_cfg();
    cfg.sprites = 0;
    GeneratedClip g = gen_translating_sprites(cfg, 23);
    AccuracyCount acc = correspondence_accuracy(g.corr.next, g.corr);
    CHECK_FALSE(acc.defined());
    CHECK(acc.value() == 0.0);
    for (double v : g.labels0.rows.data) CHECK((v == 0.0 || v == 1.0));
    CHECK(g.labels0.hard() == std::vector<int>(49, 0));
}

TEST_CASE("sidecar text round-trips the ground truth") {
    RunConfig cfg = gen_cfg();
    GeneratedClip g = gen_translating_sprites(cfg, 29);
    std::string dir = temp_dir("roundtrip") + "/clip_0000";
    save_generated(dir, g);

    ClipTruth t = load_truth(dir);
    CHECK(t.frames == g.clip.frame_count());
    CHECK(t.h == cfg.canvas);
    CHECK(t.grid_rows == 7);
    CHECK(t.sprite_count == cfg.sprites);
    CHECK(t.corr.next == g.corr.next);
    CHECK(LabelField::one_hot(t.labels0, cfg.sprites + 1).rows.data == g.labels0.rows.data);
    CHECK(t.keypoint_nodes == g.keypoint_nodes);
    for (size_t f = 0; f < t.keypoints.size(); ++f)
        for (int sp = 0; sp < t.sprite_count; ++sp) {
            CHECK(t.keypoints[f][sp].y == Catch::Approx(g.keypoints[f][sp].y).epsilon(1e-9));
            CHECK(t.keypoints[f][sp].x == Catch::Approx(g.keypoints[f][sp].x).epsilon(1e-9));
        }
    for (int f = 0; f < t.frames; ++f) {
        std::vector<int> expect = scene_labels(g.scene, f);
        CHECK(t.labels_at(f) == expect);
    }

    // frames re-read from disk equal the rendered ones up to quantization
    Clip back = load_clip_dir(dir);
    REQUIRE(back.frame_count() == g.clip.frame_count());
    for (int f = 0; f < back.frame_count(); ++f)
        for (size_t i = 0; i < back.frames[f].px.size(); ++i)
            CHECK(std::abs(back.frames[f].px[i] - g.clip.frames[f].px[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("load_truth rejects malformed sidecars") {
    std::string dir = temp_dir("badsidecar");
    CHECK_THROWS_WITH(load_truth(dir), Catch::Matchers::ContainsSubstring("missing sidecar"));
    {
        std::ofstream out(dir + "/sidecar.txt");
        out << "format 1\nbogus 3\n";
    }
    CHECK_THROWS_WITH(load_truth(dir), Catch::Matchers::ContainsSubstring("unknown sidecar record"));
    {
        std::ofstream out(dir + "/sidecar.txt");
        out << "format 2\n";
    }
    CHECK_THROWS_WITH(load_truth(dir), Catch::Matchers::ContainsSubstring("unsupported sidecar format"));
}

TEST_CASE("dataset listing finds clip directories in name order") {
    std::string root = temp_dir("dataset");
    RunConfig cfg = gen_cfg();
    for (int i : {2, 0, 1}) {
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04d", i);
        save_generated(root + "/" + name, gen_translating_sprites(cfg, 100 + i));
    }
    std::filesystem::create_directories(root + "/not_a_clip");
    auto dirs = list_clip_dirs(root);
    REQUIRE(dirs.size() == 3);
    CHECK(dirs[0].ends_with("clip_0000"));
    CHECK(dirs[2].ends_with("clip_0002"));
    CHECK_THROWS_WITH(list_clip_dirs(root + "/not_a_clip"), Catch::Matchers::ContainsSubstring("no clips found"));
}

TEST_CASE("textured sprite nodes are busier than background under a random encoder") {
    RunConfig cfg = gen_cfg();
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        cfg.seed = seed;
        Model m = init_model(cfg);
        GeneratedClip g = gen_translating_sprites(cfg, 700 + seed);
        NodeGrid grid = sample_node_grid(g.clip.frames[0], 7, 7, cfg.patch_size);
        Tensor2 pixel_rows;
        encode_grid_nodes(grid, m.enc, &pixel_rows);
        std::vector<double> deltas = node_discrepancies(pixel_rows, m.enc.cfg.cells());

        std::vector<int> labels = scene_labels(g.scene, 0);
        double bg = 0.0, fg = 0.0;
        int nbg = 0, nfg = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == 0) {
                bg += deltas[i];
                ++nbg;
            } else {
                fg += deltas[i];
                ++nfg;
            }
        }
        REQUIRE(nbg > 0);
        REQUIRE(nfg > 0);
        INFO("seed " << seed << " bg " << bg / nbg << " fg " << fg / nfg);
        CHECK(bg / nbg < fg / nfg);
    }
}
