#pragma once

// Command cores behind the CLI verbs. Each takes explicit inputs and an
// output stream and returns a process exit code, so both the CLI wrapper and
// the tests drive the same paths.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spacetime/checkpoint.hpp"
#include "spacetime/config.hpp"
#include "spacetime/propagation.hpp"
#include "spacetime/synthetic.hpp"
#include "spacetime/trainer.hpp"
#include "spacetime/walk.hpp"

namespace spacetime {

namespace detail {

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace detail

// Per frame pair, each node's argmax successor under the model's affinity.
inline std::vector<std::vector<int>> predict_correspondence(const Clip& clip, const Model& model,
                                                            const RunConfig& cfg) {
    NeighborTable table = neighborhood_indices(cfg.grid_rows, cfg.grid_cols, cfg.window_rows, cfg.window_cols);
    std::vector<Tensor2> embeds;
    for (const Image& frame : clip.frames) embeds.push_back(embed_frame(frame, model, cfg, table));
    std::vector<std::vector<int>> pred;
    for (int t = 0; t + 1 < clip.frame_count(); ++t) {
        AffinityMatrix a = pairwise_affinity(embeds[t], embeds[t + 1], cfg.tau, t, t + 1);
        std::vector<int> row(a.a.rows);
        for (int i = 0; i < a.a.rows; ++i) {
            int best = 0;
            for (int j = 1; j < a.a.cols; ++j)
                if (a.a.at(i, j) > a.a.at(i, best)) best = j;
            row[i] = best;
        }
        pred.push_back(std::move(row));
    }
    return pred;
}

struct ClipEval {
    AccuracyCount corr;
    std::vector<std::optional<double>> jaccard_per_frame;  // frames 1..F-1, mean over sprite channels
    std::vector<double> pck_per_frame;                     // frames 1..F-1
};

inline ClipEval eval_clip(const Clip& clip, const ClipTruth& truth, const Model& model, const RunConfig& cfg,
                          double pck_alpha) {
    ClipEval ev;
    ev.corr = correspondence_accuracy(predict_correspondence(clip, model, cfg), truth.corr);

    int mask_channels = truth.sprite_count + 1;
    LabelField mask0 = LabelField::one_hot(truth.labels0, mask_channels);
    PropagationRun masks = propagate_clip(clip, model, cfg, mask0);

    LabelField kp0;
    kp0.rows = Tensor2(truth.node_count(), truth.sprite_count);
    for (int sp = 0; sp < truth.sprite_count; ++sp) kp0.rows.at(truth.keypoint_nodes[0][sp], sp) = 1.0;
    PropagationRun kps = propagate_clip(clip, model, cfg, kp0);

    GridGeometry geom = grid_geometry(truth.h, truth.w, truth.grid_rows, truth.grid_cols);
    for (int f = 1; f < clip.frame_count(); ++f) {
        std::vector<int> truth_hard = truth.labels_at(f);
        double sum = 0.0;
        int defined = 0;
        for (int ch = 1; ch < mask_channels; ++ch)
            if (auto j = jaccard(masks.hard[f], truth_hard, ch)) {
                sum += *j;
                ++defined;
            }
        ev.jaccard_per_frame.push_back(defined ? std::optional<double>(sum / defined) : std::nullopt);

        std::vector<PixelPoint> pred_pts;
        for (int sp = 0; sp < truth.sprite_count; ++sp) {
            int best = 0;
            for (int i = 1; i < truth.node_count(); ++i)
                if (kps.fields[f].rows.at(i, sp) > kps.fields[f].rows.at(best, sp)) best = i;
            pred_pts.push_back({static_cast<double>(geom.center_y[best / truth.grid_cols]),
                                static_cast<double>(geom.center_x[best % truth.grid_cols])});
        }
        ev.pck_per_frame.push_back(pck(pred_pts, truth.keypoints[f], pck_alpha, truth.h, truth.w));
    }
    return ev;
}

struct EvalSummary {
    AccuracyCount corr;
    double jaccard_sum = 0.0;
    int jaccard_count = 0;
    double pck_sum = 0.0;
    int pck_count = 0;

    double mean_jaccard() const { return jaccard_count ? jaccard_sum / jaccard_count : 0.0; }
    double mean_pck() const { return pck_count ? pck_sum / pck_count : 0.0; }
};

// One record per (clip, frame, metric); correspondence records carry the
// source frame of the pair. Ends with a summary record of means.
inline EvalSummary eval_dataset(const Model& model, const RunConfig& cfg, const std::string& dataset_dir,
                                std::ostream* records, double pck_alpha = 0.2) {
    EvalSummary sum;
    for (const std::string& dir : list_clip_dirs(dataset_dir)) {
        Clip clip = load_clip_dir(dir);
        ClipTruth truth = load_truth(dir);
        std::string name = std::filesystem::path(dir).filename().string();

        std::vector<std::vector<int>> pred = predict_correspondence(clip, model, cfg);
        for (size_t f = 0; f < truth.corr.next.size(); ++f) {
            AccuracyCount one;
            for (size_t i = 0; i < truth.corr.next[f].size(); ++i) {
                if (truth.corr.next[f][i] == CorrespondenceMap::kNone) continue;
                ++one.counted;
                one.matched += (pred[f][i] == truth.corr.next[f][i]);
            }
            if (records && one.defined())
                *records << name << " " << f << " corr_acc " << detail::fmt6(one.value()) << "\n";
            sum.corr.matched += one.matched;
            sum.corr.counted += one.counted;
        }

        ClipEval ev = eval_clip(clip, truth, model, cfg, pck_alpha);
        for (size_t i = 0; i < ev.jaccard_per_frame.size(); ++i) {
            int frame = static_cast<int>(i) + 1;
            if (ev.jaccard_per_frame[i]) {
                if (records) *records << name << " " << frame << " jaccard " << detail::fmt6(*ev.jaccard_per_frame[i]) << "\n";
                sum.jaccard_sum += *ev.jaccard_per_frame[i];
                ++sum.jaccard_count;
            }
            if (records) *records << name << " " << frame << " pck " << detail::fmt6(ev.pck_per_frame[i]) << "\n";
            sum.pck_sum += ev.pck_per_frame[i];
            ++sum.pck_count;
        }
    }
    if (records)
        *records << "summary corr_acc " << detail::fmt6(sum.corr.value()) << " jaccard "
                 << detail::fmt6(sum.mean_jaccard()) << " pck " << detail::fmt6(sum.mean_pck()) << "\n";
    return sum;
}

inline int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
    cfg.validate();
    for (int i = 0; i < cfg.num_clips; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04d", i);
        save_generated(out_dir + "/" + name, gen_translating_sprites(cfg, cfg.seed + i));
    }
    out << "wrote " << cfg.num_clips << " clips to " << out_dir << "\n";
    return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
    cfg.validate();
    if (cfg.data_dir.empty()) throw ConfigError("data_dir", "required by train");
    std::vector<Clip> clips = load_training_clips(cfg.data_dir);
    TrainResult res = train_run(cfg, clips, out_dir, &out);
    if (res.aborted) {
        out << "aborted after " << res.steps << " steps: " << res.abort_reason << "\n";
        return 3;
    }
    out << "trained " << res.steps << " steps, loss " << res.first_loss << " -> " << res.last_loss << "\n";
    return 0;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_dir, const std::string& out_path,
                    std::ostream& out, double pck_alpha = 0.2) {
    CheckpointState st = load_checkpoint(checkpoint_path);
    std::ostringstream records;
    records << "# clip frame metric value\n";
    eval_dataset(st.model, st.cfg, dataset_dir, &records, pck_alpha);
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write metrics: " + out_path);
        f << records.str();
    }
    out << records.str();
    return 0;
}

inline int cmd_propagate(const std::string& checkpoint_path, const std::string& clip_dir, const std::string& out_path,
                         std::ostream& out) {
    CheckpointState st = load_checkpoint(checkpoint_path);
    Clip clip = load_clip_dir(clip_dir);
    ClipTruth truth = load_truth(clip_dir);
    LabelField labels0 = LabelField::one_hot(truth.labels0, truth.sprite_count + 1);
    PropagationRun run = propagate_clip(clip, st.model, st.cfg, labels0);

    std::ostringstream o;
    o << "# frame node label\n";
    for (size_t f = 0; f < run.hard.size(); ++f)
        for (size_t i = 0; i < run.hard[f].size(); ++i) o << f << " " << i << " " << run.hard[f][i] << "\n";
    if (!out_path.empty()) {
        std::ofstream file(out_path, std::ios::binary);
        if (!file) throw std::runtime_error("cannot write propagation output: " + out_path);
        file << o.str();
    }
    out << o.str();
    return 0;
}

struct AblationRow {
    std::string axis, label;
    double heldout_acc = 0.0;
    double final_loss = 0.0;
};

// Trains and scores one configuration on freshly generated in-memory data.
// Data seeds depend only on the base seed, so settings compare like for like.
inline AblationRow run_ablation_setting(const RunConfig& cfg, const std::string& axis, const std::string& label,
                                        const std::string& out_dir) {
    std::vector<Clip> train_clips;
    for (int i = 0; i < cfg.num_clips; ++i)
        train_clips.push_back(gen_translating_sprites(cfg, cfg.seed + 1000 + i).clip);
    int heldout = std::max(16, cfg.num_clips / 10);

    TrainResult res = train_run(cfg, train_clips, out_dir);
    AblationRow row{axis, label, 0.0, res.last_loss};
    AccuracyCount acc;
    for (int i = 0; i < heldout; ++i) {
        GeneratedClip g = gen_translating_sprites(cfg, cfg.seed + 900000 + i);
        AccuracyCount one = correspondence_accuracy(predict_correspondence(g.clip, res.state.model, cfg), g.corr);
        acc.matched += one.matched;
        acc.counted += one.counted;
    }
    row.heldout_acc = acc.value();
    return row;
}

inline int cmd_ablate(const RunConfig& cfg, const std::string& axis, const std::string& out_dir, std::ostream& out) {
    cfg.validate();
    std::vector<std::pair<std::string, RunConfig>> settings;
    if (axis == "window") {
        for (auto [wr, wc, label] : {std::tuple<int, int, const char*>{1, 3, "3(h)"}, {3, 1, "3(v)"}, {3, 3, "9"},
                                     {5, 5, "25"}}) {
            RunConfig c = cfg;
            c.window_rows = wr;
            c.window_cols = wc;
            settings.emplace_back(label, c);
        }
    } else if (axis == "edge-variant") {
        for (EdgeVariant v : {EdgeVariant::Fixed, EdgeVariant::Random, EdgeVariant::Topology}) {
            RunConfig c = cfg;
            c.edge_variant = v;
            settings.emplace_back(edge_variant_name(v), c);
        }
    } else if (axis == "delta") {
        for (double d : {0.0, 0.1, 0.2, 0.3, 0.4}) {
            RunConfig c = cfg;
            c.dropout_threshold = d;
            char label[16];
            std::snprintf(label, sizeof(label), "%.1f", d);
            settings.emplace_back(label, c);
        }
    } else if (axis == "path-length") {
        for (int t : {2, 4, 6, 10}) {
            RunConfig c = cfg;
            c.clip_len = t;
            settings.emplace_back(std::to_string(2 * t), c);
        }
    } else {
        throw std::invalid_argument("unknown ablation axis: " + axis +
                                    " (expected window|edge-variant|delta|path-length)");
    }

    std::ostringstream table;
    table << "# axis setting heldout_acc final_loss\n";
    for (auto& [label, c] : settings) {
        AblationRow row = run_ablation_setting(c, axis, label, out_dir + "/ablate_" + axis + "_" + label);
        table << row.axis << " " << row.label << " " << detail::fmt6(row.heldout_acc) << " "
              << detail::fmt6(row.final_loss) << "\n";
    }
    std::filesystem::create_directories(out_dir);
    std::ofstream f(out_dir + "/ablation.txt", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write ablation table: " + out_dir + "/ablation.txt");
    f << table.str();
    out << table.str();
    return 0;
}

}  // namespace spacetime
