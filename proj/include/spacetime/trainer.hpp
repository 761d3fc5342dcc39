#pragma once

// Two-phase training loop: no dropout at lr_phase1, then discrepancy dropout
// at lr_phase2, with a linear lr ramp over the first warmup_steps steps.
// Emits one record per optimizer step into trace.txt (with
// wall time) and loss_trace.txt (wall-time free, so reruns compare bitwise),
// and an epoch-end checkpoint that survives a mid-epoch abort.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spacetime/checkpoint.hpp"
#include "spacetime/config.hpp"
#include "spacetime/image_io.hpp"
#include "spacetime/synthetic.hpp"
#include "spacetime/walk.hpp"

namespace spacetime {

inline std::vector<Clip> load_training_clips(const std::string& dataset_dir) {
    std::vector<Clip> clips;
    for (const std::string& dir : list_clip_dirs(dataset_dir)) clips.push_back(load_clip_dir(dir));
    return clips;
}

struct TrainResult {
    CheckpointState state;
    long long steps = 0;
    double first_loss = 0.0, last_loss = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

inline TrainResult train_run(const RunConfig& cfg, const std::vector<Clip>& clips, const std::string& out_dir,
                             std::ostream* console = nullptr) {
    cfg.validate();
    if (clips.empty()) throw std::invalid_argument("train_run: no clips");
    std::filesystem::create_directories(out_dir);

    std::ofstream trace(out_dir + "/trace.txt", std::ios::binary);
    std::ofstream loss_trace(out_dir + "/loss_trace.txt", std::ios::binary);
    if (!trace || !loss_trace) throw std::runtime_error("train_run: cannot write traces in " + out_dir);
    std::string ks;
    for (int k = 1; k <= cfg.clip_len; ++k) ks += " k" + std::to_string(k);
    trace << "# step phase loss kept_frac" << ks << " wall_ms\n";
    loss_trace << "# step phase loss kept_frac" << ks << "\n";

    TrainResult res;
    res.state.cfg = cfg;
    res.state.model = init_model(cfg);
    NeighborTable table = neighborhood_indices(cfg.grid_rows, cfg.grid_cols, cfg.window_rows, cfg.window_cols);

    char buf[40];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };

    int epoch_global = 0;
    std::vector<int> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    for (int phase = 1; phase <= 2 && !res.aborted; ++phase) {
        int epochs = phase == 1 ? cfg.epochs_phase1 : cfg.epochs_phase2;
        double lr = phase == 1 ? cfg.lr_phase1 : cfg.lr_phase2;
        double threshold = phase == 1 ? 0.0 : cfg.dropout_threshold;
        for (int ep = 0; ep < epochs && !res.aborted; ++ep, ++epoch_global) {
            std::mt19937_64 shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + epoch_global);
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            for (size_t at = 0; at < order.size() && !res.aborted; at += cfg.batch_size) {
                std::vector<const Clip*> batch;
                for (size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i)
                    batch.push_back(&clips[order[i]]);
                auto t0 = std::chrono::steady_clock::now();
                double ramp = cfg.warmup_steps > 0
                                  ? std::min(1.0, static_cast<double>(res.steps + 1) / cfg.warmup_steps)
                                  : 1.0;
                TrainStepResult step;
                try {
                    step = train_step(batch, res.state.model, cfg, threshold, lr * ramp, res.state.opt, table);
                } catch (const TrainAbort& e) {
                    res.aborted = true;
                    res.abort_reason = e.what();
                    std::ofstream diag(out_dir + "/abort.txt", std::ios::binary);
                    diag << "step " << res.steps << "\nreason " << e.what() << "\n";
                    break;
                }
                double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

                std::string rec = std::to_string(res.steps) + " " + std::to_string(phase) + " " + fmt(step.loss) +
                                  " " + fmt(step.kept_fraction);
                for (double v : step.per_k) rec += " " + fmt(v);
                loss_trace << rec << "\n";
                std::snprintf(buf, sizeof(buf), " %.3f", wall_ms);
                trace << rec << buf << "\n";
                if (console && res.steps % 25 == 0)
                    *console << "step " << res.steps << " phase " << phase << " loss " << step.loss << "\n";

                if (res.steps == 0) res.first_loss = step.loss;
                res.last_loss = step.loss;
                ++res.steps;
            }
            if (!res.aborted) {
                res.state.step = res.steps;
                save_checkpoint(out_dir + "/checkpoint.txt", res.state);
            }
        }
    }
    if (!res.aborted) {
        res.state.step = res.steps;
        save_checkpoint(out_dir + "/checkpoint.txt", res.state);
    }
    return res;
}

}  // namespace spacetime
