#pragma once

// Finite-difference verification of every differentiable kernel plus the
// end-to-end clip loss. Each check is a tiny fixed instance reduced to a
// scalar through constant weights, so central differences are exact targets.

#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "spacetime/commands.hpp"
#include "spacetime/config.hpp"
#include "spacetime/diffmath.hpp"
#include "spacetime/synthetic.hpp"
#include "spacetime/walk.hpp"

namespace spacetime {

namespace detail {

inline Tensor2 const_filled(int rows, int cols, double v) {
    Tensor2 t(rows, cols);
    for (double& x : t.data) x = v;
    return t;
}

// x -> ones^T (x w) with a fixed random weight column; scalar with nonzero
// sensitivity to every entry of x.
inline Tape::Id weighted_sum(Tape& tape, Tape::Id x, uint64_t seed) {
    const Tensor2& v = tape.val(x);
    std::mt19937_64 rng(seed);
    Tape::Id w = tape.input(random_uniform(v.cols, 1, -1.0, 1.0, rng));
    Tape::Id ones = tape.input(const_filled(1, v.rows, 1.0));
    return tape.matmul(ones, tape.matmul(x, w));
}

}  // namespace detail

struct KernelCheck {
    std::string name;
    GradCheckResult result;
};

inline std::vector<KernelCheck> run_kernel_checks(double step = 1e-5) {
    std::mt19937_64 rng(271828);
    std::vector<KernelCheck> out;
    auto check = [&](const std::string& name, const ParamSet& params,
                     const std::function<Tape::Id(Tape&, const ParamSet&)>& build) {
        auto fn = [&build](const ParamSet& ps) {
            Tape tape;
            return tape.backward(build(tape, ps));
        };
        out.push_back({name, grad_check(fn, params, step)});
    };
    auto bind = [](Tape& tape, const ParamSet& ps) {
        std::vector<Tape::Id> ids;
        for (const auto& [name, t] : ps.items) ids.push_back(tape.param(name, t));
        return ids;
    };

    {
        ParamSet ps;
        ps.add("a", random_uniform(3, 4, -1.0, 1.0, rng));
        ps.add("b", random_uniform(4, 2, -1.0, 1.0, rng));
        check("matmul", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.matmul(ids[0], ids[1]), 11);
        });
    }
    {
        ParamSet ps;
        ps.add("a", random_uniform(3, 4, -1.0, 1.0, rng));
        ps.add("b", random_uniform(5, 4, -1.0, 1.0, rng));
        check("matmul_nt", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.matmul_nt(ids[0], ids[1]), 12);
        });
    }
    {
        ParamSet ps;
        ps.add("logits", random_uniform(3, 5, -1.0, 1.0, rng));
        check("row_softmax", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.row_softmax(ids[0], 0.7), 13);
        });
    }
    {
        ParamSet ps;
        ps.add("logits", random_uniform(3, 5, -1.0, 1.0, rng));
        BoolMask mask(3, 5);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j) mask.set(i, j, (i + j) % 3 != 0 || j == 1);
        check("row_softmax_masked", ps, [&, mask](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.row_softmax_masked(ids[0], 0.7, mask), 14);
        });
    }
    {
        ParamSet ps;
        ps.add("x", random_uniform(4, 3, -1.0, 1.0, rng));
        check("l2_normalize_rows", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.l2_normalize_rows(ids[0]), 15);
        });
    }
    {
        ParamSet ps;
        ps.add("logits", random_uniform(3, 4, -1.0, 1.0, rng));
        check("cross_entropy_rows", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return tape.cross_entropy_rows(tape.row_softmax(ids[0], 1.0), {1, 0, 2});
        });
    }
    {
        ParamSet ps;
        ps.add("x", random_uniform(3, 4, -1.5, 1.5, rng));
        check("tanh", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.tanh(ids[0]), 16);
        });
    }
    {
        ParamSet ps;
        ps.add("x", random_uniform(3, 4, -1.0, 1.0, rng));
        ps.add("bias", random_uniform(1, 4, -1.0, 1.0, rng));
        check("add_row_bias", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.tanh(tape.add_row_bias(ids[0], ids[1])), 17);
        });
    }
    {
        ParamSet ps;
        ps.add("row", random_uniform(1, 5, -1.0, 1.0, rng));
        check("tile_rows", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.tile_rows(ids[0], 4), 18);
        });
    }
    {
        ParamSet ps;
        ps.add("weights", random_uniform(4, 3, -1.0, 1.0, rng));
        std::vector<std::vector<int>> slots = {{0, 1, -1}, {1, 2, 0}, {-1, -1, 3}, {2, 0, 1}};
        std::mt19937_64 erng(31);
        Tensor2 emb = random_uniform(4, 2, -1.0, 1.0, erng);
        check("slot_scatter", ps, [&, slots, emb](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            Tape::Id mixing = tape.slot_scatter(ids[0], slots, 4);
            return detail::weighted_sum(tape, tape.matmul(mixing, tape.input(emb)), 19);
        });
    }
    {
        ParamSet ps;
        ps.add("x", random_uniform(5, 3, -1.0, 1.0, rng));
        check("gather_rows", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.gather_rows(ids[0], {2, 0, 3, 2}), 20);
        });
    }
    {
        ParamSet ps;
        ps.add("x", random_uniform(6, 3, -1.0, 1.0, rng));
        check("group_mean_rows", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.group_mean_rows(ids[0], 2), 21);
        });
    }
    {
        ParamSet ps;
        ps.add("a", random_uniform(2, 3, -1.0, 1.0, rng));
        ps.add("b", random_uniform(2, 3, -1.0, 1.0, rng));
        check("add", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.add(ids[0], ids[1]), 22);
        });
    }
    {
        ParamSet ps;
        ps.add("a", random_uniform(2, 3, -1.0, 1.0, rng));
        check("scale", ps, [&](Tape& tape, const ParamSet& p) {
            auto ids = bind(tape, p);
            return detail::weighted_sum(tape, tape.scale(ids[0], 2.5), 23);
        });
    }
    return out;
}

// Config for the end-to-end instance: 2 frames, 4 nodes, d = 8.
inline RunConfig gradcheck_config(uint64_t seed = 7) {
    RunConfig cfg;
    cfg.grid_rows = cfg.grid_cols = 2;
    cfg.canvas = 8;
    cfg.patch_size = 4;
    cfg.feat_hw = 2;
    cfg.hidden = 8;
    cfg.embed_dim = 8;
    cfg.clip_len = 1;
    cfg.dropout_threshold = 0.0;
    cfg.min_keep = 2;
    cfg.sprites = 1;
    cfg.sprite_cells = 1;
    cfg.seed = seed;
    return cfg;
}

inline GradCheckResult run_end_to_end_check(const RunConfig& cfg, double step = 1e-5, bool corrupt = false) {
    Clip clip = gen_translating_sprites(cfg, cfg.seed).clip;
    NeighborTable table = neighborhood_indices(cfg.grid_rows, cfg.grid_cols, cfg.window_rows, cfg.window_cols);
    Model base = init_model(cfg);

    ParamSet params;
    for (const auto& [name, t] : base.learnable()) params.add(name, *t);

    auto fn = [&](const ParamSet& ps) {
        Model m = base;
        for (auto& [name, t] : m.learnable()) *t = *ps.find(name);
        ClipResult r = clip_forward(clip, m, cfg, 0.0, table);
        GradRecord rec;
        rec.value = r.loss;
        rec.partials = std::move(r.grads);
        if (corrupt) rec.partials.begin()->second.data[0] += 0.5;
        return rec;
    };
    return grad_check(fn, params, step);
}

inline int cmd_gradcheck(const RunConfig& cfg, bool corrupt, std::ostream& out) {
    const double threshold = 1e-4;
    bool ok = true;
    for (const KernelCheck& k : run_kernel_checks()) {
        ok = ok && k.result.max_rel_err < threshold;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3e", k.result.max_rel_err);
        out << "kernel " << k.name << " max_rel_err " << buf << " worst " << k.result.worst_param << "\n";
    }
    RunConfig e2e = gradcheck_config(cfg.seed);
    GradCheckResult r = run_end_to_end_check(e2e, 1e-5, corrupt);
    ok = ok && r.max_rel_err < threshold;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", r.max_rel_err);
    out << "end-to-end max_rel_err " << buf << " worst " << r.worst_param << "\n";
    out << "gradcheck " << (ok ? "PASS" : "FAIL") << " threshold 1e-4\n";
    return ok ? 0 : 2;
}

}  // namespace spacetime
