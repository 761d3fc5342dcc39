// Command-line front end: train, eval, propagate, ablate, gradcheck,
// gen-data. All functionality lives in the headers; this file only maps
// flags onto the command cores and exceptions onto exit codes.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spacetime/commands.hpp"
#include "spacetime/config.hpp"
#include "spacetime/gradcheck.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out;
    std::string checkpoint;
    std::string data;
    std::string axis;
    long long seed = -1;
    bool corrupt = false;
    bool force = false;
};

spacetime::RunConfig resolve_config(const CommonArgs& a) {
    spacetime::RunConfig cfg = a.config_path.empty() ? spacetime::RunConfig{} : spacetime::load_config(a.config_path);
    if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"space-time graph correspondence trainer"};
    app.require_subcommand(1);

    CommonArgs a;
    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", a.config_path, "key=value config file");
        if (needs_config) opt->required();
        cmd->add_option("--seed", a.seed, "override the config seed");
        return cmd;
    };

    CLI::App* train = add_common(app.add_subcommand("train", "run the two-phase training schedule"), true);
    train->add_option("--out", a.out, "output directory for traces and checkpoints")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against a dataset");
    eval->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
    eval->add_option("--data", a.data, "dataset directory")->required();
    eval->add_option("--out", a.out, "metrics output file");

    CLI::App* propagate = app.add_subcommand("propagate", "propagate frame-0 labels through a clip");
    propagate->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
    propagate->add_option("--data", a.data, "clip directory")->required();
    propagate->add_option("--out", a.out, "propagated labels output file");

    CLI::App* ablate = add_common(app.add_subcommand("ablate", "sweep one config axis"), true);
    ablate->add_option("--axis", a.axis, "window | edge-variant | delta | path-length")->required();
    ablate->add_option("--out", a.out, "output directory for per-setting runs")->required();

    CLI::App* gradcheck = add_common(app.add_subcommand("gradcheck", "finite-difference gradient verification"), false);
    gradcheck->add_flag("--corrupt", a.corrupt, "negative control: corrupt one analytic partial")
        ->group("");  // hidden

    CLI::App* gen = add_common(app.add_subcommand("gen-data", "generate a synthetic clip dataset"), false);
    gen->add_option("--out", a.out, "dataset output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train)) return spacetime::cmd_train(resolve_config(a), a.out, std::cout);
        if (app.got_subcommand(eval)) return spacetime::cmd_eval(a.checkpoint, a.data, a.out, std::cout);
        if (app.got_subcommand(propagate)) return spacetime::cmd_propagate(a.checkpoint, a.data, a.out, std::cout);
        if (app.got_subcommand(ablate)) return spacetime::cmd_ablate(resolve_config(a), a.axis, a.out, std::cout);
        if (app.got_subcommand(gradcheck)) return spacetime::cmd_gradcheck(resolve_config(a), a.corrupt, std::cout);
        if (app.got_subcommand(gen)) return spacetime::cmd_gen_data(resolve_config(a), a.out, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
