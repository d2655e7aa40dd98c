#include <CLI11.hpp>
#include <cstdio>

#include "maskdeep/dispatch.hpp"

using namespace maskdeep;

namespace {

std::vector<std::string> split_values(const std::string& csv) {
    // ';' separates values when the axis itself is list-valued (e.g. levels)
    const char sep = csv.find(';') != std::string::npos ? ';' : ',';
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"maskdeep: masked hierarchical-feature self-supervised pretraining"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, image, axis, values_csv, resume;
    std::uint64_t seed = 0;
    bool seed_set = false, random_init = false, knn = false, momentum_branch = false;
    int viz_seeds = 5, ablate_seeds = 0;

    auto add_common = [&](CLI::App* cmd, const char* default_out) {
        cmd->add_option("--config", config_path, "config file")->required();
        cmd->add_option("--out", out_dir, "output directory")->default_val(default_out);
        cmd->add_option("--seed", seed, "override config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    CLI::App* pre = app.add_subcommand("pretrain", "self-supervised pretraining run");
    add_common(pre, "runs/pretrain");
    pre->add_option("--resume", resume, "checkpoint to resume from");

    CLI::App* probe = app.add_subcommand("probe", "frozen-encoder evaluation");
    add_common(probe, "runs/probe");
    probe->add_option("--checkpoint", checkpoint, "pretraining checkpoint");
    probe->add_flag("--random-init", random_init, "probe a random-init encoder baseline");
    probe->add_flag("--knn", knn, "k-nearest-neighbor probe instead of linear");
    probe->add_flag("--momentum-branch", momentum_branch, "probe the momentum encoder");

    CLI::App* ablate = app.add_subcommand("ablate", "config-axis ablation grid");
    add_common(ablate, "runs/ablate");
    ablate->add_option("--axis", axis, "config field to sweep")->required();
    ablate->add_option("--values", values_csv, "comma-separated values (';' for list axes)")
        ->required();
    ablate->add_option("--seeds", ablate_seeds, "seeds per grid cell");

    CLI::App* viz = app.add_subcommand("viz", "representation-space visualizations");
    add_common(viz, "runs/viz");
    viz->add_option("--checkpoint", checkpoint, "pretraining checkpoint");
    viz->add_option("--image", image, "input image (.ppm/.pgm/.bmp)")->required();
    viz->add_option("--cluster-seeds", viz_seeds, "clustering seed count");

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = load_config(config_path);
        if (seed_set) cfg.seed = seed;

        DispatchOptions opts;
        opts.out_dir = out_dir;
        opts.checkpoint = checkpoint;
        opts.image = image;
        opts.axis = axis;
        opts.values = split_values(values_csv);
        opts.random_init = random_init;
        opts.knn = knn;
        opts.probe_momentum_branch = momentum_branch;
        opts.resume = resume;
        opts.viz_seeds = viz_seeds;
        opts.seeds_override = ablate_seeds;

        return dispatch(app.get_subcommands().front()->get_name(), cfg, opts);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
