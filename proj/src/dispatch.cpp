#include "maskdeep/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "maskdeep/probe.hpp"
#include "maskdeep/viz.hpp"

namespace maskdeep {

namespace fs = std::filesystem;

namespace {

std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == '/' || c == ',' || c == ' ' || c == ';') c = '-';
    return s;
}

// Model structure comes from the checkpoint; evaluation protocol (dataset
// location, probe hyperparameters, seed) follows the invoking config.
Config probe_config(const Config& embedded, const Config& cli) {
    Config cfg = embedded;
    cfg.dataset = cli.dataset;
    cfg.data_root = cli.data_root;
    cfg.subset_size = cli.subset_size;
    cfg.synth_seed = cli.synth_seed;
    cfg.synth_test_size = cli.synth_test_size;
    cfg.probe_epochs = cli.probe_epochs;
    cfg.probe_lr = cli.probe_lr;
    cfg.probe_reference_batch = cli.probe_reference_batch;
    cfg.probe_batch = cli.probe_batch;
    cfg.knn_k = cli.knn_k;
    cfg.seed = cli.seed;
    return cfg;
}

int run_pretrain(const Config& cfg, const DispatchOptions& opts) {
    FitResult r = fit(cfg, opts.out_dir, opts.resume);
    std::printf("pretrain done: %ld steps, final loss %.5f, target_std %.5f\n", r.steps,
                r.final_loss, r.final_target_std);
    std::printf("checkpoint: %s\n", r.final_checkpoint.c_str());
    return 0;
}

int run_probe(const Config& cfg, const DispatchOptions& opts) {
    TrainState st = [&] {
        if (opts.random_init) {
            TrainState fresh = TrainState::fresh(cfg, 1);
            return fresh;
        }
        check<CheckpointNotFound>(!opts.checkpoint.empty(),
                                  "probe needs --checkpoint (or --random-init)");
        return load_checkpoint(opts.checkpoint);
    }();
    const Config eval_cfg = opts.random_init ? cfg : probe_config(st.cfg, cfg);
    const std::string identity = opts.random_init
                                     ? "random-init (seed " + std::to_string(cfg.seed) + ")"
                                     : opts.checkpoint + " (step " + std::to_string(st.step) + ")";
    const ProbeBranch branch =
        opts.probe_momentum_branch ? ProbeBranch::momentum : ProbeBranch::online;
    ProbeReport r = opts.knn ? knn_probe(st, eval_cfg, identity, eval_cfg.knn_k, branch)
                             : linear_probe(st, eval_cfg, identity, branch);
    fs::create_directories(opts.out_dir);
    const std::string path =
        (fs::path(opts.out_dir) / (r.mode + "_probe_report.txt")).string();
    std::ofstream(path) << r.to_text();
    std::printf("%s", r.to_text().c_str());
    std::printf("report: %s\n", path.c_str());
    return 0;
}

int run_ablate(const Config& base, const DispatchOptions& opts) {
    check<UsageError>(!opts.axis.empty(), "ablate needs --axis");
    std::vector<Config> grid = ablation_grid(base, opts.axis, opts.values);
    const int n_seeds = opts.seeds_override > 0 ? opts.seeds_override : base.ablate_seeds;
    fs::create_directories(opts.out_dir);

    std::string summary = "axis: " + opts.axis + "\n";
    summary += "value\tmean_top1\tstd_top1\tseeds\n";
    for (std::size_t vi = 0; vi < grid.size(); ++vi) {
        const std::string vdir =
            (fs::path(opts.out_dir) / (opts.axis + "=" + sanitize(opts.values[vi]))).string();
        std::vector<double> top1s;
        for (int s = 0; s < n_seeds; ++s) {
            Config cfg = grid[vi];
            cfg.seed = base.seed + static_cast<std::uint64_t>(s);
            const std::string rdir = (fs::path(vdir) / ("seed" + std::to_string(s))).string();
            FitResult fr = fit(cfg, rdir);
            TrainState st = load_checkpoint(fr.final_checkpoint);
            ProbeReport pr = linear_probe(
                st, cfg, fr.final_checkpoint + " (step " + std::to_string(st.step) + ")");
            std::ofstream((fs::path(rdir) / "linear_probe_report.txt").string()) << pr.to_text();
            top1s.push_back(pr.top1);
            std::printf("[ablate] %s=%s seed%d: top1 %.3f\n", opts.axis.c_str(),
                        opts.values[vi].c_str(), s, pr.top1);
        }
        double mean = 0;
        for (double t : top1s) mean += t;
        mean /= top1s.size();
        double var = 0;
        for (double t : top1s) var += (t - mean) * (t - mean);
        const double sd = top1s.size() > 1 ? std::sqrt(var / (top1s.size() - 1)) : 0.0;
        char row[160];
        std::snprintf(row, sizeof(row), "%s\t%.3f\t%.3f\t%d\n", opts.values[vi].c_str(), mean, sd,
                      n_seeds);
        summary += row;
    }
    const std::string spath = (fs::path(opts.out_dir) / "summary.txt").string();
    std::ofstream(spath) << summary;
    std::printf("%s\nsummary: %s\n", summary.c_str(), spath.c_str());
    return 0;
}

int run_viz(const Config& cfg, const DispatchOptions& opts) {
    check<CheckpointNotFound>(!opts.checkpoint.empty(), "viz needs --checkpoint");
    check<UsageError>(!opts.image.empty(), "viz needs --image");
    TrainState st = load_checkpoint(opts.checkpoint);
    st.cfg.seed = cfg.seed;  // group-draw seed follows the invoking config
    data::RawImage img = data::load_image_file(opts.image);
    const std::string stem = fs::path(opts.image).stem().string();
    const std::string fig_dir = (fs::path(opts.out_dir) / "figures").string();
    const auto files = emit_figures(st, img, stem, fig_dir, opts.viz_seeds);
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return 0;
}

}  // namespace

int dispatch(const std::string& command, const Config& cfg, const DispatchOptions& opts) {
    try {
        validate_config(cfg);
        if (command == "pretrain") return run_pretrain(cfg, opts);
        if (command == "probe") return run_probe(cfg, opts);
        if (command == "ablate") return run_ablate(cfg, opts);
        if (command == "viz") return run_viz(cfg, opts);
        throw UsageError("unknown command '" + command +
                         "' (expected pretrain/probe/ablate/viz)");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace maskdeep
