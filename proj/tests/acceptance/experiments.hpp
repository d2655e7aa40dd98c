#pragma once

#include <string>
#include <vector>

#include "maskdeep/config.hpp"

namespace maskdeep::exp {

// Experiment scale. "full" is the pinned protocol; "sandbox" keeps every
// config ratio and every pass threshold but shrinks images x epochs so the
// suite fits a single-core CI box. Thresholds never change with the budget.
struct Budget {
    std::string name;
    int subset = 10000;
    int epochs = 50;
    int probe_epochs = 20;
    int seeds = 3;
    // ema ramp start; the shrunk budget lowers it so the momentum branch
    // accumulates a comparable total amount of movement over far fewer steps
    double lambda0 = 0.99;
    // directional-ablation runs (criterion fixes only that the budget is
    // identical across compared arms)
    int ablation_subset = 10000;
    int ablation_epochs = 50;
};

Budget full_budget();
Budget sandbox_budget();

// The default desk-scale config bound to an available corpus: CIFAR-10 when
// its binary batches are on disk, otherwise the built-in synthetic recipe.
Config experiment_config(const Budget& b);

struct RunOutcome {
    std::string run_dir;
    double loss_first = 0;  // mean over the first 5 logged steps
    double loss_last = 0;   // mean over the last max(5, 5%) logged steps
    double target_std_final = 0;
    double probe_top1 = -1;         // linear probe of the final checkpoint
    double probe_top1_epoch1 = -1;  // linear probe of the end-of-epoch-1 checkpoint
    double baseline_top1 = -1;      // random-init frozen baseline, same seed
};

// Pretrain + probe one seed; idempotent (a completed run directory is
// reused, probe reports are cached inside it).
RunOutcome run_cell(const Config& cfg, const std::string& run_dir, bool probe_epoch1,
                    bool probe_baseline);

struct ExperimentReport {
    bool pass = false;
    std::string detail;
};

// Criterion 7: non-collapse + measurable descent on every seed.
ExperimentReport criterion_noncollapse(const Budget& b, const std::string& out_dir);
// Criterion 8: mean probe improvement over the random-init baseline >= 8 pts.
ExperimentReport criterion_probe_improvement(const Budget& b, const std::string& out_dir);
// Criterion 9: hierarchical > naive and K=8 >= K=1 on directional means.
ExperimentReport criterion_ablation_direction(const Budget& b, const std::string& out_dir);

}  // namespace maskdeep::exp
