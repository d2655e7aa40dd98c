#pragma once

#include <memory>
#include <string>
#include <vector>

#include "maskdeep/config.hpp"
#include "maskdeep/data.hpp"
#include "maskdeep/pipeline.hpp"

namespace maskdeep {

// Linear warmup to base_lr, then half-cosine decay to zero.
double lr_at(long step, long total_steps, double base_lr, long warmup_steps);

struct StepMetrics {
    long step = 0;
    int epoch = 0;
    double lr = 0;
    double lambda = 0;
    double loss = 0;
    double target_std = 0;
    double grad_norm = 0;
};

// Plain SGD with momentum and L2 weight decay over one parameter registry.
class Sgd {
  public:
    Sgd(ParamRegistry<float>* params, double momentum, double weight_decay);

    // Applies v = mu*v + g + wd*theta; theta -= lr*v. Returns the pre-clip
    // global gradient norm; grad_clip <= 0 disables clipping.
    double step(double lr, double grad_clip);

    ParamRegistry<float>* params() { return params_; }
    std::vector<std::vector<float>>& velocity() { return velocity_; }

  private:
    ParamRegistry<float>* params_;
    double momentum_, weight_decay_;
    std::vector<std::vector<float>> velocity_;
};

// Online + momentum branches, optimizer state and step counters. The
// schedule state is a pure function of (seed, step), which is what makes
// checkpoints exactly resumable.
struct TrainState {
    Config cfg;
    std::unique_ptr<OnlineModel<float>> online;
    std::unique_ptr<MomentumModel<float>> momentum;
    std::unique_ptr<Sgd> opt;
    long step = 0;
    long total_steps = 0;

    static TrainState fresh(const Config& cfg, long total_steps);
};

// Mean per-dimension standard deviation of the L2-normalized base-view
// targets across the batch; 0 at perfect collapse, ~1/sqrt(dim) for
// directions spread uniformly on the hypersphere.
double collapse_metrics(const std::vector<TargetSet<float>>& targets);

struct TrainStepOptions {
    double loss_scale = 1.0;  // test hook; scales gradients, not the loss
    StepOutcome<float>* capture_outcome = nullptr;
};

StepMetrics train_step(TrainState& st, const Tensor4<float>& view1, const Tensor4<float>& view2,
                       const std::vector<Tensor4<float>>& extras,
                       const TrainStepOptions& opts = {});

struct FitResult {
    std::string run_dir;
    long steps = 0;
    double final_loss = 0;
    double final_target_std = 0;
    std::string final_checkpoint;
};

// Full pretraining run; writes config copy, metrics.csv, checkpoints/ under
// run_dir. resume_from may name a checkpoint to continue.
FitResult fit(const Config& cfg, const std::string& run_dir, const std::string& resume_from = "");

void save_checkpoint(const TrainState& st, const std::string& path);
TrainState load_checkpoint(const std::string& path);

// Low-level named-tensor container access (shared with tests/tools).
namespace ckpt {
struct NamedBlock {
    std::string name;
    std::vector<float> data;
};
}  // namespace ckpt

}  // namespace maskdeep
