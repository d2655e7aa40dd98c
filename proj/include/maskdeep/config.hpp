#pragma once

#include <array>
#include <string>
#include <vector>

#include "maskdeep/pipeline.hpp"

namespace maskdeep {

// Flat key/value run configuration. Defaults are the desk-scale recipe:
// every ratio of the reference setup is preserved at CPU-trainable size.
struct Config {
    // dataset
    std::string dataset = "cifar10";  // cifar10 | stl10 | image_dir | synthetic
    std::string data_root = "data/cifar10";
    int subset_size = 10000;  // 0 = full training split
    int resolution = 128;
    std::uint64_t synth_seed = 1234;  // content seed for the synthetic recipe
    int synth_test_size = 1000;

    // backbone
    std::array<int, 4> widths{16, 32, 64, 128};

    // hierarchical deep-masking
    std::vector<int> levels{3, 4, 5};
    int hdm_dim = 64;
    bool fpn_smooth = true;
    std::string hierarchical = "on";  // on | naive

    // sampling
    int patch_count = 12;   // k
    int group_count = 16;   // K
    int extra_targets = 4;  // E; per-side target count N = E + 1

    // predictor
    int pred_hidden = 512;
    int pred_out = 128;

    // optimizer / schedule
    double base_lr = 0.05;
    int reference_batch = 64;  // linear-scaling anchor for base_lr
    double weight_decay = 1e-5;
    double sgd_momentum = 0.9;
    int batch_size = 64;
    int epochs = 50;
    int warmup_epochs = -1;  // -1: 10% of epochs
    double grad_clip = 0.0;  // 0 = off

    // ema
    double ema_lambda0 = 0.99;

    // loss
    std::string loss_reduction = "mean";  // literal | mean

    // momentum branch normalization statistics
    bool momentum_bn_batch_stats = true;

    // logging / checkpoints
    int log_interval = 1;
    int ckpt_interval = 0;  // steps; 0 = final only
    int pair_log_interval = 0;

    // probe
    int probe_epochs = 20;
    double probe_lr = 3.0;
    int probe_reference_batch = 256;
    int probe_batch = 128;
    int knn_k = 20;

    int ablate_seeds = 3;
    std::uint64_t seed = 1;

    int resolved_warmup_epochs() const {
        return warmup_epochs >= 0 ? warmup_epochs : std::max(1, epochs / 10);
    }
    bool naive() const { return hierarchical == "naive"; }
    double effective_lr() const {
        return base_lr * static_cast<double>(batch_size) / reference_batch;
    }
    double effective_probe_lr(int probe_batch_size) const {
        return probe_lr * static_cast<double>(probe_batch_size) / probe_reference_batch;
    }
    LossReduction reduction() const {
        return loss_reduction == "literal" ? LossReduction::literal : LossReduction::mean;
    }
};

Config load_config(const std::string& path);
void save_config(const Config& cfg, const std::string& path);
std::string serialize_config(const Config& cfg);
Config parse_config(const std::string& text);  // over defaults
void validate_config(const Config& cfg);

// Field-level access used by the ablation runner; key must name a config
// field, value uses the file syntax for that field.
void set_config_field(Config& cfg, const std::string& key, const std::string& value);
std::string get_config_field(const Config& cfg, const std::string& key);
bool is_config_field(const std::string& key);

// One config per value, identical elsewhere, in input order.
std::vector<Config> ablation_grid(const Config& base, const std::string& axis,
                                  const std::vector<std::string>& values);

ModelSpec model_spec(const Config& cfg);

}  // namespace maskdeep
