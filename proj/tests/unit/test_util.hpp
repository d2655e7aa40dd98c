#pragma once
#include <unistd.h>

#include <filesystem>
#include <string>

#include "maskdeep/config.hpp"

namespace maskdeep::testutil {

// Desk-scale config shrunk to seconds: 32px synthetic data, thin widths.
inline Config tiny_config() {
    Config cfg;
    cfg.dataset = "synthetic";
    cfg.subset_size = 64;
    cfg.synth_test_size = 30;
    cfg.resolution = 32;
    cfg.widths = {4, 8, 16, 32};
    cfg.levels = {3, 4, 5};
    cfg.hdm_dim = 8;
    cfg.patch_count = 3;
    cfg.group_count = 2;
    cfg.extra_targets = 1;
    cfg.pred_hidden = 16;
    cfg.pred_out = 32;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    cfg.probe_epochs = 2;
    cfg.probe_batch = 16;
    cfg.knn_k = 3;
    cfg.seed = 1;
    return cfg;
}

inline std::string fresh_dir(const std::string& tag) {
    static int counter = 0;
    const auto d = std::filesystem::temp_directory_path() /
                   ("mdrun_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

}  // namespace maskdeep::testutil
