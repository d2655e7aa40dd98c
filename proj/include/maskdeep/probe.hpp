#pragma once

#include <string>

#include "maskdeep/trainer.hpp"

namespace maskdeep {

struct ProbeReport {
    double top1 = 0, top5 = 0;  // percentages
    long n_train = 0, n_test = 0;
    std::string checkpoint;  // identity: path plus training step
    std::uint64_t seed = 0;
    std::string mode;  // "linear" | "knn"

    std::string to_text() const;
};

enum class ProbeBranch { online, momentum };

// Trains a linear classification head on frozen global descriptors
// (eval-mode statistics; crop + flip augmentation only) and reports test
// accuracy. The backbone is asserted byte-identical before and after.
ProbeReport linear_probe(TrainState& st, const Config& cfg, const std::string& ckpt_identity,
                         ProbeBranch branch = ProbeBranch::online);

// Cosine-similarity weighted k-nearest-neighbor vote over normalized
// descriptors; training-free.
ProbeReport knn_probe(TrainState& st, const Config& cfg, const std::string& ckpt_identity,
                      int k_neighbors, ProbeBranch branch = ProbeBranch::online);

// Vote core on raw feature banks (row-major [n x dim]); features are
// L2-normalized internally. Returns top1 percentage, top5 optionally.
double knn_vote_accuracy(std::vector<float> train_feats, const std::vector<int>& train_labels,
                         std::vector<float> test_feats, const std::vector<int>& test_labels,
                         int dim, int classes, int k_neighbors, double* top5_out = nullptr);

}  // namespace maskdeep
