#pragma once

#include <map>
#include <string>
#include <vector>

#include "maskdeep/data.hpp"
#include "maskdeep/trainer.hpp"

namespace maskdeep {

// Per-level heatmaps in [0,1], max-normalized unless identically zero.
struct CamStack {
    std::map<int, std::vector<float>> maps;           // level -> h*w values
    std::map<int, std::pair<int, int>> dims;          // level -> (h, w)
};

// Per-level hard assignment of every position to one of S seed features.
struct ClusterMap {
    std::map<int, std::vector<int>> labels;           // level -> h*w labels in [0, S)
    std::map<int, std::pair<int, int>> dims;
    std::map<int, std::vector<int>> seeds;            // level -> S linear positions
    int n_seeds = 0;
};

// Single-pair alignment gradient heatmaps: one group, one target, loss
// -cos(predict(H^1), G^2); channel weights are the spatial mean of the
// pyramid gradient per level. Input preprocessing is resize-only.
CamStack grad_cam(TrainState& st, const data::RawImage& img);

// Farthest-point seed selection in cosine distance (started from the
// max-norm position), then argmax-similarity assignment; ties resolve to the
// lowest seed index.
ClusterMap cluster_map(TrainState& st, const data::RawImage& img, int n_seeds);

// Renders heatmaps/label maps upsampled to input resolution, alpha-blended
// over the source image; one file per (level, kind):
//   <stem>_cam_P<l>.ppm and <stem>_cluster_P<l>.ppm
std::vector<std::string> emit_figures(TrainState& st, const data::RawImage& img,
                                      const std::string& stem, const std::string& out_dir,
                                      int n_seeds);

}  // namespace maskdeep
