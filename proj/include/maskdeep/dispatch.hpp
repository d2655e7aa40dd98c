#pragma once

#include <string>
#include <vector>

#include "maskdeep/config.hpp"

namespace maskdeep {

struct DispatchOptions {
    std::string out_dir = "runs/run";
    std::string checkpoint;
    std::string image;
    std::string axis;
    std::vector<std::string> values;
    bool random_init = false;
    bool knn = false;
    bool probe_momentum_branch = false;
    std::string resume;
    int viz_seeds = 5;
    int seeds_override = 0;  // ablate: 0 keeps config.ablate_seeds
};

// Runs one command end to end, writing artifacts under opts.out_dir.
// Returns a process exit status: 0 ok, 2 usage error, 1 any other failure.
int dispatch(const std::string& command, const Config& cfg, const DispatchOptions& opts);

}  // namespace maskdeep
