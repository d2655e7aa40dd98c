#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "maskdeep/backbone.hpp"

namespace maskdeep {

// Detached global descriptors per loss side. side*[0] is the base view's
// descriptor; entries 1..E are the shared extra views' descriptors.
template <typename S>
struct TargetSet {
    std::vector<std::vector<S>> side1;
    std::vector<std::vector<S>> side2;

    int n_targets() const { return static_cast<int>(side1.size()); }
};

// Increasing cosine ramp from lambda0 at step 0 to 1 at total_steps.
inline double momentum_coefficient(long step, long total_steps, double lambda0) {
    check<ValidationError>(total_steps > 0, "momentum schedule needs total_steps > 0");
    check<ValidationError>(step >= 0 && step <= total_steps,
                           "momentum schedule step " + std::to_string(step) + " outside [0, " +
                               std::to_string(total_steps) + "]");
    check<ValidationError>(lambda0 >= 0.0 && lambda0 <= 1.0, "lambda0 must lie in [0,1]");
    const double x = static_cast<double>(step) / static_cast<double>(total_steps);
    return 1.0 - (1.0 - lambda0) * (std::cos(M_PI * x) + 1.0) / 2.0;
}

// phi := lambda*phi + (1-lambda)*theta over every parameter tensor and every
// running-statistics buffer. Both registries must describe the same structure.
template <typename S>
void ema_update(ParamRegistry<S>& phi, const ParamRegistry<S>& theta, double lambda) {
    check<CheckpointCorruption>(phi.params.size() == theta.params.size() &&
                                    phi.buffers.size() == theta.buffers.size(),
                                "ema: parameter structure mismatch");
    const S lam = static_cast<S>(lambda);
    const S one_m = static_cast<S>(1.0 - lambda);
    for (std::size_t i = 0; i < phi.params.size(); ++i) {
        auto& [pn, pp] = phi.params[i];
        auto& [tn, tp] = theta.params[i];
        check<CheckpointCorruption>(pn == tn && pp->size() == tp->size(),
                                    "ema: tensor mismatch at " + pn + " vs " + tn);
        if (lambda == 1.0) continue;
        for (std::size_t j = 0; j < pp->v.size(); ++j)
            pp->v[j] = lam * pp->v[j] + one_m * tp->v[j];
    }
    for (std::size_t i = 0; i < phi.buffers.size(); ++i) {
        auto& [pn, pb] = phi.buffers[i];
        auto& [tn, tb] = theta.buffers[i];
        check<CheckpointCorruption>(pn == tn && pb->v.size() == tb->v.size(),
                                    "ema: buffer mismatch at " + pn + " vs " + tn);
        if (lambda == 1.0) continue;
        for (std::size_t j = 0; j < pb->v.size(); ++j)
            pb->v[j] = lam * pb->v[j] + one_m * tb->v[j];
    }
}

// Momentum-branch global descriptors for every view; no projector, no
// predictor, no gradient caching anywhere on this path. Returns one TargetSet
// per image; extra-view descriptors are shared by both sides.
template <typename S>
std::vector<TargetSet<S>> extract_targets(Backbone<S>& momentum, const Tensor4<S>& view1,
                                          const Tensor4<S>& view2,
                                          const std::vector<Tensor4<S>>& extra_views,
                                          nn::BnMode mode) {
    check<ValidationError>(momentum.role() == BranchRole::momentum,
                           "extract_targets requires the momentum branch");
    const int batch = view1.n();
    const int dim = momentum.descriptor_dim();
    std::vector<TargetSet<S>> out(batch);

    auto descriptors = [&](const Tensor4<S>& v) {
        StageFeatures<S> f = momentum.forward_stages(v, mode, nullptr);
        return Backbone<S>::global_descriptor(f.c5);
    };

    const std::vector<S> d1 = descriptors(view1);
    const std::vector<S> d2 = descriptors(view2);
    std::vector<std::vector<S>> dex;
    dex.reserve(extra_views.size());
    for (const auto& v : extra_views) dex.push_back(descriptors(v));

    for (int b = 0; b < batch; ++b) {
        auto slice = [&](const std::vector<S>& d) {
            return std::vector<S>(d.begin() + static_cast<std::size_t>(b) * dim,
                                  d.begin() + static_cast<std::size_t>(b + 1) * dim);
        };
        out[b].side1.push_back(slice(d1));
        out[b].side2.push_back(slice(d2));
        for (const auto& d : dex) {
            out[b].side1.push_back(slice(d));
            out[b].side2.push_back(slice(d));
        }
    }
    return out;
}

}  // namespace maskdeep
