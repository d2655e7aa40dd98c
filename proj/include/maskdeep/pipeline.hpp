#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "maskdeep/objective.hpp"
#include "maskdeep/predictor.hpp"

namespace maskdeep {

// Everything the models need to be built; decoupled from file-level Config.
struct ModelSpec {
    std::array<int, 4> widths{16, 32, 64, 128};
    std::vector<int> levels{3, 4, 5};
    int hdm_dim = 64;
    bool fpn_smooth = true;
    bool naive = false;  // hierarchical flag off: C5-only sampling
    int patch_count = 12;
    int group_count = 16;
    int extra_targets = 4;
    int pred_hidden = 512;
    int pred_out = 128;
    bool momentum_bn_batch_stats = true;
};

// The gradient-trained branch: backbone + pyramid fusion + predictor.
// Non-copyable; registries hold pointers into the layers.
template <typename S>
class OnlineModel {
  public:
    explicit OnlineModel(const ModelSpec& spec)
        : spec_(spec), backbone(spec.widths, BranchRole::online) {
        if (!spec.naive)
            fpn.emplace(spec.levels, spec.widths, spec.hdm_dim, spec.fpn_smooth);
        const int feat = spec.naive ? spec.widths[3] : spec.hdm_dim;
        predictor = Predictor<S>(spec.patch_count, feat, spec.pred_hidden, spec.pred_out);
        backbone.register_params(backbone_reg, "backbone.");
        reg.absorb("", backbone_reg);
        if (fpn) fpn->register_params(reg, "fpn.");
        predictor.register_params(reg, "pred.");
    }

    OnlineModel(const OnlineModel&) = delete;
    OnlineModel& operator=(const OnlineModel&) = delete;

    void init_weights(std::uint64_t seed) {
        Rng rng = Rng::substream(seed, {rngtag::kInit});
        backbone.init_weights(rng);
        if (fpn) fpn->init_weights(rng);
        predictor.init_weights(rng);
    }

    const ModelSpec& spec() const { return spec_; }

    ModelSpec spec_;
    Backbone<S> backbone;
    std::optional<Fpn<S>> fpn;
    Predictor<S> predictor;
    ParamRegistry<S> reg;           // full online parameter set (theta)
    ParamRegistry<S> backbone_reg;  // backbone slice, pairs with the momentum branch
};

template <typename S>
class MomentumModel {
  public:
    explicit MomentumModel(const ModelSpec& spec) : backbone(spec.widths, BranchRole::momentum) {
        backbone.register_params(reg, "backbone.");
    }

    MomentumModel(const MomentumModel&) = delete;
    MomentumModel& operator=(const MomentumModel&) = delete;

    Backbone<S> backbone;
    ParamRegistry<S> reg;  // phi; never registered with any optimizer
};

// dst := src, parameters and buffers; structural identity enforced.
template <typename S>
void clone_params(ParamRegistry<S>& dst, const ParamRegistry<S>& src) {
    check<CheckpointCorruption>(dst.params.size() == src.params.size() &&
                                    dst.buffers.size() == src.buffers.size(),
                                "clone: structure mismatch");
    for (std::size_t i = 0; i < dst.params.size(); ++i) {
        check<CheckpointCorruption>(dst.params[i].first == src.params[i].first &&
                                        dst.params[i].second->size() ==
                                            src.params[i].second->size(),
                                    "clone: tensor mismatch at " + dst.params[i].first);
        dst.params[i].second->v = src.params[i].second->v;
    }
    for (std::size_t i = 0; i < dst.buffers.size(); ++i)
        dst.buffers[i].second->v = src.buffers[i].second->v;
}

// Frozen sampling decisions for one batch; lets finite-difference loops and
// repeated evaluations see the identical gather pattern.
struct BatchDraws {
    std::vector<ImageDraws> view1, view2;  // [batch][K][k]
    bool filled = false;
};

template <typename S>
struct PipelineOptions {
    bool backward = true;
    bool update_running = true;
    LossReduction reduction = LossReduction::mean;
    CosineMode cosine = kCosineTrain;
    bool momentum_bn_batch_stats = true;
    double loss_scale = 1.0;  // scales gradients only, not the reported loss
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    BatchDraws* draws = nullptr;  // in/out; filled on first use when supplied
    const std::vector<TargetSet<S>>* targets_in = nullptr;
    std::map<int, Tensor4<S>>* capture_dpyr_v1 = nullptr;  // viz hook
};

template <typename S>
struct StepOutcome {
    double loss = 0;  // batch mean of per-image totals
    std::vector<LossBreakdown> per_image;
    std::vector<TargetSet<S>> targets;
};

namespace detail {

template <typename S>
std::vector<std::vector<PatchGroup<S>>> draw_or_gather(
    const OnlineModel<S>& model, const FeaturePyramid<S>* pyr, const Tensor4<S>* c5, int batch,
    int view_tag, const PipelineOptions<S>& opts, std::vector<ImageDraws>* frozen) {
    const ModelSpec& spec = model.spec();
    std::vector<std::vector<PatchGroup<S>>> out(batch);
    const bool replay = frozen && opts.draws && opts.draws->filled;
    for (int b = 0; b < batch; ++b) {
        if (replay) {
            out[b] = spec.naive ? gather_groups_c5(*c5, b, (*frozen)[b])
                                : gather_groups(*pyr, b, (*frozen)[b]);
            continue;
        }
        Rng rng = Rng::substream(opts.seed, {rngtag::kGroups, opts.step,
                                             static_cast<std::uint64_t>(b),
                                             static_cast<std::uint64_t>(view_tag)});
        if (spec.naive) {
            out[b] = naive_pool(*c5, b, spec.patch_count, spec.group_count, rng);
        } else {
            VisiblePool<S> pool = sample_visible(*pyr, b, spec.patch_count, rng);
            out[b] = assemble_groups(pool, spec.patch_count, spec.group_count, rng);
        }
        if (frozen) {
            (*frozen)[b].clear();
            for (const auto& grp : out[b]) (*frozen)[b].push_back(grp.draw());
        }
    }
    return out;
}

}  // namespace detail

// One training step's loss (and gradients) for a batch of view sets. The
// stages run in the fixed order: online forwards, sampling, prediction,
// target extraction, loss, backward.
template <typename S>
StepOutcome<S> pipeline_step(OnlineModel<S>& online, MomentumModel<S>& momentum,
                             const Tensor4<S>& view1, const Tensor4<S>& view2,
                             const std::vector<Tensor4<S>>& extras, PipelineOptions<S>& opts) {
    const ModelSpec& spec = online.spec();
    const int batch = view1.n();
    const int K = spec.group_count;
    const int out_dim = online.predictor.out_features();
    check<ValidationError>(batch >= 1, "pipeline_step on empty batch");

    const nn::BnMode online_bn{true, opts.update_running};
    const bool track = opts.backward;

    // (1) online forwards
    auto ctx1 = track ? std::make_unique<BackboneCtx<S>>() : nullptr;
    auto ctx2 = track ? std::make_unique<BackboneCtx<S>>() : nullptr;
    StageFeatures<S> st1 = online.backbone.forward_stages(view1, online_bn, ctx1.get());
    StageFeatures<S> st2 = online.backbone.forward_stages(view2, online_bn, ctx2.get());

    FpnCtx<S> fctx1, fctx2;
    FeaturePyramid<S> pyr1, pyr2;
    if (!spec.naive) {
        pyr1 = online.fpn->fpn_forward(st1, track ? &fctx1 : nullptr);
        pyr2 = online.fpn->fpn_forward(st2, track ? &fctx2 : nullptr);
    }

    // (2) per-view sampling
    if (opts.draws) {
        opts.draws->view1.resize(batch);
        opts.draws->view2.resize(batch);
    }
    auto groups1 = detail::draw_or_gather(online, &pyr1, &st1.c5, batch, 1, opts,
                                          opts.draws ? &opts.draws->view1 : nullptr);
    auto groups2 = detail::draw_or_gather(online, &pyr2, &st2.c5, batch, 2, opts,
                                          opts.draws ? &opts.draws->view2 : nullptr);
    if (opts.draws) opts.draws->filled = true;

    // (3) prediction over all batch*K joint rows, one call per view
    std::vector<const std::vector<PatchGroup<S>>*> ptr1, ptr2;
    for (int b = 0; b < batch; ++b) {
        ptr1.push_back(&groups1[b]);
        ptr2.push_back(&groups2[b]);
    }
    const int rows = batch * K;
    PredictorCtx<S> pctx1, pctx2;
    std::vector<S> x1 = online.predictor.concat_rows(ptr1);
    std::vector<S> x2 = online.predictor.concat_rows(ptr2);
    std::vector<S> p1 =
        online.predictor.predict(x1, rows, online_bn, track ? &pctx1 : nullptr);
    std::vector<S> p2 =
        online.predictor.predict(x2, rows, online_bn, track ? &pctx2 : nullptr);

    // (4) detached targets
    StepOutcome<S> out;
    if (opts.targets_in) {
        out.targets = *opts.targets_in;
    } else {
        const nn::BnMode mom_bn{opts.momentum_bn_batch_stats, false};
        out.targets = extract_targets(momentum.backbone, view1, view2, extras, mom_bn);
    }

    // (5) loss per image, batch mean
    std::vector<S> dp1, dp2;
    if (track) {
        dp1.assign(p1.size(), S(0));
        dp2.assign(p2.size(), S(0));
    }
    double total = 0;
    for (int b = 0; b < batch; ++b) {
        const S* r1 = p1.data() + static_cast<std::size_t>(b) * K * out_dim;
        const S* r2 = p2.data() + static_cast<std::size_t>(b) * K * out_dim;
        LossBreakdown lb =
            maskdeep_loss(r1, r2, K, out_dim, out.targets[b], opts.reduction, opts.cosine);
        total += lb.total;
        if (track) {
            maskdeep_loss_backward(r1, r2, K, out_dim, out.targets[b], opts.reduction,
                                   opts.cosine, opts.loss_scale / batch,
                                   dp1.data() + static_cast<std::size_t>(b) * K * out_dim,
                                   dp2.data() + static_cast<std::size_t>(b) * K * out_dim);
        }
        out.per_image.push_back(std::move(lb));
    }
    out.loss = total / batch;
    if (!track) return out;

    // (6) backward through the online branch only
    const int feat = online.predictor.feature_dim();
    const int k = spec.patch_count;
    auto backward_view = [&](std::vector<S>& dp, PredictorCtx<S>& pctx,
                             std::vector<std::vector<PatchGroup<S>>>& groups,
                             FeaturePyramid<S>& pyr, FpnCtx<S>& fctx, StageFeatures<S>& st,
                             BackboneCtx<S>& bctx, const Tensor4<S>& input, bool capture) {
        std::vector<S> dx = online.predictor.backward(dp, pctx);
        StageFeatures<S> dstages;
        if (spec.naive) {
            Tensor4<S>& dc5 = dstages.c5;
            dc5.resize(st.c5.n(), st.c5.c(), st.c5.h(), st.c5.w());
            for (int b = 0; b < batch; ++b)
                for (int g = 0; g < K; ++g) {
                    const S* row = dx.data() + (static_cast<std::size_t>(b) * K + g) * k * feat;
                    for (int p = 0; p < k; ++p) {
                        const PointAt& at = groups[b][g].points[p].at;
                        for (int c = 0; c < feat; ++c)
                            dc5.at(b, c, at.row, at.col) += row[static_cast<std::size_t>(p) * feat + c];
                    }
                }
        } else {
            FeaturePyramid<S> dpyr;
            dpyr.level_ids = pyr.level_ids;
            for (int l : pyr.level_ids) {
                const Tensor4<S>& t = pyr.at(l);
                dpyr.maps[l].resize(t.n(), t.c(), t.h(), t.w());
            }
            for (int b = 0; b < batch; ++b)
                for (int g = 0; g < K; ++g) {
                    const S* row = dx.data() + (static_cast<std::size_t>(b) * K + g) * k * feat;
                    for (int p = 0; p < k; ++p) {
                        const PointAt& at = groups[b][g].points[p].at;
                        Tensor4<S>& dl = dpyr.at(at.level);
                        for (int c = 0; c < feat; ++c)
                            dl.at(b, c, at.row, at.col) += row[static_cast<std::size_t>(p) * feat + c];
                    }
                }
            if (capture && opts.capture_dpyr_v1) {
                for (int l : dpyr.level_ids) (*opts.capture_dpyr_v1)[l] = dpyr.at(l);
            }
            online.fpn->backward(st, dpyr, fctx, dstages);
        }
        online.backbone.backward(input, dstages, bctx);
    };
    backward_view(dp1, pctx1, groups1, pyr1, fctx1, st1, *ctx1, view1, true);
    backward_view(dp2, pctx2, groups2, pyr2, fctx2, st2, *ctx2, view2, false);
    return out;
}

}  // namespace maskdeep
