#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "maskdeep/nn/blocks.hpp"

namespace maskdeep {

enum class BranchRole { online, momentum };

template <typename S>
struct StageFeatures {
    Tensor4<S> c2, c3, c4, c5;

    const Tensor4<S>& level(int l) const {
        switch (l) {
            case 2: return c2;
            case 3: return c3;
            case 4: return c4;
            case 5: return c5;
        }
        throw ValidationError("stage level must be in {2,3,4,5}, got " + std::to_string(l));
    }
};

template <typename S>
struct BackboneCtx {
    Tensor4<S> stem_relu;  // relu(bn(conv7x7(x)))
    Tensor4<S> pool_out;
    nn::BatchNormCtx<S> stem_bnc;
    nn::MaxPoolCtx<S> poolc;
    std::array<std::array<nn::BasicBlockCtx<S>, 2>, 4> blocks;
};

// Four-stage basic-block residual encoder; stage spatial strides 4/8/16/32
// relative to the input, two blocks per stage.
template <typename S>
class Backbone {
  public:
    static constexpr int kBlocksPerStage = 2;

    Backbone() = default;
    Backbone(const std::array<int, 4>& widths, BranchRole role) : widths_(widths), role_(role) {
        stem_conv_ = nn::Conv2d<S>(3, widths[0], 7, 2, 3);
        stem_bn_ = nn::BatchNorm2d<S>(widths[0]);
        int in_ch = widths[0];
        for (int s = 0; s < 4; ++s) {
            const int stride = s == 0 ? 1 : 2;
            stages_[s][0] = nn::BasicBlock<S>(in_ch, widths[s], stride);
            stages_[s][1] = nn::BasicBlock<S>(widths[s], widths[s], 1);
            in_ch = widths[s];
        }
    }

    BranchRole role() const { return role_; }
    int descriptor_dim() const { return widths_[3]; }
    const std::array<int, 4>& widths() const { return widths_; }

    void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
        stem_conv_.register_params(reg, prefix + "stem.conv");
        stem_bn_.register_params(reg, prefix + "stem.bn");
        for (int s = 0; s < 4; ++s)
            for (int b = 0; b < kBlocksPerStage; ++b)
                stages_[s][b].register_params(reg,
                                              prefix + "s" + std::to_string(s + 2) + ".b" +
                                                  std::to_string(b));
    }

    void init_weights(Rng& rng) {
        stem_conv_.init_weights(rng);
        for (auto& stage : stages_)
            for (auto& blk : stage) blk.init_weights(rng);
    }

    StageFeatures<S> forward_stages(const Tensor4<S>& x, nn::BnMode mode, BackboneCtx<S>* ctx) {
        check<ShapeError>(x.h() % 32 == 0 && x.w() % 32 == 0,
                          "input spatial size must be divisible by 32, got " + x.shape_str());
        check<ShapeError>(x.c() == 3, "expected 3-channel input, got " + x.shape_str());
        ++forward_count_;
        BackboneCtx<S> local;
        BackboneCtx<S>& c = ctx ? *ctx : local;

        Tensor4<S> z, b;
        stem_conv_.forward(x, z);
        stem_bn_.forward(z, b, mode, ctx ? &c.stem_bnc : nullptr);
        nn::relu(b, c.stem_relu);
        nn::MaxPool2d<S>::forward(c.stem_relu, c.pool_out, ctx ? &c.poolc : nullptr);

        StageFeatures<S> f;
        Tensor4<S>* outs[4] = {&f.c2, &f.c3, &f.c4, &f.c5};
        if (ctx) {
            const Tensor4<S>* cur = &c.pool_out;
            for (int s = 0; s < 4; ++s) {
                for (int blk = 0; blk < kBlocksPerStage; ++blk) {
                    stages_[s][blk].forward(*cur, c.blocks[s][blk].out, mode, &c.blocks[s][blk]);
                    cur = &c.blocks[s][blk].out;
                }
                *outs[s] = c.blocks[s][kBlocksPerStage - 1].out;
            }
        } else {
            Tensor4<S> a = std::move(c.pool_out), t;
            for (int s = 0; s < 4; ++s) {
                for (int blk = 0; blk < kBlocksPerStage; ++blk) {
                    stages_[s][blk].forward(a, t, mode, nullptr);
                    std::swap(a, t);
                }
                *outs[s] = a;
            }
        }
        return f;
    }

    // d_stages entries may be empty when a stage receives no gradient.
    void backward(const Tensor4<S>& x, const StageFeatures<S>& d_stages, BackboneCtx<S>& ctx) {
        const Tensor4<S>* dlevels[4] = {&d_stages.c2, &d_stages.c3, &d_stages.c4, &d_stages.c5};
        Tensor4<S> dcur;  // gradient flowing into the output of the current block
        for (int s = 3; s >= 0; --s) {
            if (!dlevels[s]->empty()) {
                if (dcur.empty()) {
                    dcur = *dlevels[s];
                } else {
                    for (std::size_t i = 0; i < dcur.size(); ++i)
                        dcur.data()[i] += dlevels[s]->data()[i];
                }
            }
            if (dcur.empty()) continue;
            for (int blk = kBlocksPerStage - 1; blk >= 0; --blk) {
                const Tensor4<S>& input = blk > 0 ? ctx.blocks[s][blk - 1].out
                                                  : (s > 0 ? ctx.blocks[s - 1][1].out : ctx.pool_out);
                Tensor4<S> dinput;
                stages_[s][blk].backward(input, dcur, ctx.blocks[s][blk], dinput);
                dcur = std::move(dinput);
            }
        }
        if (dcur.empty()) return;
        Tensor4<S> dr, db, dz;
        nn::MaxPool2d<S>::backward(ctx.stem_relu, dcur, ctx.poolc, dr);
        nn::relu_backward(ctx.stem_relu, dr, db);
        stem_bn_.backward(db, ctx.stem_bnc, dz);
        stem_conv_.backward(x, dz, nullptr);
    }

    // Spatial mean over each channel of the final stage; one row per image,
    // row-major [n x c5].
    static std::vector<S> global_descriptor(const Tensor4<S>& c5) {
        check<ShapeError>(!c5.empty(), "global_descriptor on empty feature map");
        std::vector<S> out(static_cast<std::size_t>(c5.n()) * c5.c());
        const std::size_t plane = static_cast<std::size_t>(c5.h()) * c5.w();
        for (int img = 0; img < c5.n(); ++img)
            for (int ch = 0; ch < c5.c(); ++ch) {
                const S* p = c5.plane(img, ch);
                double acc = 0;
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                out[static_cast<std::size_t>(img) * c5.c() + ch] = static_cast<S>(acc / plane);
            }
        return out;
    }

    // dC5 += d_desc / (h*w), broadcast over the spatial plane.
    static void global_descriptor_backward(const std::vector<S>& d_desc, Tensor4<S>& dc5) {
        const std::size_t plane = static_cast<std::size_t>(dc5.h()) * dc5.w();
        const S scale = static_cast<S>(1.0 / static_cast<double>(plane));
        for (int img = 0; img < dc5.n(); ++img)
            for (int ch = 0; ch < dc5.c(); ++ch) {
                S* p = dc5.plane(img, ch);
                const S g = d_desc[static_cast<std::size_t>(img) * dc5.c() + ch] * scale;
                for (std::size_t i = 0; i < plane; ++i) p[i] += g;
            }
    }

    std::uint64_t forward_count() const { return forward_count_; }
    void reset_forward_count() { forward_count_ = 0; }

  private:
    std::array<int, 4> widths_{};
    BranchRole role_ = BranchRole::online;
    nn::Conv2d<S> stem_conv_;
    nn::BatchNorm2d<S> stem_bn_;
    std::array<std::array<nn::BasicBlock<S>, 2>, 4> stages_;
    std::uint64_t forward_count_ = 0;
};

}  // namespace maskdeep
