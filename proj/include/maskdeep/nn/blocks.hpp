#pragma once

#include <string>

#include "maskdeep/nn/layers.hpp"

namespace maskdeep::nn {

template <typename S>
struct BasicBlockCtx {
    Tensor4<S> r1;   // relu(bn1(conv1(x)))
    Tensor4<S> out;  // block output, doubles as the final relu mask
    BatchNormCtx<S> bn1c, bn2c, bndc;
};

// Two-conv residual block with identity or 1x1 projection skip.
template <typename S>
class BasicBlock {
  public:
    BasicBlock() = default;
    BasicBlock(int in_ch, int out_ch, int stride)
        : conv1_(in_ch, out_ch, 3, stride, 1),
          bn1_(out_ch),
          conv2_(out_ch, out_ch, 3, 1, 1),
          bn2_(out_ch),
          has_down_(stride != 1 || in_ch != out_ch) {
        if (has_down_) {
            convd_ = Conv2d<S>(in_ch, out_ch, 1, stride, 0);
            bnd_ = BatchNorm2d<S>(out_ch);
        }
    }

    void register_params(ParamRegistry<S>& reg, const std::string& name) {
        conv1_.register_params(reg, name + ".conv1");
        bn1_.register_params(reg, name + ".bn1");
        conv2_.register_params(reg, name + ".conv2");
        bn2_.register_params(reg, name + ".bn2");
        if (has_down_) {
            convd_.register_params(reg, name + ".down.conv");
            bnd_.register_params(reg, name + ".down.bn");
        }
    }

    void init_weights(Rng& rng) {
        conv1_.init_weights(rng);
        conv2_.init_weights(rng);
        if (has_down_) convd_.init_weights(rng);
    }

    // Tracked calls must pass y == ctx->out; backward reads the output (and its
    // relu mask) from the context.
    void forward(const Tensor4<S>& x, Tensor4<S>& y, BnMode mode, BasicBlockCtx<S>* ctx) {
        Tensor4<S> z1, b1, z2, b2, zd, skip;
        conv1_.forward(x, z1);
        bn1_.forward(z1, b1, mode, ctx ? &ctx->bn1c : nullptr);
        Tensor4<S>& r1 = ctx ? ctx->r1 : b1;  // reuse b1 storage when untracked
        if (ctx)
            relu(b1, ctx->r1);
        else
            for (std::size_t i = 0; i < b1.size(); ++i)
                if (b1.data()[i] < S(0)) b1.data()[i] = S(0);
        conv2_.forward(r1, z2);
        bn2_.forward(z2, b2, mode, ctx ? &ctx->bn2c : nullptr);
        if (has_down_) {
            convd_.forward(x, zd);
            bnd_.forward(zd, skip, mode, ctx ? &ctx->bndc : nullptr);
        }
        const Tensor4<S>& sk = has_down_ ? skip : x;
        y.resize(b2.n(), b2.c(), b2.h(), b2.w());
        for (std::size_t i = 0; i < b2.size(); ++i) {
            const S v = b2.data()[i] + sk.data()[i];
            y.data()[i] = v > S(0) ? v : S(0);
        }
    }

    // dx accumulates the gradient w.r.t. x.
    void backward(const Tensor4<S>& x, const Tensor4<S>& dy, BasicBlockCtx<S>& ctx,
                  Tensor4<S>& dx) {
        Tensor4<S> dpre, dz2, dr1, db1, dz1;
        relu_backward(ctx.out, dy, dpre);
        bn2_.backward(dpre, ctx.bn2c, dz2);
        conv2_.backward(ctx.r1, dz2, &dr1);
        relu_backward(ctx.r1, dr1, db1);
        bn1_.backward(db1, ctx.bn1c, dz1);
        conv1_.backward(x, dz1, &dx);
        if (has_down_) {
            Tensor4<S> dzd;
            bnd_.backward(dpre, ctx.bndc, dzd);
            convd_.backward(x, dzd, &dx);
        } else {
            if (dx.empty()) dx.resize(x.n(), x.c(), x.h(), x.w());
            for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dpre.data()[i];
        }
    }

  private:
    Conv2d<S> conv1_;
    BatchNorm2d<S> bn1_;
    Conv2d<S> conv2_;
    BatchNorm2d<S> bn2_;
    Conv2d<S> convd_;
    BatchNorm2d<S> bnd_;
    bool has_down_ = false;
};

}  // namespace maskdeep::nn
