#pragma once

#include <string>
#include <vector>

#include "maskdeep/hdm.hpp"
#include "maskdeep/nn/layers.hpp"

namespace maskdeep {

template <typename S>
struct PredictorCtx {
    std::vector<S> x;     // concatenated group rows, [rows x in]
    std::vector<S> r;     // relu output, [rows x hidden]
    nn::BatchNorm1dCtx<S> bnc;
    int rows = 0;
};

// concat(h_1..h_k) -> linear -> batchnorm -> relu -> linear. Concatenation
// order is the group's draw order; no permutation invariance is claimed.
template <typename S>
class Predictor {
  public:
    Predictor() = default;
    Predictor(int k, int feat_dim, int hidden, int out_dim)
        : k_(k), feat_(feat_dim), fc1_(k * feat_dim, hidden), bn_(hidden), fc2_(hidden, out_dim) {}

    int in_features() const { return fc1_.in_features(); }
    int hidden_features() const { return fc1_.out_features(); }
    int out_features() const { return fc2_.out_features(); }

    void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
        fc1_.register_params(reg, prefix + "fc1");
        bn_.register_params(reg, prefix + "bn");
        fc2_.register_params(reg, prefix + "fc2");
    }

    void init_weights(Rng& rng) {
        fc1_.init_weights(rng);
        fc2_.init_weights(rng);
    }

    // Flattens groups (outer loop images, inner loop groups) into input rows.
    std::vector<S> concat_rows(const std::vector<const std::vector<PatchGroup<S>>*>& per_image) const {
        std::size_t rows = 0;
        for (auto* groups : per_image) rows += groups->size();
        std::vector<S> x(rows * in_features());
        std::size_t r = 0;
        for (auto* groups : per_image) {
            for (const auto& grp : *groups) {
                check<ShapeError>(static_cast<int>(grp.points.size()) == k_,
                                  "group size " + std::to_string(grp.points.size()) +
                                      " != configured k " + std::to_string(k_));
                S* row = x.data() + r * in_features();
                for (int p = 0; p < k_; ++p) {
                    const auto& f = grp.points[p].feature;
                    check<ShapeError>(static_cast<int>(f.size()) == feat_,
                                      "patch feature dim mismatch");
                    std::copy(f.begin(), f.end(), row + static_cast<std::size_t>(p) * feat_);
                }
                ++r;
            }
        }
        return x;
    }

    // y is [rows x out]; ctx enables backward.
    std::vector<S> predict(const std::vector<S>& x, int rows, nn::BnMode mode,
                           PredictorCtx<S>* ctx) {
        check<ShapeError>(x.size() == static_cast<std::size_t>(rows) * in_features(),
                          "predictor input shape mismatch");
        std::vector<S> h(static_cast<std::size_t>(rows) * hidden_features());
        std::vector<S> b(h.size());
        std::vector<S> y(static_cast<std::size_t>(rows) * out_features());
        fc1_.forward(x.data(), rows, h.data());
        bn_.forward(h.data(), rows, b.data(), mode, ctx ? &ctx->bnc : nullptr);
        for (auto& v : b) v = v > S(0) ? v : S(0);
        fc2_.forward(b.data(), rows, y.data());
        if (ctx) {
            ctx->x = x;
            ctx->r = std::move(b);
            ctx->rows = rows;
        }
        return y;
    }

    // Returns the gradient w.r.t. the concatenated input rows.
    std::vector<S> backward(const std::vector<S>& dy, PredictorCtx<S>& ctx) {
        const int rows = ctx.rows;
        std::vector<S> dr(static_cast<std::size_t>(rows) * hidden_features(), S(0));
        std::vector<S> db(dr.size(), S(0));
        std::vector<S> dh(dr.size(), S(0));
        std::vector<S> dx(static_cast<std::size_t>(rows) * in_features(), S(0));
        fc2_.backward(ctx.r.data(), dy.data(), rows, dr.data());
        for (std::size_t i = 0; i < dr.size(); ++i)
            if (ctx.r[i] > S(0)) db[i] = dr[i];
        bn_.backward(db.data(), rows, ctx.bnc, dh.data());
        fc1_.backward(ctx.x.data(), dh.data(), rows, dx.data());
        return dx;
    }

    int group_size() const { return k_; }
    int feature_dim() const { return feat_; }

    nn::Linear<S>& fc1() { return fc1_; }
    nn::BatchNorm1d<S>& bn() { return bn_; }
    nn::Linear<S>& fc2() { return fc2_; }

  private:
    int k_ = 0, feat_ = 0;
    nn::Linear<S> fc1_;
    nn::BatchNorm1d<S> bn_;
    nn::Linear<S> fc2_;
};

}  // namespace maskdeep
