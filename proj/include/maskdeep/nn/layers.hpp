#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "maskdeep/core/rng.hpp"
#include "maskdeep/core/tensor.hpp"

namespace maskdeep::nn {

// Normalization statistics source for a forward pass. Gradient caching is
// orthogonal: a pass caches iff a context object is supplied.
struct BnMode {
    bool batch_stats = true;
    bool update_running = false;
};
inline constexpr BnMode kBnTrain{true, true};
inline constexpr BnMode kBnTarget{true, false};   // momentum branch default
inline constexpr BnMode kBnEval{false, false};    // running statistics

template <typename S>
struct Conv2dCtx {
    // im2col columns are recomputed in backward; only shapes are kept here.
    int n = 0;
};

template <typename S>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, bool bias = false)
        : in_(in_ch), out_(out_ch), k_(ksize), stride_(stride), pad_(pad), has_bias_(bias) {
        w.init({out_, in_, k_, k_});
        if (has_bias_) b.init({out_});
    }

    void register_params(ParamRegistry<S>& reg, const std::string& name) {
        reg.add(name + ".w", &w);
        if (has_bias_) reg.add(name + ".b", &b);
    }

    void init_weights(Rng& rng) {
        const double fan_in = static_cast<double>(in_) * k_ * k_;
        const double std = std::sqrt(2.0 / fan_in);
        for (auto& x : w.v) x = static_cast<S>(rng.normal() * std);
        if (has_bias_) std::fill(b.v.begin(), b.v.end(), S(0));
    }

    int out_size(int in_size) const { return (in_size + 2 * pad_ - k_) / stride_ + 1; }
    int out_channels() const { return out_; }
    int in_channels() const { return in_; }

    void forward(const Tensor4<S>& x, Tensor4<S>& y) const {
        const int ho = out_size(x.h()), wo = out_size(x.w());
        check<ShapeError>(x.c() == in_, "conv input channels " + std::to_string(x.c()) +
                                            " != " + std::to_string(in_));
        check<ShapeError>(ho >= 1 && wo >= 1, "conv output collapsed for input " + x.shape_str());
        y.resize(x.n(), out_, ho, wo);
        const int kk = in_ * k_ * k_;
        const int hw = ho * wo;
        std::vector<S> col(static_cast<std::size_t>(kk) * hw);
        std::vector<S> tmp(static_cast<std::size_t>(out_) * hw);
        for (int img = 0; img < x.n(); ++img) {
            im2col(x, img, ho, wo, col.data());
            // y_img[out x hw] = w[out x kk] * col[kk x hw], via transposed views
            tview(tmp.data(), out_, hw).noalias() =
                tview(col.data(), kk, hw) * tview(w.v.data(), out_, kk);
            S* dst = y.image(img);
            std::memcpy(dst, tmp.data(), tmp.size() * sizeof(S));
            if (has_bias_) {
                for (int c = 0; c < out_; ++c) {
                    S* p = y.plane(img, c);
                    const S bc = b.v[c];
                    for (int i = 0; i < hw; ++i) p[i] += bc;
                }
            }
        }
    }

    // Accumulates parameter gradients; writes input gradient when dx != nullptr
    // (dx is accumulated into, callers zero it or rely on fresh tensors).
    void backward(const Tensor4<S>& x, const Tensor4<S>& dy, Tensor4<S>* dx) {
        const int ho = dy.h(), wo = dy.w();
        const int kk = in_ * k_ * k_;
        const int hw = ho * wo;
        std::vector<S> col(static_cast<std::size_t>(kk) * hw);
        std::vector<S> dcol(static_cast<std::size_t>(kk) * hw);
        if (dx && dx->empty()) dx->resize(x.n(), x.c(), x.h(), x.w());
        for (int img = 0; img < x.n(); ++img) {
            im2col(x, img, ho, wo, col.data());
            auto col_t = tview(col.data(), kk, hw);           // [hw x kk]
            auto dy_t = tview(dy.image(img), out_, hw);       // [hw x out]
            tview(w.g.data(), out_, kk).noalias() += col_t.transpose() * dy_t;
            if (has_bias_) {
                for (int c = 0; c < out_; ++c) {
                    const S* p = dy.plane(img, c);
                    S acc = 0;
                    for (int i = 0; i < hw; ++i) acc += p[i];
                    b.g[c] += acc;
                }
            }
            if (dx) {
                tview(dcol.data(), kk, hw).noalias() =
                    dy_t * tview(w.v.data(), out_, kk).transpose();
                col2im_add(*dx, img, ho, wo, dcol.data());
            }
        }
    }

    Param<S> w;
    Param<S> b;

  private:
    void im2col(const Tensor4<S>& x, int img, int ho, int wo, S* col) const {
        const int h = x.h(), w_in = x.w();
        for (int c = 0; c < in_; ++c) {
            const S* src = x.plane(img, c);
            for (int ki = 0; ki < k_; ++ki) {
                for (int kj = 0; kj < k_; ++kj) {
                    S* dst = col + (static_cast<std::size_t>(c) * k_ * k_ + ki * k_ + kj) *
                                       (static_cast<std::size_t>(ho) * wo);
                    for (int y = 0; y < ho; ++y) {
                        const int iy = y * stride_ - pad_ + ki;
                        S* drow = dst + static_cast<std::size_t>(y) * wo;
                        if (iy < 0 || iy >= h) {
                            std::fill(drow, drow + wo, S(0));
                            continue;
                        }
                        const S* srow = src + static_cast<std::size_t>(iy) * w_in;
                        if (stride_ == 1) {
                            const int x0 = std::max(0, pad_ - kj);
                            const int x1 = std::min(wo, w_in + pad_ - kj);
                            if (x0 > 0) std::fill(drow, drow + x0, S(0));
                            if (x1 < wo) std::fill(drow + std::max(x0, x1), drow + wo, S(0));
                            if (x1 > x0)
                                std::memcpy(drow + x0, srow + (x0 - pad_ + kj),
                                            static_cast<std::size_t>(x1 - x0) * sizeof(S));
                        } else {
                            for (int xo = 0; xo < wo; ++xo) {
                                const int ix = xo * stride_ - pad_ + kj;
                                drow[xo] = (ix >= 0 && ix < w_in) ? srow[ix] : S(0);
                            }
                        }
                    }
                }
            }
        }
    }

    void col2im_add(Tensor4<S>& dx, int img, int ho, int wo, const S* dcol) const {
        const int h = dx.h(), w_in = dx.w();
        for (int c = 0; c < in_; ++c) {
            S* dst = dx.plane(img, c);
            for (int ki = 0; ki < k_; ++ki) {
                for (int kj = 0; kj < k_; ++kj) {
                    const S* src = dcol + (static_cast<std::size_t>(c) * k_ * k_ + ki * k_ + kj) *
                                              (static_cast<std::size_t>(ho) * wo);
                    for (int y = 0; y < ho; ++y) {
                        const int iy = y * stride_ - pad_ + ki;
                        if (iy < 0 || iy >= h) continue;
                        S* drow = dst + static_cast<std::size_t>(iy) * w_in;
                        const S* srow = src + static_cast<std::size_t>(y) * wo;
                        for (int xo = 0; xo < wo; ++xo) {
                            const int ix = xo * stride_ - pad_ + kj;
                            if (ix >= 0 && ix < w_in) drow[ix] += srow[xo];
                        }
                    }
                }
            }
        }
    }

    int in_ = 0, out_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    bool has_bias_ = false;
};

template <typename S>
struct BatchNormCtx {
    Tensor4<S> xhat;
    std::vector<S> inv_std;
    bool batch_stats = true;  // stats source of the pass that filled this ctx
};

template <typename S>
class BatchNorm2d {
  public:
    static constexpr double kEps = 1e-5;
    static constexpr double kStatMomentum = 0.9;  // fraction of old running stats kept

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels) : c_(channels) {
        gamma.init({c_});
        beta.init({c_});
        std::fill(gamma.v.begin(), gamma.v.end(), S(1));
        running_mean.init(c_, S(0));
        running_var.init(c_, S(1));
    }

    void register_params(ParamRegistry<S>& reg, const std::string& name) {
        reg.add(name + ".gamma", &gamma);
        reg.add(name + ".beta", &beta);
        reg.add_buffer(name + ".running_mean", &running_mean);
        reg.add_buffer(name + ".running_var", &running_var);
    }

    void forward(const Tensor4<S>& x, Tensor4<S>& y, BnMode mode, BatchNormCtx<S>* ctx) {
        check<ShapeError>(x.c() == c_, "batchnorm channels mismatch");
        y.resize(x.n(), x.c(), x.h(), x.w());
        const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
        const double cnt = static_cast<double>(x.n()) * plane;
        if (ctx) {
            ctx->xhat.resize(x.n(), x.c(), x.h(), x.w());
            ctx->inv_std.assign(c_, S(0));
            ctx->batch_stats = mode.batch_stats;
        }
        for (int c = 0; c < c_; ++c) {
            double mean, var;
            if (mode.batch_stats) {
                double s = 0, s2 = 0;
                for (int img = 0; img < x.n(); ++img) {
                    const S* p = x.plane(img, c);
                    for (std::size_t i = 0; i < plane; ++i) {
                        s += p[i];
                        s2 += static_cast<double>(p[i]) * p[i];
                    }
                }
                mean = s / cnt;
                var = std::max(0.0, s2 / cnt - mean * mean);
                if (mode.update_running) {
                    const double unbiased = cnt > 1 ? var * cnt / (cnt - 1) : var;
                    running_mean.v[c] =
                        static_cast<S>(kStatMomentum * running_mean.v[c] + (1 - kStatMomentum) * mean);
                    running_var.v[c] =
                        static_cast<S>(kStatMomentum * running_var.v[c] + (1 - kStatMomentum) * unbiased);
                }
            } else {
                mean = running_mean.v[c];
                var = running_var.v[c];
            }
            const S inv = static_cast<S>(1.0 / std::sqrt(var + kEps));
            const S g = gamma.v[c], bt = beta.v[c], m = static_cast<S>(mean);
            if (ctx) ctx->inv_std[c] = inv;
            for (int img = 0; img < x.n(); ++img) {
                const S* px = x.plane(img, c);
                S* py = y.plane(img, c);
                S* ph = ctx ? ctx->xhat.plane(img, c) : nullptr;
                for (std::size_t i = 0; i < plane; ++i) {
                    const S xh = (px[i] - m) * inv;
                    if (ph) ph[i] = xh;
                    py[i] = g * xh + bt;
                }
            }
        }
    }

    void backward(const Tensor4<S>& dy, const BatchNormCtx<S>& ctx, Tensor4<S>& dx) {
        if (dx.empty()) dx.resize(dy.n(), dy.c(), dy.h(), dy.w());
        const std::size_t plane = static_cast<std::size_t>(dy.h()) * dy.w();
        const double cnt = static_cast<double>(dy.n()) * plane;
        if (!ctx.batch_stats) {
            // running statistics are constants; only the affine map is live
            for (int c = 0; c < c_; ++c) {
                double sum_dy = 0, sum_dy_xh = 0;
                const S g_inv = gamma.v[c] * ctx.inv_std[c];
                for (int img = 0; img < dy.n(); ++img) {
                    const S* pdy = dy.plane(img, c);
                    const S* ph = ctx.xhat.plane(img, c);
                    S* pdx = dx.plane(img, c);
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy += pdy[i];
                        sum_dy_xh += static_cast<double>(pdy[i]) * ph[i];
                        pdx[i] += g_inv * pdy[i];
                    }
                }
                gamma.g[c] += static_cast<S>(sum_dy_xh);
                beta.g[c] += static_cast<S>(sum_dy);
            }
            return;
        }
        for (int c = 0; c < c_; ++c) {
            double sum_dy = 0, sum_dy_xh = 0;
            for (int img = 0; img < dy.n(); ++img) {
                const S* pdy = dy.plane(img, c);
                const S* ph = ctx.xhat.plane(img, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_dy += pdy[i];
                    sum_dy_xh += static_cast<double>(pdy[i]) * ph[i];
                }
            }
            gamma.g[c] += static_cast<S>(sum_dy_xh);
            beta.g[c] += static_cast<S>(sum_dy);
            const double g_inv_n = gamma.v[c] * ctx.inv_std[c] / cnt;
            for (int img = 0; img < dy.n(); ++img) {
                const S* pdy = dy.plane(img, c);
                const S* ph = ctx.xhat.plane(img, c);
                S* pdx = dx.plane(img, c);
                for (std::size_t i = 0; i < plane; ++i)
                    pdx[i] += static_cast<S>(g_inv_n * (cnt * pdy[i] - sum_dy - ph[i] * sum_dy_xh));
            }
        }
    }

    Param<S> gamma, beta;
    Buffer<S> running_mean, running_var;

  private:
    int c_ = 0;
};

template <typename S>
inline void relu(const Tensor4<S>& x, Tensor4<S>& y) {
    y.resize(x.n(), x.c(), x.h(), x.w());
    for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
}

// dx += dy masked by the forward output (y > 0).
template <typename S>
inline void relu_backward(const Tensor4<S>& y, const Tensor4<S>& dy, Tensor4<S>& dx) {
    if (dx.empty()) dx.resize(y.n(), y.c(), y.h(), y.w());
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y.data()[i] > S(0)) dx.data()[i] += dy.data()[i];
}

template <typename S>
struct MaxPoolCtx {
    std::vector<int> argmax;  // input plane linear index per output element
};

// 3x3 stride-2 pad-1 max pooling (stem pooling); ties resolve to the first
// maximum in scan order.
template <typename S>
class MaxPool2d {
  public:
    static void forward(const Tensor4<S>& x, Tensor4<S>& y, MaxPoolCtx<S>* ctx) {
        const int ho = (x.h() + 2 - 3) / 2 + 1, wo = (x.w() + 2 - 3) / 2 + 1;
        y.resize(x.n(), x.c(), ho, wo);
        if (ctx) ctx->argmax.assign(y.size(), -1);
        std::size_t oi = 0;
        for (int img = 0; img < x.n(); ++img) {
            for (int c = 0; c < x.c(); ++c) {
                const S* src = x.plane(img, c);
                S* dst = y.plane(img, c);
                for (int yo = 0; yo < ho; ++yo) {
                    for (int xo = 0; xo < wo; ++xo, ++oi) {
                        S best = std::numeric_limits<S>::lowest();
                        int best_idx = -1;
                        for (int ki = 0; ki < 3; ++ki) {
                            const int iy = yo * 2 - 1 + ki;
                            if (iy < 0 || iy >= x.h()) continue;
                            for (int kj = 0; kj < 3; ++kj) {
                                const int ix = xo * 2 - 1 + kj;
                                if (ix < 0 || ix >= x.w()) continue;
                                const S v = src[iy * x.w() + ix];
                                if (v > best) {
                                    best = v;
                                    best_idx = iy * x.w() + ix;
                                }
                            }
                        }
                        dst[yo * wo + xo] = best;
                        if (ctx) ctx->argmax[oi] = best_idx;
                    }
                }
            }
        }
    }

    static void backward(const Tensor4<S>& x, const Tensor4<S>& dy, const MaxPoolCtx<S>& ctx,
                         Tensor4<S>& dx) {
        if (dx.empty()) dx.resize(x.n(), x.c(), x.h(), x.w());
        std::size_t oi = 0;
        const std::size_t plane = static_cast<std::size_t>(dy.h()) * dy.w();
        for (int img = 0; img < x.n(); ++img)
            for (int c = 0; c < x.c(); ++c) {
                S* pdx = dx.plane(img, c);
                const S* pdy = dy.plane(img, c);
                for (std::size_t i = 0; i < plane; ++i, ++oi) pdx[ctx.argmax[oi]] += pdy[i];
            }
    }
};

// Fully connected layer over row-major [rows x features] matrices.
template <typename S>
class Linear {
  public:
    Linear() = default;
    Linear(int in_f, int out_f) : in_(in_f), out_(out_f) {
        w.init({out_, in_});
        b.init({out_});
    }

    void register_params(ParamRegistry<S>& reg, const std::string& name) {
        reg.add(name + ".w", &w);
        reg.add(name + ".b", &b);
    }

    void init_weights(Rng& rng) {
        const double std = std::sqrt(2.0 / in_);
        for (auto& x : w.v) x = static_cast<S>(rng.normal() * std);
        std::fill(b.v.begin(), b.v.end(), S(0));
    }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    void forward(const S* x, int rows, S* y) const {
        auto xt = tview(x, rows, in_);                    // [in x rows]
        auto yt = tview(y, rows, out_);                   // [out x rows]
        yt.noalias() = tview(w.v.data(), out_, in_).transpose() * xt;
        yt.colwise() += ConstVecMap<S>(b.v.data(), out_);
    }

    void backward(const S* x, const S* dy, int rows, S* dx) {
        auto xt = tview(x, rows, in_);
        auto dyt = tview(dy, rows, out_);
        tview(w.g.data(), out_, in_).noalias() += xt * dyt.transpose();
        for (int o = 0; o < out_; ++o) {
            S acc = 0;
            for (int r = 0; r < rows; ++r) acc += dy[static_cast<std::size_t>(r) * out_ + o];
            b.g[o] += acc;
        }
        if (dx) tview(dx, rows, in_).noalias() += tview(w.v.data(), out_, in_) * dyt;
    }

    Param<S> w, b;

  private:
    int in_ = 0, out_ = 0;
};

template <typename S>
struct BatchNorm1dCtx {
    std::vector<S> xhat;
    std::vector<S> inv_std;
    bool batch_stats = true;
};

template <typename S>
class BatchNorm1d {
  public:
    static constexpr double kEps = 1e-5;
    static constexpr double kStatMomentum = 0.9;

    BatchNorm1d() = default;
    explicit BatchNorm1d(int features) : f_(features) {
        gamma.init({f_});
        beta.init({f_});
        std::fill(gamma.v.begin(), gamma.v.end(), S(1));
        running_mean.init(f_, S(0));
        running_var.init(f_, S(1));
    }

    void register_params(ParamRegistry<S>& reg, const std::string& name) {
        reg.add(name + ".gamma", &gamma);
        reg.add(name + ".beta", &beta);
        reg.add_buffer(name + ".running_mean", &running_mean);
        reg.add_buffer(name + ".running_var", &running_var);
    }

    void forward(const S* x, int rows, S* y, BnMode mode, BatchNorm1dCtx<S>* ctx) {
        if (ctx) {
            ctx->xhat.assign(static_cast<std::size_t>(rows) * f_, S(0));
            ctx->inv_std.assign(f_, S(0));
            ctx->batch_stats = mode.batch_stats;
        }
        for (int j = 0; j < f_; ++j) {
            double mean, var;
            if (mode.batch_stats) {
                double s = 0, s2 = 0;
                for (int r = 0; r < rows; ++r) {
                    const double v = x[static_cast<std::size_t>(r) * f_ + j];
                    s += v;
                    s2 += v * v;
                }
                mean = s / rows;
                var = std::max(0.0, s2 / rows - mean * mean);
                if (mode.update_running) {
                    const double unbiased = rows > 1 ? var * rows / (rows - 1.0) : var;
                    running_mean.v[j] =
                        static_cast<S>(kStatMomentum * running_mean.v[j] + (1 - kStatMomentum) * mean);
                    running_var.v[j] =
                        static_cast<S>(kStatMomentum * running_var.v[j] + (1 - kStatMomentum) * unbiased);
                }
            } else {
                mean = running_mean.v[j];
                var = running_var.v[j];
            }
            const S inv = static_cast<S>(1.0 / std::sqrt(var + kEps));
            if (ctx) ctx->inv_std[j] = inv;
            const S g = gamma.v[j], bt = beta.v[j], m = static_cast<S>(mean);
            for (int r = 0; r < rows; ++r) {
                const std::size_t i = static_cast<std::size_t>(r) * f_ + j;
                const S xh = (x[i] - m) * inv;
                if (ctx) ctx->xhat[i] = xh;
                y[i] = g * xh + bt;
            }
        }
    }

    void backward(const S* dy, int rows, const BatchNorm1dCtx<S>& ctx, S* dx) {
        for (int j = 0; j < f_; ++j) {
            double sum_dy = 0, sum_dy_xh = 0;
            for (int r = 0; r < rows; ++r) {
                const std::size_t i = static_cast<std::size_t>(r) * f_ + j;
                sum_dy += dy[i];
                sum_dy_xh += static_cast<double>(dy[i]) * ctx.xhat[i];
            }
            gamma.g[j] += static_cast<S>(sum_dy_xh);
            beta.g[j] += static_cast<S>(sum_dy);
            if (!ctx.batch_stats) {
                const S g_inv = gamma.v[j] * ctx.inv_std[j];
                for (int r = 0; r < rows; ++r) {
                    const std::size_t i = static_cast<std::size_t>(r) * f_ + j;
                    dx[i] += g_inv * dy[i];
                }
                continue;
            }
            const double g_inv_n = gamma.v[j] * ctx.inv_std[j] / rows;
            for (int r = 0; r < rows; ++r) {
                const std::size_t i = static_cast<std::size_t>(r) * f_ + j;
                dx[i] += static_cast<S>(g_inv_n * (rows * dy[i] - sum_dy - ctx.xhat[i] * sum_dy_xh));
            }
        }
    }

    Param<S> gamma, beta;
    Buffer<S> running_mean, running_var;

  private:
    int f_ = 0;
};

}  // namespace maskdeep::nn
