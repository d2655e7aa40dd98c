#include <doctest.h>

#include "maskdeep/nn/blocks.hpp"

using namespace maskdeep;

namespace {

// shared finite-difference helper for layer-level checks (64-bit)
template <typename LossFn>
double fd_grad(LossFn&& f, double& w, double h = 1e-6) {
    const double w0 = w;
    w = w0 + h;
    const double lp = f();
    w = w0 - h;
    const double lm = f();
    w = w0;
    return (lp - lm) / (2 * h);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
}

Tensor4<double> randn(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
    Tensor4<double> t(n, c, h, w);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_SUITE("core.rng") {
    TEST_CASE("streams are reproducible and substreams differ") {
        Rng a(42), b(42);
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
        Rng s1 = Rng::substream(7, {1, 2, 3});
        Rng s2 = Rng::substream(7, {1, 2, 3});
        Rng s3 = Rng::substream(7, {1, 2, 4});
        CHECK(s1.next_u64() == s2.next_u64());
        CHECK(s1.next_u64() != s3.next_u64());
    }

    TEST_CASE("uniform_int is in range and roughly uniform") {
        Rng rng(9);
        int counts[7] = {0};
        for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_int(7)];
        for (int c : counts) CHECK(std::abs(c - 10000) < 500);
    }

    TEST_CASE("state round trip") {
        Rng a(5);
        a.next_u64();
        auto st = a.state();
        const auto x = a.next_u64();
        Rng b;
        b.set_state(st);
        CHECK(b.next_u64() == x);
    }
}

TEST_SUITE("core.layers") {
    TEST_CASE("conv2d matches a hand conv on a known case") {
        nn::Conv2d<double> conv(1, 1, 3, 1, 1);
        std::fill(conv.w.v.begin(), conv.w.v.end(), 0.0);
        conv.w.v[4] = 2.0;  // center tap: output = 2*input
        Rng rng(3);
        Tensor4<double> x = randn(1, 1, 5, 5, rng);
        Tensor4<double> y;
        conv.forward(x, y);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(y.data()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
    }

    TEST_CASE("conv2d strided gradients match finite differences") {
        Rng rng(11);
        nn::Conv2d<double> conv(2, 3, 3, 2, 1);
        conv.init_weights(rng);
        Tensor4<double> x = randn(2, 2, 6, 6, rng);
        Tensor4<double> y;
        auto loss = [&]() {
            conv.forward(x, y);
            double s = 0;
            for (std::size_t i = 0; i < y.size(); ++i) s += std::sin(0.7 * i) * y.data()[i];
            return s;
        };
        loss();
        Tensor4<double> dy(y.n(), y.c(), y.h(), y.w());
        for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] = std::sin(0.7 * i);
        Tensor4<double> dx;
        conv.backward(x, dy, &dx);
        for (std::size_t j : {std::size_t(0), std::size_t(17), conv.w.size() - 1}) {
            const double fd = fd_grad(loss, conv.w.v[j]);
            CHECK(rel_err(fd, conv.w.g[j]) < 1e-6);
        }
        for (std::size_t j : {std::size_t(1), std::size_t(33), x.size() - 2}) {
            const double fd = fd_grad(loss, x.data()[j]);
            CHECK(rel_err(fd, dx.data()[j]) < 1e-6);
        }
    }

    TEST_CASE("batchnorm2d normalizes and backward matches finite differences") {
        Rng rng(5);
        nn::BatchNorm2d<double> bn(3);
        for (auto& g : bn.gamma.v) g = 0.5 + rng.uniform();
        for (auto& b : bn.beta.v) b = rng.normal() * 0.2;
        Tensor4<double> x = randn(3, 3, 4, 4, rng);
        Tensor4<double> y;
        nn::BatchNormCtx<double> ctx;
        bn.forward(x, y, nn::kBnTarget, &ctx);
        // per-channel mean ~ beta, std ~ gamma
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int n = 0; n < 3; ++n)
                for (int i = 0; i < 16; ++i) s += y.plane(n, c)[i];
            CHECK(s / 48.0 == doctest::Approx(bn.beta.v[c]).epsilon(1e-9));
        }
        auto loss = [&]() {
            Tensor4<double> yy;
            bn.forward(x, yy, nn::kBnTarget, nullptr);
            double s = 0;
            for (std::size_t i = 0; i < yy.size(); ++i) s += std::cos(0.3 * i) * yy.data()[i];
            return s;
        };
        Tensor4<double> dy(3, 3, 4, 4);
        for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] = std::cos(0.3 * i);
        Tensor4<double> dx;
        bn.backward(dy, ctx, dx);
        for (std::size_t j : {std::size_t(0), std::size_t(40), x.size() - 5}) {
            const double fd = fd_grad(loss, x.data()[j]);
            CHECK(rel_err(fd, dx.data()[j]) < 1e-5);
        }
        for (int c = 0; c < 3; ++c) {
            const double fdg = fd_grad(loss, bn.gamma.v[c]);
            CHECK(rel_err(fdg, bn.gamma.g[c]) < 1e-6);
        }
    }

    TEST_CASE("batchnorm running statistics feed eval mode") {
        Rng rng(8);
        nn::BatchNorm2d<double> bn(2);
        Tensor4<double> x = randn(4, 2, 3, 3, rng, 2.0);
        Tensor4<double> y;
        for (int i = 0; i < 200; ++i) bn.forward(x, y, nn::kBnTrain, nullptr);
        Tensor4<double> ye;
        bn.forward(x, ye, nn::kBnEval, nullptr);
        // after convergence of the running stats both modes agree closely
        double mx = 0;
        const double cnt = 4 * 9;
        const double unbias = std::sqrt((cnt - 1) / cnt);
        for (std::size_t i = 0; i < y.size(); ++i)
            mx = std::max(mx, std::abs(y.data()[i] * unbias - ye.data()[i]));
        CHECK(mx < 5e-2);
    }

    TEST_CASE("maxpool picks maxima and routes gradients") {
        Tensor4<double> x(1, 1, 4, 4);
        for (int i = 0; i < 16; ++i) x.data()[i] = i;
        Tensor4<double> y;
        nn::MaxPoolCtx<double> ctx;
        nn::MaxPool2d<double>::forward(x, y, &ctx);
        CHECK(y.h() == 2);
        CHECK(y.at(0, 0, 1, 1) == 15);
        Tensor4<double> dy(1, 1, 2, 2);
        std::fill(dy.data(), dy.data() + 4, 1.0);
        Tensor4<double> dx;
        nn::MaxPool2d<double>::backward(x, dy, ctx, dx);
        CHECK(dx.at(0, 0, 3, 3) == 1.0);
        CHECK(dx.at(0, 0, 0, 0) == 0.0);
    }

    TEST_CASE("linear and batchnorm1d gradients match finite differences") {
        Rng rng(13);
        nn::Linear<double> fc(5, 4);
        fc.init_weights(rng);
        nn::BatchNorm1d<double> bn(4);
        for (auto& g : bn.gamma.v) g = 0.8 + 0.4 * rng.uniform();
        const int rows = 6;
        std::vector<double> x(rows * 5);
        for (auto& v : x) v = rng.normal();
        auto loss = [&]() {
            std::vector<double> h(rows * 4), o(rows * 4);
            fc.forward(x.data(), rows, h.data());
            bn.forward(h.data(), rows, o.data(), nn::kBnTarget, nullptr);
            double s = 0;
            for (std::size_t i = 0; i < o.size(); ++i) s += std::sin(0.31 * i) * o[i];
            return s;
        };
        std::vector<double> h(rows * 4), o(rows * 4);
        fc.forward(x.data(), rows, h.data());
        nn::BatchNorm1dCtx<double> bctx;
        bn.forward(h.data(), rows, o.data(), nn::kBnTarget, &bctx);
        std::vector<double> dout(rows * 4), dh(rows * 4, 0.0), dx(rows * 5, 0.0);
        for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = std::sin(0.31 * i);
        bn.backward(dout.data(), rows, bctx, dh.data());
        fc.backward(x.data(), dh.data(), rows, dx.data());
        for (std::size_t j : {std::size_t(0), std::size_t(9), fc.w.size() - 1}) {
            const double fd = fd_grad(loss, fc.w.v[j]);
            CHECK(rel_err(fd, fc.w.g[j]) < 1e-5);
        }
        for (std::size_t j : {std::size_t(2), x.size() - 1}) {
            const double fd = fd_grad(loss, x[j]);
            CHECK(rel_err(fd, dx[j]) < 1e-5);
        }
    }

    TEST_CASE("residual block gradient flows through both paths") {
        Rng rng(21);
        nn::BasicBlock<double> blk(3, 5, 2);
        blk.init_weights(rng);
        Tensor4<double> x = randn(2, 3, 8, 8, rng, 0.7);
        nn::BasicBlockCtx<double> ctx;
        auto loss = [&]() {
            Tensor4<double> y;
            blk.forward(x, y, nn::kBnTarget, nullptr);
            double s = 0;
            for (std::size_t i = 0; i < y.size(); ++i) s += std::sin(0.11 * i) * y.data()[i];
            return s;
        };
        blk.forward(x, ctx.out, nn::kBnTarget, &ctx);
        Tensor4<double> dy(ctx.out.n(), ctx.out.c(), ctx.out.h(), ctx.out.w());
        for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] = std::sin(0.11 * i);
        Tensor4<double> dx;
        blk.backward(x, dy, ctx, dx);
        for (std::size_t j : {std::size_t(3), std::size_t(101), x.size() - 7}) {
            const double fd = fd_grad(loss, x.data()[j]);
            CHECK(rel_err(fd, dx.data()[j]) < 1e-5);
        }
    }
}
