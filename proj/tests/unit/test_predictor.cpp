#include <doctest.h>

#include "maskdeep/predictor.hpp"

using namespace maskdeep;

namespace {

std::vector<PatchGroup<double>> fixed_groups(int K, int k, int feat, Rng& rng) {
    std::vector<PatchGroup<double>> groups(K);
    for (int g = 0; g < K; ++g) {
        groups[g].index = g + 1;
        for (int p = 0; p < k; ++p) {
            PatchPoint<double> pt;
            pt.at = {3, p, g};
            pt.feature.resize(feat);
            for (auto& v : pt.feature) v = rng.normal();
            groups[g].points.push_back(std::move(pt));
        }
    }
    return groups;
}

}  // namespace

TEST_SUITE("predictor") {
    TEST_CASE("dimension contract 12*64 -> 512 -> 128") {
        Predictor<float> pred(12, 64, 512, 128);
        CHECK(pred.in_features() == 768);
        CHECK(pred.hidden_features() == 512);
        CHECK(pred.out_features() == 128);
        Rng rng(1);
        pred.init_weights(rng);
        std::vector<float> x(2 * 768);
        for (auto& v : x) v = static_cast<float>(rng.normal());
        auto y = pred.predict(x, 2, nn::kBnTrain, nullptr);
        CHECK(y.size() == 2 * 128);
    }

    TEST_CASE("identical rows collapse to the closed-form shift path") {
        // all rows equal -> batch statistics zero the hidden activations
        // exactly -> output = fc2(relu(beta)) replicated
        const int k = 2, feat = 3, hidden = 5, out = 4, rows = 6;
        Predictor<double> pred(k, feat, hidden, out);
        Rng rng(5);
        pred.init_weights(rng);
        for (auto& b : pred.bn().beta.v) b = rng.normal();
        for (auto& b : pred.fc2().b.v) b = rng.normal();

        std::vector<double> row(k * feat);
        for (auto& v : row) v = rng.normal();
        std::vector<double> x;
        for (int r = 0; r < rows; ++r) x.insert(x.end(), row.begin(), row.end());
        auto y = pred.predict(x, rows, nn::kBnTrain, nullptr);

        std::vector<double> expect(out);
        for (int o = 0; o < out; ++o) {
            double acc = pred.fc2().b.v[o];
            for (int h = 0; h < hidden; ++h) {
                const double r = std::max(0.0, pred.bn().beta.v[h]);
                acc += pred.fc2().w.v[static_cast<std::size_t>(o) * hidden + h] * r;
            }
            expect[o] = acc;
        }
        for (int r = 0; r < rows; ++r)
            for (int o = 0; o < out; ++o)
                CHECK(y[static_cast<std::size_t>(r) * out + o] ==
                      doctest::Approx(expect[o]).epsilon(1e-9));
    }

    TEST_CASE("zero weights and shifts force the zero vector") {
        Predictor<double> pred(3, 4, 6, 5);
        Rng rng(2);
        pred.init_weights(rng);
        std::fill(pred.fc2().w.v.begin(), pred.fc2().w.v.end(), 0.0);
        std::fill(pred.fc2().b.v.begin(), pred.fc2().b.v.end(), 0.0);
        std::vector<double> x(2 * 12);
        for (auto& v : x) v = rng.normal();
        auto y = pred.predict(x, 2, nn::kBnTrain, nullptr);
        for (double v : y) CHECK(v == 0.0);
    }

    TEST_CASE("concatenation follows draw order exactly") {
        Predictor<double> pred(3, 2, 4, 3);
        Rng rng(8);
        auto groups = fixed_groups(2, 3, 2, rng);
        std::vector<const std::vector<PatchGroup<double>>*> gp{&groups};
        auto x = pred.concat_rows(gp);
        REQUIRE(x.size() == 2 * 6);
        for (int g = 0; g < 2; ++g)
            for (int p = 0; p < 3; ++p)
                for (int f = 0; f < 2; ++f)
                    CHECK(x[g * 6 + p * 2 + f] == groups[g].points[p].feature[f]);
        // group size mismatch is a shape error
        groups[0].points.pop_back();
        CHECK_THROWS_AS(pred.concat_rows(gp), ShapeError);
    }

    TEST_CASE("analytic gradients match central differences at 64-bit") {
        const int k = 2, feat = 3, hidden = 5, out = 4, rows = 3;
        Predictor<double> pred(k, feat, hidden, out);
        Rng rng(33);
        pred.init_weights(rng);
        for (auto& b : pred.bn().beta.v) b = 0.1 * rng.normal();
        std::vector<double> x(rows * k * feat), g(rows * out);
        for (auto& v : x) v = rng.normal();
        for (auto& v : g) v = rng.normal();

        auto loss = [&]() {
            auto y = pred.predict(x, rows, nn::kBnTarget, nullptr);
            double s = 0;
            for (std::size_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
            return s;
        };
        PredictorCtx<double> ctx;
        ParamRegistry<double> reg;
        pred.register_params(reg, "pred.");
        reg.zero_grad();
        pred.predict(x, rows, nn::kBnTarget, &ctx);
        auto dx = pred.backward(g, ctx);

        for (auto& [name, p] : reg.params) {
            for (std::size_t j = 0; j < p->size(); j += std::max<std::size_t>(1, p->size() / 7)) {
                const double w0 = p->v[j];
                const double h = 1e-6 * std::max(1.0, std::abs(w0));
                p->v[j] = w0 + h;
                const double lp = loss();
                p->v[j] = w0 - h;
                const double lm = loss();
                p->v[j] = w0;
                const double fd = (lp - lm) / (2 * h);
                const double an = p->g[j];
                CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5}) < 1e-4);
            }
        }
        for (std::size_t j = 0; j < x.size(); j += 3) {
            const double w0 = x[j];
            x[j] = w0 + 1e-6;
            const double lp = loss();
            x[j] = w0 - 1e-6;
            const double lm = loss();
            x[j] = w0;
            const double fd = (lp - lm) / 2e-6;
            CHECK(std::abs(fd - dx[j]) / std::max({std::abs(fd), std::abs(dx[j]), 1e-5}) < 1e-4);
        }
    }
}
