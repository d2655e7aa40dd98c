#include <doctest.h>

#include "maskdeep/objective.hpp"

using namespace maskdeep;

namespace {

TargetSet<double> make_targets(const std::vector<std::vector<double>>& side1,
                               const std::vector<std::vector<double>>& side2) {
    TargetSet<double> t;
    t.side1 = side1;
    t.side2 = side2;
    return t;
}

std::vector<double> rand_vec(Rng& rng, int dim) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    return v;
}

// scalar double-loop reference for the symmetric alignment loss
double reference_loss(const std::vector<std::vector<double>>& p1,
                      const std::vector<std::vector<double>>& p2, const TargetSet<double>& t,
                      LossReduction red) {
    double s = 0;
    for (std::size_t i = 0; i < p1.size(); ++i)
        for (std::size_t j = 0; j < t.side1.size(); ++j) {
            s += cosine(p1[i], t.side2[j]);
            s += cosine(p2[i], t.side1[j]);
        }
    s *= -4.0;
    if (red == LossReduction::mean) s /= static_cast<double>(p1.size() * t.side1.size());
    return s;
}

}  // namespace

TEST_SUITE("objective") {
    TEST_CASE("cosine closed forms") {
        const std::vector<double> ex{1, 0}, ey{0, 1}, e2x{2, 0}, exy{1, 1};
        CHECK(cosine(ex, ey) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(cosine(e2x, ex) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(cosine(exy, ex) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
        const std::vector<double> zero{0, 0};
        CHECK_THROWS_AS(cosine(zero, ex), DegenerateVector);
        CHECK(cosine(zero, ex, kCosineTrain) == 0.0);
    }

    TEST_CASE("loss contract values") {
        const std::vector<double> u{1, 0, 0};
        std::vector<double> p(u), q(u);
        SUBCASE("K=N=1 aligned unit vectors -> -8 literal") {
            auto t = make_targets({u}, {u});
            auto lb = maskdeep_loss(p.data(), q.data(), 1, 3, t, LossReduction::literal);
            CHECK(lb.total == doctest::Approx(-8.0).epsilon(1e-12));
            CHECK(maskdeep_loss(p.data(), q.data(), 1, 3, t, LossReduction::mean).total ==
                  doctest::Approx(-8.0).epsilon(1e-12));
        }
        SUBCASE("orthogonal pairs -> 0") {
            const std::vector<double> v{0, 1, 0};
            auto t = make_targets({v}, {v});
            auto lb = maskdeep_loss(p.data(), q.data(), 1, 3, t, LossReduction::literal);
            CHECK(lb.total == doctest::Approx(0.0).epsilon(1e-12));
        }
        SUBCASE("K=2, N=1 aligned -> -16 literal, -8 mean, by pair enumeration") {
            std::vector<double> rows(6);
            rows[0] = rows[3] = 1;  // two copies of u
            auto t = make_targets({u}, {u});
            auto lit = maskdeep_loss(rows.data(), rows.data(), 2, 3, t, LossReduction::literal);
            double manual = 0;  // explicit 4-term sum
            for (int i = 0; i < 2; ++i) manual += cosine(u, u) + cosine(u, u);
            manual *= -4.0;
            CHECK(manual == doctest::Approx(-16.0));
            CHECK(lit.total == doctest::Approx(-16.0).epsilon(1e-12));
            auto mean = maskdeep_loss(rows.data(), rows.data(), 2, 3, t, LossReduction::mean);
            CHECK(mean.total == doctest::Approx(-8.0).epsilon(1e-12));
        }
    }

    TEST_CASE("vectorized loss equals the double-loop reference") {
        Rng rng(31);
        for (int trial = 0; trial < 100; ++trial) {
            const int K = 1 + static_cast<int>(rng.uniform_int(3));
            const int N = 1 + static_cast<int>(rng.uniform_int(3));
            const int dim = 2 + static_cast<int>(rng.uniform_int(6));
            std::vector<std::vector<double>> p1, p2, s1, s2;
            for (int i = 0; i < K; ++i) {
                p1.push_back(rand_vec(rng, dim));
                p2.push_back(rand_vec(rng, dim));
            }
            for (int j = 0; j < N; ++j) {
                s1.push_back(rand_vec(rng, dim));
                s2.push_back(rand_vec(rng, dim));
            }
            std::vector<double> rows1, rows2;
            for (auto& v : p1) rows1.insert(rows1.end(), v.begin(), v.end());
            for (auto& v : p2) rows2.insert(rows2.end(), v.begin(), v.end());
            auto t = make_targets(s1, s2);
            for (auto red : {LossReduction::literal, LossReduction::mean}) {
                auto lb = maskdeep_loss(rows1.data(), rows2.data(), K, dim, t, red);
                CHECK(std::abs(lb.total - reference_loss(p1, p2, t, red)) < 1e-10);
                CHECK(std::abs(lb.total - lb.recompute_total()) < 1e-12);
            }
        }
    }

    TEST_CASE("bounds, swap symmetry, scale invariance") {
        Rng rng(77);
        for (int trial = 0; trial < 50; ++trial) {
            const int K = 1 + static_cast<int>(rng.uniform_int(4));
            const int N = 1 + static_cast<int>(rng.uniform_int(4));
            const int dim = 3;
            std::vector<double> r1, r2;
            std::vector<std::vector<double>> s1, s2;
            for (int i = 0; i < K; ++i) {
                auto a = rand_vec(rng, dim), b = rand_vec(rng, dim);
                r1.insert(r1.end(), a.begin(), a.end());
                r2.insert(r2.end(), b.begin(), b.end());
            }
            for (int j = 0; j < N; ++j) {
                s1.push_back(rand_vec(rng, dim));
                s2.push_back(rand_vec(rng, dim));
            }
            auto t = make_targets(s1, s2);
            auto lit = maskdeep_loss(r1.data(), r2.data(), K, dim, t, LossReduction::literal);
            CHECK(lit.total >= -8.0 * K * N - 1e-9);
            CHECK(lit.total <= 8.0 * K * N + 1e-9);
            auto mean = maskdeep_loss(r1.data(), r2.data(), K, dim, t, LossReduction::mean);
            CHECK(mean.total >= -8.0 - 1e-9);
            CHECK(mean.total <= 8.0 + 1e-9);

            // swap (P1<->P2, side1<->side2) leaves the loss unchanged
            auto ts = make_targets(s2, s1);
            auto swapped = maskdeep_loss(r2.data(), r1.data(), K, dim, ts, LossReduction::literal);
            CHECK(swapped.total == doctest::Approx(lit.total).epsilon(1e-12));

            // positive rescaling of any row leaves the loss unchanged
            std::vector<double> r1s = r1;
            for (int d = 0; d < dim; ++d) r1s[d] *= 3.7;
            auto scaled = maskdeep_loss(r1s.data(), r2.data(), K, dim, t, LossReduction::literal);
            CHECK(scaled.total == doctest::Approx(lit.total).epsilon(1e-9));
        }
    }

    TEST_CASE("loss gradient matches finite differences") {
        Rng rng(123);
        const int K = 2, N = 2, dim = 5;
        std::vector<double> r1, r2;
        std::vector<std::vector<double>> s1, s2;
        for (int i = 0; i < K; ++i) {
            auto a = rand_vec(rng, dim), b = rand_vec(rng, dim);
            r1.insert(r1.end(), a.begin(), a.end());
            r2.insert(r2.end(), b.begin(), b.end());
        }
        for (int j = 0; j < N; ++j) {
            s1.push_back(rand_vec(rng, dim));
            s2.push_back(rand_vec(rng, dim));
        }
        auto t = make_targets(s1, s2);
        for (auto mode : {kCosineStrict, kCosineTrain}) {
            std::vector<double> d1(r1.size(), 0), d2(r2.size(), 0);
            maskdeep_loss_backward(r1.data(), r2.data(), K, dim, t, LossReduction::mean, mode, 1.0,
                                   d1.data(), d2.data());
            for (std::size_t j = 0; j < r1.size(); ++j) {
                const double h = 1e-6;
                const double w0 = r1[j];
                r1[j] = w0 + h;
                const double lp =
                    maskdeep_loss(r1.data(), r2.data(), K, dim, t, LossReduction::mean, mode).total;
                r1[j] = w0 - h;
                const double lm =
                    maskdeep_loss(r1.data(), r2.data(), K, dim, t, LossReduction::mean, mode).total;
                r1[j] = w0;
                const double fd = (lp - lm) / (2 * h);
                CHECK(std::abs(fd - d1[j]) / std::max({std::abs(fd), std::abs(d1[j]), 1e-6}) <
                      1e-4);
            }
        }
    }

    TEST_CASE("degenerate sizes are validation errors") {
        std::vector<double> p{1, 0};
        TargetSet<double> empty;
        CHECK_THROWS_AS(maskdeep_loss(p.data(), p.data(), 1, 2, empty, LossReduction::literal),
                        ValidationError);
        auto t = make_targets({{1.0, 0.0}}, {{1.0, 0.0}});
        CHECK_THROWS_AS(maskdeep_loss(p.data(), p.data(), 0, 2, t, LossReduction::literal),
                        ValidationError);
    }
}
