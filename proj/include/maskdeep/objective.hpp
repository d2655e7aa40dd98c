#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "maskdeep/momentum.hpp"

namespace maskdeep {

enum class LossReduction { literal, mean };

inline const char* to_string(LossReduction r) {
    return r == LossReduction::literal ? "literal" : "mean";
}

struct CosineMode {
    bool strict = true;      // zero-length vectors are an error
    double eps = 0.0;        // added to each norm in training mode
};
inline constexpr CosineMode kCosineStrict{true, 0.0};
inline constexpr CosineMode kCosineTrain{false, 1e-12};

template <typename S>
double cosine(const S* a, const S* b, int dim, CosineMode mode = kCosineStrict) {
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < dim; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (mode.strict)
        check<DegenerateVector>(na > 0 && nb > 0, "cosine of zero-length vector");
    return dot / ((na + mode.eps) * (nb + mode.eps));
}

template <typename S>
double cosine(const std::vector<S>& a, const std::vector<S>& b, CosineMode mode = kCosineStrict) {
    check<ShapeError>(a.size() == b.size(), "cosine dim mismatch");
    return cosine(a.data(), b.data(), static_cast<int>(a.size()), mode);
}

// d/da of the eps-guarded cosine; accumulated into da scaled by `scale`.
template <typename S>
void cosine_backward_a(const S* a, const S* b, int dim, CosineMode mode, double scale, S* da) {
    double dot = 0, na2 = 0, nb2 = 0;
    for (int i = 0; i < dim; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na2 += static_cast<double>(a[i]) * a[i];
        nb2 += static_cast<double>(b[i]) * b[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    if (mode.strict) check<DegenerateVector>(na > 0 && nb > 0, "cosine of zero-length vector");
    const double ga = na + mode.eps, gb = nb + mode.eps;
    const double inv = 1.0 / (ga * gb);
    // f = dot/(ga*gb) ; df/da_i = b_i/(ga*gb) - dot * (a_i/na) / (ga^2 * gb)
    const double coef = na > 0 ? dot / (na * ga * ga * gb) : 0.0;
    for (int i = 0; i < dim; ++i)
        da[i] += static_cast<S>(scale * (b[i] * inv - coef * a[i]));
}

// Per-pair cosines and the reduced total for one image. per_pair is indexed
// [i*N*2 + j*2 + side] with side 0 = <P1_i, G2_j>, side 1 = <P2_i, G1_j>.
struct LossBreakdown {
    double total = 0;
    std::vector<double> per_pair;
    int K = 0, N = 0;
    LossReduction reduction = LossReduction::literal;

    double recompute_total() const {
        double s = 0;
        for (double c : per_pair) s += c;
        s *= -4.0;
        if (reduction == LossReduction::mean) s /= static_cast<double>(K) * N;
        return s;
    }
};

// Eq. of the symmetric masked-alignment loss:
//   L = -4 * sum_i sum_j ( <p(H^1_i), G^2_j> + <p(H^2_i), G^1_j> )
// mean mode divides by K*N; the -4 prefactor is kept in both modes.
template <typename S>
LossBreakdown maskdeep_loss(const S* p1, const S* p2, int K, int dim, const TargetSet<S>& targets,
                            LossReduction reduction, CosineMode mode = kCosineStrict) {
    const int N = targets.n_targets();
    check<ValidationError>(K >= 1, "maskdeep_loss needs K >= 1");
    check<ValidationError>(N >= 1, "maskdeep_loss needs N >= 1");
    check<ShapeError>(static_cast<int>(targets.side2.size()) == N, "target side size mismatch");
    LossBreakdown out;
    out.K = K;
    out.N = N;
    out.reduction = reduction;
    out.per_pair.resize(static_cast<std::size_t>(K) * N * 2);
    for (int i = 0; i < K; ++i) {
        const S* r1 = p1 + static_cast<std::size_t>(i) * dim;
        const S* r2 = p2 + static_cast<std::size_t>(i) * dim;
        for (int j = 0; j < N; ++j) {
            check<ShapeError>(static_cast<int>(targets.side1[j].size()) == dim &&
                                  static_cast<int>(targets.side2[j].size()) == dim,
                              "target dim mismatch");
            out.per_pair[(static_cast<std::size_t>(i) * N + j) * 2 + 0] =
                cosine(r1, targets.side2[j].data(), dim, mode);
            out.per_pair[(static_cast<std::size_t>(i) * N + j) * 2 + 1] =
                cosine(r2, targets.side1[j].data(), dim, mode);
        }
    }
    out.total = out.recompute_total();
    return out;
}

// Accumulates upstream * dL/dP into dp1/dp2 (row-major [K x dim] each).
// Targets receive no gradient anywhere.
template <typename S>
void maskdeep_loss_backward(const S* p1, const S* p2, int K, int dim, const TargetSet<S>& targets,
                            LossReduction reduction, CosineMode mode, double upstream, S* dp1,
                            S* dp2) {
    const int N = targets.n_targets();
    double scale = -4.0 * upstream;
    if (reduction == LossReduction::mean) scale /= static_cast<double>(K) * N;
    for (int i = 0; i < K; ++i) {
        const S* r1 = p1 + static_cast<std::size_t>(i) * dim;
        const S* r2 = p2 + static_cast<std::size_t>(i) * dim;
        for (int j = 0; j < N; ++j) {
            cosine_backward_a(r1, targets.side2[j].data(), dim, mode, scale,
                              dp1 + static_cast<std::size_t>(i) * dim);
            cosine_backward_a(r2, targets.side1[j].data(), dim, mode, scale,
                              dp2 + static_cast<std::size_t>(i) * dim);
        }
    }
}

}  // namespace maskdeep
