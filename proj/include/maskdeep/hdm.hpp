#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "maskdeep/backbone.hpp"
#include "maskdeep/nn/layers.hpp"

namespace maskdeep {

struct PointAt {
    int level = 0, row = 0, col = 0;
    bool operator==(const PointAt&) const = default;
};
using GroupDraw = std::vector<PointAt>;   // k points
using ImageDraws = std::vector<GroupDraw>;  // K groups

template <typename S>
struct PatchPoint {
    PointAt at;
    std::vector<S> feature;
};

template <typename S>
struct PatchGroup {
    int index = 0;  // 1-based group index
    std::vector<PatchPoint<S>> points;

    GroupDraw draw() const {
        GroupDraw d;
        d.reserve(points.size());
        for (const auto& p : points) d.push_back(p.at);
        return d;
    }
};

template <typename S>
struct VisiblePool {
    std::vector<int> levels;
    std::map<int, std::vector<PatchPoint<S>>> entries;
};

// Batched per-level maps; every level carries the same channel count d.
template <typename S>
struct FeaturePyramid {
    std::vector<int> level_ids;
    std::map<int, Tensor4<S>> maps;

    const Tensor4<S>& at(int l) const {
        auto it = maps.find(l);
        check<ValidationError>(it != maps.end(), "pyramid has no level " + std::to_string(l));
        return it->second;
    }
    Tensor4<S>& at(int l) {
        auto it = maps.find(l);
        check<ValidationError>(it != maps.end(), "pyramid has no level " + std::to_string(l));
        return it->second;
    }
};

template <typename S>
inline std::vector<S> gather_feature(const Tensor4<S>& t, int img, int row, int col) {
    std::vector<S> f(t.c());
    for (int c = 0; c < t.c(); ++c) f[c] = t.at(img, c, row, col);
    return f;
}

inline void upsample2x_nearest_dims(int h, int w, int& ho, int& wo) {
    ho = 2 * h;
    wo = 2 * w;
}

template <typename S>
inline void upsample2x_nearest(const Tensor4<S>& x, Tensor4<S>& y) {
    y.resize(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int img = 0; img < x.n(); ++img)
        for (int c = 0; c < x.c(); ++c) {
            const S* src = x.plane(img, c);
            S* dst = y.plane(img, c);
            for (int r = 0; r < y.h(); ++r) {
                const S* srow = src + (r / 2) * x.w();
                S* drow = dst + static_cast<std::size_t>(r) * y.w();
                for (int cc = 0; cc < y.w(); ++cc) drow[cc] = srow[cc / 2];
            }
        }
}

template <typename S>
inline void upsample2x_nearest_backward(const Tensor4<S>& dy, Tensor4<S>& dx) {
    if (dx.empty()) dx.resize(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
    for (int img = 0; img < dy.n(); ++img)
        for (int c = 0; c < dy.c(); ++c) {
            const S* src = dy.plane(img, c);
            S* dst = dx.plane(img, c);
            for (int r = 0; r < dy.h(); ++r) {
                S* drow = dst + (r / 2) * dx.w();
                const S* srow = src + static_cast<std::size_t>(r) * dy.w();
                for (int cc = 0; cc < dy.w(); ++cc) drow[cc / 2] += srow[cc];
            }
        }
}

template <typename S>
struct FpnCtx {
    std::map<int, Tensor4<S>> merged;  // pre-smoothing sum per non-top level
};

// FPN-type fusion: 1x1 laterals, nearest 2x top-down pathway, 3x3 smoothing
// on every level below the top. All outputs have d channels.
template <typename S>
class Fpn {
  public:
    Fpn() = default;
    Fpn(std::vector<int> levels, const std::array<int, 4>& stage_widths, int d, bool smooth)
        : levels_(std::move(levels)), d_(d), smooth_(smooth) {
        check<ValidationError>(!levels_.empty(), "fpn levels empty");
        check<ValidationError>(std::is_sorted(levels_.begin(), levels_.end()),
                               "fpn levels must be sorted");
        for (std::size_t i = 0; i < levels_.size(); ++i) {
            const int l = levels_[i];
            check<ValidationError>(l >= 2 && l <= 5, "fpn level out of range");
            lateral_[l] = nn::Conv2d<S>(stage_widths[l - 2], d, 1, 1, 0, /*bias=*/true);
            if (smooth_ && i + 1 < levels_.size())
                smooth_conv_[l] = nn::Conv2d<S>(d, d, 3, 1, 1, /*bias=*/true);
        }
    }

    const std::vector<int>& levels() const { return levels_; }
    int dim() const { return d_; }

    void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
        for (int l : levels_) {
            lateral_[l].register_params(reg, prefix + "lat" + std::to_string(l));
            if (auto it = smooth_conv_.find(l); it != smooth_conv_.end())
                it->second.register_params(reg, prefix + "smooth" + std::to_string(l));
        }
    }

    void init_weights(Rng& rng) {
        for (int l : levels_) {
            lateral_[l].init_weights(rng);
            if (auto it = smooth_conv_.find(l); it != smooth_conv_.end())
                it->second.init_weights(rng);
        }
    }

    // Test hook: make the smoothing convs pass their input through unchanged.
    void set_smooth_identity() {
        for (auto& [l, conv] : smooth_conv_) {
            std::fill(conv.w.v.begin(), conv.w.v.end(), S(0));
            for (int c = 0; c < d_; ++c) conv.w.v[((c * d_ + c) * 3 + 1) * 3 + 1] = S(1);
            std::fill(conv.b.v.begin(), conv.b.v.end(), S(0));
        }
    }

    FeaturePyramid<S> fpn_forward(const StageFeatures<S>& stages, FpnCtx<S>* ctx) {
        ++forward_count_;
        FeaturePyramid<S> pyr;
        pyr.level_ids = levels_;
        // top level: lateral only
        for (auto it = levels_.rbegin(); it != levels_.rend(); ++it) {
            const int l = *it;
            const Tensor4<S>& cl = stages.level(l);
            Tensor4<S> lat;
            lateral_[l].forward(cl, lat);
            if (it == levels_.rbegin()) {
                pyr.maps[l] = std::move(lat);
                continue;
            }
            const int upper = *std::prev(it);
            Tensor4<S> up = pyr.maps[upper];
            for (int step = 0; step < upper - l; ++step) {
                Tensor4<S> u2;
                upsample2x_nearest(up, u2);
                up = std::move(u2);
            }
            check<ShapeError>(up.h() == lat.h() && up.w() == lat.w(),
                              "fpn level spacing mismatch between levels " + std::to_string(l) +
                                  " and " + std::to_string(upper));
            for (std::size_t i = 0; i < lat.size(); ++i) lat.data()[i] += up.data()[i];
            if (smooth_) {
                Tensor4<S> sm;
                smooth_conv_[l].forward(lat, sm);
                if (ctx) ctx->merged[l] = std::move(lat);
                pyr.maps[l] = std::move(sm);
            } else {
                pyr.maps[l] = std::move(lat);
            }
        }
        return pyr;
    }

    // d_pyr is consumed level by level; gradients w.r.t. the stage features are
    // accumulated into d_stages (which mirrors the stage shapes).
    void backward(const StageFeatures<S>& stages, FeaturePyramid<S>& d_pyr, const FpnCtx<S>& ctx,
                  StageFeatures<S>& d_stages) {
        Tensor4<S>* dst[4] = {&d_stages.c2, &d_stages.c3, &d_stages.c4, &d_stages.c5};
        for (std::size_t i = 0; i < levels_.size(); ++i) {
            const int l = levels_[i];
            const bool is_top = (i + 1 == levels_.size());
            Tensor4<S>& dp = d_pyr.at(l);
            Tensor4<S> dmerged;
            if (!is_top && smooth_) {
                smooth_conv_[l].backward(ctx.merged.at(l), dp, &dmerged);
            } else {
                dmerged = std::move(dp);
            }
            Tensor4<S>& dc = *dst[l - 2];
            if (dc.empty()) {
                const Tensor4<S>& cl = stages.level(l);
                dc.resize(cl.n(), cl.c(), cl.h(), cl.w());
            }
            lateral_[l].backward(stages.level(l), dmerged, &dc);
            if (!is_top) {
                const int upper = levels_[i + 1];
                Tensor4<S>* dtarget = &d_pyr.at(upper);
                if (upper - l == 1) {
                    upsample2x_nearest_backward(dmerged, *dtarget);
                } else {
                    Tensor4<S> cur = std::move(dmerged);
                    for (int step = 0; step < upper - l - 1; ++step) {
                        Tensor4<S> half;
                        upsample2x_nearest_backward(cur, half);
                        cur = std::move(half);
                    }
                    upsample2x_nearest_backward(cur, *dtarget);
                }
            }
        }
    }

    std::uint64_t forward_count() const { return forward_count_; }
    void reset_forward_count() { forward_count_ = 0; }

    nn::Conv2d<S>& lateral(int l) { return lateral_.at(l); }
    bool has_smooth(int l) const { return smooth_conv_.count(l) > 0; }
    nn::Conv2d<S>& smooth(int l) { return smooth_conv_.at(l); }

  private:
    std::vector<int> levels_;
    int d_ = 0;
    bool smooth_ = true;
    std::map<int, nn::Conv2d<S>> lateral_;
    std::map<int, nn::Conv2d<S>> smooth_conv_;
    std::uint64_t forward_count_ = 0;
};

// Uniform without-replacement draw of min(k, h*w) spatial positions on every
// level; masking is by exclusion, discarded positions simply do not appear.
template <typename S>
VisiblePool<S> sample_visible(const FeaturePyramid<S>& pyr, int img, int k, Rng& rng) {
    check<ValidationError>(k >= 1, "patch count k must be >= 1");
    check<ValidationError>(!pyr.level_ids.empty(), "sample_visible on empty pyramid");
    VisiblePool<S> pool;
    pool.levels = pyr.level_ids;
    for (int l : pyr.level_ids) {
        const Tensor4<S>& t = pyr.at(l);
        const int hw = t.h() * t.w();
        const int m = std::min(k, hw);
        std::vector<int> idx(hw);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < m; ++i) {
            const int j = i + static_cast<int>(rng.uniform_int(hw - i));
            std::swap(idx[i], idx[j]);
        }
        auto& entries = pool.entries[l];
        entries.reserve(m);
        for (int i = 0; i < m; ++i) {
            PatchPoint<S> p;
            p.at = {l, idx[i] / t.w(), idx[i] % t.w()};
            p.feature = gather_feature(t, img, p.at.row, p.at.col);
            entries.push_back(std::move(p));
        }
    }
    return pool;
}

// K independent groups of k points; level chosen uniformly per slot, point
// chosen uniformly among that level's still-unused pool entries. Exhausted
// levels are redrawn; a fully exhausted pool is an error.
template <typename S>
std::vector<PatchGroup<S>> assemble_groups(const VisiblePool<S>& pool, int k, int K, Rng& rng) {
    check<ValidationError>(!pool.levels.empty(), "assemble_groups on empty pool");
    check<ValidationError>(k >= 1 && K >= 1, "k and K must be >= 1");
    const int L = static_cast<int>(pool.levels.size());
    std::vector<PatchGroup<S>> groups;
    groups.reserve(K);
    for (int g = 0; g < K; ++g) {
        PatchGroup<S> grp;
        grp.index = g + 1;
        grp.points.reserve(k);
        std::map<int, std::vector<int>> remaining;
        for (int l : pool.levels) {
            auto& r = remaining[l];
            r.resize(pool.entries.at(l).size());
            std::iota(r.begin(), r.end(), 0);
        }
        for (int slot = 0; slot < k; ++slot) {
            bool any = false;
            for (auto& [l, r] : remaining) any |= !r.empty();
            check<InsufficientPool>(any, "visible pool exhausted: cannot fill group of size " +
                                             std::to_string(k));
            int level;
            do {
                level = pool.levels[rng.uniform_int(L)];
            } while (remaining[level].empty());
            auto& r = remaining[level];
            const std::size_t pick = rng.uniform_int(r.size());
            const int entry = r[pick];
            r[pick] = r.back();
            r.pop_back();
            grp.points.push_back(pool.entries.at(level)[entry]);
        }
        groups.push_back(std::move(grp));
    }
    return groups;
}

// Non-hierarchical baseline: groups drawn from the final stage map directly.
template <typename S>
std::vector<PatchGroup<S>> naive_pool(const Tensor4<S>& c5, int img, int k, int K, Rng& rng) {
    const int hw = c5.h() * c5.w();
    check<InsufficientPool>(k <= hw, "naive mode needs k <= " + std::to_string(hw) +
                                         " positions on the final stage, got k=" +
                                         std::to_string(k));
    std::vector<PatchGroup<S>> groups;
    groups.reserve(K);
    std::vector<int> idx(hw);
    for (int g = 0; g < K; ++g) {
        PatchGroup<S> grp;
        grp.index = g + 1;
        grp.points.reserve(k);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(rng.uniform_int(hw - i));
            std::swap(idx[i], idx[j]);
            PatchPoint<S> p;
            p.at = {5, idx[i] / c5.w(), idx[i] % c5.w()};
            p.feature = gather_feature(c5, img, p.at.row, p.at.col);
            grp.points.push_back(std::move(p));
        }
        groups.push_back(std::move(grp));
    }
    return groups;
}

// Re-gather features for frozen draws (finite-difference checks, viz).
template <typename S>
std::vector<PatchGroup<S>> gather_groups(const FeaturePyramid<S>& pyr, int img,
                                         const ImageDraws& draws) {
    std::vector<PatchGroup<S>> groups;
    groups.reserve(draws.size());
    for (std::size_t g = 0; g < draws.size(); ++g) {
        PatchGroup<S> grp;
        grp.index = static_cast<int>(g) + 1;
        for (const PointAt& a : draws[g]) {
            PatchPoint<S> p;
            p.at = a;
            p.feature = gather_feature(pyr.at(a.level), img, a.row, a.col);
            grp.points.push_back(std::move(p));
        }
        groups.push_back(std::move(grp));
    }
    return groups;
}

template <typename S>
std::vector<PatchGroup<S>> gather_groups_c5(const Tensor4<S>& c5, int img,
                                            const ImageDraws& draws) {
    std::vector<PatchGroup<S>> groups;
    groups.reserve(draws.size());
    for (std::size_t g = 0; g < draws.size(); ++g) {
        PatchGroup<S> grp;
        grp.index = static_cast<int>(g) + 1;
        for (const PointAt& a : draws[g]) {
            PatchPoint<S> p;
            p.at = a;
            p.feature = gather_feature(c5, img, a.row, a.col);
            grp.points.push_back(std::move(p));
        }
        groups.push_back(std::move(grp));
    }
    return groups;
}

}  // namespace maskdeep
