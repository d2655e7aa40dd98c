#include "maskdeep/viz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace maskdeep {

namespace fs = std::filesystem;

namespace {

double safe_cos(const float* a, const float* b, int dim) {
    double dot = 0, na = 0, nb = 0;
    for (int d = 0; d < dim; ++d) {
        dot += static_cast<double>(a[d]) * b[d];
        na += static_cast<double>(a[d]) * a[d];
        nb += static_cast<double>(b[d]) * b[d];
    }
    return dot / std::max(std::sqrt(na * nb), 1e-12);
}

struct VizForward {
    StageFeatures<float> stages;
    std::map<int, Tensor4<float>> pyramid;  // level -> (1, d, h, w); {5: C5} in naive mode
    std::vector<int> levels;
};

VizForward viz_forward(TrainState& st, const data::RawImage& img) {
    const data::AugParams aug = data::aug_params_for(st.cfg);
    const auto v = data::resize_normalize(img, aug);
    Tensor4<float> x(1, 3, aug.resolution, aug.resolution);
    std::copy(v.begin(), v.end(), x.data());

    VizForward out;
    out.stages = st.online->backbone.forward_stages(x, nn::kBnEval, nullptr);
    if (st.online->fpn) {
        FeaturePyramid<float> pyr = st.online->fpn->fpn_forward(out.stages, nullptr);
        out.levels = pyr.level_ids;
        for (int l : out.levels) out.pyramid[l] = std::move(pyr.at(l));
    } else {
        out.levels = {5};
        out.pyramid[5] = out.stages.c5;
    }
    return out;
}

}  // namespace

CamStack grad_cam(TrainState& st, const data::RawImage& img) {
    const data::AugParams aug = data::aug_params_for(st.cfg);
    VizForward fwd = viz_forward(st, img);
    const ModelSpec& spec = st.online->spec();

    // momentum-side global target of the same resize-only input
    const auto v = data::resize_normalize(img, aug);
    Tensor4<float> x(1, 3, aug.resolution, aug.resolution);
    std::copy(v.begin(), v.end(), x.data());
    StageFeatures<float> mf = st.momentum->backbone.forward_stages(x, nn::kBnEval, nullptr);
    const std::vector<float> target = Backbone<float>::global_descriptor(mf.c5);

    // one fixed-seed group
    Rng rng = Rng::substream(st.cfg.seed, {rngtag::kViz});
    std::vector<PatchGroup<float>> groups;
    if (spec.naive) {
        groups = naive_pool(fwd.stages.c5, 0, spec.patch_count, 1, rng);
    } else {
        FeaturePyramid<float> pyr;
        pyr.level_ids = fwd.levels;
        for (int l : fwd.levels) pyr.maps[l] = fwd.pyramid.at(l);
        VisiblePool<float> pool = sample_visible(pyr, 0, spec.patch_count, rng);
        groups = assemble_groups(pool, spec.patch_count, 1, rng);
    }

    PredictorCtx<float> pctx;
    std::vector<const std::vector<PatchGroup<float>>*> gp{&groups};
    const std::vector<float> px = st.online->predictor.concat_rows(gp);
    const std::vector<float> p = st.online->predictor.predict(px, 1, nn::kBnEval, &pctx);

    const int dim = st.online->predictor.out_features();
    std::vector<float> dp(dim, 0.0f);
    cosine_backward_a(p.data(), target.data(), dim, kCosineTrain, -1.0, dp.data());
    const std::vector<float> dx = st.online->predictor.backward(dp, pctx);

    // scatter the input gradient back onto the pyramid positions
    const int feat = st.online->predictor.feature_dim();
    std::map<int, Tensor4<float>> dpyr;
    for (int l : fwd.levels) {
        const Tensor4<float>& t = fwd.pyramid.at(l);
        dpyr[l].resize(1, t.c(), t.h(), t.w());
    }
    for (int pt = 0; pt < spec.patch_count; ++pt) {
        const PointAt& at = groups[0].points[pt].at;
        Tensor4<float>& dl = dpyr.at(at.level);
        for (int c = 0; c < feat; ++c)
            dl.at(0, c, at.row, at.col) += dx[static_cast<std::size_t>(pt) * feat + c];
    }

    CamStack cam;
    for (int l : fwd.levels) {
        const Tensor4<float>& pl = fwd.pyramid.at(l);
        const Tensor4<float>& dl = dpyr.at(l);
        const int h = pl.h(), w = pl.w();
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        std::vector<float> map(plane, 0.0f);
        for (int c = 0; c < pl.c(); ++c) {
            const float* g = dl.plane(0, c);
            double wsum = 0;
            for (std::size_t i = 0; i < plane; ++i) wsum += g[i];
            const float wc = static_cast<float>(wsum / plane);
            const float* f = pl.plane(0, c);
            for (std::size_t i = 0; i < plane; ++i) map[i] += wc * f[i];
        }
        float mx = 0;
        for (auto& m : map) {
            m = std::max(m, 0.0f);
            mx = std::max(mx, m);
        }
        if (mx > 0)
            for (auto& m : map) m /= mx;
        cam.maps[l] = std::move(map);
        cam.dims[l] = {h, w};
    }
    return cam;
}

ClusterMap cluster_map(TrainState& st, const data::RawImage& img, int n_seeds) {
    check<ValidationError>(n_seeds >= 1, "cluster_map needs at least one seed");
    VizForward fwd = viz_forward(st, img);

    ClusterMap out;
    out.n_seeds = n_seeds;
    for (int l : fwd.levels) {
        const Tensor4<float>& pl = fwd.pyramid.at(l);
        const int h = pl.h(), w = pl.w(), dim = pl.c();
        const int hw = h * w;
        check<ValidationError>(n_seeds <= hw, "seed count " + std::to_string(n_seeds) +
                                                  " exceeds positions at level " +
                                                  std::to_string(l));
        // gather position features row-major [hw x dim]
        std::vector<float> feats(static_cast<std::size_t>(hw) * dim);
        for (int c = 0; c < dim; ++c) {
            const float* p = pl.plane(0, c);
            for (int i = 0; i < hw; ++i) feats[static_cast<std::size_t>(i) * dim + c] = p[i];
        }

        // start from the max-norm position, then farthest-point in cosine distance
        std::vector<int> seeds;
        {
            int best = 0;
            double best_n = -1;
            for (int i = 0; i < hw; ++i) {
                double n2 = 0;
                const float* f = feats.data() + static_cast<std::size_t>(i) * dim;
                for (int d = 0; d < dim; ++d) n2 += static_cast<double>(f[d]) * f[d];
                if (n2 > best_n) {
                    best_n = n2;
                    best = i;
                }
            }
            seeds.push_back(best);
        }
        while (static_cast<int>(seeds.size()) < n_seeds) {
            int best = -1;
            double best_d = -1;
            for (int i = 0; i < hw; ++i) {
                if (std::find(seeds.begin(), seeds.end(), i) != seeds.end()) continue;
                double mind = 2.0;
                for (int s : seeds) {
                    const double c =
                        safe_cos(feats.data() + static_cast<std::size_t>(i) * dim,
                                 feats.data() + static_cast<std::size_t>(s) * dim, dim);
                    mind = std::min(mind, 1.0 - c);
                }
                if (mind > best_d) {
                    best_d = mind;
                    best = i;
                }
            }
            seeds.push_back(best);
        }

        std::vector<int> labels(hw, 0);
        for (int i = 0; i < hw; ++i) {
            int arg = 0;
            double best = -2;
            for (std::size_t s = 0; s < seeds.size(); ++s) {
                const double c = safe_cos(feats.data() + static_cast<std::size_t>(i) * dim,
                                          feats.data() + static_cast<std::size_t>(seeds[s]) * dim,
                                          dim);
                if (c > best) {  // strict: ties stay with the lowest seed index
                    best = c;
                    arg = static_cast<int>(s);
                }
            }
            labels[i] = arg;
        }
        out.labels[l] = std::move(labels);
        out.dims[l] = {h, w};
        out.seeds[l] = std::move(seeds);
    }
    return out;
}

namespace {

void heat_color(float v, float& r, float& g, float& b) {
    r = std::clamp(3.0f * v, 0.0f, 1.0f);
    g = std::clamp(3.0f * v - 1.0f, 0.0f, 1.0f);
    b = std::clamp(3.0f * v - 2.0f, 0.0f, 1.0f);
}

const float kPalette[10][3] = {{0.90f, 0.10f, 0.10f}, {0.10f, 0.60f, 0.95f}, {0.15f, 0.80f, 0.25f},
                               {0.95f, 0.80f, 0.10f}, {0.70f, 0.25f, 0.85f}, {0.95f, 0.50f, 0.10f},
                               {0.10f, 0.85f, 0.80f}, {0.90f, 0.30f, 0.60f}, {0.55f, 0.40f, 0.20f},
                               {0.60f, 0.60f, 0.60f}};

data::RawImage blend_over(const data::RawImage& base, int res,
                          const std::vector<float>& overlay_rgb) {
    // overlay_rgb is (3, res, res); base resampled to res
    data::AugParams p;
    p.resolution = res;
    p.mean = {0, 0, 0};
    p.stdev = {1, 1, 1};
    const auto bg = data::resize_normalize(base, p);
    data::RawImage out;
    out.h = out.w = res;
    out.pix.resize(3 * static_cast<std::size_t>(res) * res);
    for (std::size_t i = 0; i < out.pix.size(); ++i)
        out.pix[i] = 0.45f * bg[i] + 0.55f * overlay_rgb[i];
    return out;
}

}  // namespace

std::vector<std::string> emit_figures(TrainState& st, const data::RawImage& img,
                                      const std::string& stem, const std::string& out_dir,
                                      int n_seeds) {
    fs::create_directories(out_dir);
    const int res = st.cfg.resolution;
    CamStack cam = grad_cam(st, img);
    ClusterMap clu = cluster_map(st, img, n_seeds);
    std::vector<std::string> written;

    auto upsample_idx = [&](int h, int w, int y, int x) {
        return static_cast<std::size_t>(y * h / res) * w + (x * w / res);
    };

    for (auto& [l, map] : cam.maps) {
        const auto [h, w] = cam.dims[l];
        std::vector<float> overlay(3 * static_cast<std::size_t>(res) * res);
        const std::size_t plane = static_cast<std::size_t>(res) * res;
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                float r, g, b;
                heat_color(map[upsample_idx(h, w, y, x)], r, g, b);
                overlay[static_cast<std::size_t>(y) * res + x] = r;
                overlay[plane + static_cast<std::size_t>(y) * res + x] = g;
                overlay[2 * plane + static_cast<std::size_t>(y) * res + x] = b;
            }
        const std::string path =
            (fs::path(out_dir) / (stem + "_cam_P" + std::to_string(l) + ".ppm")).string();
        data::write_ppm(path, blend_over(img, res, overlay));
        written.push_back(path);
    }
    for (auto& [l, labels] : clu.labels) {
        const auto [h, w] = clu.dims[l];
        std::vector<float> overlay(3 * static_cast<std::size_t>(res) * res);
        const std::size_t plane = static_cast<std::size_t>(res) * res;
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                const int lab = labels[upsample_idx(h, w, y, x)] % 10;
                overlay[static_cast<std::size_t>(y) * res + x] = kPalette[lab][0];
                overlay[plane + static_cast<std::size_t>(y) * res + x] = kPalette[lab][1];
                overlay[2 * plane + static_cast<std::size_t>(y) * res + x] = kPalette[lab][2];
            }
        const std::string path =
            (fs::path(out_dir) / (stem + "_cluster_P" + std::to_string(l) + ".ppm")).string();
        data::write_ppm(path, blend_over(img, res, overlay));
        written.push_back(path);
    }
    return written;
}

}  // namespace maskdeep
