#include "maskdeep/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace maskdeep {

namespace {

std::uint64_t fnv1a(const std::vector<float>& v, std::uint64_t h) {
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t backbone_hash(const ParamRegistry<float>& reg) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, p] : reg.params) h = fnv1a(p->v, h);
    for (const auto& [name, b] : reg.buffers) h = fnv1a(b->v, h);
    return h;
}

Backbone<float>& pick_branch(TrainState& st, ProbeBranch branch) {
    return branch == ProbeBranch::online ? st.online->backbone : st.momentum->backbone;
}

// Recalibrate the normalization running statistics on the probe's train
// distribution before freezing. Works on a copy, runs forward passes only;
// for trained checkpoints this is a small correction, for the random-init
// baseline it is what makes eval-mode features meaningful at all.
Backbone<float> calibrated_copy(const Backbone<float>& src, data::Dataset& ds,
                                const data::AugParams& aug, int batch_size) {
    Backbone<float> bb = src;
    const long n = static_cast<long>(ds.size());
    const int bs = static_cast<int>(std::min<long>(batch_size, n));
    const int passes = 30;
    const std::size_t stride = 3 * static_cast<std::size_t>(aug.resolution) * aug.resolution;
    for (int it = 0; it < passes; ++it) {
        Tensor4<float> batch(bs, 3, aug.resolution, aug.resolution);
        for (int b = 0; b < bs; ++b) {
            const auto v = data::resize_normalize(ds.image((it * bs + b) % n), aug);
            std::copy(v.begin(), v.end(), batch.data() + b * stride);
        }
        bb.forward_stages(batch, nn::kBnTrain, nullptr);
    }
    return bb;
}

// Eval-mode descriptors for a stack of preprocessed images, L2-normalized so
// the probe head sees a scale-free input (one probe lr serves every
// checkpoint).
std::vector<float> descriptors(Backbone<float>& bb, const Tensor4<float>& batch) {
    StageFeatures<float> f = bb.forward_stages(batch, nn::kBnEval, nullptr);
    std::vector<float> d = Backbone<float>::global_descriptor(f.c5);
    const int dim = bb.descriptor_dim();
    for (int b = 0; b < batch.n(); ++b) {
        float* row = d.data() + static_cast<std::size_t>(b) * dim;
        double n2 = 0;
        for (int j = 0; j < dim; ++j) n2 += static_cast<double>(row[j]) * row[j];
        const float inv = n2 > 0 ? static_cast<float>(1.0 / std::sqrt(n2)) : 0.0f;
        for (int j = 0; j < dim; ++j) row[j] *= inv;
    }
    return d;
}

struct FeatureBank {
    std::vector<float> feats;  // [n x dim]
    std::vector<int> labels;
    int dim = 0;
};

FeatureBank eval_features(Backbone<float>& bb, data::Dataset& ds, const data::AugParams& aug,
                          int batch_size) {
    FeatureBank bank;
    bank.dim = bb.descriptor_dim();
    const long n = static_cast<long>(ds.size());
    bank.feats.resize(static_cast<std::size_t>(n) * bank.dim);
    bank.labels.resize(n);
    for (long base = 0; base < n; base += batch_size) {
        const int bs = static_cast<int>(std::min<long>(batch_size, n - base));
        Tensor4<float> batch(bs, 3, aug.resolution, aug.resolution);
        const std::size_t stride = 3 * static_cast<std::size_t>(aug.resolution) * aug.resolution;
        for (int b = 0; b < bs; ++b) {
            const auto v = data::resize_normalize(ds.image(base + b), aug);
            std::copy(v.begin(), v.end(), batch.data() + b * stride);
            bank.labels[base + b] = ds.label(base + b);
        }
        const auto d = descriptors(bb, batch);
        std::copy(d.begin(), d.end(), bank.feats.begin() + static_cast<std::size_t>(base) * bank.dim);
    }
    return bank;
}

struct Scoreboard {
    long top1 = 0, top5 = 0, total = 0;

    void account(const float* scores, int n_classes, int truth) {
        int above = 0, ties_before = 0;
        const float s = scores[truth];
        for (int c = 0; c < n_classes; ++c) {
            if (c == truth) continue;
            if (scores[c] > s) ++above;
            else if (scores[c] == s && c < truth) ++ties_before;
        }
        const int rank = above + ties_before;  // deterministic tie order by index
        if (rank == 0) ++top1;
        if (rank < 5) ++top5;
        ++total;
    }
};

}  // namespace

std::string ProbeReport::to_text() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "mode = %s\ntop1 = %.4f\ntop5 = %.4f\nn_train = %ld\nn_test = %ld\n"
                  "checkpoint = %s\nseed = %llu\n",
                  mode.c_str(), top1, top5, n_train, n_test, checkpoint.c_str(),
                  static_cast<unsigned long long>(seed));
    return buf;
}

ProbeReport linear_probe(TrainState& st, const Config& cfg, const std::string& ckpt_identity,
                         ProbeBranch branch) {
    auto train_ds = data::open_dataset(cfg, data::Split::train);
    auto test_ds = data::open_dataset(cfg, data::Split::test);
    check<DataError>(train_ds->num_classes() > 0, "linear probe needs a labeled dataset");
    const std::uint64_t guard = backbone_hash(branch == ProbeBranch::online
                                                  ? st.online->backbone_reg
                                                  : st.momentum->reg);

    const data::AugParams aug = data::AugParams::from(cfg, *train_ds);
    Backbone<float> bb = calibrated_copy(pick_branch(st, branch), *train_ds, aug, cfg.probe_batch);
    const int dim = bb.descriptor_dim();
    const int classes = train_ds->num_classes();
    const long n = static_cast<long>(train_ds->size());
    const int bs = std::min<long>(cfg.probe_batch, n);
    const long spb = n / bs;

    // probe-time augmentation: random resized crop + horizontal flip only
    data::AugParams probe_aug = aug;
    probe_aug.p_jitter = 0;
    probe_aug.p_gray = 0;
    probe_aug.p_blur = 0;

    nn::Linear<float> head(dim, classes);  // zero init: training starts from uniform softmax
    std::vector<float> vel(head.w.size() + head.b.size(), 0.0f);
    const double lr0 = cfg.effective_probe_lr(bs);

    for (int epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
        double lr = lr0;
        if (epoch >= cfg.probe_epochs * 8 / 10)
            lr = lr0 / 100.0;
        else if (epoch >= cfg.probe_epochs * 6 / 10)
            lr = lr0 / 10.0;

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = Rng::substream(cfg.seed, {rngtag::kProbe, 1, static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle.uniform_int(i)]);

        for (long bi = 0; bi < spb; ++bi) {
            Tensor4<float> batch(bs, 3, aug.resolution, aug.resolution);
            std::vector<int> labels(bs);
            const std::size_t stride = 3 * static_cast<std::size_t>(aug.resolution) * aug.resolution;
            for (int b = 0; b < bs; ++b) {
                const std::size_t idx = order[bi * bs + b];
                Rng rng = Rng::substream(cfg.seed, {rngtag::kProbe, 2,
                                                    static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(idx)});
                const auto v = data::augment_view(train_ds->image(idx), rng, probe_aug);
                std::copy(v.begin(), v.end(), batch.data() + b * stride);
                labels[b] = train_ds->label(idx);
            }
            const std::vector<float> feats = descriptors(bb, batch);

            // softmax cross-entropy forward/backward on the head
            std::vector<float> logits(static_cast<std::size_t>(bs) * classes);
            head.forward(feats.data(), bs, logits.data());
            std::vector<float> dlogits(logits.size());
            for (int b = 0; b < bs; ++b) {
                float* row = logits.data() + static_cast<std::size_t>(b) * classes;
                float* drow = dlogits.data() + static_cast<std::size_t>(b) * classes;
                const float mx = *std::max_element(row, row + classes);
                double z = 0;
                for (int c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
                for (int c = 0; c < classes; ++c) {
                    const double p = std::exp(static_cast<double>(row[c]) - mx) / z;
                    drow[c] = static_cast<float>((p - (c == labels[b] ? 1.0 : 0.0)) / bs);
                }
            }
            head.w.zero_grad();
            head.b.zero_grad();
            head.backward(feats.data(), dlogits.data(), bs, nullptr);
            std::size_t vi = 0;
            for (std::size_t j = 0; j < head.w.size(); ++j, ++vi) {
                vel[vi] = 0.9f * vel[vi] + head.w.g[j];
                head.w.v[j] -= static_cast<float>(lr) * vel[vi];
            }
            for (std::size_t j = 0; j < head.b.size(); ++j, ++vi) {
                vel[vi] = 0.9f * vel[vi] + head.b.g[j];
                head.b.v[j] -= static_cast<float>(lr) * vel[vi];
            }
        }
    }

    // evaluation: resize-only preprocessing
    FeatureBank test = eval_features(bb, *test_ds, aug, bs);
    Scoreboard sb;
    std::vector<float> logits(classes);
    for (std::size_t i = 0; i < test.labels.size(); ++i) {
        head.forward(test.feats.data() + i * dim, 1, logits.data());
        sb.account(logits.data(), classes, test.labels[i]);
    }

    check<ValidationError>(backbone_hash(branch == ProbeBranch::online ? st.online->backbone_reg
                                                                       : st.momentum->reg) == guard,
                           "frozen backbone drifted during probing");

    ProbeReport r;
    r.mode = "linear";
    r.top1 = 100.0 * sb.top1 / std::max<long>(1, sb.total);
    r.top5 = 100.0 * sb.top5 / std::max<long>(1, sb.total);
    r.n_train = n;
    r.n_test = sb.total;
    r.checkpoint = ckpt_identity;
    r.seed = cfg.seed;
    return r;
}

double knn_vote_accuracy(std::vector<float> train_feats, const std::vector<int>& train_labels,
                         std::vector<float> test_feats, const std::vector<int>& test_labels,
                         int dim, int classes, int k_neighbors, double* top5_out) {
    const long ntr = static_cast<long>(train_labels.size());
    check<ValidationError>(k_neighbors >= 1 && k_neighbors <= ntr,
                           "k_neighbors must lie in [1, train set size]");
    auto normalize = [&](std::vector<float>& feats, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            float* f = feats.data() + i * dim;
            double n2 = 0;
            for (int d = 0; d < dim; ++d) n2 += static_cast<double>(f[d]) * f[d];
            const float inv = n2 > 0 ? static_cast<float>(1.0 / std::sqrt(n2)) : 0.0f;
            for (int d = 0; d < dim; ++d) f[d] *= inv;
        }
    };
    normalize(train_feats, train_labels.size());
    normalize(test_feats, test_labels.size());

    Scoreboard sb;
    std::vector<std::pair<float, int>> sims(ntr);
    std::vector<float> votes(classes);
    for (std::size_t i = 0; i < test_labels.size(); ++i) {
        const float* q = test_feats.data() + i * dim;
        for (long j = 0; j < ntr; ++j) {
            const float* t = train_feats.data() + static_cast<std::size_t>(j) * dim;
            float dot = 0;
            for (int d = 0; d < dim; ++d) dot += q[d] * t[d];
            sims[j] = {dot, train_labels[j]};
        }
        std::partial_sort(sims.begin(), sims.begin() + k_neighbors, sims.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        std::fill(votes.begin(), votes.end(), 0.0f);
        for (int j = 0; j < k_neighbors; ++j) votes[sims[j].second] += sims[j].first;
        sb.account(votes.data(), classes, test_labels[i]);
    }
    if (top5_out) *top5_out = 100.0 * sb.top5 / std::max<long>(1, sb.total);
    return 100.0 * sb.top1 / std::max<long>(1, sb.total);
}

ProbeReport knn_probe(TrainState& st, const Config& cfg, const std::string& ckpt_identity,
                      int k_neighbors, ProbeBranch branch) {
    auto train_ds = data::open_dataset(cfg, data::Split::train);
    auto test_ds = data::open_dataset(cfg, data::Split::test);
    check<DataError>(train_ds->num_classes() > 0, "knn probe needs a labeled dataset");
    check<ValidationError>(k_neighbors >= 1 &&
                               static_cast<std::size_t>(k_neighbors) <= train_ds->size(),
                           "k_neighbors must lie in [1, train set size]");
    const data::AugParams aug = data::AugParams::from(cfg, *train_ds);
    Backbone<float> bb = calibrated_copy(pick_branch(st, branch), *train_ds, aug, cfg.probe_batch);

    FeatureBank train = eval_features(bb, *train_ds, aug, cfg.probe_batch);
    FeatureBank test = eval_features(bb, *test_ds, aug, cfg.probe_batch);
    ProbeReport r;
    r.mode = "knn";
    r.top1 = knn_vote_accuracy(std::move(train.feats), train.labels, std::move(test.feats),
                               test.labels, bb.descriptor_dim(), train_ds->num_classes(),
                               k_neighbors, &r.top5);
    r.n_train = static_cast<long>(train.labels.size());
    r.n_test = static_cast<long>(test.labels.size());
    r.checkpoint = ckpt_identity;
    r.seed = cfg.seed;
    return r;
}

}  // namespace maskdeep
