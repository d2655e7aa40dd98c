#include "maskdeep/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "maskdeep/momentum.hpp"

namespace maskdeep {

namespace fs = std::filesystem;

double lr_at(long step, long total_steps, double base_lr, long warmup_steps) {
    check<ValidationError>(warmup_steps < total_steps, "warmup must be shorter than the run");
    if (step >= total_steps) return 0.0;
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double x = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return base_lr * (std::cos(M_PI * x) + 1.0) / 2.0;
}

Sgd::Sgd(ParamRegistry<float>* params, double momentum, double weight_decay)
    : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params->params.size());
    for (auto& [name, p] : params->params) velocity_.emplace_back(p->size(), 0.0f);
}

double Sgd::step(double lr, double grad_clip) {
    double norm2 = 0;
    for (auto& [name, p] : params_->params)
        for (float g : p->g) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    const double clip_scale = (grad_clip > 0 && norm > grad_clip) ? grad_clip / norm : 1.0;
    const float mu = static_cast<float>(momentum_);
    const float wd = static_cast<float>(weight_decay_);
    const float eta = static_cast<float>(lr);
    const float cs = static_cast<float>(clip_scale);
    for (std::size_t i = 0; i < params_->params.size(); ++i) {
        Param<float>* p = params_->params[i].second;
        std::vector<float>& v = velocity_[i];
        for (std::size_t j = 0; j < p->v.size(); ++j) {
            v[j] = mu * v[j] + cs * p->g[j] + wd * p->v[j];
            p->v[j] -= eta * v[j];
        }
    }
    return norm;
}

TrainState TrainState::fresh(const Config& cfg, long total_steps) {
    validate_config(cfg);
    TrainState st;
    st.cfg = cfg;
    st.online = std::make_unique<OnlineModel<float>>(model_spec(cfg));
    st.momentum = std::make_unique<MomentumModel<float>>(model_spec(cfg));
    st.online->init_weights(cfg.seed);
    clone_params(st.momentum->reg, st.online->backbone_reg);
    st.opt = std::make_unique<Sgd>(&st.online->reg, cfg.sgd_momentum, cfg.weight_decay);
    st.step = 0;
    st.total_steps = total_steps;
    return st;
}

double collapse_metrics(const std::vector<TargetSet<float>>& targets) {
    check<ValidationError>(targets.size() >= 2, "collapse metric needs a batch of >= 2 targets");
    const std::size_t dim = targets[0].side1.at(0).size();
    const std::size_t batch = targets.size();
    std::vector<double> normed(batch * dim);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto& t = targets[b].side1.at(0);
        double n2 = 0;
        for (float x : t) n2 += static_cast<double>(x) * x;
        const double inv = n2 > 0 ? 1.0 / std::sqrt(n2) : 0.0;
        for (std::size_t d = 0; d < dim; ++d) normed[b * dim + d] = t[d] * inv;
    }
    double acc = 0;
    for (std::size_t d = 0; d < dim; ++d) {
        double s = 0, s2 = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double x = normed[b * dim + d];
            s += x;
            s2 += x * x;
        }
        const double mean = s / batch;
        acc += std::sqrt(std::max(0.0, s2 / batch - mean * mean));
    }
    return acc / static_cast<double>(dim);
}

StepMetrics train_step(TrainState& st, const Tensor4<float>& view1, const Tensor4<float>& view2,
                       const std::vector<Tensor4<float>>& extras, const TrainStepOptions& topts) {
    check<ValidationError>(st.step < st.total_steps, "train_step past the configured budget");
    const Config& cfg = st.cfg;

    PipelineOptions<float> opts;
    opts.backward = true;
    opts.update_running = true;
    opts.reduction = cfg.reduction();
    opts.cosine = kCosineTrain;
    opts.momentum_bn_batch_stats = cfg.momentum_bn_batch_stats;
    opts.loss_scale = topts.loss_scale;
    opts.seed = cfg.seed;
    opts.step = static_cast<std::uint64_t>(st.step);

    st.online->reg.zero_grad();
    StepOutcome<float> out = pipeline_step(*st.online, *st.momentum, view1, view2, extras, opts);

    StepMetrics m;
    m.step = st.step;
    m.lr = lr_at(st.step, st.total_steps, cfg.effective_lr(),
                 static_cast<long>(cfg.resolved_warmup_epochs()) *
                     (st.total_steps / std::max(1, cfg.epochs)));
    m.lambda = momentum_coefficient(st.step, st.total_steps, cfg.ema_lambda0);
    m.loss = out.loss;
    m.target_std = view1.n() >= 2 ? collapse_metrics(out.targets) : 0.0;

    if (!std::isfinite(m.loss))
        throw TrainingAborted("non-finite loss at step " + std::to_string(st.step) +
                              " (lr=" + std::to_string(m.lr) + ")");

    m.grad_norm = st.opt->step(m.lr, cfg.grad_clip);
    if (!std::isfinite(m.grad_norm))
        throw TrainingAborted("non-finite gradients at step " + std::to_string(st.step) +
                              " (lr=" + std::to_string(m.lr) +
                              ", grad_norm=" + std::to_string(m.grad_norm) + ")");
    ema_update(st.momentum->reg, st.online->backbone_reg, m.lambda);
    ++st.step;
    if (topts.capture_outcome) *topts.capture_outcome = std::move(out);
    return m;
}

namespace {

void append_pairs(const std::string& path, long step, const std::vector<LossBreakdown>& per_image) {
    if (per_image.empty()) return;
    const int K = per_image[0].K, N = per_image[0].N;
    std::vector<double> mean(per_image[0].per_pair.size(), 0.0);
    for (const auto& lb : per_image)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += lb.per_pair[i];
    for (auto& v : mean) v /= static_cast<double>(per_image.size());
    std::ofstream out(path, std::ios::app);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < N; ++j)
            for (int s = 0; s < 2; ++s)
                out << step << "," << i + 1 << "," << j + 1 << "," << s + 1 << ","
                    << mean[(static_cast<std::size_t>(i) * N + j) * 2 + s] << "\n";
}

}  // namespace

FitResult fit(const Config& cfg, const std::string& run_dir, const std::string& resume_from) {
    validate_config(cfg);
    auto ds = data::open_dataset(cfg, data::Split::train);
    const long n = static_cast<long>(ds->size());
    const long spe = n / cfg.batch_size;  // last partial batch dropped
    check<DataError>(spe >= 1, "dataset smaller than one batch (" + std::to_string(n) + " images)");
    const long total_steps = spe * cfg.epochs;

    fs::create_directories(fs::path(run_dir) / "checkpoints");
    save_config(cfg, (fs::path(run_dir) / "config.txt").string());

    TrainState st = resume_from.empty() ? TrainState::fresh(cfg, total_steps)
                                        : load_checkpoint(resume_from);
    if (!resume_from.empty())
        check<CheckpointCorruption>(st.total_steps == total_steps,
                                    "resume: checkpoint budget does not match the config");

    const std::string metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    std::ofstream metrics(metrics_path, st.step == 0 ? std::ios::trunc : std::ios::app);
    if (st.step == 0) metrics << "step,epoch,lr,lambda,loss,target_std,grad_norm\n";

    const data::AugParams aug = data::AugParams::from(cfg, *ds);
    const std::string pairs_path = (fs::path(run_dir) / "pairs.csv").string();
    StepMetrics last{};
    std::vector<std::size_t> order(n);
    for (long epoch = st.step / spe; epoch < cfg.epochs && st.step < total_steps; ++epoch) {
        // epoch-local order, pure function of (seed, epoch)
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle =
            Rng::substream(cfg.seed, {rngtag::kShuffle, static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle.uniform_int(i)]);

        for (long bi = st.step % spe; bi < spe; ++bi) {
            std::vector<data::ViewSet> views(cfg.batch_size);
            for (int b = 0; b < cfg.batch_size; ++b) {
                const std::size_t idx = order[bi * cfg.batch_size + b];
                Rng rng =
                    Rng::substream(cfg.seed, {rngtag::kAugment, static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(idx)});
                views[b] = data::make_view_set(ds->image(idx), cfg.extra_targets, rng, aug);
                views[b].image_id = static_cast<long>(idx);
            }
            std::vector<const std::vector<float>*> v1p, v2p;
            for (auto& vs : views) {
                v1p.push_back(&vs.view1);
                v2p.push_back(&vs.view2);
            }
            Tensor4<float> v1 = data::stack_views(v1p, cfg.resolution);
            Tensor4<float> v2 = data::stack_views(v2p, cfg.resolution);
            std::vector<Tensor4<float>> extras;
            for (int e = 0; e < cfg.extra_targets; ++e) {
                std::vector<const std::vector<float>*> ep;
                for (auto& vs : views) ep.push_back(&vs.extra_views[e]);
                extras.push_back(data::stack_views(ep, cfg.resolution));
            }

            StepOutcome<float> outcome;
            TrainStepOptions topts;
            const bool want_pairs =
                cfg.pair_log_interval > 0 && st.step % cfg.pair_log_interval == 0;
            if (want_pairs) topts.capture_outcome = &outcome;
            StepMetrics m = train_step(st, v1, v2, extras, topts);
            m.epoch = static_cast<int>(epoch);
            last = m;

            if (want_pairs) append_pairs(pairs_path, m.step, outcome.per_image);
            if (m.step % cfg.log_interval == 0 || st.step == total_steps) {
                char buf[256];
                std::snprintf(buf, sizeof(buf), "%ld,%d,%.8g,%.8g,%.8g,%.8g,%.8g\n", m.step,
                              m.epoch, m.lr, m.lambda, m.loss, m.target_std, m.grad_norm);
                metrics << buf;
                metrics.flush();
            }
            if (cfg.ckpt_interval > 0 && st.step % cfg.ckpt_interval == 0 &&
                st.step < total_steps)
                save_checkpoint(st, (fs::path(run_dir) / "checkpoints" /
                                     ("ckpt_step" + std::to_string(st.step) + ".bin"))
                                        .string());
        }
    }

    const std::string final_path = (fs::path(run_dir) / "checkpoints" / "ckpt_final.bin").string();
    save_checkpoint(st, final_path);

    FitResult r;
    r.run_dir = run_dir;
    r.steps = st.step;
    r.final_loss = last.loss;
    r.final_target_std = last.target_std;
    r.final_checkpoint = final_path;
    return r;
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'M', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_blob(std::ofstream& out, const std::string& name, const float* data, std::size_t n) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, n);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_blob_into(std::ifstream& in, const std::string& expect_name, float* data,
                    std::size_t expect_n, const std::string& path) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t n = read_u64(in);
    check<CheckpointCorruption>(in.good() && name == expect_name && n == expect_n,
                                "checkpoint structure mismatch at '" + expect_name + "' (found '" +
                                    name + "', " + std::to_string(n) + " values): " + path);
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    check<CheckpointCorruption>(in.good(), "checkpoint truncated at '" + expect_name + "': " + path);
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check<DataError>(out.good(), "cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::string cfg_text = serialize_config(st.cfg);
    write_u64(out, cfg_text.size());
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    write_u64(out, static_cast<std::uint64_t>(st.step));
    write_u64(out, static_cast<std::uint64_t>(st.total_steps));

    auto write_registry = [&](const ParamRegistry<float>& reg, const std::string& prefix) {
        write_u64(out, reg.params.size() + reg.buffers.size());
        for (const auto& [name, p] : reg.params) write_blob(out, prefix + name, p->v.data(), p->size());
        for (const auto& [name, b] : reg.buffers)
            write_blob(out, prefix + name, b->v.data(), b->v.size());
    };
    write_registry(st.online->reg, "theta/");
    write_registry(st.momentum->reg, "phi/");
    write_u64(out, st.opt->velocity().size());
    for (std::size_t i = 0; i < st.opt->velocity().size(); ++i)
        write_blob(out, "vel/" + st.online->reg.params[i].first, st.opt->velocity()[i].data(),
                   st.opt->velocity()[i].size());
    check<DataError>(out.good(), "write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check<CheckpointNotFound>(in.good(), "checkpoint not found: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    check<CheckpointCorruption>(in.good() && std::equal(magic, magic + 8, kMagic),
                                "not a checkpoint file: " + path);
    const std::uint64_t cfg_len = read_u64(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    check<CheckpointCorruption>(in.good(), "checkpoint truncated in config block: " + path);
    Config cfg;
    try {
        cfg = parse_config(cfg_text);
        validate_config(cfg);
    } catch (const std::exception& e) {
        throw CheckpointCorruption("checkpoint embeds an invalid config (" +
                                   std::string(e.what()) + "): " + path);
    }
    const long step = static_cast<long>(read_u64(in));
    const long total_steps = static_cast<long>(read_u64(in));

    TrainState st = TrainState::fresh(cfg, total_steps);
    st.step = step;

    auto read_registry = [&](ParamRegistry<float>& reg, const std::string& prefix) {
        const std::uint64_t count = read_u64(in);
        check<CheckpointCorruption>(count == reg.params.size() + reg.buffers.size(),
                                    "checkpoint tensor count mismatch: " + path);
        for (auto& [name, p] : reg.params)
            read_blob_into(in, prefix + name, p->v.data(), p->size(), path);
        for (auto& [name, b] : reg.buffers)
            read_blob_into(in, prefix + name, b->v.data(), b->v.size(), path);
    };
    read_registry(st.online->reg, "theta/");
    read_registry(st.momentum->reg, "phi/");
    const std::uint64_t nvel = read_u64(in);
    check<CheckpointCorruption>(nvel == st.opt->velocity().size(),
                                "checkpoint velocity count mismatch: " + path);
    for (std::size_t i = 0; i < nvel; ++i)
        read_blob_into(in, "vel/" + st.online->reg.params[i].first, st.opt->velocity()[i].data(),
                       st.opt->velocity()[i].size(), path);
    return st;
}

}  // namespace maskdeep
