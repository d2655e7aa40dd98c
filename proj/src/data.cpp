#include "maskdeep/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace maskdeep::data {

namespace fs = std::filesystem;

namespace {

constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;
constexpr std::uint64_t kSubsetMaster = 0x5eedful;  // subset choice is run-seed independent

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check<DataError>(in.good(), "cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), n);
    check<DataError>(in.good(), "short read: " + path);
    return buf;
}

// ---------------------------------------------------------------- cifar10

class Cifar10Dataset final : public Dataset {
  public:
    Cifar10Dataset(const std::string& root, Split split) {
        const std::vector<std::string> names =
            split == Split::train
                ? std::vector<std::string>{"data_batch_1.bin", "data_batch_2.bin",
                                           "data_batch_3.bin", "data_batch_4.bin",
                                           "data_batch_5.bin"}
                : std::vector<std::string>{"test_batch.bin"};
        for (const auto& name : names) {
            const std::string path = (fs::path(root) / name).string();
            auto buf = read_file(path);
            check<DataError>(buf.size() % kRecord == 0,
                             "not a cifar-10 batch (size " + std::to_string(buf.size()) + "): " +
                                 path);
            const std::size_t n = buf.size() / kRecord;
            const std::size_t base = blob_.size();
            blob_.resize(base + buf.size());
            std::memcpy(blob_.data() + base, buf.data(), buf.size());
            count_ += n;
        }
    }

    std::size_t size() const override { return count_; }
    int num_classes() const override { return 10; }
    int label(std::size_t i) const override { return blob_[i * kRecord]; }

    RawImage image(std::size_t i) const override {
        RawImage img;
        img.h = img.w = 32;
        img.pix.resize(3 * 32 * 32);
        const std::uint8_t* p = blob_.data() + i * kRecord + 1;
        for (std::size_t j = 0; j < img.pix.size(); ++j) img.pix[j] = p[j] / 255.0f;
        return img;
    }

    std::array<float, 3> norm_mean() const override { return {0.4914f, 0.4822f, 0.4465f}; }
    std::array<float, 3> norm_std() const override { return {0.2470f, 0.2435f, 0.2616f}; }

  private:
    static constexpr std::size_t kRecord = 3073;  // label byte + 3x32x32
    std::vector<std::uint8_t> blob_;
    std::size_t count_ = 0;
};

// ---------------------------------------------------------------- stl10

class Stl10Dataset final : public Dataset {
  public:
    Stl10Dataset(const std::string& root, Split split) {
        const char* xb = split == Split::train ? "train_X.bin" : "test_X.bin";
        const char* yb = split == Split::train ? "train_y.bin" : "test_y.bin";
        blob_ = read_file((fs::path(root) / xb).string());
        labels_ = read_file((fs::path(root) / yb).string());
        check<DataError>(blob_.size() % kImage == 0,
                         std::string("not an stl-10 image file: ") + xb);
        count_ = blob_.size() / kImage;
        check<DataError>(labels_.size() == count_, std::string("stl-10 label count mismatch: ") + yb);
    }

    std::size_t size() const override { return count_; }
    int num_classes() const override { return 10; }
    int label(std::size_t i) const override { return static_cast<int>(labels_[i]) - 1; }

    RawImage image(std::size_t i) const override {
        RawImage img;
        img.h = img.w = 96;
        img.pix.resize(3 * 96 * 96);
        const std::uint8_t* p = blob_.data() + i * kImage;
        // channels stored column-major; transpose while decoding
        for (int c = 0; c < 3; ++c)
            for (int x = 0; x < 96; ++x)
                for (int y = 0; y < 96; ++y)
                    img.at(c, y, x) = p[(c * 96 + x) * 96 + y] / 255.0f;
        return img;
    }

    std::array<float, 3> norm_mean() const override { return {0.4467f, 0.4398f, 0.4066f}; }
    std::array<float, 3> norm_std() const override { return {0.2603f, 0.2566f, 0.2713f}; }

  private:
    static constexpr std::size_t kImage = 3 * 96 * 96;
    std::vector<std::uint8_t> blob_, labels_;
    std::size_t count_ = 0;
};

// ---------------------------------------------------------------- image_dir

class ImageDirDataset final : public Dataset {
  public:
    ImageDirDataset(const std::string& root, Split split) {
        fs::path base(root);
        const fs::path split_dir = base / (split == Split::train ? "train" : "test");
        if (fs::is_directory(split_dir)) base = split_dir;
        check<DataError>(fs::is_directory(base), "dataset root not found: " + base.string());

        std::vector<std::string> class_dirs;
        for (const auto& e : fs::directory_iterator(base))
            if (e.is_directory()) class_dirs.push_back(e.path().string());
        std::sort(class_dirs.begin(), class_dirs.end());

        if (class_dirs.empty()) {
            collect_files(base.string(), -1);
            classes_ = 0;
        } else {
            for (std::size_t c = 0; c < class_dirs.size(); ++c)
                collect_files(class_dirs[c], static_cast<int>(c));
            classes_ = static_cast<int>(class_dirs.size());
        }
        check<DataError>(!files_.empty(), "no decodable images under " + base.string());
    }

    std::size_t size() const override { return files_.size(); }
    int num_classes() const override { return classes_; }
    int label(std::size_t i) const override { return labels_[i]; }
    RawImage image(std::size_t i) const override { return load_image_file(files_[i]); }

    std::array<float, 3> norm_mean() const override { return {0.485f, 0.456f, 0.406f}; }
    std::array<float, 3> norm_std() const override { return {0.229f, 0.224f, 0.225f}; }

  private:
    void collect_files(const std::string& dir, int label) {
        std::vector<std::string> local;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            auto ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
            if (ext == ".ppm" || ext == ".pgm" || ext == ".bmp") local.push_back(e.path().string());
        }
        std::sort(local.begin(), local.end());
        for (auto& f : local) {
            files_.push_back(std::move(f));
            labels_.push_back(label);
        }
    }

    std::vector<std::string> files_;
    std::vector<int> labels_;
    int classes_ = 0;
};

// ---------------------------------------------------------------- synthetic

// Ten procedural classes: five shapes x {solid, fine checker}, rendered with
// randomized pose, palette, background gradient and distractors so that color
// statistics carry no class signal.
class SyntheticDataset final : public Dataset {
  public:
    static constexpr int kNative = 64;

    SyntheticDataset(std::uint64_t content_seed, std::size_t n, Split split)
        : seed_(content_seed), n_(n), split_tag_(split == Split::train ? 1 : 2) {}

    std::size_t size() const override { return n_; }
    int num_classes() const override { return 10; }
    int label(std::size_t i) const override { return static_cast<int>(i % 10); }

    RawImage image(std::size_t i) const override {
        Rng rng = Rng::substream(seed_, {rngtag::kSynth, split_tag_, static_cast<std::uint64_t>(i)});
        const int cls = label(i);
        const int shape = cls / 2;
        const bool checker = cls % 2;
        const int S = kNative;

        RawImage img;
        img.h = img.w = S;
        img.pix.resize(3 * S * S);

        // background: mild gradient between two nearby colors plus light noise
        float c0[3], c1[3];
        for (int c = 0; c < 3; ++c) {
            c0[c] = static_cast<float>(rng.uniform(0.2, 0.8));
            c1[c] = std::clamp(c0[c] + static_cast<float>(rng.uniform(-0.18, 0.18)), 0.05f, 0.95f);
        }
        const double gth = rng.uniform(0, 2 * M_PI);
        const float gx = static_cast<float>(std::cos(gth)), gy = static_cast<float>(std::sin(gth));

        // one large, near-centered object: random crops of the image keep it
        // mostly in view, which is what makes the corpus learnable from
        // globally pooled features
        const float cx = static_cast<float>(rng.uniform(0.42, 0.58)) * S;
        const float cy = static_cast<float>(rng.uniform(0.42, 0.58)) * S;
        const float r = static_cast<float>(rng.uniform(0.28, 0.42)) * S;
        const double th = rng.uniform(0, 2 * M_PI);
        const float ct = static_cast<float>(std::cos(th)), st = static_cast<float>(std::sin(th));
        const float bg_mean[3] = {(c0[0] + c1[0]) * 0.5f, (c0[1] + c1[1]) * 0.5f,
                                  (c0[2] + c1[2]) * 0.5f};
        float fg[3];
        for (int attempt = 0; attempt < 64; ++attempt) {
            float dist = 0;
            for (int c = 0; c < 3; ++c) {
                fg[c] = static_cast<float>(rng.uniform(0.02, 0.98));
                dist += std::abs(fg[c] - bg_mean[c]);
            }
            if (dist > 1.1f) break;
        }
        float fg2[3];
        for (int c = 0; c < 3; ++c)
            fg2[c] = std::clamp(fg[c] + (fg[c] > 0.5f ? -0.55f : 0.55f), 0.0f, 1.0f);
        const float cells = static_cast<float>(rng.uniform(3.5, 4.5));  // checker frequency
        const float phx = static_cast<float>(rng.uniform(0.0, 1.0));
        const float phy = static_cast<float>(rng.uniform(0.0, 1.0));

        Rng noise = Rng(rng.next_u64());
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float t =
                    0.5f + 0.5f * ((x - S / 2) * gx + (y - S / 2) * gy) / (0.7071f * S);
                const float tt = std::clamp(t, 0.0f, 1.0f);
                const float n = static_cast<float>(noise.uniform(-0.02, 0.02));
                float px[3];
                for (int c = 0; c < 3; ++c) px[c] = c0[c] + (c1[c] - c0[c]) * tt + n;

                // 2x2 supersampled shape coverage
                float cover = 0, tex = 0;
                for (int sy = 0; sy < 2; ++sy)
                    for (int sx = 0; sx < 2; ++sx) {
                        const float fx = x + 0.25f + 0.5f * sx - cx;
                        const float fy = y + 0.25f + 0.5f * sy - cy;
                        const float qx = (ct * fx + st * fy) / r;
                        const float qy = (-st * fx + ct * fy) / r;
                        if (!inside(shape, qx, qy)) continue;
                        cover += 0.25f;
                        if (checker) {
                            const int cxi = static_cast<int>(std::floor(qx * cells * 0.5f + phx));
                            const int cyi = static_cast<int>(std::floor(qy * cells * 0.5f + phy));
                            if ((cxi + cyi) & 1) tex += 0.25f;
                        }
                    }
                for (int c = 0; c < 3; ++c) {
                    const float obj = fg[c] + (fg2[c] - fg[c]) * (cover > 0 ? tex / cover : 0.0f) *
                                                  (checker ? 1.0f : 0.0f);
                    px[c] = px[c] * (1 - cover) + obj * cover;
                }
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(px[c], 0.0f, 1.0f);
            }

        // one small distractor dot
        for (int d = 0; d < 1; ++d) {
            const float dx = static_cast<float>(rng.uniform(0.05, 0.95)) * S;
            const float dy = static_cast<float>(rng.uniform(0.05, 0.95)) * S;
            const float dr = static_cast<float>(rng.uniform(0.02, 0.04)) * S;
            float dc[3];
            for (int c = 0; c < 3; ++c) dc[c] = static_cast<float>(rng.uniform(0.1, 0.9));
            const int y0 = std::max(0, static_cast<int>(dy - dr - 1));
            const int y1 = std::min(S - 1, static_cast<int>(dy + dr + 1));
            const int x0 = std::max(0, static_cast<int>(dx - dr - 1));
            const int x1 = std::min(S - 1, static_cast<int>(dx + dr + 1));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const float dd = (x - dx) * (x - dx) + (y - dy) * (y - dy);
                    if (dd > dr * dr) continue;
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = dc[c];
                }
        }
        return img;
    }

    std::array<float, 3> norm_mean() const override { return {0.5f, 0.5f, 0.5f}; }
    std::array<float, 3> norm_std() const override { return {0.26f, 0.26f, 0.26f}; }

  private:
    static bool inside(int shape, float qx, float qy) {
        const float ax = std::abs(qx), ay = std::abs(qy);
        switch (shape) {
            case 0: return qx * qx + qy * qy <= 1.0f;                          // disk
            case 1: {                                                          // ring
                const float d2 = qx * qx + qy * qy;
                return d2 <= 1.0f && d2 >= 0.3f;
            }
            case 2: return std::max(ax, ay) <= 1.0f && (ax <= 0.35f || ay <= 0.35f);  // cross
            case 3: return ax + ay <= 1.1f;                                    // diamond
            case 4: {                                                          // bars
                if (std::max(ax, ay) > 1.0f) return false;
                return static_cast<int>(std::floor((qy + 1.0f) * 2.0f)) % 2 == 0;
            }
        }
        return false;
    }

    std::uint64_t seed_;
    std::size_t n_;
    std::uint64_t split_tag_;
};

// ---------------------------------------------------------------- subsets

class SubsetDataset final : public Dataset {
  public:
    SubsetDataset(std::unique_ptr<Dataset> base, std::size_t n) : base_(std::move(base)) {
        // stratified by label, per-class order shuffled with a fixed master
        // seed, classes drained round-robin
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < base_->size(); ++i) by_class[base_->label(i)].push_back(i);
        std::vector<std::vector<std::size_t>> pools;
        for (auto& [cls, idx] : by_class) {
            Rng rng = Rng::substream(kSubsetMaster,
                                     {rngtag::kSubset, static_cast<std::uint64_t>(cls + 1)});
            for (std::size_t i = idx.size(); i > 1; --i)
                std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
            pools.push_back(std::move(idx));
        }
        n = std::min(n, base_->size());
        indices_.reserve(n);
        for (std::size_t round = 0; indices_.size() < n; ++round) {
            bool any = false;
            for (auto& pool : pools) {
                if (round < pool.size() && indices_.size() < n) {
                    indices_.push_back(pool[round]);
                    any = true;
                }
            }
            check<DataError>(any, "subset selection exhausted the dataset");
        }
    }

    std::size_t size() const override { return indices_.size(); }
    RawImage image(std::size_t i) const override { return base_->image(indices_[i]); }
    int label(std::size_t i) const override { return base_->label(indices_[i]); }
    int num_classes() const override { return base_->num_classes(); }
    std::array<float, 3> norm_mean() const override { return base_->norm_mean(); }
    std::array<float, 3> norm_std() const override { return base_->norm_std(); }

  private:
    std::unique_ptr<Dataset> base_;
    std::vector<std::size_t> indices_;
};

}  // namespace

AugParams aug_params_for(const Config& cfg) {
    AugParams p;
    p.resolution = cfg.resolution;
    if (cfg.dataset == "cifar10") {
        p.mean = {0.4914f, 0.4822f, 0.4465f};
        p.stdev = {0.2470f, 0.2435f, 0.2616f};
    } else if (cfg.dataset == "stl10") {
        p.mean = {0.4467f, 0.4398f, 0.4066f};
        p.stdev = {0.2603f, 0.2566f, 0.2713f};
    } else if (cfg.dataset == "synthetic") {
        p.mean = {0.5f, 0.5f, 0.5f};
        p.stdev = {0.26f, 0.26f, 0.26f};
    } else {
        p.mean = {0.485f, 0.456f, 0.406f};
        p.stdev = {0.229f, 0.224f, 0.225f};
    }
    return p;
}

std::unique_ptr<Dataset> open_dataset(const Config& cfg, Split split) {
    std::unique_ptr<Dataset> ds;
    if (cfg.dataset == "cifar10") {
        ds = std::make_unique<Cifar10Dataset>(cfg.data_root, split);
    } else if (cfg.dataset == "stl10") {
        ds = std::make_unique<Stl10Dataset>(cfg.data_root, split);
    } else if (cfg.dataset == "image_dir") {
        ds = std::make_unique<ImageDirDataset>(cfg.data_root, split);
    } else if (cfg.dataset == "synthetic") {
        const std::size_t n = split == Split::train
                                  ? (cfg.subset_size > 0 ? cfg.subset_size : 5000)
                                  : static_cast<std::size_t>(cfg.synth_test_size);
        return std::make_unique<SyntheticDataset>(cfg.synth_seed, n, split);
    } else {
        throw ValidationError("unknown dataset '" + cfg.dataset + "'");
    }
    if (split == Split::train && cfg.subset_size > 0 &&
        static_cast<std::size_t>(cfg.subset_size) < ds->size())
        ds = std::make_unique<SubsetDataset>(std::move(ds), cfg.subset_size);
    return ds;
}

// ---------------------------------------------------------------- file io

RawImage load_image_file(const std::string& path) {
    auto buf = read_file(path);
    check<DataError>(buf.size() >= 2, "empty image file: " + path);
    RawImage img;
    if (buf[0] == 'P' && (buf[1] == '6' || buf[1] == '5')) {
        const bool gray = buf[1] == '5';
        std::size_t pos = 2;
        auto next_int = [&]() {
            while (pos < buf.size()) {
                if (std::isspace(buf[pos])) {
                    ++pos;
                } else if (buf[pos] == '#') {
                    while (pos < buf.size() && buf[pos] != '\n') ++pos;
                } else {
                    break;
                }
            }
            long v = 0;
            bool any = false;
            while (pos < buf.size() && std::isdigit(buf[pos])) {
                v = v * 10 + (buf[pos++] - '0');
                any = true;
            }
            check<DataError>(any, "malformed pnm header: " + path);
            return v;
        };
        img.w = static_cast<int>(next_int());
        img.h = static_cast<int>(next_int());
        const long maxval = next_int();
        check<DataError>(maxval > 0 && maxval < 256, "unsupported pnm maxval: " + path);
        ++pos;  // single whitespace after header
        const std::size_t need = static_cast<std::size_t>(img.w) * img.h * (gray ? 1 : 3);
        check<DataError>(buf.size() - pos >= need, "truncated pnm payload: " + path);
        img.pix.resize(3 * static_cast<std::size_t>(img.h) * img.w);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                if (gray) {
                    const float v = buf[pos + static_cast<std::size_t>(y) * img.w + x] /
                                    static_cast<float>(maxval);
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
                } else {
                    const std::size_t o = pos + 3 * (static_cast<std::size_t>(y) * img.w + x);
                    for (int c = 0; c < 3; ++c)
                        img.at(c, y, x) = buf[o + c] / static_cast<float>(maxval);
                }
            }
        return img;
    }
    if (buf[0] == 'B' && buf[1] == 'M') {
        check<DataError>(buf.size() >= 54, "truncated bmp header: " + path);
        auto rd32 = [&](std::size_t o) {
            return static_cast<std::uint32_t>(buf[o]) | (buf[o + 1] << 8) | (buf[o + 2] << 16) |
                   (static_cast<std::uint32_t>(buf[o + 3]) << 24);
        };
        auto rd16 = [&](std::size_t o) { return buf[o] | (buf[o + 1] << 8); };
        const std::uint32_t off = rd32(10);
        const int w = static_cast<int>(rd32(18));
        const int h_raw = static_cast<int>(rd32(22));
        const bool bottom_up = h_raw > 0;
        const int h = std::abs(h_raw);
        check<DataError>(rd16(28) == 24 && rd32(30) == 0,
                         "only 24-bit uncompressed bmp supported: " + path);
        const std::size_t stride = (static_cast<std::size_t>(w) * 3 + 3) & ~std::size_t(3);
        check<DataError>(buf.size() >= off + stride * h, "truncated bmp payload: " + path);
        img.w = w;
        img.h = h;
        img.pix.resize(3 * static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
            const std::size_t row = off + stride * (bottom_up ? (h - 1 - y) : y);
            for (int x = 0; x < w; ++x) {
                img.at(2, y, x) = buf[row + 3 * x + 0] / 255.0f;
                img.at(1, y, x) = buf[row + 3 * x + 1] / 255.0f;
                img.at(0, y, x) = buf[row + 3 * x + 2] / 255.0f;
            }
        }
        return img;
    }
    throw DataError("undecodable image (expected ppm/pgm/bmp): " + path);
}

void write_ppm(const std::string& path, const RawImage& img) {
    std::ofstream out(path, std::ios::binary);
    check<DataError>(out.good(), "cannot write image: " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                row[3 * x + c] = static_cast<std::uint8_t>(
                    std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
}

// ---------------------------------------------------------------- augment

namespace {

struct CropBox {
    int x0 = 0, y0 = 0, w = 0, h = 0;
};

CropBox draw_crop(const RawImage& img, Rng& rng, const AugParams& p) {
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double area = rng.uniform(p.crop_area_min, p.crop_area_max) *
                            static_cast<double>(img.w) * img.h;
        const double logr =
            rng.uniform(std::log(p.crop_aspect_min), std::log(p.crop_aspect_max));
        const double ratio = std::exp(logr);
        const int cw = static_cast<int>(std::lround(std::sqrt(area * ratio)));
        const int ch = static_cast<int>(std::lround(std::sqrt(area / ratio)));
        if (cw >= 1 && ch >= 1 && cw <= img.w && ch <= img.h) {
            CropBox box;
            box.w = cw;
            box.h = ch;
            box.x0 = static_cast<int>(rng.uniform_int(img.w - cw + 1));
            box.y0 = static_cast<int>(rng.uniform_int(img.h - ch + 1));
            return box;
        }
    }
    // aspect-clamped center fallback
    CropBox box;
    const double in_ratio = static_cast<double>(img.w) / img.h;
    if (in_ratio < p.crop_aspect_min) {
        box.w = img.w;
        box.h = std::min(img.h, static_cast<int>(std::lround(img.w / p.crop_aspect_min)));
    } else if (in_ratio > p.crop_aspect_max) {
        box.h = img.h;
        box.w = std::min(img.w, static_cast<int>(std::lround(img.h * p.crop_aspect_max)));
    } else {
        box.w = img.w;
        box.h = img.h;
    }
    box.x0 = (img.w - box.w) / 2;
    box.y0 = (img.h - box.h) / 2;
    return box;
}

// bilinear resample of a crop region to res x res; output channel-major
void resample(const RawImage& img, const CropBox& box, int res, std::vector<float>& out) {
    out.resize(3 * static_cast<std::size_t>(res) * res);
    const double sx_scale = static_cast<double>(box.w) / res;
    const double sy_scale = static_cast<double>(box.h) / res;
    for (int y = 0; y < res; ++y) {
        double sy = (y + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(box.h - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, box.h - 1);
        const float fy = static_cast<float>(sy - y0);
        for (int x = 0; x < res; ++x) {
            double sx = (x + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(box.w - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, box.w - 1);
            const float fx = static_cast<float>(sx - x0);
            for (int c = 0; c < 3; ++c) {
                const float v00 = img.at(c, box.y0 + y0, box.x0 + x0);
                const float v01 = img.at(c, box.y0 + y0, box.x0 + x1);
                const float v10 = img.at(c, box.y0 + y1, box.x0 + x0);
                const float v11 = img.at(c, box.y0 + y1, box.x0 + x1);
                out[(static_cast<std::size_t>(c) * res + y) * res + x] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
}

inline float luma(const float* px, std::size_t plane, std::size_t i) {
    return kLumaR * px[i] + kLumaG * px[plane + i] + kLumaB * px[2 * plane + i];
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    const float d = mx - mn;
    s = mx > 0 ? d / mx : 0;
    if (d <= 0) {
        h = 0;
        return;
    }
    if (mx == r)
        h = (g - b) / d + (g < b ? 6.0f : 0.0f);
    else if (mx == g)
        h = (b - r) / d + 2.0f;
    else
        h = (r - g) / d + 4.0f;
    h /= 6.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    h = h - std::floor(h);
    const float hh = h * 6.0f;
    const int i = static_cast<int>(hh) % 6;
    const float f = hh - std::floor(hh);
    const float p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

void apply_jitter(std::vector<float>& v, int res, Rng& rng, const AugParams& p) {
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    const float fb = static_cast<float>(rng.uniform(1 - p.jitter_brightness, 1 + p.jitter_brightness));
    const float fc = static_cast<float>(rng.uniform(1 - p.jitter_contrast, 1 + p.jitter_contrast));
    const float fs = static_cast<float>(rng.uniform(1 - p.jitter_saturation, 1 + p.jitter_saturation));
    const float dh = static_cast<float>(rng.uniform(-p.jitter_hue, p.jitter_hue));
    int order[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (int oi = 0; oi < 4; ++oi) {
        switch (order[oi]) {
            case 0:  // brightness
                for (auto& x : v) x = std::clamp(x * fb, 0.0f, 1.0f);
                break;
            case 1: {  // contrast, blend towards mean gray
                double m = 0;
                for (std::size_t i = 0; i < plane; ++i) m += luma(v.data(), plane, i);
                const float mg = static_cast<float>(m / plane);
                for (auto& x : v) x = std::clamp(fc * x + (1 - fc) * mg, 0.0f, 1.0f);
                break;
            }
            case 2:  // saturation, blend towards per-pixel gray
                for (std::size_t i = 0; i < plane; ++i) {
                    const float g = luma(v.data(), plane, i);
                    for (int c = 0; c < 3; ++c) {
                        float& x = v[static_cast<std::size_t>(c) * plane + i];
                        x = std::clamp(fs * x + (1 - fs) * g, 0.0f, 1.0f);
                    }
                }
                break;
            case 3:  // hue rotation via hsv
                for (std::size_t i = 0; i < plane; ++i) {
                    float h, s, val;
                    rgb_to_hsv(v[i], v[plane + i], v[2 * plane + i], h, s, val);
                    hsv_to_rgb(h + dh, s, val, v[i], v[plane + i], v[2 * plane + i]);
                }
                break;
        }
    }
}

void apply_blur(std::vector<float>& v, int res, double sigma) {
    int ksize = static_cast<int>(std::lround(0.1 * res));
    if (ksize % 2 == 0) ++ksize;
    ksize = std::max(3, ksize);
    const int half = ksize / 2;
    std::vector<float> kern(ksize);
    float sum = 0;
    for (int i = 0; i < ksize; ++i) {
        const double d = i - half;
        kern[i] = static_cast<float>(std::exp(-d * d / (2 * sigma * sigma)));
        sum += kern[i];
    }
    for (auto& k : kern) k /= sum;
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    std::vector<float> tmp(plane);
    for (int c = 0; c < 3; ++c) {
        float* ch = v.data() + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < res; ++y)  // horizontal, replicate borders
            for (int x = 0; x < res; ++x) {
                float acc = 0;
                for (int i = 0; i < ksize; ++i)
                    acc += kern[i] * ch[y * res + std::clamp(x + i - half, 0, res - 1)];
                tmp[static_cast<std::size_t>(y) * res + x] = acc;
            }
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                float acc = 0;
                for (int i = 0; i < ksize; ++i)
                    acc += kern[i] * tmp[static_cast<std::size_t>(std::clamp(y + i - half, 0, res - 1)) * res + x];
                ch[y * res + x] = acc;
            }
    }
}

}  // namespace

std::vector<float> augment_view(const RawImage& img, Rng& rng, const AugParams& p,
                                const AugOverrides& ov) {
    check<DataError>(img.h >= 1 && img.w >= 1 && !img.pix.empty(), "augment_view on empty image");
    const int res = p.resolution;
    CropBox box;
    if (ov.force_full_crop) {
        box = CropBox{0, 0, img.w, img.h};
    } else {
        box = draw_crop(img, rng, p);
    }
    std::vector<float> v;
    resample(img, box, res, v);

    const bool stochastic = !ov.disable_stochastic;
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    if (stochastic && rng.bernoulli(p.p_flip)) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < res; ++y) {
                float* row = v.data() + static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * res;
                std::reverse(row, row + res);
            }
    }
    if (stochastic && rng.bernoulli(p.p_jitter)) apply_jitter(v, res, rng, p);
    if (stochastic && rng.bernoulli(p.p_gray)) {
        for (std::size_t i = 0; i < plane; ++i) {
            const float g = luma(v.data(), plane, i);
            v[i] = v[plane + i] = v[2 * plane + i] = g;
        }
    }
    if (stochastic && rng.bernoulli(p.p_blur))
        apply_blur(v, res, rng.uniform(p.blur_sigma_min, p.blur_sigma_max));

    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            float& x = v[static_cast<std::size_t>(c) * plane + i];
            x = (x - p.mean[c]) / p.stdev[c];
        }
    return v;
}

std::vector<float> resize_normalize(const RawImage& img, const AugParams& p) {
    std::vector<float> v;
    resample(img, CropBox{0, 0, img.w, img.h}, p.resolution, v);
    const std::size_t plane = static_cast<std::size_t>(p.resolution) * p.resolution;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            float& x = v[static_cast<std::size_t>(c) * plane + i];
            x = (x - p.mean[c]) / p.stdev[c];
        }
    return v;
}

ViewSet make_view_set(const RawImage& img, int extra_targets, Rng& rng, const AugParams& p) {
    check<ValidationError>(extra_targets >= 0, "extra target count must be >= 0");
    ViewSet vs;
    std::vector<std::uint64_t> seeds(2 + extra_targets);
    for (auto& s : seeds) s = rng.next_u64();
    Rng r1(seeds[0]), r2(seeds[1]);
    vs.view1 = augment_view(img, r1, p);
    vs.view2 = augment_view(img, r2, p);
    for (int e = 0; e < extra_targets; ++e) {
        Rng re(seeds[2 + e]);
        vs.extra_views.push_back(augment_view(img, re, p));
    }
    return vs;
}

Tensor4<float> stack_views(const std::vector<const std::vector<float>*>& views, int res) {
    Tensor4<float> out(static_cast<int>(views.size()), 3, res, res);
    const std::size_t stride = 3 * static_cast<std::size_t>(res) * res;
    for (std::size_t i = 0; i < views.size(); ++i) {
        check<ShapeError>(views[i]->size() == stride, "view buffer size mismatch");
        std::memcpy(out.data() + i * stride, views[i]->data(), stride * sizeof(float));
    }
    return out;
}

}  // namespace maskdeep::data
