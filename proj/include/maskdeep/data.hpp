#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "maskdeep/config.hpp"
#include "maskdeep/core/rng.hpp"
#include "maskdeep/core/tensor.hpp"

namespace maskdeep::data {

// Decoded image, channel-major (3 x h x w), values in [0, 1].
struct RawImage {
    int h = 0, w = 0;
    std::vector<float> pix;

    float at(int c, int y, int x) const {
        return pix[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    float& at(int c, int y, int x) { return pix[(static_cast<std::size_t>(c) * h + y) * w + x]; }
};

enum class Split { train, test };

class Dataset {
  public:
    virtual ~Dataset() = default;
    virtual std::size_t size() const = 0;
    virtual RawImage image(std::size_t i) const = 0;
    virtual int label(std::size_t i) const = 0;  // -1 when unlabeled
    virtual int num_classes() const = 0;
    virtual std::array<float, 3> norm_mean() const = 0;
    virtual std::array<float, 3> norm_std() const = 0;
};

// Opens the configured dataset; subset_size applies to the train split as a
// deterministic stratified subset (independent of the run seed, so different
// run seeds train on the same data).
std::unique_ptr<Dataset> open_dataset(const Config& cfg, Split split);

// Image file io (self-contained decoders; no external image libraries).
RawImage load_image_file(const std::string& path);  // .ppm/.pgm/.bmp
void write_ppm(const std::string& path, const RawImage& img);

struct AugParams {
    int resolution = 128;
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> stdev{0.25f, 0.25f, 0.25f};
    // MoCo-v2 lineage constants
    double crop_area_min = 0.2, crop_area_max = 1.0;
    double crop_aspect_min = 3.0 / 4.0, crop_aspect_max = 4.0 / 3.0;
    double p_flip = 0.5;
    double p_jitter = 0.8;
    double jitter_brightness = 0.4, jitter_contrast = 0.4, jitter_saturation = 0.4,
           jitter_hue = 0.1;
    double p_gray = 0.2;
    double p_blur = 0.5;
    double blur_sigma_min = 0.1, blur_sigma_max = 2.0;

    static AugParams from(const Config& cfg, const Dataset& ds) {
        AugParams p;
        p.resolution = cfg.resolution;
        p.mean = ds.norm_mean();
        p.stdev = ds.norm_std();
        return p;
    }
};

// Recipe normalization constants without touching any files (viz path).
AugParams aug_params_for(const Config& cfg);

// Test hooks: defeat the stochastic stages to expose the deterministic core.
struct AugOverrides {
    bool force_full_crop = false;
    bool disable_stochastic = false;  // flip/jitter/gray/blur probabilities -> 0
};

// One augmented view: bilinear random-resized crop, flip, color jitter,
// grayscale, gaussian blur, then per-channel normalization. Pure in
// (image, rng state, params).
std::vector<float> augment_view(const RawImage& img, Rng& rng, const AugParams& params,
                                const AugOverrides& ov = {});

// Deterministic resize + normalize (the visualization preprocessing).
std::vector<float> resize_normalize(const RawImage& img, const AugParams& params);

struct ViewSet {
    std::vector<float> view1, view2;
    std::vector<std::vector<float>> extra_views;  // momentum-only
    long image_id = -1;
};

// 2 + E independent augmented draws from one source image.
ViewSet make_view_set(const RawImage& img, int extra_targets, Rng& rng, const AugParams& params);

// Stacks per-image buffers (each 3*res*res floats) into a batch tensor.
Tensor4<float> stack_views(const std::vector<const std::vector<float>*>& views, int resolution);

}  // namespace maskdeep::data
