#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "maskdeep/data.hpp"
#include "maskdeep/dispatch.hpp"
#include "test_util.hpp"

using namespace maskdeep;
namespace fs = std::filesystem;

namespace {

Config smoke_config() {
    Config cfg = testutil::tiny_config();
    cfg.subset_size = 16;
    cfg.epochs = 1;
    cfg.warmup_epochs = 0;
    cfg.probe_epochs = 2;
    return cfg;
}

}  // namespace

TEST_SUITE("dispatch") {
    TEST_CASE("pretrain smoke: checkpoint plus populated metrics log") {
        Config cfg = smoke_config();
        DispatchOptions opts;
        opts.out_dir = testutil::fresh_dir("disp_pre");
        CHECK(dispatch("pretrain", cfg, opts) == 0);
        CHECK(fs::exists(fs::path(opts.out_dir) / "checkpoints" / "ckpt_final.bin"));
        std::ifstream metrics(fs::path(opts.out_dir) / "metrics.csv");
        std::string line;
        int rows = 0;
        while (std::getline(metrics, line))
            if (!line.empty()) ++rows;
        CHECK(rows >= 2);  // header + at least one record
        CHECK(fs::exists(fs::path(opts.out_dir) / "config.txt"));
    }

    TEST_CASE("probe without a checkpoint is checkpoint-not-found") {
        Config cfg = smoke_config();
        DispatchOptions opts;
        opts.out_dir = testutil::fresh_dir("disp_probe");
        CHECK(dispatch("probe", cfg, opts) == 1);  // checkpoint-not-found
        opts.checkpoint = opts.out_dir + "/missing.bin";
        CHECK(dispatch("probe", cfg, opts) == 1);
    }

    TEST_CASE("probe on a trained checkpoint writes a report") {
        Config cfg = smoke_config();
        DispatchOptions pre;
        pre.out_dir = testutil::fresh_dir("disp_pp");
        REQUIRE(dispatch("pretrain", cfg, pre) == 0);
        DispatchOptions opts;
        opts.out_dir = pre.out_dir;
        opts.checkpoint = pre.out_dir + "/checkpoints/ckpt_final.bin";
        CHECK(dispatch("probe", cfg, opts) == 0);
        CHECK(fs::exists(fs::path(opts.out_dir) / "linear_probe_report.txt"));
        opts.knn = true;
        CHECK(dispatch("probe", cfg, opts) == 0);
        CHECK(fs::exists(fs::path(opts.out_dir) / "knn_probe_report.txt"));
    }

    TEST_CASE("random-init baseline probe needs no checkpoint") {
        Config cfg = smoke_config();
        DispatchOptions opts;
        opts.out_dir = testutil::fresh_dir("disp_rand");
        opts.random_init = true;
        CHECK(dispatch("probe", cfg, opts) == 0);
    }

    TEST_CASE("ablate produces one directory per value and a summary table") {
        Config cfg = smoke_config();
        DispatchOptions opts;
        opts.out_dir = testutil::fresh_dir("disp_abl");
        opts.axis = "group_count";
        opts.values = {"1", "2", "4"};
        opts.seeds_override = 1;
        CHECK(dispatch("ablate", cfg, opts) == 0);
        CHECK(fs::is_directory(fs::path(opts.out_dir) / "group_count=1"));
        CHECK(fs::is_directory(fs::path(opts.out_dir) / "group_count=2"));
        CHECK(fs::is_directory(fs::path(opts.out_dir) / "group_count=4"));
        CHECK(fs::exists(fs::path(opts.out_dir) / "summary.txt"));
        CHECK(fs::exists(fs::path(opts.out_dir) / "group_count=2" / "seed0" /
                         "linear_probe_report.txt"));
    }

    TEST_CASE("viz writes figures for a checkpoint and an input image") {
        Config cfg = smoke_config();
        cfg.resolution = 64;  // cluster seeds need P5 capacity >= 2
        DispatchOptions pre;
        pre.out_dir = testutil::fresh_dir("disp_vz");
        REQUIRE(dispatch("pretrain", cfg, pre) == 0);
        // input image on disk
        auto ds = data::open_dataset(cfg, data::Split::train);
        const std::string img_path = pre.out_dir + "/input.ppm";
        data::write_ppm(img_path, ds->image(0));

        DispatchOptions opts;
        opts.out_dir = pre.out_dir;
        opts.checkpoint = pre.out_dir + "/checkpoints/ckpt_final.bin";
        opts.image = img_path;
        opts.viz_seeds = 2;
        CHECK(dispatch("viz", cfg, opts) == 0);
        CHECK(fs::exists(fs::path(opts.out_dir) / "figures" / "input_cam_P3.ppm"));
        CHECK(fs::exists(fs::path(opts.out_dir) / "figures" / "input_cluster_P5.ppm"));
    }

    TEST_CASE("unknown commands are usage errors") {
        Config cfg = smoke_config();
        CHECK(dispatch("transmogrify", cfg, {}) == 2);
    }
}
