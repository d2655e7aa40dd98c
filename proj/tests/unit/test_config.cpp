#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "maskdeep/config.hpp"

using namespace maskdeep;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& text) {
    static int counter = 0;
    const std::string path =
        (fs::temp_directory_path() / ("mdcfg_" + std::to_string(counter++) + ".txt")).string();
    std::ofstream(path) << text;
    return path;
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("empty file yields the documented defaults") {
        Config cfg = load_config(temp_file(""));
        CHECK(cfg.levels == std::vector<int>{3, 4, 5});
        CHECK(cfg.patch_count == 12);
        CHECK(cfg.group_count == 16);
        CHECK(cfg.extra_targets == 4);
        CHECK(cfg.ema_lambda0 == 0.99);
        CHECK(cfg.resolution == 128);
        CHECK(cfg.widths == std::array<int, 4>{16, 32, 64, 128});
        CHECK(cfg.hdm_dim == 64);
        CHECK(cfg.pred_hidden == 512);
        CHECK(cfg.pred_out == 128);
        CHECK(cfg.epochs == 50);
        CHECK(cfg.resolved_warmup_epochs() == 5);  // 10% of epochs
    }

    TEST_CASE("explicit fields override defaults") {
        Config cfg = load_config(temp_file("[hdm]\nlevels = 3,4,5\n[sampling]\npatch_count = 12\n"
                                           "group_count = 16\nextra_targets = 4\n"));
        CHECK(cfg.levels == std::vector<int>{3, 4, 5});
        CHECK(cfg.patch_count == 12);
        CHECK(cfg.group_count == 16);
        CHECK(cfg.extra_targets == 4);
    }

    TEST_CASE("invariant violations name the field") {
        CHECK_THROWS_WITH_AS(load_config(temp_file("patch_count = 0\n")),
                             doctest::Contains("patch_count"), ValidationError);
        CHECK_THROWS_WITH_AS(load_config(temp_file("levels = 3,4,6\n")),
                             doctest::Contains("levels"), ValidationError);
        CHECK_THROWS_WITH_AS(load_config(temp_file("levels = 4,3,5\n")),
                             doctest::Contains("levels"), ValidationError);
        CHECK_THROWS_WITH_AS(load_config(temp_file("ema_lambda0 = 1.5\n")),
                             doctest::Contains("ema_lambda0"), ValidationError);
        CHECK_THROWS_WITH_AS(load_config(temp_file("pred_out = 99\n")),
                             doctest::Contains("pred_out"), ValidationError);
        CHECK_THROWS_AS(load_config(temp_file("no_such_key = 1\n")), ValidationError);
        CHECK_THROWS_AS(load_config(temp_file("seed = 1\nseed = 2\n")), ValidationError);
    }

    TEST_CASE("missing file is config-not-found") {
        CHECK_THROWS_AS(load_config("/nonexistent/dir/cfg.txt"), ConfigNotFound);
    }

    TEST_CASE("serialize/reload round trip is identity") {
        Config cfg;
        cfg.levels = {2, 3, 4, 5};
        cfg.base_lr = 0.03125e-3;
        cfg.weight_decay = 1.7e-9;
        cfg.hierarchical = "naive";
        cfg.seed = 123456789ull;
        cfg.subset_size = 777;
        const std::string text = serialize_config(cfg);
        Config re = parse_config(text);
        CHECK(serialize_config(re) == text);
        CHECK(re.base_lr == cfg.base_lr);
        CHECK(re.weight_decay == cfg.weight_decay);
        CHECK(re.levels == cfg.levels);
    }

    TEST_CASE("ablation grid varies only the axis") {
        Config base;
        SUBCASE("hierarchical") {
            auto grid = ablation_grid(base, "hierarchical", {"naive", "on"});
            REQUIRE(grid.size() == 2);
            CHECK(grid[0].hierarchical == "naive");
            CHECK(grid[1].hierarchical == "on");
            Config a = grid[0];
            a.hierarchical = base.hierarchical;
            CHECK(serialize_config(a) == serialize_config(base));
        }
        SUBCASE("patch_count six values") {
            auto grid = ablation_grid(base, "patch_count", {"4", "8", "12", "16", "20", "24"});
            REQUIRE(grid.size() == 6);
            for (std::size_t i = 0; i < grid.size(); ++i) {
                Config a = grid[i];
                a.patch_count = base.patch_count;
                CHECK(serialize_config(a) == serialize_config(base));
            }
            CHECK(grid[3].patch_count == 16);
        }
        SUBCASE("extra targets") {
            auto grid = ablation_grid(base, "extra_targets", {"0", "2", "4", "6"});
            REQUIRE(grid.size() == 4);
            CHECK(grid[0].extra_targets == 0);
            CHECK(grid[3].extra_targets == 6);
        }
        SUBCASE("unknown axis") {
            CHECK_THROWS_AS(ablation_grid(base, "not_a_field", {"1"}), ValidationError);
        }
        SUBCASE("illegal value for the axis") {
            CHECK_THROWS_AS(ablation_grid(base, "patch_count", {"0"}), ValidationError);
        }
    }

    TEST_CASE("effective lr follows the linear scaling rule") {
        Config cfg;
        cfg.base_lr = 0.02;
        cfg.reference_batch = 1024;
        cfg.batch_size = 2048;
        cfg.pred_out = cfg.widths[3];
        CHECK(cfg.effective_lr() == doctest::Approx(0.04));
    }
}
