#include <catch_amalgamated.hpp>

#include <slant/tiling.hpp>

#include "oracles.hpp"
#include "support.hpp"

using namespace slant;

namespace {

LabelMap random_labels(Rng& rng, Dims3 d, int n_labels) {
    std::vector<int> ids;
    for (int i = 0; i < n_labels; ++i) ids.push_back(i);
    LabelMap m(d, {1, 1, 1}, numbered_vocabulary(ids));
    for (auto& l : m.labels) l = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_labels)));
    return m;
}

std::vector<TilePrediction> tiles_of(const LabelMap& m, const TilePlan& plan) {
    std::vector<TilePrediction> out;
    for (const auto& o : plan.origins) out.emplace_back(o, extract_tile(m, o, plan.tile_shape));
    return out;
}

}  // namespace

TEST_CASE("D=96, k=3, t=40 gives origins 0, 28, 56 and covers every index") {
    const auto o = axis_origins(96, 3, 40);
    CHECK(o == std::vector<int>{0, 28, 56});
    std::vector<int> hits(96, 0);
    for (int start : o)
        for (int i = start; i < start + 40; ++i) ++hits[static_cast<std::size_t>(i)];
    CHECK(std::count(hits.begin(), hits.end(), 0) == 0);
}

TEST_CASE("single tile spanning the axis") {
    CHECK(axis_origins(32, 1, 32) == std::vector<int>{0});
    CHECK(plan_tiles({32, 32, 32}, {1, 1, 1}, {32, 32, 32}).origins == std::vector<Dims3>{{0, 0, 0}});
}

TEST_CASE("3x3x3 plan has 27 tiles in lexicographic order") {
    const auto plan = plan_tiles({32, 32, 32}, {3, 3, 3}, {12, 12, 12});
    REQUIRE(plan.size() == 27);
    CHECK(std::is_sorted(plan.origins.begin(), plan.origins.end()));
    CHECK(plan.origins.front() == Dims3{0, 0, 0});
    CHECK(plan.origins.back() == Dims3{20, 20, 20});
}

TEST_CASE("coverage for every valid (D, k, t) with D up to 32") {
    for (int D = 4; D <= 32; ++D)
        for (int k = 1; k <= 3; ++k)
            for (int t = 1; t <= D; ++t) {
                if (k * t < D) {
                    CHECK_THROWS_AS(axis_origins(D, k, t), Error);
                    continue;
                }
                const auto o = axis_origins(D, k, t);
                std::vector<int> hits(static_cast<std::size_t>(D), 0);
                for (int start : o) {
                    REQUIRE(start >= 0);
                    REQUIRE(start + t <= D);
                    for (int i = start; i < start + t; ++i) ++hits[static_cast<std::size_t>(i)];
                }
                REQUIRE(std::count(hits.begin(), hits.end(), 0) == 0);
            }
}

TEST_CASE("invalid plans") {
    CHECK_THROWS_AS(plan_tiles({32, 32, 32}, {3, 3, 3}, {40, 12, 12}), Error);  // t > D
    CHECK_THROWS_AS(plan_tiles({32, 32, 32}, {2, 3, 3}, {12, 12, 12}), Error);  // k t < D
}

TEST_CASE("extract_tile") {
    Rng rng(3);
    Volume3D v({9, 7, 5}, {0.5, 1.0, 2.0});
    for (auto& x : v.data) x = static_cast<float>(rng.uniform());
    SECTION("whole-volume tile is a copy") {
        const auto t = extract_tile(v, {0, 0, 0}, v.dims());
        CHECK(same_volume(t, v));
    }
    SECTION("1x1x1 tile is the voxel") {
        CHECK(extract_tile(v, {4, 2, 3}, {1, 1, 1}).data.at(0) == v.at(4, 2, 3));
    }
    SECTION("random tiles equal a loop copy") {
        for (int trial = 0; trial < 50; ++trial) {
            Dims3 s, o;
            for (int a = 0; a < 3; ++a) {
                s[a] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(v.dims()[a])));
                o[a] = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.dims()[a] - s[a] + 1)));
            }
            const auto t = extract_tile(v, o, s);
            CHECK(t.data == slant_test::loop_extract(v, o, s));
            CHECK(t.voxel_size() == v.voxel_size());
        }
    }
    SECTION("out of bounds") {
        CHECK_THROWS_AS(extract_tile(v, {5, 0, 0}, {5, 1, 1}), Error);
        CHECK_THROWS_AS(extract_tile(v, {-1, 0, 0}, {1, 1, 1}), Error);
    }
}

TEST_CASE("fusion") {
    Rng rng(5);
    const auto plan = plan_tiles({12, 12, 12}, {2, 2, 2}, {8, 8, 8});
    const auto vocab = numbered_vocabulary(std::vector<int>{0, 1, 2, 3, 4, 5});

    SECTION("unanimous constant tiles") {
        std::vector<TilePrediction> tiles;
        for (const auto& o : plan.origins) tiles.emplace_back(o, LabelMap(plan.tile_shape, {1, 1, 1}, vocab, 2));
        const auto fused = fuse_predictions(tiles, plan);
        CHECK(std::all_of(fused.labels.begin(), fused.labels.end(), [](int l) { return l == 2; }));
    }
    SECTION("two-way tie goes to the smaller label") {
        const auto p2 = plan_tiles({6, 1, 1}, {2, 1, 1}, {4, 1, 1});  // voxels 2 and 3 are covered twice
        std::vector<TilePrediction> tiles{{p2.origins[0], LabelMap({4, 1, 1}, {1, 1, 1}, vocab, 5)},
                                          {p2.origins[1], LabelMap({4, 1, 1}, {1, 1, 1}, vocab, 3)}};
        const auto fused = fuse_predictions(tiles, p2);
        CHECK(fused.labels == std::vector<std::int32_t>{5, 5, 3, 3, 3, 3});
    }
    SECTION("random votes equal the histogram oracle, in any tile order") {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<TilePrediction> tiles;
            for (const auto& o : plan.origins) tiles.emplace_back(o, random_labels(rng, plan.tile_shape, 6));
            const auto expect = slant_test::histogram_fuse(tiles, plan.volume_dims);
            CHECK(fuse_predictions(tiles, plan).labels == expect);
            rng.shuffle(tiles);
            CHECK(fuse_predictions(tiles, plan).labels == expect);
        }
    }
    SECTION("extract then fuse is the identity") {
        for (int trial = 0; trial < 10; ++trial) {
            const auto m = random_labels(rng, {12, 12, 12}, 5);
            CHECK(fuse_predictions(tiles_of(m, plan), plan) == m);
        }
    }
    SECTION("a strict majority wins regardless of tie-break") {
        const auto p3 = plan_tiles({4, 1, 1}, {3, 1, 1}, {4, 1, 1});  // three identical tiles
        std::vector<TilePrediction> tiles{{p3.origins[0], LabelMap({4, 1, 1}, {1, 1, 1}, vocab, 4)},
                                          {p3.origins[1], LabelMap({4, 1, 1}, {1, 1, 1}, vocab, 1)},
                                          {p3.origins[2], LabelMap({4, 1, 1}, {1, 1, 1}, vocab, 4)}};
        const auto fused = fuse_predictions(tiles, p3);
        CHECK(std::all_of(fused.labels.begin(), fused.labels.end(), [](int l) { return l == 4; }));
    }
    SECTION("missing or misshapen tiles") {
        auto tiles = tiles_of(random_labels(rng, {12, 12, 12}, 3), plan);
        auto short_list = tiles;
        short_list.pop_back();
        CHECK_THROWS_AS(fuse_predictions(short_list, plan), Error);
        auto bad_shape = tiles;
        bad_shape[0].second = LabelMap({7, 8, 8}, {1, 1, 1}, vocab);
        CHECK_THROWS_AS(fuse_predictions(bad_shape, plan), Error);
        auto bad_origin = tiles;
        bad_origin[0].first = {1, 1, 1};
        CHECK_THROWS_AS(fuse_predictions(bad_origin, plan), Error);
    }
}
