#include <doctest.h>

#include <nlohmann/json.hpp>

#include "panoattn/errors.hpp"
#include "panoattn/geometry.hpp"
#include "panoattn/rng.hpp"
#include "panoattn/verify/oracles.hpp"

using namespace panoattn;

TEST_SUITE("geometry") {

TEST_CASE("paper rig window counts") {
    const auto layout = build_layout(paper_rig());
    REQUIRE(layout.num_levels() == 4);
    CHECK(layout.level(0).pano_h == 72);
    CHECK(layout.level(0).pano_w == 768);
    CHECK(layout.level(0).pano_w == 6 * 1024 / 8);
    CHECK(layout.level(0).windows_roi == 384);
    CHECK(layout.level(0).windows_mv == 576);
    const std::size_t mv[] = {576, 144, 36, 12}, roi[] = {384, 96, 96, 8};
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(layout.level(l).windows_mv == mv[l]);
        CHECK(layout.level(l).windows_roi == roi[l]);
    }
}

TEST_CASE("single camera whole-map window") {
    RigConfig rig;
    rig.num_cameras = 1;
    rig.image_height = 24;
    rig.image_width = 256;
    rig.ring_order = {0};
    rig.levels = {{8, {3, 32}, {0, 0}, {3, 32}, {0, 0}}};
    const auto layout = build_layout(rig);
    CHECK(layout.level(0).windows_mv == 1);
    CHECK(layout.level(0).windows_roi == 1);
}

TEST_CASE("divisibility errors name level and axis") {
    auto rig = desk_rig();
    rig.levels[1].roi_window = {4, 4};  // level 1 panorama is 6 x 48
    try {
        (void)build_layout(rig);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("level 1") != std::string::npos);
        CHECK(msg.find("height") != std::string::npos);
    }
}

TEST_CASE("rig invariants are enforced") {
    auto rig = desk_rig();
    rig.ring_order = {0, 1, 2, 3, 4, 4};
    CHECK_THROWS_AS((void)build_layout(rig), ConfigError);
    rig = desk_rig();
    rig.levels[1].stride = rig.levels[0].stride;
    CHECK_THROWS_AS((void)build_layout(rig), ConfigError);
    rig = desk_rig();
    rig.levels[0].roi_shift = {4, 0};  // not smaller than the window height
    CHECK_THROWS_AS((void)build_layout(rig), ConfigError);
    rig = desk_rig();
    rig.levels.clear();
    CHECK_THROWS_AS((void)build_layout(rig), ConfigError);
}

TEST_CASE("partition examples") {
    const auto layout = build_layout(paper_rig());
    const auto plain = partition_windows(layout, 0, WindowKind::roi, false);
    CHECK(plain.forward(0).window == 0);
    CHECK(plain.forward(0).slot == 0);
    const auto shifted = partition_windows(layout, 0, WindowKind::roi, true);
    const std::size_t cell = 6 * 768 + 6;
    CHECK(shifted.forward(cell).window == 0);
    CHECK(shifted.forward(cell).slot == 0);
    CHECK(shifted.num_windows() == plain.num_windows());
    CHECK(shifted.slots() == plain.slots());

    // Level 3 ROI shift is (0, 0).
    const auto p3 = partition_windows(layout, 3, WindowKind::roi, false);
    const auto s3 = partition_windows(layout, 3, WindowKind::roi, true);
    CHECK(p3.forward_map().size() == s3.forward_map().size());
    bool same = true;
    for (std::size_t c = 0; c < p3.cells(); ++c) {
        same = same && p3.forward(c).window == s3.forward(c).window && p3.forward(c).slot == s3.forward(c).slot;
    }
    CHECK(same);
}

TEST_CASE("partitions are bijective on every desk and paper level") {
    for (const auto& rig : {desk_rig(), paper_rig()}) {
        const auto layout = build_layout(rig);
        for (std::size_t l = 0; l < layout.num_levels(); ++l) {
            for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
                for (bool shifted : {false, true}) {
                    const auto err = verify::check_partition(partition_windows(layout, l, kind, shifted));
                    CHECK_MESSAGE(!err, (err ? *err : ""));
                }
            }
        }
    }
}

TEST_CASE("row segments mark vertically wrapped cells") {
    const auto p = WindowPartition::make({6, 8}, {3, 4}, {1, 2});
    CHECK(p.has_vertical_wrap());
    for (std::size_t c = 0; c < p.cells(); ++c) CHECK(p.row_segment(c) == (c / 8 < 1 ? 1 : 0));
    const auto h = WindowPartition::make({6, 8}, {3, 4}, {0, 2});
    CHECK_FALSE(h.has_vertical_wrap());
}

TEST_CASE("cyclic shift") {
    Tensor<double> m({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(cyclic_shift(m, 0, 0) == m);
    CHECK(cyclic_shift(m, 0, 1).data()[0] == 3);
    const Tensor<double> want({1, 1, 2, 3}, {3, 1, 2, 6, 4, 5});
    CHECK(cyclic_shift(m, 0, 1) == want);
    CHECK(cyclic_shift(m, 2, 3) == m);
    CHECK(cyclic_shift(m, -2, -3) == m);
    CHECK_THROWS_AS(cyclic_shift(m, 3, 0), ArgumentError);
    CHECK_THROWS_AS(cyclic_shift(m, 0, -4), ArgumentError);
}

TEST_CASE("cyclic shift inverse on random draws") {
    Rng rng(11);
    Tensor<double> m({2, 3, 12, 96});
    for (double& v : m.data()) v = rng.normal();
    for (int i = 0; i < 1000; ++i) {
        const long dy = static_cast<long>(rng.below(25)) - 12;
        const long dx = static_cast<long>(rng.below(193)) - 96;
        REQUIRE(cyclic_shift(cyclic_shift(m, dy, dx), -dy, -dx) == m);
    }
}

TEST_CASE("gather and scatter") {
    Tensor<double> m({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) m[i] = static_cast<double>(i);
    const auto p = WindowPartition::make({4, 4}, {2, 2}, {0, 0});
    const auto w = gather_windows(m, p);
    REQUIRE(w.shape() == Shape{4, 4, 1});
    CHECK(w.at({1, 0, 0}) == m.at({0, 0, 0, 2}));
    CHECK(scatter_windows(w, p, 1) == m);

    Tensor<double> c({2, 3, 12, 96}, 2.5);
    const auto layout = build_layout(desk_rig());
    const auto pc = partition_windows(layout, 0, WindowKind::roi, true);
    const auto wc = gather_windows(c, pc);
    for (double v : wc.data()) CHECK(v == 2.5);

    Rng rng(3);
    for (double& v : c.data()) v = rng.normal();
    for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
        for (bool s : {false, true}) {
            const auto part = partition_windows(layout, 0, kind, s);
            CHECK(scatter_windows(gather_windows(c, part), part, 2) == c);
        }
    }
    Tensor<double> wrong({1, 1, 5, 4});
    CHECK_THROWS_AS(gather_windows(wrong, p), ArgumentError);
}

TEST_CASE("rig JSON round trip") {
    const auto rig = paper_rig();
    const nlohmann::json j = rig;
    CHECK(j.contains("cameras"));
    CHECK(j.contains("image_size"));
    CHECK(j.contains("ring_order"));
    CHECK(j.at("levels").size() == 4);
    CHECK(j.get<RigConfig>() == rig);
    CHECK_THROWS_AS(nlohmann::json::parse("{\"cameras\": 6}").get<RigConfig>(), FormatError);
}

TEST_CASE("pyramid validation") {
    const auto layout = build_layout(desk_rig());
    FeaturePyramid<double> p;
    for (const auto& g : layout.levels()) p.levels.emplace_back(Shape{1, 4, g.pano_h, g.pano_w});
    CHECK_NOTHROW(validate_pyramid(p, layout));
    p.levels[1][3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(validate_pyramid(p, layout), NumericError);
    p.levels[1][3] = 0;
    p.levels[2] = Tensor<double>({1, 5, 3, 24});
    CHECK_THROWS_AS(validate_pyramid(p, layout), ArgumentError);
}

}
