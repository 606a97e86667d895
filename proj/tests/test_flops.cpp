#include <doctest.h>

#include <nlohmann/json.hpp>

#include "panoattn/errors.hpp"
#include "panoattn/flops.hpp"

using namespace panoattn;

namespace {

RigConfig unit_rig() {
    RigConfig rig;
    rig.num_cameras = 1;
    rig.ring_order = {0};
    rig.image_height = 1;
    rig.image_width = 1;
    rig.levels = {{1, {1, 1}, {0, 0}, {1, 1}, {0, 0}}};
    return rig;
}

}  // namespace

TEST_SUITE("flops") {

TEST_CASE("unit sizes") {
    const auto layout = build_layout(unit_rig());
    CHECK(flops_full(layout, 0, 1, 1) == 1);
    const auto w = flops_windowed(layout, 0, WindowKind::mv_axis, 1, 1);
    CHECK(w.count == 1);
    CHECK(w.windows == 1);
    CHECK(w.ratio == Rational{1, 1});
}

TEST_CASE("paper rig counts") {
    const auto layout = build_layout(paper_rig());
    // n = 6 * 72 * 128 = 55296 tokens at level 0; n^2 * 256 MACs.
    CHECK(flops_full(layout, 0, 1, 256) == 782757789696ULL);
    CHECK(flops_full(layout, 0, 2, 256) == 2 * 782757789696ULL);
    CHECK(flops_full(layout, 0, 1, 512) == 2 * flops_full(layout, 0, 1, 256));
    CHECK(flops_projection(layout, 0, 1, 256) == 4ULL * 55296 * 256 * 256);

    const std::size_t mv[] = {576, 144, 36, 12}, roi[] = {384, 96, 96, 8};
    for (std::size_t l = 0; l < 4; ++l) {
        const auto a = flops_windowed(layout, l, WindowKind::mv_axis, 1, 256);
        const auto b = flops_windowed(layout, l, WindowKind::roi, 1, 256);
        CHECK(a.windows == mv[l]);
        CHECK(b.windows == roi[l]);
        CHECK(a.ratio == Rational{1, mv[l]});
        CHECK(a.count * a.windows == flops_full(layout, l, 1, 256));
        CHECK(b.count * b.windows == flops_full(layout, l, 1, 256));
        CHECK(a.count < flops_full(layout, l, 1, 256));
    }
    CHECK(Rational::make(6, 8) == Rational{3, 4});
    CHECK_THROWS_AS(Rational::make(1, 0), ArgumentError);
}

TEST_CASE("whole-map window has ratio one") {
    auto rig = unit_rig();
    rig.image_height = 24;
    rig.image_width = 32;
    rig.levels = {{8, {3, 4}, {0, 0}, {3, 4}, {0, 0}}};
    const auto layout = build_layout(rig);
    CHECK(flops_windowed(layout, 0, WindowKind::roi, 1, 16).ratio == Rational{1, 1});
    CHECK(flops_windowed(layout, 0, WindowKind::roi, 1, 16).count == flops_full(layout, 0, 1, 16));
}

TEST_CASE("smaller windows cost less") {
    auto rig = unit_rig();
    rig.image_height = 64;
    rig.image_width = 64;
    std::uint64_t last = ~0ULL;
    for (std::size_t side : {8, 4, 2, 1}) {
        rig.levels = {{8, {side, side}, {0, 0}, {side, side}, {0, 0}}};
        const auto c = flops_windowed(build_layout(rig), 0, WindowKind::mv_axis, 1, 8).count;
        CHECK(c < last);
        last = c;
    }
}

TEST_CASE("report") {
    const auto layout = build_layout(desk_rig());
    const auto rep = flop_report(layout, 1, 16);
    CHECK(rep.rows.size() == 2 * layout.num_levels());
    std::uint64_t full = 0;
    for (const auto& r : rep.rows) full += r.full_mac;
    CHECK(rep.total_full == full);
    CHECK(rep.total_windowed < rep.total_full);

    CHECK(flop_report_csv(rep).rfind("# panoattn flops v1\nlevel,kind,r,", 0) == 0);
    const auto j = flop_report_json(rep);
    CHECK(j.at("schema") == "panoattn.flops");
    CHECK(j.at("rows").size() == rep.rows.size());
    CHECK(format_flop_table(rep).find("total full") != std::string::npos);
}

TEST_CASE("empirical timing") {
    const auto layout = build_layout(desk_rig());
    const auto none = measure_empirical(layout, 0, WindowKind::roi, 0);
    CHECK(none.trials == 0);
    CHECK(none.analytic_ratio == doctest::Approx(1.0 / layout.level(0).windows(WindowKind::roi)));

    // Level 0 ROI uses 12 windows; full attention must be measurably slower.
    const auto t = measure_empirical(layout, 0, WindowKind::roi, 3);
    CHECK(t.trials == 3);
    CHECK(t.measured_ratio > 0.0);
    CHECK(t.measured_ratio < 1.0);
    CHECK_FALSE(t.note.empty());

    CHECK_THROWS_AS(measure_empirical(build_layout(paper_rig()), 0, WindowKind::roi, 1), ArgumentError);
}

}
