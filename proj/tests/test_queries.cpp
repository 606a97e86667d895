#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "panoattn/errors.hpp"
#include "panoattn/harness.hpp"
#include "panoattn/queries.hpp"
#include "panoattn/rng.hpp"
#include "panoattn/verify/oracles.hpp"

using namespace panoattn;

namespace {

Camera simple_camera(double f, double cx, double cy, std::size_t w, std::size_t h) {
    Camera c;
    c.projection = {f, 0, cx, 0, 0, f, cy, 0, 0, 0, 1, 0};
    c.image_width = w;
    c.image_height = h;
    return c;
}

Tensor<double> ramp_map(std::size_t c, std::size_t h, std::size_t w) {
    Tensor<double> m({1, c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) m.at({0, ch, y, x}) = 1.0 + ch + 2.0 * x - 0.5 * y;
    return m;
}

}  // namespace

TEST_SUITE("queries") {

TEST_CASE("project_point") {
    const auto id = simple_camera(1, 0, 0, 4, 4);
    const auto p = project_point(id, {0, 0, 1});
    CHECK(p.valid);
    CHECK(p.u == 0.0);
    CHECK(p.v == 0.0);
    CHECK_FALSE(project_point(id, {0, 0, -1}).valid);

    const auto cam = simple_camera(100, 512, 288, 1024, 576);
    const auto q = project_point(cam, {1, 0, 2});
    CHECK(q.valid);
    CHECK(q.u == 562.0);
    CHECK(q.v == 288.0);
    CHECK_FALSE(project_point(cam, {100, 0, 2}).valid);

    auto scaled = cam;
    for (double& v : scaled.projection) v *= 3.5;
    const auto r = project_point(scaled, {0.3, -0.2, 4});
    const auto s = project_point(cam, {0.3, -0.2, 4});
    CHECK(r.u == doctest::Approx(s.u).epsilon(1e-14));
    CHECK(r.v == doctest::Approx(s.v).epsilon(1e-14));
    CHECK(r.valid == s.valid);
}

TEST_CASE("bilinear_sample") {
    Tensor<double> m({1, 1, 2, 2}, {0, 1, 2, 3});
    CHECK(bilinear_sample(m, 1, 0)[0] == 1.0);
    CHECK(bilinear_sample(m, 0, 1)[0] == 2.0);
    CHECK(bilinear_sample(m, 0.5, 0.5)[0] == 1.5);
    // (u, v) = (0.25, 0.75): weights (1-u)(1-v), u(1-v), (1-u)v, uv on values 0, 1, 2, 3.
    const double want = 0.75 * 0.25 * 0 + 0.25 * 0.25 * 1 + 0.75 * 0.75 * 2 + 0.25 * 0.75 * 3;
    CHECK(bilinear_sample(m, 0.25, 0.75)[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK(bilinear_sample(m, -3, 9)[0] == 2.0);  // clamped

    const auto r = ramp_map(3, 5, 7);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double u = rng.uniform(0, 6), v = rng.uniform(0, 4);
        const auto s = bilinear_sample(r, u, v);
        for (std::size_t ch = 0; ch < 3; ++ch) CHECK(s[ch] == doctest::Approx(1.0 + ch + 2.0 * u - 0.5 * v).epsilon(1e-13));
    }
    // Span clamps to its own columns.
    CHECK(bilinear_sample(r, 10, 0, 0, ColumnSpan{2, 3})[0] == r.at({0, 0, 0, 4}));
    CHECK_THROWS_AS(bilinear_sample(r, 0, 0, 0, ColumnSpan{5, 3}), ArgumentError);
}

TEST_CASE("ring rig geometry") {
    const auto rig = desk_rig();
    const auto layout = build_layout(rig);
    const auto cams = make_ring_rig(rig);
    REQUIRE(cams.cameras.size() == 6);
    // The camera at ring position 1 looks along +x.
    std::size_t front = 0;
    for (std::size_t c = 0; c < 6; ++c)
        if (layout.ring_position(c) == 1) front = c;
    const auto p = project_point(cams.cameras[front], {20, 0, 1.5});
    CHECK(p.valid);
    CHECK(p.u == doctest::Approx(64.0));
    CHECK(p.v == doctest::Approx(48.0));
    // Every horizontal direction is seen by at least one camera.
    for (int d = 0; d < 360; ++d) {
        const double a = d * 3.141592653589793 / 180;
        bool seen = false;
        for (const auto& c : cams.cameras) seen = seen || project_point(c, {30 * std::cos(a), 30 * std::sin(a), 1}).valid;
        CHECK(seen);
    }
}

TEST_CASE("sample_multiview") {
    const auto rig = desk_rig();
    const auto layout = build_layout(rig);
    const auto cams = make_ring_rig(rig);
    const auto pyr = synth_pyramid(layout, 1, 4, 3);

    const auto none = sample_multiview(pyr, cams, layout, {0, 0, 50});
    CHECK_FALSE(none.valid);
    CHECK(none.hits == 0);
    for (double v : none.feature) CHECK(v == 0.0);

    auto manual = [&](std::size_t cam, const Vec3& p) {
        const auto ip = project_point(cams.cameras[cam], p);
        REQUIRE(ip.valid);
        std::vector<double> acc(4, 0.0);
        for (std::size_t l = 0; l < layout.num_levels(); ++l) {
            const auto& g = layout.level(l);
            const double s = static_cast<double>(g.spec.stride);
            const double u = (ip.u + 0.5) / s - 0.5, v = (ip.v + 0.5) / s - 0.5;
            const double uc = std::clamp(u, 0.0, static_cast<double>(g.per_view_w - 1));
            const double vc = std::clamp(v, 0.0, static_cast<double>(g.pano_h - 1));
            const auto x0 = static_cast<std::size_t>(uc), y0 = static_cast<std::size_t>(vc);
            const auto x1 = std::min(x0 + 1, g.per_view_w - 1), y1 = std::min(y0 + 1, g.pano_h - 1);
            const double fx = uc - x0, fy = vc - y0;
            const std::size_t o = layout.ring_position(cam) * g.per_view_w;
            for (std::size_t ch = 0; ch < 4; ++ch) {
                const auto& m = pyr.levels[l];
                acc[ch] += (1 - fx) * (1 - fy) * m.at({0, ch, y0, o + x0}) + fx * (1 - fy) * m.at({0, ch, y0, o + x1}) +
                           (1 - fx) * fy * m.at({0, ch, y1, o + x0}) + fx * fy * m.at({0, ch, y1, o + x1});
            }
        }
        return acc;
    };

    // Straight ahead of one camera only.
    std::size_t front = 0;
    for (std::size_t c = 0; c < 6; ++c)
        if (layout.ring_position(c) == 1) front = c;
    const Vec3 ahead{25, 0.7, 1.0};
    const auto one = sample_multiview(pyr, cams, layout, ahead);
    REQUIRE(one.hits == 1);
    const auto want = manual(front, ahead);
    for (std::size_t ch = 0; ch < 4; ++ch) CHECK(one.feature[ch] == doctest::Approx(want[ch] / 3).epsilon(1e-13));

    // On the seam between ring positions 1 and 2 (yaw -30 degrees) both cameras see it.
    const double a = -3.141592653589793 / 6;
    const Vec3 seam{20 * std::cos(a), 20 * std::sin(a), 1.0};
    const auto two = sample_multiview(pyr, cams, layout, seam);
    REQUIRE(two.hits == 2);
    std::vector<std::size_t> seeing;
    for (std::size_t c = 0; c < 6; ++c)
        if (project_point(cams.cameras[c], seam).valid) seeing.push_back(c);
    const auto wa = manual(seeing[0], seam), wb = manual(seeing[1], seam);
    for (std::size_t ch = 0; ch < 4; ++ch)
        CHECK(two.feature[ch] == doctest::Approx((wa[ch] + wb[ch]) / 6).epsilon(1e-13));
}

TEST_CASE("floating decode") {
    const auto rig = desk_rig();
    const auto layout = build_layout(rig);
    const auto cams = make_ring_rig(rig);
    const auto pyr = synth_pyramid(layout, 1, 16, 4);

    auto q = make_floating_queries(900, 16, 5);
    const auto dets = decode_floating(q, pyr, cams, layout);
    CHECK(dets.size() == 900);
    for (const auto& d : dets) {
        CHECK(d.source == Source::floating);
        CHECK(d.confidence >= 0.0);
        CHECK(d.confidence <= 1.0);
        CHECK(d.size[0] > 0);
    }
    CHECK(decode_floating(q, pyr, cams, layout) == dets);

    q.reference = LinearHead::zeros(3, 16);
    q.heads = {LinearHead::zeros(kBoxOutputs, 16), LinearHead::zeros(kNumClasses, 16)};
    const auto zero = decode_floating(q, pyr, cams, layout);
    const auto c = SceneBounds{}.center();
    for (const auto& d : zero) {
        CHECK(d.center == c);
        CHECK(d.confidence == 0.5);
    }
}

TEST_CASE("BEV decode") {
    const auto rig = desk_rig();
    const auto layout = build_layout(rig);
    const auto cams = make_ring_rig(rig);
    const auto pyr = synth_pyramid(layout, 1, 16, 4);
    auto grid = make_bev_grid(128, 16, 6);
    CHECK(grid.cell_size() == 0.8);
    const auto c0 = grid.cell_center(0);
    CHECK(c0[0] == doctest::Approx(-50.8).epsilon(1e-15));
    CHECK(c0[1] == doctest::Approx(-50.8).epsilon(1e-15));
    const auto dets = decode_bev(grid, pyr, cams, layout);
    CHECK(dets.size() == 16384);
    for (std::size_t i = 0; i < dets.size(); i += 97) {
        const auto cc = grid.cell_center(i);
        CHECK(std::fabs(dets[i].center[0] - cc[0]) <= 0.4);
        CHECK(std::fabs(dets[i].center[1] - cc[1]) <= 0.4);
        CHECK(dets[i].source == Source::bev);
    }
    grid.heads.box = LinearHead::zeros(kBoxOutputs, 16);
    const auto fixed = decode_bev(grid, pyr, cams, layout);
    for (std::size_t i = 0; i < fixed.size(); i += 131) {
        const auto cc = grid.cell_center(i);
        CHECK(fixed[i].center[0] == cc[0]);
        CHECK(fixed[i].center[1] == cc[1]);
    }
}

TEST_CASE("topk_select") {
    Rng rng(8);
    DetectionSet dets(16384);
    for (auto& d : dets) d.confidence = rng.uniform();
    const auto top = topk_select(dets, 500);
    REQUIRE(top.size() == 500);
    double min_sel = 1, max_rej = 0;
    for (const auto& d : top) min_sel = std::min(min_sel, d.confidence);
    std::vector<double> all;
    for (const auto& d : dets) all.push_back(d.confidence);
    std::sort(all.rbegin(), all.rend());
    max_rej = all[500];
    CHECK(min_sel >= max_rej);

    DetectionSet small(40);
    for (std::size_t i = 0; i < small.size(); ++i) {
        small[i].confidence = std::round(rng.uniform() * 4) / 4;
        small[i].class_id = i % 10;
    }
    for (std::size_t k = 0; k <= small.size(); ++k) {
        const auto got = topk_select(small, k);
        const auto idx = verify::sort_topk(small, k);
        for (std::size_t i = 0; i < k; ++i) REQUIRE(got[i] == small[idx[i]]);
    }
    CHECK_THROWS_AS(topk_select(small, 41), ArgumentError);
}

TEST_CASE("aggregate") {
    DetectionSet a(900), b(500);
    for (auto& d : b) d.source = Source::bev;
    const auto ab = aggregate(a, b);
    CHECK(ab.size() == 1400);
    CHECK(ab[899].source == Source::floating);
    CHECK(ab[900].source == Source::bev);
    CHECK(aggregate({}, b) == b);
    const auto ba = aggregate(b, a);
    CHECK(std::count_if(ba.begin(), ba.end(), [](const Detection& d) { return d.source == Source::bev; }) == 500);
}

TEST_CASE("detection records round trip") {
    Rng rng(2);
    DetectionSet dets(5);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        auto& d = dets[i];
        d.center = {rng.normal(), rng.normal(), rng.normal()};
        d.size = {rng.uniform(0.5, 2), rng.uniform(1, 5), 1.25};
        d.yaw = rng.uniform(-3, 3);
        d.velocity = {rng.normal(), 0.1};
        d.class_id = i * 2;
        d.confidence = rng.uniform();
        d.source = i % 2 ? Source::bev : Source::floating;
    }
    std::stringstream ss;
    write_detections(ss, dets);
    std::string first;
    std::getline(std::stringstream(ss.str()), first);
    CHECK(first == R"({"schema":"panoattn.detections","version":1})");
    CHECK(read_detections(ss) == dets);

    std::stringstream bad("{\"schema\":\"other\",\"version\":1}\n");
    CHECK_THROWS_AS(read_detections(bad), FormatError);
    std::stringstream bad_class(R"({"schema":"panoattn.detections","version":1})"
                                "\n"
                                R"({"source":"bev","class":"tank","confidence":0.5,"center":[0,0,0],"size":[1,1,1],"yaw":0,"velocity":[0,0]})"
                                "\n");
    CHECK_THROWS_AS(read_detections(bad_class), FormatError);
}

}
