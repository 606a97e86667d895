#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "panoattn/archive.hpp"
#include "panoattn/config.hpp"
#include "panoattn/errors.hpp"
#include "panoattn/harness.hpp"

using namespace panoattn;

TEST_SUITE("harness") {

TEST_CASE("profiles") {
    CHECK(profile_names() == std::vector<std::string>{"paper", "desk", "fusion"});
    const auto paper = profile_config("paper");
    CHECK(paper.rig == paper_rig());
    CHECK(paper.encoder.channels == 256);
    CHECK(paper.encoder.heads == 8);
    CHECK(paper.queries.floating == 900);
    CHECK(paper.queries.bev_grid == 128);
    CHECK(paper.queries.top_k == 500);
    const auto desk = profile_config("desk");
    CHECK(desk.rig == desk_rig());
    CHECK(desk.queries.top_k == 8);
    const auto fusion = profile_config("fusion");
    CHECK(fusion.rig == desk_rig());
    CHECK(fusion.queries.floating == 900);
    for (const auto& n : profile_names()) CHECK_NOTHROW(validate_config(profile_config(n)));
    CHECK_THROWS_AS(profile_config("huge"), ConfigError);
}

TEST_CASE("config JSON") {
    auto cfg = profile_config("desk");
    cfg.seed = 77;
    cfg.nms_tau = 0.35;
    const auto j = config_to_json(cfg);
    CHECK(j.at("schema") == "panoattn.config");
    CHECK(j.at("version") == 1);
    const auto back = config_from_json(j);
    CHECK(config_to_json(back) == j);

    const auto partial = config_from_json(nlohmann::json{{"profile", "desk"}, {"queries", {{"top_k", 4}}}});
    CHECK(partial.queries.top_k == 4);
    CHECK(partial.queries.floating == 32);

    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"profile", "desk"}, {"batch", "two"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"profile", "desk"}, {"nms_tau", 1.5}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"profile", "desk"}, {"encoder", {{"heads", 3}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"profile", "desk"}, {"queries", {{"top_k", 100000}}}}),
                    ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("config hash ignores the seed") {
    auto a = profile_config("desk");
    auto b = a;
    b.seed = 99;
    CHECK(config_hash(a) == config_hash(b));
    b.nms_tau = 0.3;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("tensor archive") {
    TensorArchive ar;
    ar.push_back({"a", Tensor<double>({2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7})});
    ar.push_back({"scalar.like", Tensor<double>({1}, {42})});
    std::stringstream ss;
    write_archive(ss, ar);
    const std::string bytes = ss.str();
    CHECK(bytes.rfind(std::string(kArchiveMagic) + "\n", 0) == 0);
    std::stringstream in(bytes);
    CHECK(read_archive(in) == ar);

    std::stringstream bad("panoattn-tensor-archive v9\n");
    CHECK_THROWS_AS(read_archive(bad), FormatError);
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_archive(truncated), FormatError);
    std::stringstream trailing(bytes + "x");
    CHECK_THROWS_AS(read_archive(trailing), FormatError);
}

TEST_CASE("encoder parameters round trip through an archive") {
    const auto layout = build_layout(desk_rig());
    const auto a = build_encoder(layout, 16, 2, 5);
    auto b = build_encoder(layout, 16, 2, 6);
    const auto ar = encoder_archive(a);
    CHECK(ar != encoder_archive(b));
    load_encoder_params(b, ar);
    CHECK(encoder_archive(b) == ar);

    auto broken = ar;
    broken.pop_back();
    CHECK_THROWS_AS(load_encoder_params(b, broken), FormatError);
}

TEST_CASE("synthetic pyramid") {
    const auto layout = build_layout(desk_rig());
    const auto p = synth_pyramid(layout, 2, 8, 3);
    REQUIRE(p.levels.size() == layout.num_levels());
    for (std::size_t l = 0; l < layout.num_levels(); ++l) {
        CHECK(p.levels[l].shape() ==
              std::vector<std::size_t>{2, 8, layout.level(l).pano_h, layout.level(l).pano_w});
    }
    CHECK(checksum(synth_pyramid(layout, 2, 8, 3)) == checksum(p));
    CHECK(checksum(synth_pyramid(layout, 2, 8, 4)) != checksum(p));

    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (const auto& t : p.levels)
        for (double v : t.data()) {
            sum += v;
            sq += v * v;
            ++n;
        }
    REQUIRE(n >= 10000);
    const double mean = sum / n;
    CHECK(std::fabs(mean) <= 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::fabs(sq / n - 1.0) <= 0.05);
}

TEST_CASE("synthetic scene") {
    auto cfg = profile_config("fusion");
    const auto s = synth_scene(cfg, 11);
    CHECK(s.ground_truth.size() == cfg.scene.num_objects);
    for (const auto& g : s.ground_truth) {
        CHECK(std::hypot(g.center[0], g.center[1]) >= cfg.scene.min_radius);
        CHECK(SceneBounds{}.contains(g.center));
        bool seen = false;
        for (const auto& c : s.cameras.cameras) seen = seen || project_point(c, g.center).valid;
        CHECK(seen);
        CHECK(g.source == Source::ground_truth);
    }
    CHECK(synth_scene(cfg, 11).ground_truth == s.ground_truth);
    CHECK(synth_scene(cfg, 12).ground_truth != s.ground_truth);
    cfg.scene.num_objects = 0;
    CHECK(synth_scene(cfg, 11).ground_truth.empty());
}

TEST_CASE("pipeline") {
    auto cfg = profile_config("fusion");
    cfg.seed = 5;
    const auto r = run_pipeline(cfg);
    CHECK(r.floating.size() == 900);
    CHECK(r.bev_all.size() == 128 * 128);
    CHECK(r.bev_selected.size() == 500);
    CHECK(r.fused.size() == 1400);
    CHECK(r.final_detections.size() <= r.fused.size());
    CHECK(r.manifest.at("schema") == "panoattn.manifest");
    CHECK(r.manifest.at("counts").at("pre_nms") == 1400);
    CHECK(r.manifest.begin().key() == "schema");

    const auto again = run_pipeline(cfg);
    CHECK(again.manifest == r.manifest);
    cfg.seed = 6;
    CHECK(run_pipeline(cfg).manifest.at("checksums") != r.manifest.at("checksums"));

    auto bad = profile_config("desk");
    bad.encoder.heads = 3;
    CHECK_THROWS_AS(run_pipeline(bad), StageError);
}

TEST_CASE("layout image") {
    const auto layout = build_layout(desk_rig());
    const auto part = partition_windows(layout, 0, WindowKind::mv_axis, true);
    const auto ppm = render_layout_ppm(part, 2);
    const auto& g = layout.level(0);
    const std::string head = "P6\n# panoattn layout v1 level 0 mv_axis shifted\n" +
                             std::to_string(2 * g.pano_w) + " " + std::to_string(2 * g.pano_h) + "\n255\n";
    CHECK(ppm.rfind(head, 0) == 0);
    CHECK(ppm.size() == head.size() + 3 * 4 * g.cells());
    CHECK(default_ppm_scale(g) >= 1);
}

}
