#include "panoattn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "panoattn/errors.hpp"
#include "panoattn/hash.hpp"
#include "panoattn/kernels.hpp"
#include "panoattn/rng.hpp"

namespace panoattn {

std::uint64_t stream_seed(std::uint64_t seed, SeedStream stream) {
    return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

FeaturePyramid<double> synth_pyramid(const PanoramaLayout& layout, std::size_t batch, std::size_t channels,
                                     std::uint64_t seed) {
    Rng rng(seed);
    FeaturePyramid<double> p;
    for (const auto& g : layout.levels()) {
        Tensor<double> t({batch, channels, g.pano_h, g.pano_w});
        for (double& v : t.data()) v = rng.normal();
        p.levels.push_back(std::move(t));
    }
    return p;
}

namespace {

// Typical (w, l, h) per class, metres.
constexpr std::array<Vec3, kNumClasses> kMeanSizes = {{{1.95, 4.6, 1.7},
                                                       {2.5, 6.9, 2.8},
                                                       {2.9, 11.0, 3.5},
                                                       {2.9, 12.3, 3.9},
                                                       {2.8, 6.4, 3.2},
                                                       {0.7, 0.7, 1.75},
                                                       {0.8, 2.1, 1.5},
                                                       {0.6, 1.7, 1.3},
                                                       {0.4, 0.4, 1.1},
                                                       {2.5, 0.5, 1.0}}};

bool visible(const CameraRig& rig, const Vec3& p) {
    for (const auto& cam : rig.cameras) {
        if (project_point(cam, p).valid) return true;
    }
    return false;
}

}  // namespace

SyntheticScene synth_scene(const RunConfig& config, std::uint64_t seed) {
    SyntheticScene s;
    s.seed = seed;
    s.cameras = make_ring_rig(config.rig, config.scene.horizontal_fov, config.scene.mount_height);
    const SceneBounds bounds;
    Rng rng(seed);
    constexpr std::size_t kMaxDraws = 1000;
    for (std::size_t i = 0; i < config.scene.num_objects; ++i) {
        Detection d;
        std::size_t draws = 0;
        for (;; ++draws) {
            if (draws == kMaxDraws) throw ConfigError("synth_scene: no visible placement after 1000 draws");
            d.center = {rng.uniform(bounds.x_min, bounds.x_max), rng.uniform(bounds.y_min, bounds.y_max),
                        rng.uniform(0.0, 2.0)};
            if (std::hypot(d.center[0], d.center[1]) < config.scene.min_radius) continue;
            if (visible(s.cameras, d.center)) break;
        }
        d.class_id = static_cast<std::size_t>(rng.below(kNumClasses));
        for (std::size_t k = 0; k < 3; ++k) d.size[k] = kMeanSizes[d.class_id][k] * rng.uniform(0.8, 1.2);
        d.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        d.velocity = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
        d.confidence = 1.0;
        d.source = Source::ground_truth;
        s.ground_truth.push_back(d);
    }
    return s;
}

std::string checksum(const FeaturePyramid<double>& pyramid) {
    Fnv1a h;
    for (const auto& l : pyramid.levels) {
        for (std::size_t d : l.shape()) {
            const std::uint64_t v = d;
            h.update(&v, sizeof v);
        }
        h.update(l.data());
    }
    return h.hex();
}

std::string checksum(const DetectionSet& dets) {
    Fnv1a h;
    for (const auto& d : dets) {
        const double vals[] = {d.center[0], d.center[1], d.center[2], d.size[0],     d.size[1],
                               d.size[2],   d.yaw,       d.velocity[0], d.velocity[1], d.confidence};
        h.update(vals, sizeof vals);
        const std::uint64_t tags[] = {d.class_id, static_cast<std::uint64_t>(d.source)};
        h.update(tags, sizeof tags);
    }
    return h.hex();
}

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config) {
    PipelineResult r;
    const auto layout = stage("config", [&] {
        validate_config(config);
        return build_layout(config.rig);
    });

    const std::uint64_t s_pyr = stream_seed(config.seed, SeedStream::pyramid);
    const std::uint64_t s_enc = stream_seed(config.seed, SeedStream::encoder);
    const std::uint64_t s_flt = stream_seed(config.seed, SeedStream::floating);
    const std::uint64_t s_bev = stream_seed(config.seed, SeedStream::bev);
    const std::uint64_t s_scn = stream_seed(config.seed, SeedStream::scene);

    r.scene = stage("scene", [&] { return synth_scene(config, s_scn); });
    const auto input = stage("synth", [&] {
        return synth_pyramid(layout, config.batch, config.encoder.channels, s_pyr);
    });
    r.encoded = stage("encoder", [&] {
        EncoderOptions opts = config.encoder;
        opts.seed = s_enc;
        const auto stack = build_encoder(layout, opts);
        if (config.mode == RunMode::bench) {
            return encoder_forward(stack.cast<float>(), input.cast<float>()).cast<double>();
        }
        return encoder_forward(stack, input);
    });
    r.floating = stage("decode_floating", [&] {
        const auto q = make_floating_queries(config.queries.floating, config.encoder.channels, s_flt);
        return decode_floating(q, r.encoded, r.scene.cameras, layout);
    });
    r.bev_all = stage("decode_bev", [&] {
        const auto grid = make_bev_grid(config.queries.bev_grid, config.encoder.channels, s_bev);
        return decode_bev(grid, r.encoded, r.scene.cameras, layout);
    });
    r.bev_selected = stage("topk", [&] { return topk_select(r.bev_all, config.queries.top_k); });
    r.fused = aggregate(r.floating, r.bev_selected);
    r.final_detections = stage("nms", [&] { return nms(r.fused, config.nms_tau); });
    r.metrics = stage("eval", [&] { return evaluate(r.final_detections, r.scene.ground_truth); });

    auto& m = r.manifest;
    m["schema"] = "panoattn.manifest";
    m["version"] = 1;
    m["config_hash"] = config_hash(config);
    m["profile"] = config.profile;
    m["mode"] = config.mode == RunMode::bench ? "bench" : "verify";
    m["isa"] = kernels::isa_name(kernels::active_isa());
    m["seed"] = config.seed;
    m["seeds"] = {{"pyramid", s_pyr}, {"encoder", s_enc}, {"floating", s_flt}, {"bev", s_bev}, {"scene", s_scn}};
    m["counts"] = {{"ground_truth", r.scene.ground_truth.size()},
                   {"floating", r.floating.size()},
                   {"bev_cells", r.bev_all.size()},
                   {"bev_selected", r.bev_selected.size()},
                   {"pre_nms", r.fused.size()},
                   {"post_nms", r.final_detections.size()}};
    m["checksums"] = {{"input", checksum(input)},
                      {"encoded", checksum(r.encoded)},
                      {"ground_truth", checksum(r.scene.ground_truth)},
                      {"floating", checksum(r.floating)},
                      {"bev_selected", checksum(r.bev_selected)},
                      {"pre_nms", checksum(r.fused)},
                      {"post_nms", checksum(r.final_detections)},
                      {"metrics", fnv1a_hex(metrics_to_json(r.metrics).dump())}};
    m["metrics"] = {{"mAP", r.metrics.mAP}, {"NDS", r.metrics.nds}};
    return r;
}

namespace {

std::array<unsigned char, 3> window_color(std::size_t w) {
    // Golden-angle hue walk so neighbouring windows differ.
    const double hue = std::fmod(static_cast<double>(w) * 137.508, 360.0) / 60.0;
    const double x = 1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0);
    double rgb[3] = {0, 0, 0};
    switch (static_cast<int>(hue)) {
        case 0: rgb[0] = 1, rgb[1] = x; break;
        case 1: rgb[0] = x, rgb[1] = 1; break;
        case 2: rgb[1] = 1, rgb[2] = x; break;
        case 3: rgb[1] = x, rgb[2] = 1; break;
        case 4: rgb[0] = x, rgb[2] = 1; break;
        default: rgb[0] = 1, rgb[2] = x; break;
    }
    const double light = (w % 2 == 0) ? 0.95 : 0.7;
    return {static_cast<unsigned char>(40 + 215 * rgb[0] * light), static_cast<unsigned char>(40 + 215 * rgb[1] * light),
            static_cast<unsigned char>(40 + 215 * rgb[2] * light)};
}

}  // namespace

std::size_t default_ppm_scale(const LevelGeometry& level) {
    return std::max<std::size_t>(1, 768 / std::max<std::size_t>(1, level.pano_w));
}

std::string render_layout_ppm(const WindowPartition& partition, std::size_t scale) {
    if (scale == 0) throw ArgumentError("render_layout_ppm: scale must be positive");
    const auto map = partition.map();
    const std::size_t w = map.w * scale, h = map.h * scale;
    std::string out = "P6\n# panoattn layout v1 level " + std::to_string(partition.level()) + " " +
                      kind_name(partition.kind()) + (partition.shifted() ? " shifted" : " plain") + "\n" +
                      std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + w * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t cell = (y / scale) * map.w + x / scale;
            auto c = window_color(partition.forward(cell).window);
            if (partition.row_segment(cell)) {
                for (auto& ch : c) ch = static_cast<unsigned char>(ch / 2);
            }
            std::memcpy(&out[header + (y * w + x) * 3], c.data(), 3);
        }
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw FormatError("write failed: " + path);
}

void write_json_file(const std::string& path, const std::string& schema, int version, const nlohmann::json& body) {
    nlohmann::ordered_json out;
    out["schema"] = schema;
    out["version"] = version;
    for (auto it = body.begin(); it != body.end(); ++it) {
        if (it.key() != "schema" && it.key() != "version") out[it.key()] = *it;
    }
    write_text_file(path, out.dump(2) + "\n");
}

}  // namespace panoattn
