// panoattn command-line driver.
//
//   panoattn <layout|forward|bench|verify|eval|pipeline> --config <path|profile> --seed <u64> --out <dir>
//
// Exit status: 0 ok, 1 verification or run failure, 2 usage or input error.
// PANOATTN_THREADS sets the worker count.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "panoattn/archive.hpp"
#include "panoattn/config.hpp"
#include "panoattn/errors.hpp"
#include "panoattn/flops.hpp"
#include "panoattn/harness.hpp"
#include "panoattn/hash.hpp"
#include "panoattn/kernels.hpp"
#include "panoattn/metrics.hpp"
#include "panoattn/verify/criteria.hpp"

namespace fs = std::filesystem;
using namespace panoattn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Common {
    std::string config = "desk";
    std::optional<std::uint64_t> seed;
    std::string out = ".";

    RunConfig load() const {
        RunConfig c = load_config(config);
        if (seed) c.seed = *seed;
        return c;
    }
    std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "config file or profile (paper, desk, fusion)");
    app->add_option("--seed", c.seed, "run seed (overrides the config)");
    app->add_option("--out", c.out, "output directory");
}

void check_threads_env() {
    if (const char* env = std::getenv("PANOATTN_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v <= 0) {
            throw ArgumentError(std::string("PANOATTN_THREADS must be a positive integer, got '") + env + "'");
        }
    }
}

int cmd_layout(const Common& c) {
    const auto cfg = c.load();
    const auto layout = build_layout(cfg.rig);
    write_json_file(c.path("layout.json"), "panoattn.layout", 1, layout_to_json(layout));
    for (std::size_t l = 0; l < layout.num_levels(); ++l) {
        const auto& g = layout.level(l);
        std::printf("level %zu: per-view %zux%zu, panorama %zux%zu, r_mv %zu, r_roi %zu\n", l, g.per_view_h,
                    g.per_view_w, g.pano_h, g.pano_w, g.windows_mv, g.windows_roi);
        for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
            for (bool shifted : {false, true}) {
                const auto part = partition_windows(layout, l, kind, shifted);
                const std::string name = "layout_l" + std::to_string(l) + "_" + kind_name(kind) +
                                         (shifted ? "_shifted" : "_plain") + ".ppm";
                write_text_file(c.path(name), render_layout_ppm(part, default_ppm_scale(g)));
            }
        }
    }
    return kExitOk;
}

int cmd_forward(const Common& c, const std::string& params_path) {
    const auto cfg = c.load();
    validate_config(cfg);
    const auto layout = build_layout(cfg.rig);
    EncoderOptions opts = cfg.encoder;
    opts.seed = stream_seed(cfg.seed, SeedStream::encoder);
    auto stack = build_encoder(layout, opts);
    if (!params_path.empty()) load_encoder_params(stack, load_archive(params_path));
    const auto input = synth_pyramid(layout, cfg.batch, cfg.encoder.channels, stream_seed(cfg.seed, SeedStream::pyramid));
    const auto output = cfg.mode == RunMode::bench
                            ? encoder_forward(stack.cast<float>(), input.cast<float>()).cast<double>()
                            : encoder_forward(stack, input);

    const auto params = encoder_archive(stack);
    TensorArchive tensors;
    append_pyramid(tensors, "input", input);
    append_pyramid(tensors, "output", output);
    save_archive(c.path("params.pta"), params);
    save_archive(c.path("output.pta"), tensors);

    Fnv1a ph;
    for (const auto& e : params) {
        ph.update(e.name);
        ph.update(e.tensor.data());
    }
    nlohmann::ordered_json m;
    m["config_hash"] = config_hash(cfg);
    m["profile"] = cfg.profile;
    m["mode"] = cfg.mode == RunMode::bench ? "bench" : "verify";
    m["isa"] = kernels::isa_name(kernels::active_isa());
    m["seed"] = cfg.seed;
    m["seeds"] = {{"pyramid", stream_seed(cfg.seed, SeedStream::pyramid)}, {"encoder", opts.seed}};
    m["params_source"] = params_path.empty() ? "init" : "archive";
    m["checksums"] = {{"params", ph.hex()}, {"input", checksum(input)}, {"output", checksum(output)}};
    write_json_file(c.path("manifest.json"), "panoattn.manifest", 1, m);
    std::printf("encoder: %zu blocks, C=%zu, heads=%zu, %zu levels; output checksum %s\n", opts.blocks,
                opts.channels, opts.heads, layout.num_levels(), checksum(output).c_str());
    return kExitOk;
}

int cmd_bench(const Common& c, std::size_t trials) {
    const auto cfg = c.load();
    const auto layout = build_layout(cfg.rig);
    auto rep = flop_report(layout, cfg.batch, cfg.encoder.channels);
    std::string notes;
    for (auto& row : rep.rows) {
        if (trials == 0 || layout.level(row.level).cells() > kOracleMaxPositions) continue;
        const auto t = measure_empirical(layout, row.level, row.kind, trials, 16, 2, cfg.seed);
        row.measured_ratio = t.measured_ratio;
        if (notes.empty()) notes = t.note;
    }
    const std::string table = format_flop_table(rep);
    std::fputs(table.c_str(), stdout);
    if (!notes.empty()) std::printf("measured: %s\n", notes.c_str());
    std::printf("note: per-level ratios differ; the level-0 values bracket a single headline figure of 0.2%%\n");
    write_text_file(c.path("flops.txt"), "# panoattn flops report v1\n" + table);
    write_text_file(c.path("flops.csv"), flop_report_csv(rep));
    write_json_file(c.path("flops.json"), "panoattn.flops", 1, flop_report_json(rep));
    return kExitOk;
}

int cmd_verify(const Common& c) {
    const auto cfg = c.load();
    auto pipeline = profile_config("fusion");
    pipeline.seed = cfg.seed;
    const auto results = verify::run_acceptance(cfg, pipeline, cfg.seed);
    std::string report = "# panoattn verify report v1\n";
    bool ok = true;
    for (const auto& r : results) {
        const auto line = verify::format_result(r);
        std::printf("%s\n", line.c_str());
        report += line + "\n";
        ok = ok && r.passed;
    }
    write_text_file(c.path("verify.txt"), report);
    return ok ? kExitOk : kExitFailure;
}

int cmd_eval(const Common& c, const std::string& pred, const std::string& gt) {
    const auto preds = load_detections(pred);
    const auto gts = load_detections(gt);
    const auto m = evaluate(preds, gts);
    const auto report = format_report(m);
    std::fputs(report.c_str(), stdout);
    write_text_file(c.path("metrics.txt"), report);
    write_json_file(c.path("metrics.json"), "panoattn.metrics", 1, metrics_to_json(m));
    return kExitOk;
}

int cmd_pipeline(const Common& c) {
    const auto cfg = c.load();
    const auto r = run_pipeline(cfg);
    save_detections(c.path("detections.jsonl"), r.final_detections);
    save_detections(c.path("ground_truth.jsonl"), r.scene.ground_truth);
    write_text_file(c.path("metrics.txt"), format_report(r.metrics));
    write_json_file(c.path("metrics.json"), "panoattn.metrics", 1, metrics_to_json(r.metrics));
    write_json_file(c.path("manifest.json"), "panoattn.manifest", 1, r.manifest);
    const auto& n = r.manifest.at("counts");
    std::printf("floating %zu + bev %zu/%zu = %zu pre-NMS, %zu post-NMS; mAP %.4f NDS %.4f\n",
                n.at("floating").get<std::size_t>(), n.at("bev_selected").get<std::size_t>(),
                n.at("bev_cells").get<std::size_t>(), n.at("pre_nms").get<std::size_t>(),
                n.at("post_nms").get<std::size_t>(), r.metrics.mAP, r.metrics.nds);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Panoramic windowed attention toolkit"};
    app.require_subcommand(1);
    Common common;
    std::string params_path, pred, gt;
    std::size_t trials = 3;

    auto* layout = app.add_subcommand("layout", "write the panoramic layout and window images");
    auto* forward = app.add_subcommand("forward", "run the encoder on a synthetic pyramid");
    auto* bench = app.add_subcommand("bench", "attention cost table, analytic and measured");
    auto* verify = app.add_subcommand("verify", "run the oracle suite");
    auto* eval = app.add_subcommand("eval", "score detections against ground truth");
    auto* pipeline = app.add_subcommand("pipeline", "synthetic end-to-end detection run");
    for (auto* sub : {layout, forward, bench, verify, eval, pipeline}) add_common(sub, common);
    forward->add_option("--params", params_path, "encoder parameter archive to load");
    bench->add_option("--trials", trials, "timing trials per small level (0 = analytic only)");
    eval->add_option("--pred", pred, "predicted detections")->required();
    eval->add_option("--gt", gt, "ground-truth detections")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        check_threads_env();
        fs::create_directories(common.out);
        if (*layout) return cmd_layout(common);
        if (*forward) return cmd_forward(common, params_path);
        if (*bench) return cmd_bench(common, trials);
        if (*verify) return cmd_verify(common);
        if (*eval) return cmd_eval(common, pred, gt);
        if (*pipeline) return cmd_pipeline(common);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kExitUsage;
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "argument error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
    return kExitUsage;
}
