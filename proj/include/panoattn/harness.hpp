#pragma once

// Synthetic inputs and the end-to-end pipeline:
// synth -> encoder -> floating + BEV decode -> top-k -> aggregate -> NMS -> eval.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "panoattn/config.hpp"
#include "panoattn/metrics.hpp"
#include "panoattn/queries.hpp"

namespace panoattn {

/// Seed streams derived from the run seed.
enum class SeedStream : std::uint64_t { pyramid = 0, encoder = 1, floating = 2, bev = 3, scene = 4 };

std::uint64_t stream_seed(std::uint64_t seed, SeedStream stream);

/// Standard normal entries, level by level, row-major, from one generator.
FeaturePyramid<double> synth_pyramid(const PanoramaLayout& layout, std::size_t batch, std::size_t channels,
                                     std::uint64_t seed);

struct SyntheticScene {
    DetectionSet ground_truth;
    CameraRig cameras;
    std::uint64_t seed = 0;
};

/// Boxes uniform over the BEV bounds at distance >= scene.min_radius from the
/// ego origin, centers at z in [0, 2]. Draws that no camera sees are rejected.
SyntheticScene synth_scene(const RunConfig& config, std::uint64_t seed);

/// Error tagged with the pipeline stage it came from.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct PipelineResult {
    SyntheticScene scene;
    FeaturePyramid<double> encoded;
    DetectionSet floating;
    DetectionSet bev_all;  // one per grid cell
    DetectionSet bev_selected;
    DetectionSet fused;  // floating followed by bev_selected
    DetectionSet final_detections;
    MetricsBundle metrics;
    nlohmann::ordered_json manifest;
};

/// Runs the pipeline for config.seed. The encoder runs in 32-bit in bench mode.
PipelineResult run_pipeline(const RunConfig& config);

/// Checksum of the raw little-endian bytes of the values.
std::string checksum(const FeaturePyramid<double>& pyramid);
std::string checksum(const DetectionSet& dets);

/// P6 image, one color per window; cells in the wrapped row segment are darkened.
/// Each cell is drawn as a scale x scale block.
std::string render_layout_ppm(const WindowPartition& partition, std::size_t scale);
std::size_t default_ppm_scale(const LevelGeometry& level);

/// Pretty-printed JSON with "schema" and "version" as the first keys.
void write_json_file(const std::string& path, const std::string& schema, int version, const nlohmann::json& body);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace panoattn
