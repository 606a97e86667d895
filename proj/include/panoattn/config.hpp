#pragma once

// Run configuration: rig, encoder, queries, scene and NMS settings.
//
// JSON form (all sections optional except rig when no profile is named):
//   {"schema": "panoattn.config", "version": 1, "profile": "desk",
//    "rig": {...}, "batch": 1, "seed": 0, "mode": "verify",
//    "encoder": {"channels", "heads", "blocks", "ffn_placement", "shifts"},
//    "queries": {"floating", "bev_grid", "top_k"},
//    "scene": {"num_objects", "min_radius", "horizontal_fov", "mount_height"},
//    "nms_tau": 0.2}
// A named profile supplies defaults; keys present in the file override them.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "panoattn/encoder.hpp"
#include "panoattn/geometry.hpp"

namespace panoattn {

enum class RunMode { verify, bench };

struct QuerySettings {
    std::size_t floating = 900;
    std::size_t bev_grid = 128;
    std::size_t top_k = 500;
};

struct SceneSettings {
    std::size_t num_objects = 30;
    double min_radius = 8.0;
    double horizontal_fov = 64.0;
    double mount_height = 1.5;
};

struct RunConfig {
    std::string profile;
    RigConfig rig;
    std::size_t batch = 1;
    std::uint64_t seed = 0;
    RunMode mode = RunMode::verify;
    EncoderOptions encoder;  // encoder.seed is derived from seed at run time
    QuerySettings queries;
    SceneSettings scene;
    double nms_tau = 0.2;
};

/// "paper": full rig, C = 256, 8 heads, 900 / 128^2 / 500 queries.
/// "desk": desk rig, C = 16, 2 heads, 32 / 16^2 / 8 queries.
/// "fusion": desk rig and encoder with the full query counts.
std::vector<std::string> profile_names();
RunConfig profile_config(const std::string& name);

/// Throws ConfigError on any inconsistency (layout divisibility, heads, k, tau).
void validate_config(const RunConfig& config);

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

/// `spec` is a profile name or a path to a JSON file.
RunConfig load_config(const std::string& spec);

/// FNV-1a of the canonical JSON form, excluding the seed.
std::string config_hash(const RunConfig& config);

}  // namespace panoattn
