#include "panoattn/config.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "panoattn/errors.hpp"
#include "panoattn/hash.hpp"

namespace panoattn {

std::vector<std::string> profile_names() { return {"paper", "desk", "fusion"}; }

RunConfig profile_config(const std::string& name) {
    RunConfig c;
    c.profile = name;
    if (name == "paper") {
        c.rig = paper_rig();
        c.encoder = EncoderOptions{256, 8, 6, 0, FfnPlacement::per_block, true};
        c.queries = {900, 128, 500};
        c.scene.num_objects = 30;
    } else if (name == "desk") {
        c.rig = desk_rig();
        c.encoder = EncoderOptions{16, 2, 6, 0, FfnPlacement::per_block, true};
        c.queries = {32, 16, 8};
        c.scene.num_objects = 6;
    } else if (name == "fusion") {
        c.rig = desk_rig();
        c.encoder = EncoderOptions{16, 2, 6, 0, FfnPlacement::per_block, true};
        c.queries = {900, 128, 500};
        c.scene.num_objects = 30;
    } else {
        throw ConfigError("unknown profile '" + name + "'");
    }
    return c;
}

void validate_config(const RunConfig& c) {
    (void)build_layout(c.rig);
    if (c.batch == 0) throw ConfigError("batch must be positive");
    if (c.encoder.channels == 0 || c.encoder.heads == 0 || c.encoder.channels % c.encoder.heads != 0) {
        throw ConfigError("encoder.channels (" + std::to_string(c.encoder.channels) +
                          ") must be a positive multiple of encoder.heads (" + std::to_string(c.encoder.heads) + ")");
    }
    if (c.encoder.blocks == 0) throw ConfigError("encoder.blocks must be positive");
    if (c.queries.bev_grid == 0) throw ConfigError("queries.bev_grid must be positive");
    if (c.queries.top_k > c.queries.bev_grid * c.queries.bev_grid) {
        throw ConfigError("queries.top_k (" + std::to_string(c.queries.top_k) + ") exceeds the BEV cell count (" +
                          std::to_string(c.queries.bev_grid * c.queries.bev_grid) + ")");
    }
    if (!(c.nms_tau >= 0.0 && c.nms_tau <= 1.0)) throw ConfigError("nms_tau must lie in [0, 1]");
    if (!(c.scene.min_radius >= 0.0) || c.scene.min_radius > 40.0) {
        throw ConfigError("scene.min_radius must lie in [0, 40]");
    }
    if (!(c.scene.horizontal_fov > 0.0 && c.scene.horizontal_fov < 180.0)) {
        throw ConfigError("scene.horizontal_fov must lie in (0, 180)");
    }
}

namespace {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        if (j.contains("schema") && j.at("schema") != "panoattn.config") {
            throw ConfigError("unexpected schema " + j.at("schema").dump());
        }
        if (j.contains("version") && j.at("version") != 1) {
            throw ConfigError("unsupported config version " + j.at("version").dump());
        }
        RunConfig c;
        if (j.contains("profile")) {
            c = profile_config(j.at("profile").get<std::string>());
        } else if (!j.contains("rig")) {
            throw ConfigError("config needs a profile or a rig section");
        } else {
            c.profile = "custom";
        }
        if (j.contains("rig")) c.rig = j.at("rig").get<RigConfig>();
        take(j, "batch", c.batch);
        take(j, "seed", c.seed);
        if (j.contains("mode")) {
            const auto m = j.at("mode").get<std::string>();
            if (m == "verify") {
                c.mode = RunMode::verify;
            } else if (m == "bench") {
                c.mode = RunMode::bench;
            } else {
                throw ConfigError("mode must be verify or bench, got '" + m + "'");
            }
        }
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            take(e, "channels", c.encoder.channels);
            take(e, "heads", c.encoder.heads);
            take(e, "blocks", c.encoder.blocks);
            take(e, "shifts", c.encoder.shifts);
            if (e.contains("ffn_placement")) {
                const auto f = e.at("ffn_placement").get<std::string>();
                if (f == "per_block") {
                    c.encoder.ffn = FfnPlacement::per_block;
                } else if (f == "per_sublayer") {
                    c.encoder.ffn = FfnPlacement::per_sublayer;
                } else {
                    throw ConfigError("encoder.ffn_placement must be per_block or per_sublayer");
                }
            }
        }
        if (j.contains("queries")) {
            const auto& q = j.at("queries");
            take(q, "floating", c.queries.floating);
            take(q, "bev_grid", c.queries.bev_grid);
            take(q, "top_k", c.queries.top_k);
        }
        if (j.contains("scene")) {
            const auto& s = j.at("scene");
            take(s, "num_objects", c.scene.num_objects);
            take(s, "min_radius", c.scene.min_radius);
            take(s, "horizontal_fov", c.scene.horizontal_fov);
            take(s, "mount_height", c.scene.mount_height);
        }
        take(j, "nms_tau", c.nms_tau);
        validate_config(c);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

nlohmann::json config_to_json(const RunConfig& c) {
    return {{"schema", "panoattn.config"},
            {"version", 1},
            {"profile", c.profile},
            {"rig", c.rig},
            {"batch", c.batch},
            {"seed", c.seed},
            {"mode", c.mode == RunMode::bench ? "bench" : "verify"},
            {"encoder",
             {{"channels", c.encoder.channels},
              {"heads", c.encoder.heads},
              {"blocks", c.encoder.blocks},
              {"shifts", c.encoder.shifts},
              {"ffn_placement", c.encoder.ffn == FfnPlacement::per_block ? "per_block" : "per_sublayer"}}},
            {"queries",
             {{"floating", c.queries.floating}, {"bev_grid", c.queries.bev_grid}, {"top_k", c.queries.top_k}}},
            {"scene",
             {{"num_objects", c.scene.num_objects},
              {"min_radius", c.scene.min_radius},
              {"horizontal_fov", c.scene.horizontal_fov},
              {"mount_height", c.scene.mount_height}}},
            {"nms_tau", c.nms_tau}};
}

RunConfig load_config(const std::string& spec) {
    for (const auto& name : profile_names()) {
        if (spec == name && !std::filesystem::exists(spec)) return profile_config(name);
    }
    std::ifstream is(spec);
    if (!is) throw ConfigError("cannot open config '" + spec + "' (not a file or a profile name)");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + spec + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const RunConfig& config) {
    auto j = config_to_json(config);
    j.erase("seed");
    return fnv1a_hex(j.dump());
}

}  // namespace panoattn
