#include "panoattn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "panoattn/errors.hpp"

namespace panoattn {

const char* kind_name(WindowKind kind) { return kind == WindowKind::roi ? "roi" : "mv_axis"; }

RigConfig paper_rig() {
    RigConfig rig;
    rig.num_cameras = 6;
    rig.image_height = 576;
    rig.image_width = 1024;
    rig.ring_order = {0, 1, 2, 3, 4, 5};
    rig.levels = {
        {8, {3, 32}, {0, 16}, {12, 12}, {6, 6}},
        {16, {3, 32}, {0, 16}, {12, 12}, {6, 6}},
        {32, {3, 32}, {0, 16}, {6, 6}, {3, 3}},
        {64, {3, 24}, {0, 12}, {9, 12}, {0, 0}},
    };
    return rig;
}

RigConfig desk_rig() {
    RigConfig rig;
    rig.num_cameras = 6;
    rig.image_height = 96;
    rig.image_width = 128;
    rig.ring_order = {0, 1, 2, 3, 4, 5};
    rig.levels = {
        {8, {3, 32}, {0, 16}, {4, 4}, {2, 2}},
        {16, {3, 16}, {0, 8}, {3, 4}, {1, 2}},
        {32, {3, 12}, {0, 6}, {3, 4}, {0, 0}},
    };
    return rig;
}

const LevelGeometry& PanoramaLayout::level(std::size_t l) const {
    if (l >= levels_.size()) {
        throw ArgumentError("level " + std::to_string(l) + " out of range (layout has " +
                            std::to_string(levels_.size()) + " levels)");
    }
    return levels_[l];
}

namespace {

std::string level_tag(std::size_t l) { return "level " + std::to_string(l); }

void require_divides(std::size_t divisor, std::size_t value, std::size_t level, const std::string& what) {
    if (divisor == 0 || value % divisor != 0) {
        throw ConfigError(level_tag(level) + ", " + what + ": " + std::to_string(divisor) +
                          " does not divide " + std::to_string(value));
    }
}

void require_shift(std::size_t shift, std::size_t window, std::size_t level, const std::string& what) {
    if (shift >= window) {
        throw ConfigError(level_tag(level) + ", " + what + ": shift " + std::to_string(shift) +
                          " must be smaller than window " + std::to_string(window));
    }
}

}  // namespace

PanoramaLayout build_layout(const RigConfig& rig) {
    if (rig.num_cameras == 0) throw ConfigError("rig: num_cameras must be at least 1");
    if (rig.ring_order.size() != rig.num_cameras) {
        throw ConfigError("rig: ring_order has " + std::to_string(rig.ring_order.size()) +
                          " entries for " + std::to_string(rig.num_cameras) + " cameras");
    }
    std::vector<std::size_t> position(rig.num_cameras, rig.num_cameras);
    for (std::size_t k = 0; k < rig.ring_order.size(); ++k) {
        const std::size_t cam = rig.ring_order[k];
        if (cam >= rig.num_cameras || position[cam] != rig.num_cameras) {
            throw ConfigError("rig: ring_order is not a permutation of 0.." + std::to_string(rig.num_cameras - 1));
        }
        position[cam] = k;
    }
    if (rig.levels.empty()) throw ConfigError("rig: at least one level is required");

    PanoramaLayout layout;
    layout.rig_ = rig;
    layout.ring_position_ = std::move(position);
    std::size_t prev_stride = 0;
    for (std::size_t l = 0; l < rig.levels.size(); ++l) {
        const LevelSpec& s = rig.levels[l];
        if (s.stride <= prev_stride) {
            throw ConfigError(level_tag(l) + ", stride: strides must be strictly increasing");
        }
        prev_stride = s.stride;
        require_divides(s.stride, rig.image_height, l, "stride vs image height");
        require_divides(s.stride, rig.image_width, l, "stride vs image width");

        LevelGeometry g;
        g.spec = s;
        g.per_view_h = rig.image_height / s.stride;
        g.per_view_w = rig.image_width / s.stride;
        g.pano_h = g.per_view_h;
        g.pano_w = rig.num_cameras * g.per_view_w;

        require_divides(s.mv_window.h, g.pano_h, l, "mv_window height");
        require_divides(s.mv_window.w, g.pano_w, l, "mv_window width");
        require_divides(s.roi_window.h, g.pano_h, l, "roi_window height");
        require_divides(s.roi_window.w, g.pano_w, l, "roi_window width");
        require_shift(s.mv_shift.dy, s.mv_window.h, l, "mv_shift height");
        require_shift(s.mv_shift.dx, s.mv_window.w, l, "mv_shift width");
        require_shift(s.roi_shift.dy, s.roi_window.h, l, "roi_shift height");
        require_shift(s.roi_shift.dx, s.roi_window.w, l, "roi_shift width");

        g.windows_mv = (g.pano_h / s.mv_window.h) * (g.pano_w / s.mv_window.w);
        g.windows_roi = (g.pano_h / s.roi_window.h) * (g.pano_w / s.roi_window.w);
        layout.levels_.push_back(g);
    }
    return layout;
}

template <typename T>
void validate_pyramid(const FeaturePyramid<T>& pyramid, const PanoramaLayout& layout) {
    if (pyramid.levels.size() != layout.num_levels()) {
        throw ArgumentError("pyramid has " + std::to_string(pyramid.levels.size()) + " levels, layout has " +
                            std::to_string(layout.num_levels()));
    }
    const std::size_t b = pyramid.batch();
    const std::size_t c = pyramid.channels();
    for (std::size_t l = 0; l < layout.num_levels(); ++l) {
        const auto& g = layout.level(l);
        require_shape(pyramid.levels[l], {b, c, g.pano_h, g.pano_w}, ("pyramid " + level_tag(l)).c_str());
        for (T v : pyramid.levels[l].data()) {
            if (!std::isfinite(v)) throw NumericError("pyramid " + level_tag(l) + " has a non-finite element");
        }
    }
}

template void validate_pyramid(const FeaturePyramid<double>&, const PanoramaLayout&);
template void validate_pyramid(const FeaturePyramid<float>&, const PanoramaLayout&);

WindowPartition WindowPartition::make(Extent2 map, Extent2 window, Offset2 shift, std::size_t level,
                                      WindowKind kind) {
    if (window.h == 0 || window.w == 0 || map.h % window.h != 0 || map.w % window.w != 0) {
        throw ArgumentError("window (" + std::to_string(window.h) + ", " + std::to_string(window.w) +
                            ") does not tile map (" + std::to_string(map.h) + ", " + std::to_string(map.w) + ")");
    }
    if (shift.dy >= map.h || shift.dx >= map.w) throw ArgumentError("partition shift exceeds map dims");
    WindowPartition p;
    p.level_ = level;
    p.kind_ = kind;
    p.map_ = map;
    p.window_ = window;
    p.shift_ = shift;
    const std::size_t per_row = map.w / window.w;
    p.num_windows_ = (map.h / window.h) * per_row;
    p.forward_.resize(map.h * map.w);
    p.inverse_.resize(map.h * map.w);
    for (std::size_t y = 0; y < map.h; ++y) {
        const std::size_t ty = (y + map.h - shift.dy) % map.h;
        for (std::size_t x = 0; x < map.w; ++x) {
            const std::size_t tx = (x + map.w - shift.dx) % map.w;
            const std::size_t win = (ty / window.h) * per_row + tx / window.w;
            const std::size_t slot = (ty % window.h) * window.w + tx % window.w;
            const std::size_t cell = y * map.w + x;
            p.forward_[cell] = {static_cast<std::uint32_t>(win), static_cast<std::uint32_t>(slot)};
            p.inverse_[win * p.slots() + slot] = static_cast<std::uint32_t>(cell);
        }
    }
    return p;
}

WindowPartition partition_windows(const PanoramaLayout& layout, std::size_t level, WindowKind kind,
                                  bool shifted) {
    const auto& g = layout.level(level);
    const Offset2 shift = shifted ? g.spec.shift(kind) : Offset2{};
    return WindowPartition::make({g.pano_h, g.pano_w}, g.spec.window(kind), shift, level, kind);
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& map, long dy, long dx) {
    if (map.rank() != 4) throw ArgumentError("cyclic_shift expects a (B, C, H, W) map");
    const std::size_t planes = map.dim(0) * map.dim(1);
    const long h = static_cast<long>(map.dim(2));
    const long w = static_cast<long>(map.dim(3));
    if (std::labs(dy) > h || std::labs(dx) > w) {
        throw ArgumentError("cyclic_shift: shift (" + std::to_string(dy) + ", " + std::to_string(dx) +
                            ") outside map (" + std::to_string(h) + ", " + std::to_string(w) + ")");
    }
    Tensor<T> out(map.shape());
    const std::size_t ys = static_cast<std::size_t>(((dy % h) + h) % h);
    const std::size_t xs = static_cast<std::size_t>(((dx % w) + w) % w);
    const std::size_t uh = static_cast<std::size_t>(h);
    const std::size_t uw = static_cast<std::size_t>(w);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = map.ptr() + p * uh * uw;
        T* dst = out.ptr() + p * uh * uw;
        for (std::size_t y = 0; y < uh; ++y) {
            const std::size_t ny = (y + ys) % uh;
            for (std::size_t x = 0; x < uw; ++x) dst[ny * uw + (x + xs) % uw] = src[y * uw + x];
        }
    }
    return out;
}

template Tensor<double> cyclic_shift(const Tensor<double>&, long, long);
template Tensor<float> cyclic_shift(const Tensor<float>&, long, long);

template <typename T>
Tensor<T> gather_windows(const Tensor<T>& map, const WindowPartition& partition) {
    if (map.rank() != 4 || map.dim(2) != partition.map().h || map.dim(3) != partition.map().w) {
        throw ArgumentError("gather_windows: map shape " + shape_string(map.shape()) +
                            " does not match partition map (" + std::to_string(partition.map().h) + ", " +
                            std::to_string(partition.map().w) + ")");
    }
    const std::size_t b = map.dim(0), c = map.dim(1), hw = partition.cells();
    const std::size_t r = partition.num_windows(), n = partition.slots();
    Tensor<T> out({b * r, n, c});
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t win = 0; win < r; ++win) {
            T* dst = out.ptr() + (bi * r + win) * n * c;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t cell = partition.inverse(win, s);
                for (std::size_t ch = 0; ch < c; ++ch) dst[s * c + ch] = map[(bi * c + ch) * hw + cell];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> scatter_windows(const Tensor<T>& windows, const WindowPartition& partition, std::size_t batch) {
    const std::size_t r = partition.num_windows(), n = partition.slots();
    if (windows.rank() != 3 || windows.dim(0) != batch * r || windows.dim(1) != n) {
        throw ArgumentError("scatter_windows: window tensor " + shape_string(windows.shape()) +
                            " does not match partition (" + std::to_string(batch * r) + " windows of " +
                            std::to_string(n) + " slots)");
    }
    const std::size_t c = windows.dim(2), hw = partition.cells();
    Tensor<T> out({batch, c, partition.map().h, partition.map().w});
    for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t win = 0; win < r; ++win) {
            const T* src = windows.ptr() + (bi * r + win) * n * c;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t cell = partition.inverse(win, s);
                for (std::size_t ch = 0; ch < c; ++ch) out[(bi * c + ch) * hw + cell] = src[s * c + ch];
            }
        }
    }
    return out;
}

template Tensor<double> gather_windows(const Tensor<double>&, const WindowPartition&);
template Tensor<float> gather_windows(const Tensor<float>&, const WindowPartition&);
template Tensor<double> scatter_windows(const Tensor<double>&, const WindowPartition&, std::size_t);
template Tensor<float> scatter_windows(const Tensor<float>&, const WindowPartition&, std::size_t);

namespace {

nlohmann::json pair_json(std::size_t a, std::size_t b) { return nlohmann::json::array({a, b}); }

std::pair<std::size_t, std::size_t> pair_from(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw FormatError(std::string("rig: '") + key + "' must be a 2-element array");
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

}  // namespace

void to_json(nlohmann::json& j, const RigConfig& rig) {
    j = nlohmann::json::object();
    j["cameras"] = rig.num_cameras;
    j["image_size"] = pair_json(rig.image_height, rig.image_width);
    j["ring_order"] = rig.ring_order;
    auto levels = nlohmann::json::array();
    for (const auto& s : rig.levels) {
        levels.push_back({{"stride", s.stride},
                          {"mv_window", pair_json(s.mv_window.h, s.mv_window.w)},
                          {"mv_shift", pair_json(s.mv_shift.dy, s.mv_shift.dx)},
                          {"roi_window", pair_json(s.roi_window.h, s.roi_window.w)},
                          {"roi_shift", pair_json(s.roi_shift.dy, s.roi_shift.dx)}});
    }
    j["levels"] = std::move(levels);
}

void from_json(const nlohmann::json& j, RigConfig& rig) {
    try {
        rig.num_cameras = j.at("cameras").get<std::size_t>();
        std::tie(rig.image_height, rig.image_width) = pair_from(j, "image_size");
        rig.ring_order = j.at("ring_order").get<std::vector<std::size_t>>();
        rig.levels.clear();
        for (const auto& lj : j.at("levels")) {
            LevelSpec s;
            s.stride = lj.at("stride").get<std::size_t>();
            std::tie(s.mv_window.h, s.mv_window.w) = pair_from(lj, "mv_window");
            std::tie(s.mv_shift.dy, s.mv_shift.dx) = pair_from(lj, "mv_shift");
            std::tie(s.roi_window.h, s.roi_window.w) = pair_from(lj, "roi_window");
            std::tie(s.roi_shift.dy, s.roi_shift.dx) = pair_from(lj, "roi_shift");
            rig.levels.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("rig: ") + e.what());
    }
}

nlohmann::json layout_to_json(const PanoramaLayout& layout) {
    nlohmann::json j;
    j["rig"] = layout.rig();
    auto levels = nlohmann::json::array();
    for (std::size_t l = 0; l < layout.num_levels(); ++l) {
        const auto& g = layout.level(l);
        levels.push_back({{"level", l},
                          {"per_view", pair_json(g.per_view_h, g.per_view_w)},
                          {"panorama", pair_json(g.pano_h, g.pano_w)},
                          {"windows_mv", g.windows_mv},
                          {"windows_roi", g.windows_roi}});
    }
    j["derived"] = std::move(levels);
    return j;
}

}  // namespace panoattn
