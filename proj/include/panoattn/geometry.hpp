#pragma once

// Panoramic multi-camera layout, feature pyramid container and window
// partitioning with cyclic shifts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "panoattn/tensor.hpp"

namespace panoattn {

/// (height, width) in feature cells.
struct Extent2 {
    std::size_t h = 0;
    std::size_t w = 0;
    bool operator==(const Extent2&) const = default;
};

/// (dy, dx) displacement in feature cells.
struct Offset2 {
    std::size_t dy = 0;
    std::size_t dx = 0;
    bool operator==(const Offset2&) const = default;
};

enum class WindowKind { mv_axis, roi };

const char* kind_name(WindowKind kind);

struct LevelSpec {
    std::size_t stride = 0;
    Extent2 mv_window;
    Offset2 mv_shift;
    Extent2 roi_window;
    Offset2 roi_shift;

    const Extent2& window(WindowKind k) const { return k == WindowKind::roi ? roi_window : mv_window; }
    const Offset2& shift(WindowKind k) const { return k == WindowKind::roi ? roi_shift : mv_shift; }
    bool operator==(const LevelSpec&) const = default;
};

/// Camera names in default ring order.
inline constexpr std::array<const char*, 6> kDefaultRingNames = {
    "CAM_FRONT_LEFT", "CAM_FRONT", "CAM_FRONT_RIGHT", "CAM_BACK_RIGHT", "CAM_BACK", "CAM_BACK_LEFT"};

struct RigConfig {
    std::size_t num_cameras = 6;
    std::size_t image_height = 576;
    std::size_t image_width = 1024;
    /// ring_order[k] is the camera index placed k-th from the left of the panorama.
    std::vector<std::size_t> ring_order{0, 1, 2, 3, 4, 5};
    std::vector<LevelSpec> levels;

    bool operator==(const RigConfig&) const = default;
};

/// Rig from the reference experiment: six cameras at (576, 1024), four levels
/// at strides 8/16/32/64 with the published window and shift tables.
RigConfig paper_rig();

/// Small rig for oracle runs: six cameras, 12x16 per view at level 0, three levels.
RigConfig desk_rig();

struct LevelGeometry {
    LevelSpec spec;
    std::size_t per_view_h = 0;
    std::size_t per_view_w = 0;
    std::size_t pano_h = 0;
    std::size_t pano_w = 0;
    std::size_t windows_mv = 0;
    std::size_t windows_roi = 0;

    std::size_t cells() const { return pano_h * pano_w; }
    std::size_t windows(WindowKind k) const { return k == WindowKind::roi ? windows_roi : windows_mv; }
};

class PanoramaLayout {
public:
    const RigConfig& rig() const { return rig_; }
    std::size_t num_levels() const { return levels_.size(); }
    const LevelGeometry& level(std::size_t l) const;
    const std::vector<LevelGeometry>& levels() const { return levels_; }

    /// Panorama position (0..M-1, left to right) of a camera index.
    std::size_t ring_position(std::size_t camera) const { return ring_position_.at(camera); }
    /// First panoramic column of a camera's view at a level.
    std::size_t column_origin(std::size_t level, std::size_t camera) const {
        return ring_position(camera) * this->level(level).per_view_w;
    }

    friend PanoramaLayout build_layout(const RigConfig& rig);

private:
    RigConfig rig_;
    std::vector<LevelGeometry> levels_;
    std::vector<std::size_t> ring_position_;
};

/// Validates the rig and derives per-level panoramic geometry and window counts.
/// Throws ConfigError naming the level and axis of any divisibility failure.
PanoramaLayout build_layout(const RigConfig& rig);

/// Multi-level dense maps, each (B, C, pano_h, pano_w).
template <typename T>
struct FeaturePyramid {
    std::vector<Tensor<T>> levels;

    std::size_t batch() const { return levels.empty() ? 0 : levels.front().dim(0); }
    std::size_t channels() const { return levels.empty() ? 0 : levels.front().dim(1); }

    template <typename U>
    FeaturePyramid<U> cast() const {
        FeaturePyramid<U> out;
        for (const auto& l : levels) out.levels.push_back(l.template cast<U>());
        return out;
    }
    bool operator==(const FeaturePyramid&) const = default;
};

/// Checks the pyramid against the layout: shared B and C, per-level dims, finite entries.
template <typename T>
void validate_pyramid(const FeaturePyramid<T>& pyramid, const PanoramaLayout& layout);

struct WindowSlot {
    std::uint32_t window = 0;
    std::uint32_t slot = 0;
};

/// Bijection between panoramic cells and (window, slot) pairs.
///
/// Cells are indexed y * pano_w + x. A shifted partition displaces the grid
/// cyclically: cell (y, x) is tiled at ((y - dy) mod H, (x - dx) mod W), so
/// cell (dy, dx) becomes window 0, slot 0. Windows and slots are row-major.
class WindowPartition {
public:
    std::size_t level() const { return level_; }
    WindowKind kind() const { return kind_; }
    Extent2 map() const { return map_; }
    Extent2 window() const { return window_; }
    Offset2 shift() const { return shift_; }
    bool shifted() const { return shift_.dy != 0 || shift_.dx != 0; }

    std::size_t num_windows() const { return num_windows_; }
    std::size_t slots() const { return window_.h * window_.w; }
    std::size_t cells() const { return map_.h * map_.w; }

    WindowSlot forward(std::size_t cell) const { return forward_[cell]; }
    std::size_t inverse(std::size_t window, std::size_t slot) const { return inverse_[window * slots() + slot]; }
    const std::vector<WindowSlot>& forward_map() const { return forward_; }
    const std::vector<std::uint32_t>& inverse_map() const { return inverse_; }

    /// 1 for cells whose row wrapped past the bottom seam under the vertical
    /// shift, 0 otherwise. Pairs with differing segments are not adjacent.
    std::uint8_t row_segment(std::size_t cell) const { return cell / map_.w < shift_.dy ? 1 : 0; }
    bool has_vertical_wrap() const { return shift_.dy != 0; }

    /// Partition of an arbitrary map; used directly by tests and by partition_windows.
    static WindowPartition make(Extent2 map, Extent2 window, Offset2 shift, std::size_t level = 0,
                                WindowKind kind = WindowKind::roi);

private:
    std::size_t level_ = 0;
    WindowKind kind_ = WindowKind::roi;
    Extent2 map_;
    Extent2 window_;
    Offset2 shift_;
    std::size_t num_windows_ = 0;
    std::vector<WindowSlot> forward_;
    std::vector<std::uint32_t> inverse_;
};

WindowPartition partition_windows(const PanoramaLayout& layout, std::size_t level, WindowKind kind,
                                  bool shifted);

/// Cyclic shift of a (B, C, H, W) map: element (y, x) moves to
/// ((y + dy) mod H, (x + dx) mod W). |dy| <= H and |dx| <= W.
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& map, long dy, long dx);

/// (B, C, H, W) -> (B * r, h * w, C); window index is b * r + window.
template <typename T>
Tensor<T> gather_windows(const Tensor<T>& map, const WindowPartition& partition);

/// Inverse of gather_windows.
template <typename T>
Tensor<T> scatter_windows(const Tensor<T>& windows, const WindowPartition& partition, std::size_t batch);

// Structured text (JSON) form of the rig. Keys: cameras, image_size [h, w],
// ring_order, levels[{stride, mv_window, mv_shift, roi_window, roi_shift}].
void to_json(nlohmann::json& j, const RigConfig& rig);
void from_json(const nlohmann::json& j, RigConfig& rig);

/// Layout summary for reports: rig plus derived per-level dims and window counts.
nlohmann::json layout_to_json(const PanoramaLayout& layout);

}  // namespace panoattn
