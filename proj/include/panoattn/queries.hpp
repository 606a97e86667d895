#pragma once

// Multi-representation queries: sparse floating queries decoded from a
// sampled 3D reference point, dense BEV grid queries, confidence top-k, and
// the union of both sets.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "panoattn/geometry.hpp"

namespace panoattn {

inline constexpr std::size_t kNumClasses = 10;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "car",        "truck",      "bus",     "trailer",      "construction_vehicle",
    "pedestrian", "motorcycle", "bicycle", "traffic_cone", "barrier"};

std::optional<std::size_t> class_from_name(std::string_view name);

using Vec3 = std::array<double, 3>;

/// Perception range in the ego frame (x forward, y left, z up), metres.
struct SceneBounds {
    double x_min = -51.2, x_max = 51.2;
    double y_min = -51.2, y_max = 51.2;
    double z_min = -5.0, z_max = 3.0;

    Vec3 center() const { return {(x_min + x_max) / 2, (y_min + y_max) / 2, (z_min + z_max) / 2}; }
    bool contains(const Vec3& p) const {
        return p[0] >= x_min && p[0] <= x_max && p[1] >= y_min && p[1] <= y_max && p[2] >= z_min && p[2] <= z_max;
    }
};

struct Camera {
    std::array<double, 12> projection{};  // 3x4 row-major, ego homogeneous -> image homogeneous
    std::size_t image_height = 0;
    std::size_t image_width = 0;
};

struct CameraRig {
    std::vector<Camera> cameras;  // indexed like RigConfig cameras
};

/// Pinhole cameras on a ring: ring position k looks along yaw 360/M * (1 - k)
/// degrees, so panorama columns run clockwise seen from above.
CameraRig make_ring_rig(const RigConfig& rig, double horizontal_fov_deg = 64.0, double mount_height = 1.5);

struct ImagePoint {
    double u = 0;
    double v = 0;
    bool valid = false;
};

/// valid iff depth > 0 and (u, v) lies in [0, W) x [0, H).
ImagePoint project_point(const Camera& camera, const Vec3& p);

/// Horizontal sub-range of a map; sampling is clamped inside it.
struct ColumnSpan {
    std::size_t begin = 0;
    std::size_t count = 0;
};

/// Bilinear interpolation of batch element `batch` at column u, row v, in cell
/// coordinates. Coordinates are clamped to the border (of `span` when given).
std::vector<double> bilinear_sample(const Tensor<double>& map, double u, double v, std::size_t batch = 0,
                                    std::optional<ColumnSpan> span = std::nullopt);

struct MultiviewSample {
    std::vector<double> feature;  // C
    bool valid = false;
    std::size_t hits = 0;  // cameras that see the point
};

/// Mean of bilinear samples over (cameras that see p) x levels. Each camera is
/// sampled inside its own panoramic column span at (u + 0.5) / stride - 0.5.
MultiviewSample sample_multiview(const FeaturePyramid<double>& pyramid, const CameraRig& cameras,
                                 const PanoramaLayout& layout, const Vec3& p, std::size_t batch = 0);

enum class Source { floating, bev, ground_truth };
std::string_view source_name(Source s);

struct Detection {
    Vec3 center{};
    Vec3 size{1, 1, 1};  // (w, l, h), l along the heading
    double yaw = 0;
    std::array<double, 2> velocity{};
    std::size_t class_id = 0;
    double confidence = 0;
    Source source = Source::floating;

    bool operator==(const Detection&) const = default;
};

using DetectionSet = std::vector<Detection>;

struct LinearHead {
    Tensor<double> weight;  // (out, C)
    std::vector<double> bias;

    static LinearHead zeros(std::size_t out, std::size_t channels);
    static LinearHead random(std::size_t out, std::size_t channels, std::uint64_t seed);
    std::vector<double> apply(std::span<const double> x) const;
};

/// Box head outputs, in order: offset (x, y, z), log size (w, l, h), sin yaw,
/// cos yaw, velocity (x, y). Class head: one logit per class.
inline constexpr std::size_t kBoxOutputs = 10;

struct DecodeHeads {
    LinearHead box;
    LinearHead cls;
};

struct FloatingQuerySet {
    Tensor<double> embeddings;  // (N, C)
    LinearHead reference;       // 3 outputs, squashed into bounds
    DecodeHeads heads;
    SceneBounds bounds;

    std::size_t size() const { return embeddings.rank() ? embeddings.dim(0) : 0; }
};

FloatingQuerySet make_floating_queries(std::size_t count, std::size_t channels, std::uint64_t seed);

struct BevQueryGrid {
    std::size_t cells_per_side = 128;
    SceneBounds bounds;
    double reference_z = 0.5;
    DecodeHeads heads;

    double cell_size() const { return (bounds.x_max - bounds.x_min) / static_cast<double>(cells_per_side); }
    /// Center of cell index iy * cells_per_side + ix.
    std::array<double, 2> cell_center(std::size_t cell) const;
    std::size_t cells() const { return cells_per_side * cells_per_side; }
};

BevQueryGrid make_bev_grid(std::size_t cells_per_side, std::size_t channels, std::uint64_t seed);

/// Sinusoidal encoding of a BEV position, C channels (x in the first half, y in the second).
std::vector<double> bev_position_encoding(double x, double y, std::size_t channels);

/// One detection per query, source = floating.
DetectionSet decode_floating(const FloatingQuerySet& queries, const FeaturePyramid<double>& pyramid,
                             const CameraRig& cameras, const PanoramaLayout& layout);

/// One detection per cell in cell order; center = cell center + offset bounded to half a cell.
DetectionSet decode_bev(const BevQueryGrid& grid, const FeaturePyramid<double>& pyramid, const CameraRig& cameras,
                        const PanoramaLayout& layout);

/// k highest-confidence detections, descending; ties keep input order.
DetectionSet topk_select(const DetectionSet& dets, std::size_t k);

/// a followed by b.
DetectionSet aggregate(const DetectionSet& a, const DetectionSet& b);

// Line-delimited JSON. First line: {"schema":"panoattn.detections","version":1}.
// Records: source, class, confidence, center[3], size[3] (w,l,h), yaw, velocity[2].
void write_detections(std::ostream& os, const DetectionSet& dets);
DetectionSet read_detections(std::istream& is);
void save_detections(const std::string& path, const DetectionSet& dets);
DetectionSet load_detections(const std::string& path);

}  // namespace panoattn
