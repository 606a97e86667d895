#pragma once

// Rotated BEV NMS and nuScenes-style detection metrics.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "panoattn/queries.hpp"

namespace panoattn {

using Point2 = std::array<double, 2>;

/// Footprint corners, counter-clockwise. Length runs along the heading.
std::array<Point2, 4> bev_corners(const Detection& d);

/// Shoelace area; positive for counter-clockwise polygons.
double polygon_area(const std::vector<Point2>& poly);

/// Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman).
std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip);

/// IoU of the two yawed footprints. Zero-area boxes give 0.
double rotated_iou_bev(const Detection& a, const Detection& b);

/// Indices of survivors, in selection order.
std::vector<std::size_t> nms_indices(const DetectionSet& dets, double tau);

/// Greedy class-wise NMS: keep the highest-confidence remaining detection
/// (ties by input index), drop same-class detections with IoU > tau.
DetectionSet nms(const DetectionSet& dets, double tau);

struct Match {
    std::size_t pred = 0;
    std::size_t gt = 0;
    double distance = 0;
};

struct Matching {
    std::vector<Match> matches;  // in prediction processing order
    std::vector<std::size_t> unmatched_preds;
    std::vector<std::size_t> unmatched_gts;
};

/// BEV center distance.
double center_distance(const Detection& a, const Detection& b);

/// Predictions in descending confidence (ties by index) each claim the nearest
/// unclaimed same-class ground truth whose center distance is below d.
Matching match_center_distance(const DetectionSet& preds, const DetectionSet& gts, double d);

inline constexpr std::array<double, 4> kDistanceThresholds = {0.5, 1.0, 2.0, 4.0};
inline constexpr double kTpDistance = 2.0;
inline constexpr double kMinRecall = 0.1;
inline constexpr double kMinPrecision = 0.1;
inline constexpr std::size_t kCurvePoints = 101;

/// Recall-interpolated curve for one class at one distance threshold.
struct MetricCurve {
    std::vector<double> recall, precision, confidence;
    std::vector<double> trans_err, scale_err, orient_err, vel_err;
    std::size_t max_recall_index() const;
};

/// Curve for one class. std::nullopt when the class has no ground truth.
std::optional<MetricCurve> accumulate_class(const DetectionSet& preds, const DetectionSet& gts, std::size_t class_id,
                                            double d);

/// Area under the clipped precision curve (recall > 0.1, precision floor 0.1), normalized.
double curve_ap(const MetricCurve& curve);

/// AP of one class at one threshold; nullopt when the class has no ground truth.
std::optional<double> class_average_precision(const DetectionSet& preds, const DetectionSet& gts,
                                              std::size_t class_id, double d);

/// Mean over classes with ground truth of the class AP at threshold d.
double average_precision(const DetectionSet& preds, const DetectionSet& gts, double d);

/// Absolute yaw difference wrapped into [0, pi].
double yaw_difference(double a, double b, double period);

/// 1 - IoU of the two boxes aligned at center and heading.
double scale_error(const Detection& gt, const Detection& pred);

struct ClassMetrics {
    std::optional<double> ap;  // mean over thresholds; nullopt when no ground truth
    std::array<double, 4> ap_per_threshold{};
    std::optional<double> ate, ase, aoe, ave;
};

struct MetricsBundle {
    double mAP = 0;
    std::array<ClassMetrics, kNumClasses> per_class{};
    double mATE = 1, mASE = 1, mAOE = 1, mAVE = 1;
    /// Absent when attributes are not modelled; NDS then averages four TP terms.
    std::optional<double> mAAE;
    double nds = 0;
};

/// (1/(5+k)) [5 mAP + sum over the k present TP errors of (1 - min(1, err))], k = 4 or 5.
double compute_nds(const MetricsBundle& bundle);

MetricsBundle evaluate(const DetectionSet& preds, const DetectionSet& gts);

nlohmann::json metrics_to_json(const MetricsBundle& bundle);

/// Aligned text: per-class AP table, TP errors, NDS.
std::string format_report(const MetricsBundle& bundle);

}  // namespace panoattn
