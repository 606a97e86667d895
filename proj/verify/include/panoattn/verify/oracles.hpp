#pragma once

// Reference implementations used only to check the library. None of them
// calls into the code under test beyond plain data types.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "panoattn/attention.hpp"
#include "panoattn/queries.hpp"

namespace panoattn::verify {

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// (f(x + eps) - f(x - eps)) / (2 eps), restoring x afterwards.
double central_difference(const std::function<double()>& f, double& x, double eps = 1e-5);

/// Attention over all H*W positions of one (C, H, W) map slice with
/// allowed(i, j) deciding each pair. Straight loops over the definition.
Tensor<double> naive_masked_attention(const Tensor<double>& map, const AttentionParams<double>& params,
                                      const std::function<bool(std::size_t, std::size_t)>& allowed);

/// Footprint corners from first principles, in no particular order.
std::vector<std::array<double, 2>> footprint(const Detection& d);

/// Exact footprint IoU via the convex hull of corner-inside points and edge crossings.
double hull_iou(const Detection& a, const Detection& b);

/// Stratified jittered estimate: grid x grid samples over a's footprint,
/// intersection = area(a) * fraction inside b.
double monte_carlo_iou(const Detection& a, const Detection& b, std::size_t grid, std::uint64_t seed);

/// Repeatedly take the highest-confidence unsuppressed detection (lowest index
/// on ties) by linear scan, then suppress same-class overlaps above tau.
std::vector<std::size_t> brute_force_nms(const DetectionSet& dets, double tau);

/// Full sort by (confidence desc, index asc), first k indices.
std::vector<std::size_t> sort_topk(const DetectionSet& dets, std::size_t k);

/// Exhaustive partition check against the tiling definition. Returns a
/// description of the first violation.
std::optional<std::string> check_partition(const WindowPartition& partition);

}  // namespace panoattn::verify
