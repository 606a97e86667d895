#pragma once

// Acceptance checks shared by the acceptance test binary and `panoattn verify`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "panoattn/config.hpp"

namespace panoattn::verify {

struct CriterionResult {
    std::string name;
    bool passed = false;
    double seconds = 0;
    double budget_seconds = 0;  // 0 = no runtime bound
    std::string detail;
};

/// "PASS name [1.23 s / 30 s] detail".
std::string format_result(const CriterionResult& r);

/// Runs body, times it, and folds the runtime budget into the verdict.
/// body returns true on success and appends to detail.
CriterionResult run_criterion(const std::string& name, double budget_seconds,
                              const std::function<bool(std::string& detail)>& body);

// Tolerances.
inline constexpr double kEquivalenceTol = 1e-10;
inline constexpr double kAttentionGradTol = 1e-4;
inline constexpr double kEncoderGradTol = 1e-3;
inline constexpr double kMonteCarloIouTol = 2e-3;
inline constexpr double kTableNdsTol = 0.01;

/// r per level on the reference rig and the bench table listing them.
CriterionResult check_window_arithmetic();
/// Level-0 windowed/full ratios as exact rationals 1/576 and 1/384.
CriterionResult check_complexity_ratio();
/// windowed_attention vs block-masked full attention, every level/kind/shift
/// with at most kOracleMaxPositions cells.
CriterionResult check_oracle_equivalence(const RigConfig& rig, std::size_t channels, std::size_t heads,
                                         std::uint64_t seed);
/// 100 attention instances plus a two-block encoder on the rig.
CriterionResult check_gradients(const RigConfig& rig, std::uint64_t seed);
/// Partition bijection, tiling and shift-inverse identities on every level.
CriterionResult check_partitions(const RigConfig& rig);
/// Monte Carlo IoU on 50 pairs, brute-force NMS on 200 sets, idempotence.
CriterionResult check_nms_iou(std::uint64_t seed);
/// Pipeline stage counts and top-k against the sort reference.
CriterionResult check_query_fusion(const RunConfig& config);
/// NDS from the published baseline row, perfect predictions score exactly 1.
CriterionResult check_metrics(std::uint64_t seed);
/// Two pipeline runs with one config and seed give identical manifests.
CriterionResult check_determinism(const RunConfig& config);

/// All nine checks. `rig_config` drives the layout-dependent checks; the
/// pipeline checks use `pipeline_config`.
std::vector<CriterionResult> run_acceptance(const RunConfig& rig_config, const RunConfig& pipeline_config,
                                            std::uint64_t seed);

}  // namespace panoattn::verify
