#pragma once

// Analytic multiply-accumulate counts for full versus windowed self-attention.
//
// Counted: the score product Q K^T and the aggregation P V, i.e. the
// asymptotic B * (M*H*W)^2 * C term (constant factor 1 per product is
// dropped). Q/K/V/O projections are linear in the token count and are
// reported separately as 4 * B * M*H*W * C^2.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "panoattn/geometry.hpp"

namespace panoattn {

/// Exact non-negative fraction in lowest terms.
struct Rational {
    std::uint64_t num = 0;
    std::uint64_t den = 1;

    static Rational make(std::uint64_t num, std::uint64_t den);
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational&) const = default;
};

std::uint64_t flops_full(const PanoramaLayout& layout, std::size_t level, std::uint64_t batch, std::uint64_t channels);

struct WindowedFlops {
    std::uint64_t count = 0;
    std::uint64_t windows = 0;
    Rational ratio;
};

WindowedFlops flops_windowed(const PanoramaLayout& layout, std::size_t level, WindowKind kind, std::uint64_t batch,
                             std::uint64_t channels);

std::uint64_t flops_projection(const PanoramaLayout& layout, std::size_t level, std::uint64_t batch,
                               std::uint64_t channels);

struct FlopRow {
    std::size_t level = 0;
    WindowKind kind = WindowKind::mv_axis;
    std::uint64_t windows = 0;
    std::uint64_t full_mac = 0;
    std::uint64_t windowed_mac = 0;
    std::uint64_t projection_mac = 0;
    Rational ratio;
    std::optional<double> measured_ratio;
};

struct FlopReport {
    std::vector<FlopRow> rows;
    std::uint64_t total_full = 0;
    std::uint64_t total_windowed = 0;
};

FlopReport flop_report(const PanoramaLayout& layout, std::uint64_t batch, std::uint64_t channels);

struct EmpiricalTiming {
    std::size_t trials = 0;
    double windowed_seconds = 0;  // median
    double full_seconds = 0;      // median
    double measured_ratio = 0;
    double analytic_ratio = 0;
    std::string note;
};

/// Times windowed attention against the masked full-attention reference on one
/// level (32-bit). Empty (trials = 0) when trials is 0. Throws ArgumentError
/// when the level is too large for the reference.
EmpiricalTiming measure_empirical(const PanoramaLayout& layout, std::size_t level, WindowKind kind,
                                  std::size_t trials, std::size_t channels = 16, std::size_t heads = 2,
                                  std::uint64_t seed = 0);

std::string format_flop_table(const FlopReport& report);
nlohmann::json flop_report_json(const FlopReport& report);
/// Schema line, column line, then one comma-separated row per (level, kind).
std::string flop_report_csv(const FlopReport& report);

}  // namespace panoattn
