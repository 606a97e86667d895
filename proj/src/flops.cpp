#include "panoattn/flops.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "panoattn/attention.hpp"
#include "panoattn/errors.hpp"
#include "panoattn/rng.hpp"

namespace panoattn {

Rational Rational::make(std::uint64_t num, std::uint64_t den) {
    if (den == 0) throw ArgumentError("rational with zero denominator");
    const std::uint64_t g = std::gcd(num, den);
    return g ? Rational{num / g, den / g} : Rational{0, 1};
}

namespace {

std::uint64_t tokens(const PanoramaLayout& layout, std::size_t level) {
    const auto& g = layout.level(level);
    return static_cast<std::uint64_t>(layout.rig().num_cameras) * g.per_view_h * g.per_view_w;
}

}  // namespace

std::uint64_t flops_full(const PanoramaLayout& layout, std::size_t level, std::uint64_t batch, std::uint64_t channels) {
    const std::uint64_t n = tokens(layout, level);
    return batch * n * n * channels;
}

WindowedFlops flops_windowed(const PanoramaLayout& layout, std::size_t level, WindowKind kind, std::uint64_t batch,
                             std::uint64_t channels) {
    const std::uint64_t r = layout.level(level).windows(kind);
    const std::uint64_t n = tokens(layout, level);
    // r windows of n / r tokens each: r * (n / r)^2 = n * (n / r).
    return {batch * n * (n / r) * channels, r, Rational::make(1, r)};
}

std::uint64_t flops_projection(const PanoramaLayout& layout, std::size_t level, std::uint64_t batch,
                               std::uint64_t channels) {
    return 4 * batch * tokens(layout, level) * channels * channels;
}

FlopReport flop_report(const PanoramaLayout& layout, std::uint64_t batch, std::uint64_t channels) {
    FlopReport rep;
    for (std::size_t l = 0; l < layout.num_levels(); ++l) {
        for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
            const auto w = flops_windowed(layout, l, kind, batch, channels);
            FlopRow row{l, kind, w.windows, flops_full(layout, l, batch, channels), w.count,
                        flops_projection(layout, l, batch, channels), w.ratio, std::nullopt};
            rep.total_full += row.full_mac;
            rep.total_windowed += row.windowed_mac;
            rep.rows.push_back(row);
        }
    }
    return rep;
}

EmpiricalTiming measure_empirical(const PanoramaLayout& layout, std::size_t level, WindowKind kind,
                                  std::size_t trials, std::size_t channels, std::size_t heads, std::uint64_t seed) {
    EmpiricalTiming t;
    t.analytic_ratio = flops_windowed(layout, level, kind, 1, channels).ratio.value();
    if (trials == 0) return t;
    const auto& g = layout.level(level);
    if (g.cells() > kOracleMaxPositions) {
        throw ArgumentError("measure_empirical: level " + std::to_string(level) + " has " + std::to_string(g.cells()) +
                            " positions, above the full-attention limit");
    }
    Rng rng(seed);
    auto params = AttentionParams<float>::zeros(channels, heads);
    for (Tensor<float>* w : {&params.wq, &params.wk, &params.wv, &params.wo}) {
        for (float& v : w->data()) v = static_cast<float>(rng.uniform(-0.25, 0.25));
    }
    Tensor<float> map({1, channels, g.pano_h, g.pano_w});
    for (float& v : map.data()) v = static_cast<float>(rng.normal());
    const auto part = partition_windows(layout, level, kind, false);
    const auto mask = AttentionMask::all(part.slots());
    const auto pair_mask = block_pair_mask(part);

    using clock = std::chrono::steady_clock;
    std::vector<double> tw, tf;
    for (std::size_t i = 0; i < trials; ++i) {
        auto t0 = clock::now();
        auto a = windowed_attention(map, part, params, mask);
        auto t1 = clock::now();
        auto b = full_attention_oracle(map, params, pair_mask);
        auto t2 = clock::now();
        tw.push_back(std::chrono::duration<double>(t1 - t0).count());
        tf.push_back(std::chrono::duration<double>(t2 - t1).count());
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    t.trials = trials;
    t.windowed_seconds = median(tw);
    t.full_seconds = median(tf);
    t.measured_ratio = t.full_seconds > 0 ? t.windowed_seconds / t.full_seconds : 0.0;
    t.note = "reduced size (" + std::to_string(g.pano_h) + "x" + std::to_string(g.pano_w) + ", C=" +
             std::to_string(channels) +
             "); timings include projections and the reference's unoptimized loops, so only the direction "
             "of the ratio is meaningful";
    return t;
}

std::string format_flop_table(const FlopReport& report) {
    std::ostringstream os;
    os << std::right << std::setw(5) << "level" << std::setw(9) << "kind" << std::setw(7) << "r" << std::setw(22)
       << "full MACs" << std::setw(20) << "windowed MACs" << std::setw(10) << "ratio %" << std::setw(12) << "measured"
       << '\n';
    for (const auto& r : report.rows) {
        os << std::setw(5) << r.level << std::setw(9) << kind_name(r.kind) << std::setw(7) << r.windows
           << std::setw(22) << r.full_mac << std::setw(20) << r.windowed_mac << std::setw(10) << std::fixed
           << std::setprecision(4) << 100.0 * r.ratio.value();
        if (r.measured_ratio) {
            os << std::setw(12) << std::setprecision(4) << *r.measured_ratio;
        } else {
            os << std::setw(12) << "-";
        }
        os << '\n';
    }
    os << "total full " << report.total_full << ", windowed " << report.total_windowed << '\n';
    return os.str();
}

nlohmann::json flop_report_json(const FlopReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"level", r.level},
                        {"kind", kind_name(r.kind)},
                        {"r", r.windows},
                        {"full_mac", r.full_mac},
                        {"windowed_mac", r.windowed_mac},
                        {"projection_mac", r.projection_mac},
                        {"ratio", {r.ratio.num, r.ratio.den}},
                        {"ratio_percent", 100.0 * r.ratio.value()},
                        {"measured_ratio", r.measured_ratio ? nlohmann::json(*r.measured_ratio) : nlohmann::json(nullptr)}});
    }
    return {{"schema", "panoattn.flops"},
            {"version", 1},
            {"rows", rows},
            {"total_full_mac", report.total_full},
            {"total_windowed_mac", report.total_windowed}};
}

std::string flop_report_csv(const FlopReport& report) {
    std::ostringstream os;
    os << "# panoattn flops v1\n";
    os << "level,kind,r,full_mac,windowed_mac,projection_mac,ratio_num,ratio_den,ratio_percent,measured_ratio\n";
    os << std::setprecision(17);
    for (const auto& r : report.rows) {
        os << r.level << ',' << kind_name(r.kind) << ',' << r.windows << ',' << r.full_mac << ',' << r.windowed_mac
           << ',' << r.projection_mac << ',' << r.ratio.num << ',' << r.ratio.den << ',' << 100.0 * r.ratio.value()
           << ',';
        if (r.measured_ratio) os << *r.measured_ratio;
        os << '\n';
    }
    return os.str();
}

}  // namespace panoattn
