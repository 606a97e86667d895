#include "panoattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "panoattn/errors.hpp"

namespace panoattn {

std::array<Point2, 4> bev_corners(const Detection& d) {
    const double c = std::cos(d.yaw), s = std::sin(d.yaw);
    const double hl = d.size[1] / 2, hw = d.size[0] / 2;
    const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
    std::array<Point2, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        out[i] = {d.center[0] + c * local[i][0] - s * local[i][1], d.center[1] + s * local[i][0] + c * local[i][1]};
    }
    return out;
}

double polygon_area(const std::vector<Point2>& poly) {
    double a = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % poly.size()];
        a += p[0] * q[1] - p[1] * q[0];
    }
    return 0.5 * a;
}

std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip) {
    std::vector<Point2> out = subject;
    for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
        const Point2 a = clip[e];
        const Point2 b = clip[(e + 1) % clip.size()];
        auto side = [&](const Point2& p) { return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]); };
        std::vector<Point2> next;
        next.reserve(out.size() + 2);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const Point2& s = out[i];
            const Point2& t = out[(i + 1) % out.size()];
            const double ss = side(s), st = side(t);
            if (ss >= 0) next.push_back(s);
            if ((ss >= 0) != (st >= 0)) {
                const double f = ss / (ss - st);
                next.push_back({s[0] + f * (t[0] - s[0]), s[1] + f * (t[1] - s[1])});
            }
        }
        out = std::move(next);
    }
    return out;
}

double rotated_iou_bev(const Detection& a, const Detection& b) {
    const double area_a = a.size[0] * a.size[1];
    const double area_b = b.size[0] * b.size[1];
    if (!(area_a > 0) || !(area_b > 0)) return 0.0;
    const auto ca = bev_corners(a);
    const auto cb = bev_corners(b);
    const double reach = std::hypot(a.size[0], a.size[1]) / 2 + std::hypot(b.size[0], b.size[1]) / 2;
    if (center_distance(a, b) >= reach) return 0.0;
    const auto inter = clip_convex({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
    const double ia = inter.size() < 3 ? 0.0 : std::max(0.0, polygon_area(inter));
    const double uni = area_a + area_b - ia;
    return uni > 0 ? std::clamp(ia / uni, 0.0, 1.0) : 0.0;
}

namespace {

std::vector<std::size_t> confidence_order(const DetectionSet& dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    return order;
}

}  // namespace

std::vector<std::size_t> nms_indices(const DetectionSet& dets, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("nms: tau must lie in [0, 1]");
    const auto order = confidence_order(dets);
    std::vector<char> suppressed(dets.size(), 0);
    std::vector<std::size_t> keep;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const std::size_t i = order[oi];
        if (suppressed[i]) continue;
        keep.push_back(i);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const std::size_t j = order[oj];
            if (!suppressed[j] && dets[j].class_id == dets[i].class_id && rotated_iou_bev(dets[i], dets[j]) > tau) {
                suppressed[j] = 1;
            }
        }
    }
    return keep;
}

DetectionSet nms(const DetectionSet& dets, double tau) {
    DetectionSet out;
    for (std::size_t i : nms_indices(dets, tau)) out.push_back(dets[i]);
    return out;
}

double center_distance(const Detection& a, const Detection& b) {
    return std::hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]);
}

Matching match_center_distance(const DetectionSet& preds, const DetectionSet& gts, double d) {
    if (!(d > 0)) throw ArgumentError("match_center_distance: d must be positive");
    Matching m;
    std::vector<char> taken(gts.size(), 0);
    for (std::size_t p : confidence_order(preds)) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_gt = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].class_id != preds[p].class_id) continue;
            const double dist = center_distance(preds[p], gts[g]);
            if (dist < best) {
                best = dist;
                best_gt = g;
            }
        }
        if (best_gt < gts.size() && best < d) {
            taken[best_gt] = 1;
            m.matches.push_back({p, best_gt, best});
        } else {
            m.unmatched_preds.push_back(p);
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (!taken[g]) m.unmatched_gts.push_back(g);
    }
    return m;
}

namespace {

/// Linear interpolation with numpy.interp semantics: xp ascending (repeats
/// allowed), left of range -> fp[0], right of range -> `right`.
std::vector<double> interp(const std::vector<double>& x, const std::vector<double>& xp, const std::vector<double>& fp,
                           double right) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (v < xp.front()) {
            out[i] = fp.front();
        } else if (v > xp.back()) {
            out[i] = right;
        } else if (v == xp.back()) {
            out[i] = fp.back();
        } else {
            const std::size_t j =
                static_cast<std::size_t>(std::upper_bound(xp.begin(), xp.end(), v) - xp.begin()) - 1;
            const double slope = (fp[j + 1] - fp[j]) / (xp[j + 1] - xp[j]);
            out[i] = fp[j] + slope * (v - xp[j]);
        }
    }
    return out;
}

/// Running mean ignoring NaN; all-NaN input gives ones.
std::vector<double> cummean(const std::vector<double>& x) {
    if (std::all_of(x.begin(), x.end(), [](double v) { return std::isnan(v); })) return std::vector<double>(x.size(), 1.0);
    std::vector<double> out(x.size());
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isnan(x[i])) {
            sum += x[i];
            ++count;
        }
        out[i] = count ? sum / static_cast<double>(count) : 0.0;
    }
    return out;
}

std::vector<double> recall_grid() {
    std::vector<double> r(kCurvePoints);
    for (std::size_t i = 0; i < kCurvePoints; ++i) r[i] = static_cast<double>(i) / static_cast<double>(kCurvePoints - 1);
    return r;
}

MetricCurve no_predictions() {
    MetricCurve c;
    c.recall = recall_grid();
    c.precision.assign(kCurvePoints, 0.0);
    c.confidence.assign(kCurvePoints, 0.0);
    c.trans_err.assign(kCurvePoints, 1.0);
    c.scale_err.assign(kCurvePoints, 1.0);
    c.orient_err.assign(kCurvePoints, 1.0);
    c.vel_err.assign(kCurvePoints, 1.0);
    return c;
}

bool is_cone(std::size_t cls) { return kClassNames[cls] == "traffic_cone"; }
bool is_barrier(std::size_t cls) { return kClassNames[cls] == "barrier"; }

}  // namespace

std::size_t MetricCurve::max_recall_index() const {
    for (std::size_t i = confidence.size(); i-- > 0;) {
        if (confidence[i] != 0.0) return i;
    }
    return 0;
}

double yaw_difference(double a, double b, double period) {
    double diff = std::fmod(a - b + period / 2, period);
    if (diff < 0) diff += period;
    diff -= period / 2;
    if (diff > std::numbers::pi) diff -= 2 * std::numbers::pi;
    return std::abs(diff);
}

double scale_error(const Detection& gt, const Detection& pred) {
    double inter = 1, va = 1, vb = 1;
    for (std::size_t i = 0; i < 3; ++i) {
        inter *= std::min(gt.size[i], pred.size[i]);
        va *= gt.size[i];
        vb *= pred.size[i];
    }
    return 1.0 - inter / (va + vb - inter);
}

std::optional<MetricCurve> accumulate_class(const DetectionSet& preds, const DetectionSet& gts, std::size_t class_id,
                                            double d) {
    DetectionSet cp, cg;
    for (const auto& p : preds)
        if (p.class_id == class_id) cp.push_back(p);
    for (const auto& g : gts)
        if (g.class_id == class_id) cg.push_back(g);
    if (cg.empty()) return std::nullopt;

    const Matching m = match_center_distance(cp, cg, d);
    // Rebuild the processing order with TP/FP flags.
    std::vector<std::size_t> matched_gt(cp.size(), cg.size());
    for (const auto& mt : m.matches) matched_gt[mt.pred] = mt.gt;
    const auto order = confidence_order(cp);

    std::vector<double> tp, fp, conf, tconf, terr, serr, oerr, verr;
    const double period = is_barrier(class_id) ? std::numbers::pi : 2 * std::numbers::pi;
    for (std::size_t p : order) {
        const bool hit = matched_gt[p] < cg.size();
        tp.push_back(hit ? 1.0 : 0.0);
        fp.push_back(hit ? 0.0 : 1.0);
        conf.push_back(cp[p].confidence);
        if (!hit) continue;
        const Detection& g = cg[matched_gt[p]];
        tconf.push_back(cp[p].confidence);
        terr.push_back(center_distance(g, cp[p]));
        serr.push_back(scale_error(g, cp[p]));
        oerr.push_back(yaw_difference(g.yaw, cp[p].yaw, period));
        verr.push_back(std::hypot(g.velocity[0] - cp[p].velocity[0], g.velocity[1] - cp[p].velocity[1]));
    }
    if (tconf.empty()) return no_predictions();

    const double npos = static_cast<double>(cg.size());
    std::vector<double> prec(tp.size()), rec(tp.size());
    double ctp = 0, cfp = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        ctp += tp[i];
        cfp += fp[i];
        prec[i] = ctp / (ctp + cfp);
        rec[i] = ctp / npos;
    }
    MetricCurve c;
    c.recall = recall_grid();
    c.precision = interp(c.recall, rec, prec, 0.0);
    c.confidence = interp(c.recall, rec, conf, 0.0);

    // Errors as running means over TPs, resampled on the confidence grid.
    std::vector<double> rconf(c.confidence.rbegin(), c.confidence.rend());
    std::vector<double> rtconf(tconf.rbegin(), tconf.rend());
    auto resample = [&](const std::vector<double>& err) {
        const auto cm = cummean(err);
        const std::vector<double> rcm(cm.rbegin(), cm.rend());
        auto v = interp(rconf, rtconf, rcm, rcm.back());
        std::reverse(v.begin(), v.end());
        return v;
    };
    c.trans_err = resample(terr);
    c.scale_err = resample(serr);
    c.orient_err = resample(oerr);
    c.vel_err = resample(verr);
    return c;
}

double curve_ap(const MetricCurve& curve) {
    const std::size_t first = static_cast<std::size_t>(std::lround(100 * kMinRecall)) + 1;
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t i = first; i < curve.precision.size(); ++i) {
        sum += std::max(curve.precision[i], kMinPrecision);
        ++count;
    }
    if (count == 0) return 0.0;
    // mean(max(p, f)) - f rather than mean(max(p - f, 0)): same value, but exact for all-ones
    // precision. The clamp absorbs rounding below zero.
    const double ap = (sum / static_cast<double>(count) - kMinPrecision) / (1.0 - kMinPrecision);
    return std::clamp(ap, 0.0, 1.0);
}

std::optional<double> class_average_precision(const DetectionSet& preds, const DetectionSet& gts,
                                              std::size_t class_id, double d) {
    const auto curve = accumulate_class(preds, gts, class_id, d);
    if (!curve) return std::nullopt;
    return curve_ap(*curve);
}

double average_precision(const DetectionSet& preds, const DetectionSet& gts, double d) {
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
        if (const auto ap = class_average_precision(preds, gts, cls, d)) {
            sum += *ap;
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

namespace {

double calc_tp(const MetricCurve& c, const std::vector<double>& err) {
    const std::size_t first = static_cast<std::size_t>(std::lround(100 * kMinRecall)) + 1;
    const std::size_t last = c.max_recall_index();
    if (last < first) return 1.0;
    double sum = 0;
    for (std::size_t i = first; i <= last; ++i) sum += err[i];
    return sum / static_cast<double>(last - first + 1);
}

double nan_mean(const std::vector<std::optional<double>>& v) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& x : v) {
        if (x) {
            sum += *x;
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 1.0;
}

}  // namespace

double compute_nds(const MetricsBundle& b) {
    std::vector<double> errs = {b.mATE, b.mASE, b.mAOE, b.mAVE};
    if (b.mAAE) errs.push_back(*b.mAAE);
    double total = 5.0 * b.mAP;
    for (double e : errs) total += 1.0 - std::min(1.0, e);
    return total / (5.0 + static_cast<double>(errs.size()));
}

MetricsBundle evaluate(const DetectionSet& preds, const DetectionSet& gts) {
    MetricsBundle b;
    std::vector<std::optional<double>> aps, ates, ases, aoes, aves;
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
        ClassMetrics& cm = b.per_class[cls];
        bool has_gt = false;
        double ap_sum = 0;
        for (std::size_t t = 0; t < kDistanceThresholds.size(); ++t) {
            const auto curve = accumulate_class(preds, gts, cls, kDistanceThresholds[t]);
            if (!curve) break;
            has_gt = true;
            cm.ap_per_threshold[t] = curve_ap(*curve);
            ap_sum += cm.ap_per_threshold[t];
            if (kDistanceThresholds[t] == kTpDistance) {
                cm.ate = calc_tp(*curve, curve->trans_err);
                cm.ase = calc_tp(*curve, curve->scale_err);
                if (!is_cone(cls)) cm.aoe = calc_tp(*curve, curve->orient_err);
                if (!is_cone(cls) && !is_barrier(cls)) cm.ave = calc_tp(*curve, curve->vel_err);
            }
        }
        if (has_gt) cm.ap = ap_sum / static_cast<double>(kDistanceThresholds.size());
        aps.push_back(cm.ap);
        ates.push_back(cm.ate);
        ases.push_back(cm.ase);
        aoes.push_back(cm.aoe);
        aves.push_back(cm.ave);
    }
    const bool any_gt = std::any_of(aps.begin(), aps.end(), [](const auto& v) { return v.has_value(); });
    b.mAP = any_gt ? nan_mean(aps) : 0.0;
    b.mATE = nan_mean(ates);
    b.mASE = nan_mean(ases);
    b.mAOE = nan_mean(aoes);
    b.mAVE = nan_mean(aves);
    b.nds = compute_nds(b);
    return b;
}

nlohmann::json metrics_to_json(const MetricsBundle& b) {
    nlohmann::json j;
    j["schema"] = "panoattn.metrics";
    j["version"] = 1;
    j["mAP"] = b.mAP;
    j["NDS"] = b.nds;
    j["mATE"] = b.mATE;
    j["mASE"] = b.mASE;
    j["mAOE"] = b.mAOE;
    j["mAVE"] = b.mAVE;
    j["mAAE"] = b.mAAE ? nlohmann::json(*b.mAAE) : nlohmann::json(nullptr);
    auto classes = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto& cm = b.per_class[c];
        auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        classes[std::string(kClassNames[c])] = {{"AP", opt(cm.ap)},
                                                {"AP_by_threshold", cm.ap ? nlohmann::json(cm.ap_per_threshold)
                                                                          : nlohmann::json(nullptr)},
                                                {"ATE", opt(cm.ate)},
                                                {"ASE", opt(cm.ase)},
                                                {"AOE", opt(cm.aoe)},
                                                {"AVE", opt(cm.ave)}};
    }
    j["classes"] = std::move(classes);
    return j;
}

std::string format_report(const MetricsBundle& b) {
    std::ostringstream os;
    os << "# panoattn metrics report v1\n";
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(22) << "class" << std::right << std::setw(9) << "AP" << std::setw(9) << "ATE"
       << std::setw(9) << "ASE" << std::setw(9) << "AOE" << std::setw(9) << "AVE" << '\n';
    auto cell = [&](const std::optional<double>& v) {
        if (v)
            os << std::setw(9) << *v;
        else
            os << std::setw(9) << "-";
    };
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto& cm = b.per_class[c];
        os << std::left << std::setw(22) << kClassNames[c] << std::right;
        cell(cm.ap);
        cell(cm.ate);
        cell(cm.ase);
        cell(cm.aoe);
        cell(cm.ave);
        os << '\n';
    }
    os << '\n';
    os << "mAP   " << b.mAP << '\n';
    os << "mATE  " << b.mATE << " m\n";
    os << "mASE  " << b.mASE << '\n';
    os << "mAOE  " << b.mAOE << " rad\n";
    os << "mAVE  " << b.mAVE << " m/s\n";
    if (b.mAAE) {
        os << "mAAE  " << *b.mAAE << '\n';
    } else {
        os << "mAAE  -   (attributes not modelled; NDS averages four TP terms)\n";
    }
    os << "NDS   " << b.nds << '\n';
    return os.str();
}

}  // namespace panoattn
