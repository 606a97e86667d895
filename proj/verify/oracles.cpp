#include "panoattn/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panoattn/rng.hpp"

namespace panoattn::verify {

double relative_error(double analytic, double numeric, double floor) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

double central_difference(const std::function<double()>& f, double& x, double eps) {
    const double x0 = x;
    x = x0 + eps;
    const double fp = f();
    x = x0 - eps;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2 * eps);
}

Tensor<double> naive_masked_attention(const Tensor<double>& map, const AttentionParams<double>& params,
                                      const std::function<bool(std::size_t, std::size_t)>& allowed) {
    const std::size_t B = map.dim(0), C = map.dim(1), H = map.dim(2), W = map.dim(3);
    const std::size_t N = H * W, nh = params.heads, hd = C / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor<double> out(map.shape());
    for (std::size_t b = 0; b < B; ++b) {
        auto x = [&](std::size_t i, std::size_t c) { return map[((b * C + c) * H * W) + i]; };
        std::vector<double> q(N * C, 0), k(N * C, 0), v(N * C, 0), y(N * C, 0);
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t o = 0; o < C; ++o) {
                for (std::size_t c = 0; c < C; ++c) {
                    q[i * C + o] += params.wq[o * C + c] * x(i, c);
                    k[i * C + o] += params.wk[o * C + c] * x(i, c);
                    v[i * C + o] += params.wv[o * C + c] * x(i, c);
                }
            }
        }
        for (std::size_t h = 0; h < nh; ++h) {
            for (std::size_t i = 0; i < N; ++i) {
                std::vector<double> s(N, -INFINITY);
                double mx = -INFINITY;
                for (std::size_t j = 0; j < N; ++j) {
                    if (!allowed(i, j)) continue;
                    double d = 0;
                    for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) d += q[i * C + c] * k[j * C + c];
                    s[j] = d * scale;
                    mx = std::max(mx, s[j]);
                }
                if (mx == -INFINITY) continue;
                double z = 0;
                for (std::size_t j = 0; j < N; ++j) {
                    s[j] = std::isinf(s[j]) ? 0.0 : std::exp(s[j] - mx);
                    z += s[j];
                }
                for (std::size_t j = 0; j < N; ++j) {
                    for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) y[i * C + c] += s[j] / z * v[j * C + c];
                }
            }
        }
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t o = 0; o < C; ++o) {
                double acc = 0;
                for (std::size_t c = 0; c < C; ++c) acc += params.wo[o * C + c] * y[i * C + c];
                out[(b * C + o) * H * W + i] = acc;
            }
        }
    }
    return out;
}

std::vector<std::array<double, 2>> footprint(const Detection& d) {
    // Heading unit vector f, lateral unit vector g = f rotated by +90 degrees.
    const double fx = std::cos(d.yaw), fy = std::sin(d.yaw);
    const double gx = -fy, gy = fx;
    const double l = d.size[1] / 2, w = d.size[0] / 2;
    std::vector<std::array<double, 2>> pts;
    for (double a : {-1.0, 1.0}) {
        for (double b : {-1.0, 1.0}) {
            pts.push_back({d.center[0] + a * l * fx + b * w * gx, d.center[1] + a * l * fy + b * w * gy});
        }
    }
    return pts;
}

namespace {

using P = std::array<double, 2>;

// Box-local coordinates: (along heading, lateral).
P to_local(const Detection& d, const P& p) {
    const double dx = p[0] - d.center[0], dy = p[1] - d.center[1];
    const double c = std::cos(d.yaw), s = std::sin(d.yaw);
    return {c * dx + s * dy, -s * dx + c * dy};
}

bool inside(const Detection& d, const P& p, double tol) {
    const P q = to_local(d, p);
    return std::fabs(q[0]) <= d.size[1] / 2 + tol && std::fabs(q[1]) <= d.size[0] / 2 + tol;
}

std::vector<std::pair<P, P>> edges(const Detection& d) {
    auto c = footprint(d);  // order (-,-), (-,+), (+,-), (+,+)
    return {{c[0], c[1]}, {c[1], c[3]}, {c[3], c[2]}, {c[2], c[0]}};
}

std::optional<P> segment_cross(const P& a, const P& b, const P& c, const P& d) {
    const double rx = b[0] - a[0], ry = b[1] - a[1], sx = d[0] - c[0], sy = d[1] - c[1];
    const double den = rx * sy - ry * sx;
    if (std::fabs(den) < 1e-15) return std::nullopt;
    const double t = ((c[0] - a[0]) * sy - (c[1] - a[1]) * sx) / den;
    const double u = ((c[0] - a[0]) * ry - (c[1] - a[1]) * rx) / den;
    if (t < 0 || t > 1 || u < 0 || u > 1) return std::nullopt;
    return P{a[0] + t * rx, a[1] + t * ry};
}

double hull_area(std::vector<P> pts) {
    if (pts.size() < 3) return 0;
    std::sort(pts.begin(), pts.end());
    auto cross = [](const P& o, const P& a, const P& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<P> h(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    double a = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& p = h[i];
        const auto& q = h[(i + 1) % h.size()];
        a += p[0] * q[1] - q[0] * p[1];
    }
    return std::fabs(a) / 2;
}

}  // namespace

double hull_iou(const Detection& a, const Detection& b) {
    const double area_a = a.size[0] * a.size[1], area_b = b.size[0] * b.size[1];
    if (area_a <= 0 || area_b <= 0) return 0;
    std::vector<P> pts;
    for (const auto& p : footprint(a))
        if (inside(b, p, 1e-12)) pts.push_back(p);
    for (const auto& p : footprint(b))
        if (inside(a, p, 1e-12)) pts.push_back(p);
    for (const auto& [p, q] : edges(a)) {
        for (const auto& [r, s] : edges(b)) {
            if (auto x = segment_cross(p, q, r, s)) pts.push_back(*x);
        }
    }
    const double inter = hull_area(pts);
    return inter / (area_a + area_b - inter);
}

double monte_carlo_iou(const Detection& a, const Detection& b, std::size_t grid, std::uint64_t seed) {
    const double area_a = a.size[0] * a.size[1], area_b = b.size[0] * b.size[1];
    Rng rng(seed);
    const double c = std::cos(a.yaw), s = std::sin(a.yaw);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < grid; ++i) {
        for (std::size_t j = 0; j < grid; ++j) {
            const double u = ((static_cast<double>(i) + rng.uniform()) / static_cast<double>(grid) - 0.5) * a.size[1];
            const double v = ((static_cast<double>(j) + rng.uniform()) / static_cast<double>(grid) - 0.5) * a.size[0];
            const P p{a.center[0] + c * u - s * v, a.center[1] + s * u + c * v};
            if (inside(b, p, 0.0)) ++hits;
        }
    }
    const double inter = area_a * static_cast<double>(hits) / static_cast<double>(grid * grid);
    return inter / (area_a + area_b - inter);
}

std::vector<std::size_t> brute_force_nms(const DetectionSet& dets, double tau) {
    std::vector<bool> alive(dets.size(), true);
    std::vector<std::size_t> keep;
    for (;;) {
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (alive[i] && (!best || dets[i].confidence > dets[*best].confidence)) best = i;
        }
        if (!best) break;
        keep.push_back(*best);
        alive[*best] = false;
        for (std::size_t j = 0; j < dets.size(); ++j) {
            if (alive[j] && dets[j].class_id == dets[*best].class_id && hull_iou(dets[*best], dets[j]) > tau) {
                alive[j] = false;
            }
        }
    }
    return keep;
}

std::vector<std::size_t> sort_topk(const DetectionSet& dets, std::size_t k) {
    std::vector<std::size_t> idx(dets.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].confidence != dets[b].confidence) return dets[a].confidence > dets[b].confidence;
        return a < b;
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

std::optional<std::string> check_partition(const WindowPartition& part) {
    const auto map = part.map();
    const auto win = part.window();
    const auto sh = part.shift();
    const std::size_t per_row = map.w / win.w;
    if (part.num_windows() != (map.h / win.h) * per_row) return "window count mismatch";
    std::vector<int> seen(part.cells(), 0);
    for (std::size_t y = 0; y < map.h; ++y) {
        for (std::size_t x = 0; x < map.w; ++x) {
            const std::size_t cell = y * map.w + x;
            // Position of the cell in the displaced grid.
            const std::size_t ty = (y + map.h - sh.dy % map.h) % map.h;
            const std::size_t tx = (x + map.w - sh.dx % map.w) % map.w;
            const std::size_t w = (ty / win.h) * per_row + tx / win.w;
            const std::size_t s = (ty % win.h) * win.w + tx % win.w;
            const auto fs = part.forward(cell);
            if (fs.window != w || fs.slot != s) {
                return "cell (" + std::to_string(y) + "," + std::to_string(x) + ") maps to (" +
                       std::to_string(fs.window) + "," + std::to_string(fs.slot) + "), expected (" +
                       std::to_string(w) + "," + std::to_string(s) + ")";
            }
            if (part.inverse(w, s) != cell) return "inverse disagrees at cell " + std::to_string(cell);
            ++seen[w * part.slots() + s];
        }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (seen[i] != 1) return "window slot " + std::to_string(i) + " covered " + std::to_string(seen[i]) + " times";
    }
    return std::nullopt;
}

}  // namespace panoattn::verify
