#include "panoattn/queries.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "panoattn/errors.hpp"
#include "panoattn/parallel.hpp"
#include "panoattn/rng.hpp"

namespace panoattn {

std::optional<std::size_t> class_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i) {
        if (kClassNames[i] == name) return i;
    }
    return std::nullopt;
}

std::string_view source_name(Source s) {
    switch (s) {
        case Source::floating: return "floating";
        case Source::bev: return "bev";
        case Source::ground_truth: return "gt";
    }
    return "floating";
}

CameraRig make_ring_rig(const RigConfig& rig, double horizontal_fov_deg, double mount_height) {
    const auto layout = build_layout(rig);
    const double w = static_cast<double>(rig.image_width);
    const double h = static_cast<double>(rig.image_height);
    const double focal = (w / 2.0) / std::tan(horizontal_fov_deg * std::numbers::pi / 360.0);
    CameraRig out;
    out.cameras.resize(rig.num_cameras);
    for (std::size_t cam = 0; cam < rig.num_cameras; ++cam) {
        const double k = static_cast<double>(layout.ring_position(cam));
        const double yaw = 2.0 * std::numbers::pi / static_cast<double>(rig.num_cameras) * (1.0 - k);
        // Rows of R: camera right, down, forward, expressed in the ego frame.
        const double r[3][3] = {{std::sin(yaw), -std::cos(yaw), 0.0}, {0.0, 0.0, -1.0}, {std::cos(yaw), std::sin(yaw), 0.0}};
        const double c[3] = {0.0, 0.0, mount_height};
        const double kmat[3][3] = {{focal, 0.0, w / 2.0}, {0.0, focal, h / 2.0}, {0.0, 0.0, 1.0}};
        double rt[3][4];
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) rt[i][j] = r[i][j];
            rt[i][3] = -(r[i][0] * c[0] + r[i][1] * c[1] + r[i][2] * c[2]);
        }
        Camera& camera = out.cameras[cam];
        camera.image_height = rig.image_height;
        camera.image_width = rig.image_width;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 4; ++j) {
                double acc = 0;
                for (int m = 0; m < 3; ++m) acc += kmat[i][m] * rt[m][j];
                camera.projection[static_cast<std::size_t>(i * 4 + j)] = acc;
            }
        }
    }
    return out;
}

ImagePoint project_point(const Camera& camera, const Vec3& p) {
    const auto& m = camera.projection;
    const double x = m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3];
    const double y = m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7];
    const double z = m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11];
    ImagePoint ip;
    if (!(z > 0.0)) return ip;
    ip.u = x / z;
    ip.v = y / z;
    ip.valid = std::isfinite(ip.u) && std::isfinite(ip.v) && ip.u >= 0.0 &&
               ip.u < static_cast<double>(camera.image_width) && ip.v >= 0.0 &&
               ip.v < static_cast<double>(camera.image_height);
    return ip;
}

std::vector<double> bilinear_sample(const Tensor<double>& map, double u, double v, std::size_t batch,
                                    std::optional<ColumnSpan> span) {
    if (map.rank() != 4 || batch >= map.dim(0)) throw ArgumentError("bilinear_sample: expected (B, C, H, W) map");
    const std::size_t c = map.dim(1), h = map.dim(2), w = map.dim(3);
    const ColumnSpan cols = span.value_or(ColumnSpan{0, w});
    if (cols.count == 0 || cols.begin + cols.count > w) throw ArgumentError("bilinear_sample: column span outside map");
    const double uc = std::clamp(u, 0.0, static_cast<double>(cols.count - 1));
    const double vc = std::clamp(v, 0.0, static_cast<double>(h - 1));
    const std::size_t x0 = static_cast<std::size_t>(std::floor(uc));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(vc));
    const std::size_t x1 = std::min(x0 + 1, cols.count - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fx = uc - static_cast<double>(x0);
    const double fy = vc - static_cast<double>(y0);
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy), w10 = (1 - fx) * fy, w11 = fx * fy;
    std::vector<double> out(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = map.ptr() + (batch * c + ch) * h * w + cols.begin;
        out[ch] = w00 * plane[y0 * w + x0] + w01 * plane[y0 * w + x1] + w10 * plane[y1 * w + x0] +
                  w11 * plane[y1 * w + x1];
    }
    return out;
}

MultiviewSample sample_multiview(const FeaturePyramid<double>& pyramid, const CameraRig& cameras,
                                 const PanoramaLayout& layout, const Vec3& p, std::size_t batch) {
    MultiviewSample res;
    res.feature.assign(pyramid.channels(), 0.0);
    std::size_t terms = 0;
    for (std::size_t cam = 0; cam < cameras.cameras.size(); ++cam) {
        const ImagePoint ip = project_point(cameras.cameras[cam], p);
        if (!ip.valid) continue;
        ++res.hits;
        for (std::size_t l = 0; l < layout.num_levels(); ++l) {
            const auto& g = layout.level(l);
            const double stride = static_cast<double>(g.spec.stride);
            const ColumnSpan span{layout.column_origin(l, cam), g.per_view_w};
            const auto s = bilinear_sample(pyramid.levels.at(l), (ip.u + 0.5) / stride - 0.5,
                                           (ip.v + 0.5) / stride - 0.5, batch, span);
            for (std::size_t ch = 0; ch < s.size(); ++ch) res.feature[ch] += s[ch];
            ++terms;
        }
    }
    if (terms > 0) {
        for (double& v : res.feature) v /= static_cast<double>(terms);
        res.valid = true;
    }
    return res;
}

LinearHead LinearHead::zeros(std::size_t out, std::size_t channels) {
    return {Tensor<double>({out, channels}), std::vector<double>(out, 0.0)};
}

LinearHead LinearHead::random(std::size_t out, std::size_t channels, std::uint64_t seed) {
    Rng rng(seed);
    LinearHead head = zeros(out, channels);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    for (double& v : head.weight.data()) v = rng.uniform(-bound, bound);
    for (double& v : head.bias) v = rng.uniform(-bound, bound);
    return head;
}

std::vector<double> LinearHead::apply(std::span<const double> x) const {
    const std::size_t out = weight.dim(0), c = weight.dim(1);
    if (x.size() != c) throw ArgumentError("linear head: input width mismatch");
    std::vector<double> y(bias);
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < c; ++i) y[o] += weight[o * c + i] * x[i];
    }
    return y;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kLogSizeLimit = 4.0;

/// Fills size, yaw, velocity, class and confidence from head outputs.
void decode_common(const std::vector<double>& box, const std::vector<double>& logits, Detection& det) {
    for (int i = 0; i < 3; ++i) det.size[static_cast<std::size_t>(i)] =
        std::exp(std::clamp(box[3 + static_cast<std::size_t>(i)], -kLogSizeLimit, kLogSizeLimit));
    det.yaw = std::atan2(box[6], box[7]);
    det.velocity = {box[8], box[9]};
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k) {
        if (logits[k] > logits[best]) best = k;
    }
    det.class_id = best;
    det.confidence = sigmoid(logits[best]);
}

DecodeHeads random_heads(std::size_t channels, std::uint64_t seed) {
    return {LinearHead::random(kBoxOutputs, channels, derive_seed(seed, 1)),
            LinearHead::random(kNumClasses, channels, derive_seed(seed, 2))};
}

}  // namespace

FloatingQuerySet make_floating_queries(std::size_t count, std::size_t channels, std::uint64_t seed) {
    FloatingQuerySet q;
    q.embeddings = Tensor<double>({count, channels});
    Rng rng(derive_seed(seed, 0));
    for (double& v : q.embeddings.data()) v = rng.normal();
    q.reference = LinearHead::random(3, channels, derive_seed(seed, 3));
    q.heads = random_heads(channels, seed);
    return q;
}

std::array<double, 2> BevQueryGrid::cell_center(std::size_t cell) const {
    const std::size_t ix = cell % cells_per_side, iy = cell / cells_per_side;
    const double s = cell_size();
    return {bounds.x_min + (static_cast<double>(ix) + 0.5) * s, bounds.y_min + (static_cast<double>(iy) + 0.5) * s};
}

BevQueryGrid make_bev_grid(std::size_t cells_per_side, std::size_t channels, std::uint64_t seed) {
    BevQueryGrid g;
    g.cells_per_side = cells_per_side;
    g.heads = random_heads(channels, derive_seed(seed, 7));
    return g;
}

std::vector<double> bev_position_encoding(double x, double y, std::size_t channels) {
    std::vector<double> pe(channels, 0.0);
    const std::size_t half = channels / 2;
    for (std::size_t i = 0; i < channels; ++i) {
        const bool second = i >= half && half > 0;
        const std::size_t k = second ? i - half : i;
        const std::size_t width = second ? channels - half : std::max<std::size_t>(half, 1);
        const double freq = std::pow(100.0, -static_cast<double>(k / 2 * 2) / static_cast<double>(width));
        const double arg = (second ? y : x) * freq;
        pe[i] = k % 2 == 0 ? std::sin(arg) : std::cos(arg);
    }
    return pe;
}

DetectionSet decode_floating(const FloatingQuerySet& queries, const FeaturePyramid<double>& pyramid,
                             const CameraRig& cameras, const PanoramaLayout& layout) {
    const std::size_t n = queries.size();
    const std::size_t c = queries.embeddings.rank() ? queries.embeddings.dim(1) : 0;
    if (n > 0 && c != pyramid.channels()) throw ArgumentError("decode_floating: embedding width != pyramid channels");
    DetectionSet out(n);
    const SceneBounds& b = queries.bounds;
    parallel_for(n, [&](std::size_t i) {
        std::span<const double> e(queries.embeddings.ptr() + i * c, c);
        const auto raw = queries.reference.apply(e);
        const Vec3 ref = {b.x_min + (b.x_max - b.x_min) * sigmoid(raw[0]),
                          b.y_min + (b.y_max - b.y_min) * sigmoid(raw[1]),
                          b.z_min + (b.z_max - b.z_min) * sigmoid(raw[2])};
        const auto sample = sample_multiview(pyramid, cameras, layout, ref);
        std::vector<double> h(e.begin(), e.end());
        for (std::size_t ch = 0; ch < c; ++ch) h[ch] += sample.feature[ch];
        const auto box = queries.heads.box.apply(h);
        Detection& det = out[i];
        det.center = {ref[0] + box[0], ref[1] + box[1], ref[2] + box[2]};
        decode_common(box, queries.heads.cls.apply(h), det);
        det.source = Source::floating;
    });
    return out;
}

DetectionSet decode_bev(const BevQueryGrid& grid, const FeaturePyramid<double>& pyramid, const CameraRig& cameras,
                        const PanoramaLayout& layout) {
    const std::size_t c = pyramid.channels();
    DetectionSet out(grid.cells());
    const double half_cell = 0.5 * grid.cell_size();
    parallel_for(grid.cells(), [&](std::size_t cell) {
        const auto [cx, cy] = grid.cell_center(cell);
        const auto sample = sample_multiview(pyramid, cameras, layout, {cx, cy, grid.reference_z});
        std::vector<double> h = bev_position_encoding(cx, cy, c);
        for (std::size_t ch = 0; ch < c; ++ch) h[ch] += sample.feature[ch];
        const auto box = grid.heads.box.apply(h);
        Detection& det = out[cell];
        det.center = {cx + half_cell * std::tanh(box[0]), cy + half_cell * std::tanh(box[1]), grid.reference_z + box[2]};
        decode_common(box, grid.heads.cls.apply(h), det);
        det.source = Source::bev;
    });
    return out;
}

DetectionSet topk_select(const DetectionSet& dets, std::size_t k) {
    if (k > dets.size()) {
        throw ArgumentError("topk_select: k = " + std::to_string(k) + " exceeds " + std::to_string(dets.size()) +
                            " detections");
    }
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    DetectionSet out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(dets[order[i]]);
    return out;
}

DetectionSet aggregate(const DetectionSet& a, const DetectionSet& b) {
    DetectionSet out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

namespace {

constexpr const char* kDetectionSchema = "panoattn.detections";
constexpr int kDetectionVersion = 1;

Source source_from(const std::string& s) {
    if (s == "floating") return Source::floating;
    if (s == "bev") return Source::bev;
    if (s == "gt") return Source::ground_truth;
    throw FormatError("detections: unknown source '" + s + "'");
}

}  // namespace

void write_detections(std::ostream& os, const DetectionSet& dets) {
    os << nlohmann::json{{"schema", kDetectionSchema}, {"version", kDetectionVersion}}.dump() << '\n';
    for (const auto& d : dets) {
        nlohmann::json j;
        j["source"] = source_name(d.source);
        j["class"] = kClassNames.at(d.class_id);
        j["confidence"] = d.confidence;
        j["center"] = d.center;
        j["size"] = d.size;
        j["yaw"] = d.yaw;
        j["velocity"] = d.velocity;
        os << j.dump() << '\n';
    }
}

DetectionSet read_detections(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("detections: missing header line");
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.at("schema") != kDetectionSchema || header.at("version") != kDetectionVersion) {
            throw FormatError("detections: unsupported schema " + line);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("detections: bad header: ") + e.what());
    }
    DetectionSet out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Detection d;
            d.source = source_from(j.at("source").get<std::string>());
            const auto cls = class_from_name(j.at("class").get<std::string>());
            if (!cls) throw FormatError("unknown class");
            d.class_id = *cls;
            d.confidence = j.at("confidence").get<double>();
            d.center = j.at("center").get<Vec3>();
            d.size = j.at("size").get<Vec3>();
            d.yaw = j.at("yaw").get<double>();
            d.velocity = j.at("velocity").get<std::array<double, 2>>();
            if (d.confidence < 0.0 || d.confidence > 1.0) throw FormatError("confidence outside [0, 1]");
            out.push_back(d);
        } catch (const std::exception& e) {
            throw FormatError("detections line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_detections(const std::string& path, const DetectionSet& dets) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path);
    write_detections(os, dets);
}

DetectionSet load_detections(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read " + path);
    return read_detections(is);
}

}  // namespace panoattn
