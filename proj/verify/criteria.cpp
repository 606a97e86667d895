#include "panoattn/verify/criteria.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "panoattn/attention.hpp"
#include "panoattn/encoder.hpp"
#include "panoattn/flops.hpp"
#include "panoattn/harness.hpp"
#include "panoattn/metrics.hpp"
#include "panoattn/rng.hpp"
#include "panoattn/verify/oracles.hpp"

namespace panoattn::verify {

std::string format_result(const CriterionResult& r) {
    std::ostringstream os;
    os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(20) << r.name << std::right << " [" << std::fixed
       << std::setprecision(2) << r.seconds << " s";
    if (r.budget_seconds > 0) os << " / " << std::setprecision(0) << r.budget_seconds << " s";
    os << "] " << r.detail;
    return os.str();
}

CriterionResult run_criterion(const std::string& name, double budget_seconds,
                              const std::function<bool(std::string& detail)>& body) {
    CriterionResult r;
    r.name = name;
    r.budget_seconds = budget_seconds;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        r.passed = body(r.detail);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail += std::string(r.detail.empty() ? "" : "; ") + "exception: " + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_seconds > 0 && r.seconds > budget_seconds) {
        r.passed = false;
        r.detail += "; over runtime budget";
    }
    return r;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
}

AttentionParams<double> random_params(std::size_t channels, std::size_t heads, Rng& rng, double amp) {
    auto p = AttentionParams<double>::zeros(channels, heads);
    for (Tensor<double>* w : {&p.wq, &p.wk, &p.wv, &p.wo}) fill_uniform(*w, rng, -amp, amp);
    return p;
}

}  // namespace

CriterionResult check_window_arithmetic() {
    return run_criterion("window_arithmetic", 1.0, [](std::string& detail) {
        const auto layout = build_layout(paper_rig());
        const std::vector<std::size_t> want_mv{576, 144, 36, 12}, want_roi{384, 96, 96, 8};
        std::vector<std::size_t> mv, roi;
        for (const auto& g : layout.levels()) {
            mv.push_back(g.windows_mv);
            roi.push_back(g.windows_roi);
        }
        bool ok = mv == want_mv && roi == want_roi;
        // The bench table must list the same integers in its r column.
        const auto rep = flop_report(layout, 1, 256);
        for (const auto& row : rep.rows) {
            const auto& want = row.kind == WindowKind::roi ? want_roi : want_mv;
            ok = ok && row.level < want.size() && row.windows == want[row.level];
        }
        const auto table = format_flop_table(rep);
        for (std::size_t r : {576, 144, 36, 12, 384, 96, 8}) {
            ok = ok && table.find(" " + std::to_string(r) + " ") != std::string::npos;
        }
        detail = "r_mv=" + join(mv) + " r_roi=" + join(roi) + " (expected 576,144,36,12 / 384,96,96,8)";
        return ok;
    });
}

CriterionResult check_complexity_ratio() {
    return run_criterion("complexity_ratio", 1.0, [](std::string& detail) {
        const auto layout = build_layout(paper_rig());
        const std::uint64_t C = 256;
        const std::uint64_t n = 6ull * 72 * 128;
        const std::uint64_t full = n * n * C;
        const auto mv = flops_windowed(layout, 0, WindowKind::mv_axis, 1, C);
        const auto roi = flops_windowed(layout, 0, WindowKind::roi, 1, C);
        bool ok = flops_full(layout, 0, 1, C) == full;
        ok = ok && mv.ratio == Rational{1, 576} && roi.ratio == Rational{1, 384};
        ok = ok && mv.count * 576 == full && roi.count * 384 == full;
        // 1/576 < 2/1000 < 1/384, compared in integers.
        ok = ok && mv.ratio.num * 1000 < 2 * mv.ratio.den && 2 * roi.ratio.den < roi.ratio.num * 1000;
        detail = "full=" + std::to_string(full) + " mv=" + std::to_string(mv.ratio.num) + "/" +
                 std::to_string(mv.ratio.den) + " (" + fmt(100 * mv.ratio.value()) + "%) roi=" +
                 std::to_string(roi.ratio.num) + "/" + std::to_string(roi.ratio.den) + " (" +
                 fmt(100 * roi.ratio.value()) + "%)";
        return ok;
    });
}

CriterionResult check_oracle_equivalence(const RigConfig& rig, std::size_t channels, std::size_t heads,
                                         std::uint64_t seed) {
    return run_criterion("oracle_equivalence", 30.0, [&](std::string& detail) {
        const auto layout = build_layout(rig);
        Rng rng(seed);
        const auto params = random_params(channels, heads, rng, 1.0 / std::sqrt(static_cast<double>(channels)));
        double worst = 0;
        std::size_t cases = 0, skipped = 0;
        for (std::size_t l = 0; l < layout.num_levels(); ++l) {
            const auto& g = layout.level(l);
            if (g.cells() > kOracleMaxPositions) {
                skipped += 4;
                continue;
            }
            for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
                for (bool shifted : {false, true}) {
                    const auto part = partition_windows(layout, l, kind, shifted);
                    Tensor<double> map({2, channels, g.pano_h, g.pano_w});
                    for (double& v : map.data()) v = rng.normal();
                    const auto got = windowed_attention(map, part, params, AttentionMask::from_partition(part));
                    // Pair mask straight from the definition: same window, same row segment.
                    std::vector<std::uint8_t> pairs(g.cells() * g.cells());
                    for (std::size_t i = 0; i < g.cells(); ++i) {
                        for (std::size_t j = 0; j < g.cells(); ++j) {
                            pairs[i * g.cells() + j] = part.forward(i).window == part.forward(j).window &&
                                                       part.row_segment(i) == part.row_segment(j);
                        }
                    }
                    const auto want = full_attention_oracle(map, params, pairs);
                    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
                    ++cases;
                }
            }
        }
        detail = std::to_string(cases) + " cases, max |diff| = " + fmt(worst) + " (tol " + fmt(kEquivalenceTol) + ")";
        if (skipped) detail += ", " + std::to_string(skipped) + " skipped as too large for the reference";
        return cases > 0 && worst <= kEquivalenceTol;
    });
}

namespace {

double attention_grad_instance(Rng& rng, bool masked) {
    const std::size_t r = 1 + rng.below(3), n = 2 + rng.below(9);
    const std::size_t heads = 1 + rng.below(2), C = heads * (2 + rng.below(3));
    auto params = random_params(C, heads, rng, 0.6);
    Tensor<double> x({r, n, C}), g({r, n, C});
    for (double& v : x.data()) v = rng.normal();
    for (double& v : g.data()) v = rng.normal();
    AttentionMask mask = AttentionMask::all(n);
    if (masked) {
        std::vector<std::uint8_t> bits(r * n * n);
        for (std::size_t w = 0; w < r; ++w) {
            for (std::size_t i = 0; i < n; ++i) {
                bits[(w * n + i) * n + i] = 1;
                for (std::size_t j = i + 1; j < n; ++j) {
                    const std::uint8_t b = rng.uniform() < 0.6;
                    bits[(w * n + i) * n + j] = b;
                    bits[(w * n + j) * n + i] = b;
                }
            }
        }
        mask = AttentionMask::from_bits(r, n, std::move(bits));
    }
    auto loss = [&] {
        const auto y = attention_apply(x, params, mask);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
        return s;
    };
    const auto [out, cache] = attention_forward(x, params, mask);
    const auto bw = attention_backward(cache, g);
    double worst = 0;
    auto sweep = [&](Tensor<double>& t, const Tensor<double>& grad) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            worst = std::max(worst, relative_error(grad[i], central_difference(loss, t[i])));
        }
    };
    sweep(x, bw.d_x);
    sweep(params.wq, bw.d_params.wq);
    sweep(params.wk, bw.d_params.wk);
    sweep(params.wv, bw.d_params.wv);
    sweep(params.wo, bw.d_params.wo);
    return worst;
}

}  // namespace

CriterionResult check_gradients(const RigConfig& rig, std::uint64_t seed) {
    return run_criterion("gradient_checks", 120.0, [&](std::string& detail) {
        Rng rng(seed);
        double attn_worst = 0;
        for (int i = 0; i < 100; ++i) attn_worst = std::max(attn_worst, attention_grad_instance(rng, i % 2 == 1));

        const auto layout = build_layout(rig);
        EncoderOptions opts{16, 2, 2, derive_seed(seed, 1), FfnPlacement::per_block, true};
        auto stack = build_encoder(layout, opts);
        auto input = synth_pyramid(layout, 1, opts.channels, derive_seed(seed, 2));
        const auto g = synth_pyramid(layout, 1, opts.channels, derive_seed(seed, 3));
        auto loss = [&] {
            const auto y = encoder_forward(stack, input);
            double s = 0;
            for (std::size_t l = 0; l < y.levels.size(); ++l) {
                for (std::size_t i = 0; i < y.levels[l].size(); ++i) s += g.levels[l][i] * y.levels[l][i];
            }
            return s;
        };
        const auto fwd = encoder_forward_with_tape(stack, input);
        const auto grads = encoder_backward(stack, fwd, g);
        double enc_worst = 0;
        std::size_t probes = 0;
        auto probe = [&](Tensor<double>& t, const Tensor<double>& grad, std::size_t count) {
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t i = rng.below(t.size());
                enc_worst = std::max(enc_worst, relative_error(grad[i], central_difference(loss, t[i])));
                ++probes;
            }
        };
        for (std::size_t l = 0; l < input.levels.size(); ++l) probe(input.levels[l], grads.d_input.levels[l], 16);
        for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
            auto& blk = stack.blocks[b];
            const auto& gb = grads.blocks[b];
            for (auto [p, q] : {std::pair{&blk.mv, &gb.mv}, std::pair{&blk.roi, &gb.roi}}) {
                probe(p->wq, q->wq, 3);
                probe(p->wk, q->wk, 3);
                probe(p->wv, q->wv, 3);
                probe(p->wo, q->wo, 3);
            }
            probe(blk.norm_attn.gamma, gb.norm_attn.gamma, 3);
            probe(blk.norm_attn.beta, gb.norm_attn.beta, 3);
            probe(blk.norm_ffn.gamma, gb.norm_ffn.gamma, 3);
            probe(blk.norm_ffn.beta, gb.norm_ffn.beta, 3);
            probe(blk.ffn_in, gb.ffn_in, 3);
            probe(blk.ffn_out, gb.ffn_out, 3);
        }
        detail = "attention 100 instances max rel err " + fmt(attn_worst) + " (tol " + fmt(kAttentionGradTol) +
                 "), encoder 2 blocks " + std::to_string(probes) + " probes max rel err " + fmt(enc_worst) + " (tol " +
                 fmt(kEncoderGradTol) + ")";
        return attn_worst <= kAttentionGradTol && enc_worst <= kEncoderGradTol;
    });
}

CriterionResult check_partitions(const RigConfig& rig) {
    return run_criterion("partition_bijection", 0.0, [&](std::string& detail) {
        const auto layout = build_layout(rig);
        Rng rng(7);
        std::size_t partitions = 0, shifts = 0;
        for (std::size_t l = 0; l < layout.num_levels(); ++l) {
            const auto& g = layout.level(l);
            Tensor<double> map({2, 3, g.pano_h, g.pano_w});
            for (double& v : map.data()) v = rng.normal();
            for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
                const auto plain = partition_windows(layout, l, kind, false);
                for (bool shifted : {false, true}) {
                    const auto part = partition_windows(layout, l, kind, shifted);
                    if (auto err = check_partition(part)) {
                        detail = "level " + std::to_string(l) + " " + kind_name(kind) + ": " + *err;
                        return false;
                    }
                    const auto win = gather_windows(map, part);
                    if (scatter_windows(win, part, 2) != map) {
                        detail = "scatter(gather(x)) != x at level " + std::to_string(l);
                        return false;
                    }
                    // Shifted tiling = plain tiling of the map shifted back by (dy, dx).
                    const long dy = static_cast<long>(part.shift().dy), dx = static_cast<long>(part.shift().dx);
                    if (gather_windows(cyclic_shift(map, -dy, -dx), plain) != win) {
                        detail = "shifted partition disagrees with shift + plain partition at level " +
                                 std::to_string(l);
                        return false;
                    }
                    ++partitions;
                }
            }
            // Shift inverse: exhaustive over every shift for maps the size of the reference limit.
            const long H = static_cast<long>(g.pano_h), W = static_cast<long>(g.pano_w);
            const bool exhaustive = g.cells() <= kOracleMaxPositions;
            std::vector<std::pair<long, long>> cases;
            if (exhaustive) {
                for (long dy = -H; dy <= H; ++dy)
                    for (long dx = -W; dx <= W; ++dx) cases.emplace_back(dy, dx);
            } else {
                for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
                    const auto s = g.spec.shift(kind);
                    cases.emplace_back(static_cast<long>(s.dy), static_cast<long>(s.dx));
                    cases.emplace_back(-static_cast<long>(s.dy), -static_cast<long>(s.dx));
                }
            }
            Tensor<double> small({1, 1, g.pano_h, g.pano_w});
            for (double& v : small.data()) v = rng.normal();
            for (auto [dy, dx] : cases) {
                const auto s = cyclic_shift(small, dy, dx);
                if (cyclic_shift(s, -dy, -dx) != small) {
                    detail = "shift inverse fails for (" + std::to_string(dy) + "," + std::to_string(dx) + ")";
                    return false;
                }
                const std::size_t ty = static_cast<std::size_t>(((dy % H) + H) % H);
                const std::size_t tx = static_cast<std::size_t>(((dx % W) + W) % W);
                if (s[ty * g.pano_w + tx] != small[0]) {
                    detail = "shift moves (0,0) to the wrong place for (" + std::to_string(dy) + "," +
                             std::to_string(dx) + ")";
                    return false;
                }
                ++shifts;
            }
        }
        detail = std::to_string(partitions) + " partitions bijective and tiled, " + std::to_string(shifts) +
                 " shift round trips";
        return true;
    });
}

namespace {

Detection random_box(Rng& rng, double spread, std::size_t classes) {
    Detection d;
    d.center = {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(0.0, 2.0)};
    d.size = {rng.uniform(0.5, 4.0), rng.uniform(0.5, 6.0), rng.uniform(0.5, 3.0)};
    d.yaw = rng.uniform(-3.14159, 3.14159);
    d.class_id = rng.below(classes);
    d.confidence = std::round(rng.uniform() * 20) / 20;
    return d;
}

}  // namespace

CriterionResult check_nms_iou(std::uint64_t seed) {
    return run_criterion("nms_iou", 120.0, [&](std::string& detail) {
        Rng rng(seed);
        double mc_worst = 0, hull_worst = 0;
        for (int i = 0; i < 50; ++i) {
            const Detection a = random_box(rng, 1.5, 1), b = random_box(rng, 1.5, 1);
            const double iou = rotated_iou_bev(a, b);
            mc_worst = std::max(mc_worst, std::fabs(iou - monte_carlo_iou(a, b, 1000, derive_seed(seed, i))));
            hull_worst = std::max(hull_worst, std::fabs(iou - hull_iou(a, b)));
        }
        const double taus[] = {0.2, 0.2, 0.0, 0.1, 0.5, 0.8};
        std::size_t mismatches = 0, not_idempotent = 0, overlaps = 0;
        for (int s = 0; s < 200; ++s) {
            const double tau = taus[s % 6];
            DetectionSet set(1 + rng.below(50));
            for (auto& d : set) d = random_box(rng, 6.0, 3);
            if (nms_indices(set, tau) != brute_force_nms(set, tau)) ++mismatches;
            const auto once = nms(set, tau);
            if (nms(once, tau) != once) ++not_idempotent;
            for (std::size_t i = 0; i < once.size(); ++i) {
                for (std::size_t j = i + 1; j < once.size(); ++j) {
                    if (once[i].class_id == once[j].class_id && hull_iou(once[i], once[j]) > tau + 1e-12) ++overlaps;
                }
            }
        }
        detail = "IoU vs Monte Carlo max |diff| " + fmt(mc_worst) + " (tol " + fmt(kMonteCarloIouTol) +
                 "), vs hull " + fmt(hull_worst) + "; NMS mismatches " + std::to_string(mismatches) +
                 "/200, non-idempotent " + std::to_string(not_idempotent) + ", surviving overlaps " +
                 std::to_string(overlaps);
        return mc_worst <= kMonteCarloIouTol && hull_worst <= 1e-9 && mismatches == 0 && not_idempotent == 0 &&
               overlaps == 0;
    });
}

CriterionResult check_query_fusion(const RunConfig& config) {
    return run_criterion("query_fusion", 0.0, [&](std::string& detail) {
        const auto r = run_pipeline(config);
        const auto& c = r.manifest.at("counts");
        const std::size_t nf = c.at("floating"), cells = c.at("bev_cells"), sel = c.at("bev_selected"),
                          pre = c.at("pre_nms"), post = c.at("post_nms");
        bool ok = nf == 900 && cells == 128 * 128 && sel == 500 && pre == 1400 && post <= pre && post > 0;
        ok = ok && r.fused.size() == pre && r.final_detections.size() == post;
        const auto idx = sort_topk(r.bev_all, config.queries.top_k);
        bool topk_ok = idx.size() == r.bev_selected.size();
        for (std::size_t i = 0; topk_ok && i < idx.size(); ++i) topk_ok = r.bev_selected[i] == r.bev_all[idx[i]];
        // Tie-heavy sets.
        Rng rng(derive_seed(config.seed, 99));
        for (int t = 0; t < 20 && topk_ok; ++t) {
            DetectionSet set(1 + rng.below(300));
            for (std::size_t i = 0; i < set.size(); ++i) {
                set[i].confidence = std::round(rng.uniform() * 10) / 10;
                set[i].class_id = i % kNumClasses;
            }
            const std::size_t k = rng.below(set.size() + 1);
            const auto got = topk_select(set, k);
            const auto want = sort_topk(set, k);
            for (std::size_t i = 0; i < k && topk_ok; ++i) topk_ok = got[i] == set[want[i]];
        }
        detail = std::to_string(nf) + " floating + " + std::to_string(sel) + " of " + std::to_string(cells) +
                 " BEV = " + std::to_string(pre) + " pre-NMS, " + std::to_string(post) + " post-NMS; top-k " +
                 (topk_ok ? "matches" : "differs from") + " the sort reference";
        return ok && topk_ok;
    });
}

CriterionResult check_metrics(std::uint64_t seed) {
    return run_criterion("metrics_sanity", 0.0, [&](std::string& detail) {
        MetricsBundle row;
        row.mAP = 0.314;
        row.mATE = 0.779;
        row.mASE = 0.270;
        row.mAOE = 0.44;
        row.mAVE = 0.882;
        row.mAAE = 0.191;
        const double nds = compute_nds(row);
        bool ok = std::fabs(nds - 0.401) <= kTableNdsTol;

        auto cfg = profile_config("fusion");
        cfg.scene.num_objects = 40;
        bool perfect = true;
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto scene = synth_scene(cfg, derive_seed(seed, s));
            DetectionSet preds = scene.ground_truth;
            for (auto& p : preds) p.source = Source::floating;
            const auto m = evaluate(preds, scene.ground_truth);
            perfect = perfect && m.mAP == 1.0 && m.nds == 1.0;
        }
        detail = "NDS from baseline row " + fmt(nds, 4) + " (target 0.401 +- " + fmt(kTableNdsTol) +
                 "); perfect predictions on 5 scenes " + (perfect ? "score AP = NDS = 1" : "do not score 1");
        return ok && perfect;
    });
}

CriterionResult check_determinism(const RunConfig& config) {
    return run_criterion("determinism", 0.0, [&](std::string& detail) {
        const auto a = run_pipeline(config);
        const auto b = run_pipeline(config);
        const bool same = a.manifest.dump() == b.manifest.dump() && a.final_detections == b.final_detections;
        detail = "manifest " + std::string(same ? "identical" : "differs") + " across two runs (config " +
                 a.manifest.at("config_hash").get<std::string>() + ", seed " + std::to_string(config.seed) + ")";
        return same;
    });
}

std::vector<CriterionResult> run_acceptance(const RunConfig& rig_config, const RunConfig& pipeline_config,
                                            std::uint64_t seed) {
    std::vector<CriterionResult> out;
    out.push_back(check_window_arithmetic());
    out.push_back(check_complexity_ratio());
    out.push_back(check_oracle_equivalence(rig_config.rig, rig_config.encoder.channels, rig_config.encoder.heads,
                                           seed));
    out.push_back(check_gradients(rig_config.rig, seed));
    out.push_back(check_partitions(rig_config.rig));
    out.push_back(check_nms_iou(seed));
    out.push_back(check_query_fusion(pipeline_config));
    out.push_back(check_metrics(seed));
    out.push_back(check_determinism(pipeline_config));
    return out;
}

}  // namespace panoattn::verify
