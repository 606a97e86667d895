#include <doctest.h>

#include <cmath>
#include <set>

#include "panoattn/encoder.hpp"
#include "panoattn/harness.hpp"
#include "panoattn/rng.hpp"
#include "panoattn/verify/oracles.hpp"

using namespace panoattn;

namespace {

RigConfig single_window_rig() {
    RigConfig rig;
    rig.num_cameras = 1;
    rig.image_height = 24;
    rig.image_width = 32;
    rig.ring_order = {0};
    rig.levels = {{8, {3, 4}, {0, 0}, {3, 4}, {0, 0}}};
    return rig;
}

// Per-position layer norm over channels of a (1, C, H, W) map.
Tensor<double> layer_norm(const Tensor<double>& x, const LayerNormParams<double>& p) {
    const std::size_t C = x.dim(1), N = x.dim(2) * x.dim(3);
    Tensor<double> out(x.shape());
    for (std::size_t i = 0; i < N; ++i) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < C; ++c) mean += x[c * N + i];
        mean /= static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) var += (x[c * N + i] - mean) * (x[c * N + i] - mean);
        var /= static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c)
            out[c * N + i] = (x[c * N + i] - mean) / std::sqrt(var + 1e-5) * p.gamma[c] + p.beta[c];
    }
    return out;
}

Tensor<double> ffn(const Tensor<double>& x, const EncoderBlock<double>& b) {
    const std::size_t C = x.dim(1), N = x.dim(2) * x.dim(3), H = 4 * C;
    Tensor<double> out(x.shape());
    for (std::size_t i = 0; i < N; ++i) {
        std::vector<double> h(H, 0);
        for (std::size_t k = 0; k < H; ++k) {
            for (std::size_t c = 0; c < C; ++c) h[k] += b.ffn_in[k * C + c] * x[c * N + i];
            h[k] = 0.5 * h[k] * (1 + std::erf(h[k] / std::sqrt(2.0)));
        }
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::size_t k = 0; k < H; ++k) s += b.ffn_out[c * H + k] * h[k];
            out[c * N + i] = s;
        }
    }
    return out;
}

Tensor<double> add(const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> out(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

std::set<std::size_t> changed_cells(const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t C = a.dim(1), N = a.dim(2) * a.dim(3);
    std::set<std::size_t> s;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < N; ++i)
            if (a[c * N + i] != b[c * N + i]) s.insert(i);
    return s;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("initialization is deterministic and shaped") {
    const auto layout = build_layout(desk_rig());
    const auto a = build_encoder(layout, 16, 2, 0);
    const auto b = build_encoder(layout, 16, 2, 0);
    const auto c = build_encoder(layout, 16, 2, 1);
    CHECK(a.blocks == b.blocks);
    CHECK_FALSE(a.blocks == c.blocks);
    REQUIRE(a.blocks.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto& blk = a.blocks[i];
        CHECK(blk.stage == i);
        for (const auto* t : {&blk.mv.wq, &blk.mv.wk, &blk.mv.wv, &blk.mv.wo, &blk.roi.wq, &blk.roi.wo}) {
            CHECK(t->shape() == Shape{16, 16});
        }
        CHECK(blk.ffn_in.shape() == Shape{64, 16});
        CHECK(blk.ffn_out.shape() == Shape{16, 64});
        for (double v : blk.norm_attn.gamma.data()) CHECK(v == 1.0);
        for (double v : blk.norm_ffn.beta.data()) CHECK(v == 0.0);
        for (double v : blk.ffn_in.data()) CHECK(std::fabs(v) <= 0.25);
    }
}

TEST_CASE("identity configuration") {
    const auto layout = build_layout(desk_rig());
    auto stack = build_encoder(layout, 16, 2, 3);
    make_identity(stack);
    const auto x = synth_pyramid(layout, 2, 16, 5);
    CHECK(encoder_forward(stack, x) == x);
    CHECK(block_forward(stack, 0, x, 1) == x);
}

TEST_CASE("shape and finiteness on the desk rig") {
    const auto layout = build_layout(desk_rig());
    const auto stack = build_encoder(layout, 16, 2, 4);
    const auto x = synth_pyramid(layout, 1, 16, 6);
    const auto y = encoder_forward(stack, x);
    REQUIRE(y.levels.size() == x.levels.size());
    for (std::size_t l = 0; l < y.levels.size(); ++l) {
        CHECK(y.levels[l].shape() == x.levels[l].shape());
        for (double v : y.levels[l].data()) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("stage parity changes the output") {
    const auto layout = build_layout(desk_rig());
    const auto stack = build_encoder(layout, 16, 2, 4);
    const auto x = synth_pyramid(layout, 1, 16, 6);
    const auto even = block_forward(stack, 0, x, 0);
    const auto odd = block_forward(stack, 0, x, 1);
    CHECK_FALSE(even.levels[0] == odd.levels[0]);
    // Level 2 has zero ROI shift but a nonzero MV shift, so it differs as well.
    CHECK_FALSE(even.levels[2] == odd.levels[2]);
}

TEST_CASE("whole-map windows reduce to a plain pre-norm layer") {
    const auto layout = build_layout(single_window_rig());
    const auto stack = build_encoder(layout, EncoderOptions{8, 2, 1, 9, FfnPlacement::per_block, true});
    const auto x = synth_pyramid(layout, 1, 8, 10);
    const auto got = block_forward(stack, 0, x, 0);
    const auto& b = stack.blocks[0];
    auto all = [](std::size_t, std::size_t) { return true; };
    auto h = x.levels[0];
    h = add(h, verify::naive_masked_attention(layer_norm(h, b.norm_attn), b.mv, all));
    h = add(h, verify::naive_masked_attention(layer_norm(h, b.norm_attn), b.roi, all));
    h = add(h, ffn(layer_norm(h, b.norm_ffn), b));
    double worst = 0;
    for (std::size_t i = 0; i < h.size(); ++i) worst = std::max(worst, std::fabs(h[i] - got.levels[0][i]));
    CHECK(worst <= 1e-12);
}

TEST_CASE("per-sublayer FFN placement") {
    const auto layout = build_layout(single_window_rig());
    const auto stack = build_encoder(layout, EncoderOptions{8, 2, 1, 9, FfnPlacement::per_sublayer, true});
    const auto x = synth_pyramid(layout, 1, 8, 10);
    const auto got = block_forward(stack, 0, x, 0);
    const auto& b = stack.blocks[0];
    auto all = [](std::size_t, std::size_t) { return true; };
    auto h = x.levels[0];
    h = add(h, verify::naive_masked_attention(layer_norm(h, b.norm_attn), b.mv, all));
    h = add(h, ffn(layer_norm(h, b.norm_ffn), b));
    h = add(h, verify::naive_masked_attention(layer_norm(h, b.norm_attn), b.roi, all));
    h = add(h, ffn(layer_norm(h, b.norm_ffn), b));
    double worst = 0;
    for (std::size_t i = 0; i < h.size(); ++i) worst = std::max(worst, std::fabs(h[i] - got.levels[0][i]));
    CHECK(worst <= 1e-12);
}

TEST_CASE("32-bit forward tracks 64-bit") {
    const auto layout = build_layout(desk_rig());
    const auto stack = build_encoder(layout, 16, 2, 4);
    const auto x = synth_pyramid(layout, 1, 16, 6);
    const auto y64 = encoder_forward(stack, x);
    const auto y32 = encoder_forward(stack.cast<float>(), x.cast<float>());
    double worst = 0;
    for (std::size_t l = 0; l < y64.levels.size(); ++l)
        for (std::size_t i = 0; i < y64.levels[l].size(); ++i)
            worst = std::max(worst, std::fabs(y64.levels[l][i] - static_cast<double>(y32.levels[l][i])));
    CHECK(worst <= 1e-3);
}

TEST_CASE("locality without shifts and growth with shifts") {
    const auto layout = build_layout(desk_rig());
    EncoderOptions opts{16, 2, 6, 21, FfnPlacement::per_block, false};
    const auto plain = build_encoder(layout, opts);
    opts.shifts = true;
    const auto shifted = build_encoder(layout, opts);
    auto x = synth_pyramid(layout, 1, 16, 22);
    const std::size_t W = layout.level(0).pano_w, p = 5 * W + 40;
    auto xp = x;
    for (std::size_t c = 0; c < 16; ++c) xp.levels[0][c * layout.level(0).cells() + p] += 0.5;

    const auto a0 = encoder_forward(plain, x), a1 = encoder_forward(plain, xp);
    const auto b0 = encoder_forward(shifted, x), b1 = encoder_forward(shifted, xp);
    const auto plain_set = changed_cells(a0.levels[0], a1.levels[0]);
    const auto shift_set = changed_cells(b0.levels[0], b1.levels[0]);
    CHECK(a0.levels[1] == a1.levels[1]);
    CHECK(a0.levels[2] == a1.levels[2]);

    // Transitive closure of MV and ROI window membership over six blocks.
    const auto mv = partition_windows(layout, 0, WindowKind::mv_axis, false);
    const auto roi = partition_windows(layout, 0, WindowKind::roi, false);
    std::set<std::size_t> reach{p};
    auto grow = [&](const WindowPartition& part) {
        std::set<std::size_t> next(reach);
        for (std::size_t c : reach) {
            const auto w = part.forward(c).window;
            for (std::size_t s = 0; s < part.slots(); ++s) next.insert(part.inverse(w, s));
        }
        reach = next;
    };
    for (int b = 0; b < 6; ++b) {
        grow(mv);
        grow(roi);
    }
    for (std::size_t c : plain_set) CHECK(reach.count(c) == 1);
    CHECK(plain_set.size() == reach.size());

    CHECK(shift_set.size() > plain_set.size());
    for (std::size_t c : plain_set) CHECK(shift_set.count(c) == 1);
}

TEST_CASE("two-block gradient check, both FFN placements") {
    const auto layout = build_layout(desk_rig());
    for (FfnPlacement ffn : {FfnPlacement::per_block, FfnPlacement::per_sublayer}) {
        auto stack = build_encoder(layout, EncoderOptions{16, 2, 2, 31, ffn, true});
        auto x = synth_pyramid(layout, 1, 16, 32);
        const auto g = synth_pyramid(layout, 1, 16, 33);
        auto loss = [&] {
            const auto y = encoder_forward(stack, x);
            double s = 0;
            for (std::size_t l = 0; l < y.levels.size(); ++l)
                for (std::size_t i = 0; i < y.levels[l].size(); ++i) s += g.levels[l][i] * y.levels[l][i];
            return s;
        };
        const auto fwd = encoder_forward_with_tape(stack, x);
        CHECK(fwd.output == encoder_forward(stack, x));
        const auto grads = encoder_backward(stack, fwd, g);
        Rng rng(34);
        double worst = 0;
        for (int k = 0; k < 12; ++k) {
            const std::size_t l = rng.below(3), i = rng.below(x.levels[l].size());
            worst = std::max(worst, verify::relative_error(grads.d_input.levels[l][i],
                                                           verify::central_difference(loss, x.levels[l][i])));
        }
        for (std::size_t b = 0; b < 2; ++b) {
            for (int k = 0; k < 3; ++k) {
                std::size_t i = rng.below(256);
                worst = std::max(worst, verify::relative_error(grads.blocks[b].roi.wk[i],
                                                               verify::central_difference(loss, stack.blocks[b].roi.wk[i])));
                i = rng.below(16);
                worst = std::max(worst,
                                 verify::relative_error(grads.blocks[b].norm_ffn.gamma[i],
                                                        verify::central_difference(loss, stack.blocks[b].norm_ffn.gamma[i])));
                i = rng.below(1024);
                worst = std::max(worst, verify::relative_error(grads.blocks[b].ffn_in[i],
                                                               verify::central_difference(loss, stack.blocks[b].ffn_in[i])));
            }
        }
        CHECK(worst <= 1e-3);
    }
}

TEST_CASE("gelu") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-15));
    double x = 0.7;
    const double num = verify::central_difference([&] { return gelu(x); }, x);
    CHECK(gelu_grad(0.7) == doctest::Approx(num).epsilon(1e-8));
}

}
