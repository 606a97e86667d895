#include "panoattn/encoder.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>

#include "panoattn/errors.hpp"
#include "panoattn/kernels.hpp"
#include "panoattn/parallel.hpp"
#include "panoattn/rng.hpp"

namespace panoattn {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

WindowPlan WindowPlan::build(const PanoramaLayout& layout) {
    WindowPlan plan;
    for (std::size_t l = 0; l < layout.num_levels(); ++l) {
        for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
            for (bool shifted : {false, true}) {
                auto part = partition_windows(layout, l, kind, shifted);
                auto mask = AttentionMask::from_partition(part);
                plan.entries.push_back({std::move(part), std::move(mask)});
            }
        }
    }
    return plan;
}

const WindowPlan::Entry& WindowPlan::get(std::size_t level, WindowKind kind, bool shifted) const {
    const std::size_t idx = (level * 2 + (kind == WindowKind::roi ? 1 : 0)) * 2 + (shifted ? 1 : 0);
    if (idx >= entries.size()) throw ArgumentError("window plan: level " + std::to_string(level) + " out of range");
    return entries[idx];
}

template <typename T>
template <typename U>
EncoderStack<U> EncoderStack<T>::cast() const {
    EncoderStack<U> out{layout, options, plan, {}};
    for (const auto& b : blocks) {
        out.blocks.push_back({b.stage, b.mv.template cast<U>(), b.roi.template cast<U>(),
                              {b.norm_attn.gamma.template cast<U>(), b.norm_attn.beta.template cast<U>()},
                              {b.norm_ffn.gamma.template cast<U>(), b.norm_ffn.beta.template cast<U>()},
                              b.ffn_in.template cast<U>(), b.ffn_out.template cast<U>()});
    }
    return out;
}

template EncoderStack<float> EncoderStack<double>::cast<float>() const;
template EncoderStack<double> EncoderStack<double>::cast<double>() const;

EncoderStack<double> build_encoder(const PanoramaLayout& layout, const EncoderOptions& options) {
    const std::size_t c = options.channels;
    if (c == 0 || options.heads == 0 || c % options.heads != 0) {
        throw ConfigError("encoder: head count " + std::to_string(options.heads) + " must divide channels " +
                          std::to_string(c));
    }
    EncoderStack<double> stack{layout, options, WindowPlan::build(layout), {}};
    Rng rng(options.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    auto draw = [&](Shape shape) {
        Tensor<double> t(std::move(shape));
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
        return t;
    };
    for (std::size_t b = 0; b < options.blocks; ++b) {
        EncoderBlock<double> blk;
        blk.stage = b;
        for (AttentionParams<double>* p : {&blk.mv, &blk.roi}) {
            p->channels = c;
            p->heads = options.heads;
            p->wq = draw({c, c});
            p->wk = draw({c, c});
            p->wv = draw({c, c});
            p->wo = draw({c, c});
        }
        blk.ffn_in = draw({4 * c, c});
        blk.ffn_out = draw({c, 4 * c});
        blk.norm_attn = {Tensor<double>({c}, 1.0), Tensor<double>({c}, 0.0)};
        blk.norm_ffn = {Tensor<double>({c}, 1.0), Tensor<double>({c}, 0.0)};
        stack.blocks.push_back(std::move(blk));
    }
    return stack;
}

template <typename T>
void make_identity(EncoderStack<T>& stack) {
    for (auto& b : stack.blocks) {
        b.mv.wo.fill(T{0});
        b.roi.wo.fill(T{0});
        b.ffn_out.fill(T{0});
    }
}

template void make_identity(EncoderStack<double>&);
template void make_identity(EncoderStack<float>&);

// ---- internals on token layout: level tensor as (B * HW, C) rows ----

struct SublayerTape {
    enum class Kind { attention, ffn } kind = Kind::attention;
    WindowKind window_kind = WindowKind::mv_axis;
    bool shifted = false;
    Tensor<double> xhat;        // (tokens, C)
    std::vector<double> rstd;   // per token
    AttentionCache<double> attn;
    Tensor<double> z;           // LN output (tokens, C), FFN only
    Tensor<double> pre;         // (tokens, 4C)
    Tensor<double> act;         // (tokens, 4C)
};

struct EncoderTape {
    // [block][level] -> sublayers in execution order
    std::vector<std::vector<std::vector<SublayerTape>>> blocks;
};

namespace {

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& map) {
    const std::size_t b = map.dim(0), c = map.dim(1), hw = map.dim(2) * map.dim(3);
    Tensor<T> tok({b * hw, c});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) tok[(bi * hw + p) * c + ch] = map[(bi * c + ch) * hw + p];
    return tok;
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tok, const Shape& map_shape) {
    Tensor<T> map(map_shape);
    const std::size_t b = map_shape[0], c = map_shape[1], hw = map_shape[2] * map_shape[3];
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) map[(bi * c + ch) * hw + p] = tok[(bi * hw + p) * c + ch];
    return map;
}

template <typename T>
Tensor<T> gather_tokens(const Tensor<T>& tok, const WindowPartition& part, std::size_t batch) {
    const std::size_t c = tok.dim(1), r = part.num_windows(), n = part.slots(), hw = part.cells();
    Tensor<T> out({batch * r, n, c});
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t w = 0; w < r; ++w)
            for (std::size_t s = 0; s < n; ++s) {
                const T* src = tok.ptr() + (bi * hw + part.inverse(w, s)) * c;
                std::copy(src, src + c, out.ptr() + ((bi * r + w) * n + s) * c);
            }
    return out;
}

template <typename T>
void scatter_add_tokens(const Tensor<T>& windows, const WindowPartition& part, std::size_t batch, Tensor<T>& tok) {
    const std::size_t c = tok.dim(1), r = part.num_windows(), n = part.slots(), hw = part.cells();
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t w = 0; w < r; ++w)
            for (std::size_t s = 0; s < n; ++s) {
                const T* src = windows.ptr() + ((bi * r + w) * n + s) * c;
                T* dst = tok.ptr() + (bi * hw + part.inverse(w, s)) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& tok, const LayerNormParams<T>& p, Tensor<double>* xhat_out,
                     std::vector<double>* rstd_out) {
    const std::size_t n = tok.dim(0), c = tok.dim(1);
    Tensor<T> out(tok.shape());
    if (xhat_out) *xhat_out = Tensor<double>(tok.shape());
    if (rstd_out) rstd_out->assign(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        const T* x = tok.ptr() + i * c;
        double mean = 0;
        for (std::size_t ch = 0; ch < c; ++ch) mean += x[ch];
        mean /= static_cast<double>(c);
        double var = 0;
        for (std::size_t ch = 0; ch < c; ++ch) var += (x[ch] - mean) * (x[ch] - mean);
        var /= static_cast<double>(c);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double xh = (x[ch] - mean) * rstd;
            if (xhat_out) (*xhat_out)[i * c + ch] = xh;
            out[i * c + ch] = static_cast<T>(p.gamma[ch] * xh + p.beta[ch]);
        }
        if (rstd_out) (*rstd_out)[i] = rstd;
    });
    return out;
}

/// Adds the gradient through LN to dx; accumulates d_gamma/d_beta.
void layer_norm_backward(const Tensor<double>& dy, const Tensor<double>& xhat, const std::vector<double>& rstd,
                         const LayerNormParams<double>& p, LayerNormParams<double>& grad, Tensor<double>& dx) {
    const std::size_t n = dy.dim(0), c = dy.dim(1);
    std::vector<double> dxh(c);
    for (std::size_t i = 0; i < n; ++i) {
        double m1 = 0, m2 = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = dy[i * c + ch];
            grad.gamma[ch] += g * xhat[i * c + ch];
            grad.beta[ch] += g;
            dxh[ch] = g * p.gamma[ch];
            m1 += dxh[ch];
            m2 += dxh[ch] * xhat[i * c + ch];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            dx[i * c + ch] += rstd[i] * (dxh[ch] - m1 - xhat[i * c + ch] * m2);
        }
    }
}

template <typename T>
void attention_step(const EncoderBlock<T>& block, const WindowPlan::Entry& entry, WindowKind kind, bool shifted,
                    std::size_t batch, Tensor<T>& tok, std::vector<SublayerTape>* tape) {
    const AttentionParams<T>& params = kind == WindowKind::roi ? block.roi : block.mv;
    if constexpr (std::is_same_v<T, double>) {
        if (tape) {
            SublayerTape rec;
            rec.kind = SublayerTape::Kind::attention;
            rec.window_kind = kind;
            rec.shifted = shifted;
            const Tensor<double> z = layer_norm(tok, block.norm_attn, &rec.xhat, &rec.rstd);
            auto [out, cache] = attention_forward(gather_tokens(z, entry.partition, batch), params, entry.mask);
            rec.attn = std::move(cache);
            scatter_add_tokens(out, entry.partition, batch, tok);
            tape->push_back(std::move(rec));
            return;
        }
    }
    const Tensor<T> z = layer_norm(tok, block.norm_attn, nullptr, nullptr);
    const Tensor<T> out = attention_apply(gather_tokens(z, entry.partition, batch), params, entry.mask);
    scatter_add_tokens(out, entry.partition, batch, tok);
}

template <typename T>
void ffn_step(const EncoderBlock<T>& block, Tensor<T>& tok, std::vector<SublayerTape>* tape) {
    const std::size_t n = tok.dim(0), c = tok.dim(1), hidden = block.ffn_in.dim(0);
    SublayerTape rec;
    const bool record = std::is_same_v<T, double> && tape;
    const Tensor<T> z = layer_norm(tok, block.norm_ffn, record ? &rec.xhat : nullptr, record ? &rec.rstd : nullptr);
    if (record) {
        rec.kind = SublayerTape::Kind::ffn;
        rec.z = z.template cast<double>();
        rec.pre = Tensor<double>({n, hidden});
        rec.act = Tensor<double>({n, hidden});
    }
    parallel_for(n, [&](std::size_t i) {
        thread_local std::vector<T> h;
        h.resize(hidden);
        kernels::matmul_nt(z.ptr() + i * c, block.ffn_in.ptr(), h.data(), 1, c, hidden);
        for (std::size_t u = 0; u < hidden; ++u) {
            if (record) rec.pre[i * hidden + u] = h[u];
            h[u] = static_cast<T>(gelu(h[u]));
            if (record) rec.act[i * hidden + u] = h[u];
        }
        T* x = tok.ptr() + i * c;
        for (std::size_t o = 0; o < c; ++o) x[o] += kernels::dot(h.data(), block.ffn_out.ptr() + o * hidden, hidden);
    });
    if (record) tape->push_back(std::move(rec));
}

/// One block on one level, in place on tokens.
template <typename T>
void block_level(const EncoderStack<T>& stack, const EncoderBlock<T>& block, std::size_t level, std::size_t stage,
                 std::size_t batch, Tensor<T>& tok, std::vector<SublayerTape>* tape) {
    const bool shifted = stack.options.shifts && (stage % 2 == 1);
    const bool per_sublayer = stack.options.ffn == FfnPlacement::per_sublayer;
    for (WindowKind kind : {WindowKind::mv_axis, WindowKind::roi}) {
        attention_step(block, stack.plan.get(level, kind, shifted), kind, shifted, batch, tok, tape);
        if (per_sublayer) ffn_step(block, tok, tape);
    }
    if (!per_sublayer) ffn_step(block, tok, tape);
}

template <typename T>
void check_stack(const EncoderStack<T>& stack, const FeaturePyramid<T>& pyramid) {
    validate_pyramid(pyramid, stack.layout);
    if (pyramid.channels() != stack.options.channels) {
        throw ArgumentError("encoder: pyramid has " + std::to_string(pyramid.channels()) + " channels, encoder " +
                            std::to_string(stack.options.channels));
    }
}

}  // namespace

template <typename T>
FeaturePyramid<T> block_forward(const EncoderStack<T>& stack, std::size_t block_index,
                                const FeaturePyramid<T>& pyramid, std::size_t stage) {
    check_stack(stack, pyramid);
    if (block_index >= stack.blocks.size()) throw ArgumentError("block_forward: block index out of range");
    FeaturePyramid<T> out;
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
        Tensor<T> tok = to_tokens(pyramid.levels[l]);
        block_level(stack, stack.blocks[block_index], l, stage, pyramid.batch(), tok, nullptr);
        out.levels.push_back(from_tokens(tok, pyramid.levels[l].shape()));
    }
    return out;
}

template <typename T>
FeaturePyramid<T> encoder_forward(const EncoderStack<T>& stack, const FeaturePyramid<T>& pyramid) {
    check_stack(stack, pyramid);
    FeaturePyramid<T> out;
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
        Tensor<T> tok = to_tokens(pyramid.levels[l]);
        for (const auto& block : stack.blocks) block_level(stack, block, l, block.stage, pyramid.batch(), tok, nullptr);
        out.levels.push_back(from_tokens(tok, pyramid.levels[l].shape()));
    }
    return out;
}

template FeaturePyramid<double> block_forward(const EncoderStack<double>&, std::size_t, const FeaturePyramid<double>&,
                                              std::size_t);
template FeaturePyramid<float> block_forward(const EncoderStack<float>&, std::size_t, const FeaturePyramid<float>&,
                                             std::size_t);
template FeaturePyramid<double> encoder_forward(const EncoderStack<double>&, const FeaturePyramid<double>&);
template FeaturePyramid<float> encoder_forward(const EncoderStack<float>&, const FeaturePyramid<float>&);

EncoderForwardResult encoder_forward_with_tape(const EncoderStack<double>& stack,
                                               const FeaturePyramid<double>& pyramid) {
    check_stack(stack, pyramid);
    auto tape = std::make_shared<EncoderTape>();
    tape->blocks.resize(stack.blocks.size(), std::vector<std::vector<SublayerTape>>(pyramid.levels.size()));
    EncoderForwardResult res;
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
        Tensor<double> tok = to_tokens(pyramid.levels[l]);
        for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
            const auto& block = stack.blocks[b];
            block_level(stack, block, l, block.stage, pyramid.batch(), tok, &tape->blocks[b][l]);
        }
        res.output.levels.push_back(from_tokens(tok, pyramid.levels[l].shape()));
    }
    res.tape = std::move(tape);
    return res;
}

EncoderGrads encoder_backward(const EncoderStack<double>& stack, const EncoderForwardResult& fwd,
                              const FeaturePyramid<double>& d_out) {
    if (!fwd.tape) throw ArgumentError("encoder_backward: forward result carries no tape");
    const EncoderTape& tape = *fwd.tape;
    if (d_out.levels.size() != fwd.output.levels.size() || tape.blocks.size() != stack.blocks.size()) {
        throw ArgumentError("encoder_backward: gradient pyramid does not match the recorded forward");
    }
    const std::size_t c = stack.options.channels;
    EncoderGrads grads;
    for (const auto& block : stack.blocks) {
        EncoderBlockGrads g{AttentionGrads<double>::zeros(c),
                            AttentionGrads<double>::zeros(c),
                            {Tensor<double>({c}), Tensor<double>({c})},
                            {Tensor<double>({c}), Tensor<double>({c})},
                            Tensor<double>(block.ffn_in.shape()),
                            Tensor<double>(block.ffn_out.shape())};
        grads.blocks.push_back(std::move(g));
    }
    for (std::size_t l = 0; l < d_out.levels.size(); ++l) {
        require_shape(d_out.levels[l], fwd.output.levels[l].shape(), "encoder_backward d_out");
        const std::size_t batch = d_out.levels[l].dim(0);
        Tensor<double> dtok = to_tokens(d_out.levels[l]);
        const std::size_t n = dtok.dim(0);
        for (std::size_t b = stack.blocks.size(); b-- > 0;) {
            const auto& block = stack.blocks[b];
            auto& g = grads.blocks[b];
            const auto& subs = tape.blocks[b][l];
            for (std::size_t s = subs.size(); s-- > 0;) {
                const SublayerTape& rec = subs[s];
                Tensor<double> dz({n, c});
                if (rec.kind == SublayerTape::Kind::attention) {
                    const auto& entry = stack.plan.get(l, rec.window_kind, rec.shifted);
                    auto back = attention_backward(rec.attn, gather_tokens(dtok, entry.partition, batch));
                    scatter_add_tokens(back.d_x, entry.partition, batch, dz);
                    (rec.window_kind == WindowKind::roi ? g.roi : g.mv).add(back.d_params);
                    layer_norm_backward(dz, rec.xhat, rec.rstd, block.norm_attn, g.norm_attn, dtok);
                } else {
                    const std::size_t hidden = block.ffn_in.dim(0);
                    std::vector<double> dh(hidden);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* df = dtok.ptr() + i * c;
                        std::fill(dh.begin(), dh.end(), 0.0);
                        for (std::size_t o = 0; o < c; ++o) {
                            kernels::axpy(df[o], rec.act.ptr() + i * hidden, g.ffn_out.ptr() + o * hidden, hidden);
                            kernels::axpy(df[o], block.ffn_out.ptr() + o * hidden, dh.data(), hidden);
                        }
                        for (std::size_t u = 0; u < hidden; ++u) {
                            dh[u] *= gelu_grad(rec.pre[i * hidden + u]);
                            kernels::axpy(dh[u], rec.z.ptr() + i * c, g.ffn_in.ptr() + u * c, c);
                            kernels::axpy(dh[u], block.ffn_in.ptr() + u * c, dz.ptr() + i * c, c);
                        }
                    }
                    layer_norm_backward(dz, rec.xhat, rec.rstd, block.norm_ffn, g.norm_ffn, dtok);
                }
            }
        }
        grads.d_input.levels.push_back(from_tokens(dtok, d_out.levels[l].shape()));
    }
    return grads;
}

}  // namespace panoattn
