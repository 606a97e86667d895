#include "panoattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "panoattn/errors.hpp"
#include "panoattn/kernels.hpp"
#include "panoattn/parallel.hpp"

namespace panoattn {

template <typename T>
AttentionParams<T> AttentionParams<T>::zeros(std::size_t channels, std::size_t heads) {
    return {channels, heads, Tensor<T>({channels, channels}), Tensor<T>({channels, channels}),
            Tensor<T>({channels, channels}), Tensor<T>({channels, channels})};
}

template <typename T>
T AttentionParams<T>::scale() const {
    return static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim())));
}

template <typename T>
void AttentionParams<T>::validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0) {
        throw ArgumentError("attention: head count " + std::to_string(heads) + " must divide channels " +
                            std::to_string(channels));
    }
    for (const Tensor<T>* w : {&wq, &wk, &wv, &wo}) {
        require_shape(*w, {channels, channels}, "attention projection");
        for (T v : w->data()) {
            if (!std::isfinite(v)) throw NumericError("attention: non-finite projection weight");
        }
    }
}

template struct AttentionParams<double>;
template struct AttentionParams<float>;

AttentionMask AttentionMask::all(std::size_t slots) {
    AttentionMask m;
    m.slots_ = slots;
    return m;
}

AttentionMask AttentionMask::from_bits(std::size_t windows, std::size_t slots, std::vector<std::uint8_t> bits) {
    if (windows == 0 || bits.size() != windows * slots * slots) {
        throw ArgumentError("attention mask: expected " + std::to_string(windows * slots * slots) + " entries, got " +
                            std::to_string(bits.size()));
    }
    for (std::size_t w = 0; w < windows; ++w) {
        const std::uint8_t* m = bits.data() + w * slots * slots;
        for (std::size_t i = 0; i < slots; ++i) {
            if (!m[i * slots + i]) throw ArgumentError("attention mask: diagonal must be allowed");
            for (std::size_t j = 0; j < i; ++j) {
                if ((m[i * slots + j] != 0) != (m[j * slots + i] != 0)) {
                    throw ArgumentError("attention mask: matrix must be symmetric");
                }
            }
        }
    }
    AttentionMask mask;
    mask.windows_ = windows;
    mask.slots_ = slots;
    mask.bits_ = std::move(bits);
    return mask;
}

AttentionMask AttentionMask::from_partition(const WindowPartition& partition) {
    const std::size_t n = partition.slots();
    if (!partition.has_vertical_wrap()) return all(n);
    const std::size_t r = partition.num_windows();
    std::vector<std::uint8_t> bits(r * n * n);
    std::vector<std::uint8_t> seg(n);
    for (std::size_t w = 0; w < r; ++w) {
        for (std::size_t s = 0; s < n; ++s) seg[s] = partition.row_segment(partition.inverse(w, s));
        std::uint8_t* m = bits.data() + w * n * n;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) m[i * n + j] = seg[i] == seg[j] ? 1 : 0;
        }
    }
    return from_bits(r, n, std::move(bits));
}

template <typename T>
void masked_softmax(std::span<T> row, std::span<const std::uint8_t> allowed) {
    const bool masked = !allowed.empty();
    T mx = static_cast<T>(kMaskedLogit);
    bool any = false;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (masked && !allowed[j]) {
            row[j] = static_cast<T>(kMaskedLogit);
            continue;
        }
        if (!any || row[j] > mx) mx = row[j];
        any = true;
    }
    if (!any) {
        std::fill(row.begin(), row.end(), T{0});
        return;
    }
    T sum = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (masked && !allowed[j]) {
            row[j] = 0;
        } else {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
    }
    const T inv = T{1} / sum;
    for (T& v : row) v *= inv;
}

template void masked_softmax(std::span<double>, std::span<const std::uint8_t>);
template void masked_softmax(std::span<float>, std::span<const std::uint8_t>);

template <typename T>
AttentionGrads<T> AttentionGrads<T>::zeros(std::size_t channels) {
    return {Tensor<T>({channels, channels}), Tensor<T>({channels, channels}), Tensor<T>({channels, channels}),
            Tensor<T>({channels, channels})};
}

template <typename T>
void AttentionGrads<T>::add(const AttentionGrads& other) {
    Tensor<T>* mine[] = {&wq, &wk, &wv, &wo};
    const Tensor<T>* theirs[] = {&other.wq, &other.wk, &other.wv, &other.wo};
    for (int m = 0; m < 4; ++m) {
        for (std::size_t i = 0; i < mine[m]->size(); ++i) (*mine[m])[i] += (*theirs[m])[i];
    }
}

template struct AttentionGrads<double>;
template struct AttentionGrads<float>;

namespace {

template <typename T>
void check_inputs(const Tensor<T>& x, const AttentionParams<T>& params, const AttentionMask& mask) {
    params.validate();
    if (x.rank() != 3 || x.dim(2) != params.channels) {
        throw ArgumentError("attention: input " + shape_string(x.shape()) + " is not (r, n, " +
                            std::to_string(params.channels) + ")");
    }
    if (mask.slots() != x.dim(1)) {
        throw ArgumentError("attention: mask is for " + std::to_string(mask.slots()) + " slots, input has " +
                            std::to_string(x.dim(1)));
    }
}

/// Buffers for one window. q/k/v/y are n x C, weights n_h x n x n.
template <typename T>
struct WindowBuffers {
    T* q;
    T* k;
    T* v;
    T* y;
    T* weights;
};

template <typename T>
void forward_window(const T* x, std::size_t window, std::size_t n, const AttentionParams<T>& params,
                    const AttentionMask& mask, const WindowBuffers<T>& buf, T* out) {
    const std::size_t c = params.channels;
    for (std::size_t i = 0; i < n * c; ++i) {
        if (!std::isfinite(x[i])) {
            throw NumericError("attention: non-finite input in window " + std::to_string(window));
        }
    }
    kernels::matmul_nt(x, params.wq.ptr(), buf.q, n, c, c);
    kernels::matmul_nt(x, params.wk.ptr(), buf.k, n, c, c);
    kernels::matmul_nt(x, params.wv.ptr(), buf.v, n, c, c);
    std::fill(buf.y, buf.y + n * c, T{0});
    const std::size_t dh = params.head_dim();
    const T scale = params.scale();
    for (std::size_t h = 0; h < params.heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            T* p = buf.weights + (h * n + i) * n;
            for (std::size_t j = 0; j < n; ++j) p[j] = kernels::dot(buf.q + i * c + off, buf.k + j * c + off, dh) * scale;
            masked_softmax(std::span<T>(p, n), mask.row(window, i));
            T* yi = buf.y + i * c + off;
            for (std::size_t j = 0; j < n; ++j) {
                if (p[j] != T{0}) kernels::axpy(p[j], buf.v + j * c + off, yi, dh);
            }
        }
    }
    kernels::matmul_nt(buf.y, params.wo.ptr(), out, n, c, c);
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, AttentionCache<T>> attention_forward(const Tensor<T>& x, const AttentionParams<T>& params,
                                                          const AttentionMask& mask) {
    check_inputs(x, params, mask);
    const std::size_t r = x.dim(0), n = x.dim(1), c = x.dim(2), nh = params.heads;
    AttentionCache<T> cache{params, mask, x, Tensor<T>(x.shape()), Tensor<T>(x.shape()), Tensor<T>(x.shape()),
                            Tensor<T>({r, nh, n, n}), Tensor<T>(x.shape())};
    Tensor<T> out(x.shape());
    parallel_for(r, [&](std::size_t w) {
        const std::size_t o = w * n * c;
        WindowBuffers<T> buf{cache.q.ptr() + o, cache.k.ptr() + o, cache.v.ptr() + o, cache.heads_out.ptr() + o,
                             cache.weights.ptr() + w * nh * n * n};
        forward_window(x.ptr() + o, w, n, params, mask, buf, out.ptr() + o);
    });
    return {std::move(out), std::move(cache)};
}

template <typename T>
Tensor<T> attention_apply(const Tensor<T>& x, const AttentionParams<T>& params, const AttentionMask& mask) {
    check_inputs(x, params, mask);
    const std::size_t r = x.dim(0), n = x.dim(1), c = x.dim(2), nh = params.heads;
    Tensor<T> out(x.shape());
    parallel_for(r, [&](std::size_t w) {
        thread_local std::vector<T> scratch;
        scratch.resize(4 * n * c + nh * n * n);
        WindowBuffers<T> buf{scratch.data(), scratch.data() + n * c, scratch.data() + 2 * n * c,
                             scratch.data() + 3 * n * c, scratch.data() + 4 * n * c};
        forward_window(x.ptr() + w * n * c, w, n, params, mask, buf, out.ptr() + w * n * c);
    });
    return out;
}

template <typename T>
AttentionBackward<T> attention_backward(const AttentionCache<T>& cache, const Tensor<T>& d_out) {
    const auto& params = cache.params;
    require_shape(d_out, cache.x.shape(), "attention_backward d_out");
    const std::size_t r = cache.x.dim(0), n = cache.x.dim(1), c = params.channels, nh = params.heads;
    const std::size_t dh = params.head_dim();
    require_shape(cache.weights, {r, nh, n, n}, "attention_backward cache weights");
    const T scale = params.scale();

    AttentionBackward<T> res{Tensor<T>(cache.x.shape()), AttentionGrads<T>::zeros(c)};
    auto& g = res.d_params;
    std::vector<T> dy(n * c), dq(n * c), dk(n * c), dv(n * c), dp(n);
    for (std::size_t w = 0; w < r; ++w) {
        const std::size_t o = w * n * c;
        const T* x = cache.x.ptr() + o;
        const T* q = cache.q.ptr() + o;
        const T* k = cache.k.ptr() + o;
        const T* v = cache.v.ptr() + o;
        const T* y = cache.heads_out.ptr() + o;
        const T* dout = d_out.ptr() + o;

        std::fill(dy.begin(), dy.end(), T{0});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t oc = 0; oc < c; ++oc) {
                const T d = dout[i * c + oc];
                if (d == T{0}) continue;
                kernels::axpy(d, y + i * c, g.wo.ptr() + oc * c, c);
                kernels::axpy(d, params.wo.ptr() + oc * c, dy.data() + i * c, c);
            }
        }

        std::fill(dq.begin(), dq.end(), T{0});
        std::fill(dk.begin(), dk.end(), T{0});
        std::fill(dv.begin(), dv.end(), T{0});
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = cache.weights.ptr() + ((w * nh + h) * n + i) * n;
                const T* dyi = dy.data() + i * c + off;
                T row_dot = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    dp[j] = kernels::dot(dyi, v + j * c + off, dh);
                    row_dot += p[j] * dp[j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    if (p[j] == T{0}) continue;
                    kernels::axpy(p[j], dyi, dv.data() + j * c + off, dh);
                    const T ds = p[j] * (dp[j] - row_dot) * scale;
                    kernels::axpy(ds, k + j * c + off, dq.data() + i * c + off, dh);
                    kernels::axpy(ds, q + i * c + off, dk.data() + j * c + off, dh);
                }
            }
        }

        T* dx = res.d_x.ptr() + o;
        const std::pair<const std::vector<T>*, std::pair<const Tensor<T>*, Tensor<T>*>> paths[] = {
            {&dq, {&params.wq, &g.wq}}, {&dk, {&params.wk, &g.wk}}, {&dv, {&params.wv, &g.wv}}};
        for (const auto& [dproj, mats] : paths) {
            const auto& [weight, grad] = mats;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t oc = 0; oc < c; ++oc) {
                    const T d = (*dproj)[i * c + oc];
                    if (d == T{0}) continue;
                    kernels::axpy(d, x + i * c, grad->ptr() + oc * c, c);
                    kernels::axpy(d, weight->ptr() + oc * c, dx + i * c, c);
                }
            }
        }
    }
    return res;
}

template <typename T>
Tensor<T> windowed_attention(const Tensor<T>& map, const WindowPartition& partition,
                             const AttentionParams<T>& params, const AttentionMask& mask) {
    const Tensor<T> windows = gather_windows(map, partition);
    return scatter_windows(attention_apply(windows, params, mask), partition, map.dim(0));
}

template std::pair<Tensor<double>, AttentionCache<double>> attention_forward(const Tensor<double>&,
                                                                             const AttentionParams<double>&,
                                                                             const AttentionMask&);
template std::pair<Tensor<float>, AttentionCache<float>> attention_forward(const Tensor<float>&,
                                                                           const AttentionParams<float>&,
                                                                           const AttentionMask&);
template Tensor<double> attention_apply(const Tensor<double>&, const AttentionParams<double>&, const AttentionMask&);
template Tensor<float> attention_apply(const Tensor<float>&, const AttentionParams<float>&, const AttentionMask&);
template AttentionBackward<double> attention_backward(const AttentionCache<double>&, const Tensor<double>&);
template Tensor<double> windowed_attention(const Tensor<double>&, const WindowPartition&,
                                           const AttentionParams<double>&, const AttentionMask&);
template Tensor<float> windowed_attention(const Tensor<float>&, const WindowPartition&,
                                          const AttentionParams<float>&, const AttentionMask&);

std::vector<std::uint8_t> block_pair_mask(const WindowPartition& partition) {
    const std::size_t hw = partition.cells();
    std::vector<std::uint8_t> mask(hw * hw);
    for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t q = 0; q < hw; ++q) {
            const bool same_window = partition.forward(p).window == partition.forward(q).window;
            const bool same_segment = partition.row_segment(p) == partition.row_segment(q);
            mask[p * hw + q] = same_window && same_segment ? 1 : 0;
        }
    }
    return mask;
}

template <typename T>
Tensor<T> full_attention_oracle(const Tensor<T>& map, const AttentionParams<T>& params,
                                std::span<const std::uint8_t> pair_mask) {
    params.validate();
    if (map.rank() != 4 || map.dim(1) != params.channels) {
        throw ArgumentError("full_attention_oracle: map " + shape_string(map.shape()) + " does not match channels");
    }
    const std::size_t b = map.dim(0), c = map.dim(1), hw = map.dim(2) * map.dim(3);
    if (hw > kOracleMaxPositions) {
        throw ArgumentError("full_attention_oracle: " + std::to_string(hw) + " positions exceeds limit " +
                            std::to_string(kOracleMaxPositions));
    }
    if (pair_mask.size() != hw * hw) throw ArgumentError("full_attention_oracle: pair mask must be HW x HW");

    const std::size_t dh = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor<T> out(map.shape());
    std::vector<T> tok(hw * c), q(hw * c), k(hw * c), v(hw * c), y(hw * c);
    std::vector<double> logits(hw);
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) tok[p * c + ch] = map[(bi * c + ch) * hw + p];

        for (std::size_t p = 0; p < hw; ++p) {
            for (std::size_t o = 0; o < c; ++o) {
                T sq = 0, sk = 0, sv = 0;
                for (std::size_t i = 0; i < c; ++i) {
                    sq += params.wq[o * c + i] * tok[p * c + i];
                    sk += params.wk[o * c + i] * tok[p * c + i];
                    sv += params.wv[o * c + i] * tok[p * c + i];
                }
                q[p * c + o] = sq;
                k[p * c + o] = sk;
                v[p * c + o] = sv;
            }
        }

        for (std::size_t h = 0; h < params.heads; ++h) {
            for (std::size_t p = 0; p < hw; ++p) {
                double mx = -HUGE_VAL;
                for (std::size_t s = 0; s < hw; ++s) {
                    if (!pair_mask[p * hw + s]) continue;
                    double acc = 0;
                    for (std::size_t d = 0; d < dh; ++d) acc += q[p * c + h * dh + d] * k[s * c + h * dh + d];
                    logits[s] = acc * scale;
                    mx = std::max(mx, logits[s]);
                }
                double z = 0;
                for (std::size_t s = 0; s < hw; ++s) {
                    logits[s] = pair_mask[p * hw + s] ? std::exp(logits[s] - mx) : 0.0;
                    z += logits[s];
                }
                for (std::size_t d = 0; d < dh; ++d) {
                    double acc = 0;
                    for (std::size_t s = 0; s < hw; ++s) {
                        if (pair_mask[p * hw + s]) acc += logits[s] / z * v[s * c + h * dh + d];
                    }
                    y[p * c + h * dh + d] = static_cast<T>(z > 0 ? acc : 0.0);
                }
            }
        }

        for (std::size_t p = 0; p < hw; ++p) {
            for (std::size_t o = 0; o < c; ++o) {
                T acc = 0;
                for (std::size_t i = 0; i < c; ++i) acc += params.wo[o * c + i] * y[p * c + i];
                out[(bi * c + o) * hw + p] = acc;
            }
        }
    }
    return out;
}

template Tensor<double> full_attention_oracle(const Tensor<double>&, const AttentionParams<double>&,
                                              std::span<const std::uint8_t>);
template Tensor<float> full_attention_oracle(const Tensor<float>&, const AttentionParams<float>&,
                                             std::span<const std::uint8_t>);

}  // namespace panoattn
