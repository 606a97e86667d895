#pragma once

// Six-block encoder alternating multi-view-axis and ROI windowed attention.
//
// Per level, a block computes (pre-norm residual form):
//   x <- x + MvAttn(LN_a(x))     shifted partition iff stage is odd
//   x <- x + RoiAttn(LN_a(x))    shifted partition iff stage is odd
//   x <- x + FFN(LN_f(x))        FFN(z) = W2 gelu(W1 z), C -> 4C -> C
// With FfnPlacement::per_sublayer the FFN step follows each attention step.
// Levels never exchange information; attention parameters are shared by all levels.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "panoattn/attention.hpp"
#include "panoattn/geometry.hpp"

namespace panoattn {

enum class FfnPlacement { per_block, per_sublayer };

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;  // (C)
    Tensor<T> beta;   // (C)
    bool operator==(const LayerNormParams&) const = default;
};

template <typename T>
struct EncoderBlock {
    std::size_t stage = 0;
    AttentionParams<T> mv;
    AttentionParams<T> roi;
    LayerNormParams<T> norm_attn;
    LayerNormParams<T> norm_ffn;
    Tensor<T> ffn_in;   // (4C, C)
    Tensor<T> ffn_out;  // (C, 4C)

    bool operator==(const EncoderBlock&) const = default;
};

struct EncoderOptions {
    std::size_t channels = 256;
    std::size_t heads = 8;
    std::size_t blocks = 6;
    std::uint64_t seed = 0;
    FfnPlacement ffn = FfnPlacement::per_block;
    /// When false every stage uses unshifted partitions.
    bool shifts = true;
};

/// Partitions and masks for every (level, kind, shifted) combination.
struct WindowPlan {
    struct Entry {
        WindowPartition partition;
        AttentionMask mask;
    };
    std::vector<Entry> entries;  // index ((level * 2) + kind) * 2 + shifted

    static WindowPlan build(const PanoramaLayout& layout);
    const Entry& get(std::size_t level, WindowKind kind, bool shifted) const;
};

template <typename T>
struct EncoderStack {
    PanoramaLayout layout;
    EncoderOptions options;
    WindowPlan plan;
    std::vector<EncoderBlock<T>> blocks;

    template <typename U>
    EncoderStack<U> cast() const;
};

/// Deterministic initialization: one std::mt19937_64 seeded with `seed`, drawing
/// uniform(-1/sqrt(C), 1/sqrt(C)) for block 0..L-1 in the order mv.{wq,wk,wv,wo},
/// roi.{wq,wk,wv,wo}, ffn_in, ffn_out, each row-major. Norm gains 1, biases 0.
EncoderStack<double> build_encoder(const PanoramaLayout& layout, const EncoderOptions& options);

inline EncoderStack<double> build_encoder(const PanoramaLayout& layout, std::size_t channels, std::size_t heads,
                                          std::uint64_t seed) {
    return build_encoder(layout, EncoderOptions{channels, heads, 6, seed});
}

/// Zeroes every output projection (attention Wo, FFN W2) so each block is the identity.
template <typename T>
void make_identity(EncoderStack<T>& stack);

template <typename T>
FeaturePyramid<T> block_forward(const EncoderStack<T>& stack, std::size_t block_index,
                                const FeaturePyramid<T>& pyramid, std::size_t stage);

template <typename T>
FeaturePyramid<T> encoder_forward(const EncoderStack<T>& stack, const FeaturePyramid<T>& pyramid);

// ---- gradients (64-bit only) ----

struct EncoderBlockGrads {
    AttentionGrads<double> mv;
    AttentionGrads<double> roi;
    LayerNormParams<double> norm_attn;
    LayerNormParams<double> norm_ffn;
    Tensor<double> ffn_in;
    Tensor<double> ffn_out;
};

struct EncoderGrads {
    FeaturePyramid<double> d_input;
    std::vector<EncoderBlockGrads> blocks;
};

/// Saved activations of one encoder_forward run.
struct EncoderTape;

struct EncoderForwardResult {
    FeaturePyramid<double> output;
    std::shared_ptr<const EncoderTape> tape;
};

EncoderForwardResult encoder_forward_with_tape(const EncoderStack<double>& stack,
                                               const FeaturePyramid<double>& pyramid);

/// Gradients of L = sum(d_out * output) for the run recorded in `fwd`.
EncoderGrads encoder_backward(const EncoderStack<double>& stack, const EncoderForwardResult& fwd,
                              const FeaturePyramid<double>& d_out);

/// Exact-erf GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

}  // namespace panoattn
