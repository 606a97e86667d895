#pragma once

// Multi-head scaled dot-product self-attention over gathered windows.
//
// Tokens are row vectors. For a window X (n x C):
//   Q = X Wq^T, K = X Wk^T, V = X Wv^T
//   per head h (channel slice of width C / n_h):
//     P_h = softmax(mask(Q_h K_h^T * scale)),  Y_h = P_h V_h
//   out = concat_h(Y_h) Wo^T
// No biases, no dropout, no positional terms.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "panoattn/geometry.hpp"
#include "panoattn/tensor.hpp"

namespace panoattn {

/// Logit assigned to masked pairs before the softmax.
inline constexpr double kMaskedLogit = -1e30;

template <typename T>
struct AttentionParams {
    std::size_t channels = 0;
    std::size_t heads = 1;
    Tensor<T> wq, wk, wv, wo;  // (C, C), row o produces output channel o

    static AttentionParams zeros(std::size_t channels, std::size_t heads);

    std::size_t head_dim() const { return channels / heads; }
    T scale() const;
    /// Throws ArgumentError on shape problems or n_h not dividing C, NumericError on non-finite weights.
    void validate() const;

    template <typename U>
    AttentionParams<U> cast() const {
        return {channels, heads, wq.template cast<U>(), wk.template cast<U>(), wv.template cast<U>(),
                wo.template cast<U>()};
    }
    bool operator==(const AttentionParams&) const = default;
};

/// Per-window boolean slot-pair matrices. An empty mask allows every pair.
/// Window index w of a gathered batch uses matrix w mod windows().
class AttentionMask {
public:
    static AttentionMask all(std::size_t slots);
    /// bits: windows * slots * slots, 1 = attend allowed. Validates diagonal and symmetry.
    static AttentionMask from_bits(std::size_t windows, std::size_t slots, std::vector<std::uint8_t> bits);
    /// Masks pairs separated by the vertical seam of a shifted partition; all-true otherwise.
    static AttentionMask from_partition(const WindowPartition& partition);

    std::size_t slots() const { return slots_; }
    std::size_t windows() const { return windows_; }
    bool trivial() const { return bits_.empty(); }
    bool allows(std::size_t window, std::size_t i, std::size_t j) const {
        return bits_.empty() || bits_[((window % windows_) * slots_ + i) * slots_ + j] != 0;
    }
    /// Row i of the window's matrix, or an empty span when the mask is trivial.
    std::span<const std::uint8_t> row(std::size_t window, std::size_t i) const {
        if (bits_.empty()) return {};
        return {bits_.data() + ((window % windows_) * slots_ + i) * slots_, slots_};
    }

private:
    std::size_t windows_ = 1;
    std::size_t slots_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Softmax of one logit row in place. Entries with allowed[j] == 0 get kMaskedLogit;
/// an empty allowed span allows all. A fully masked row becomes all zeros.
template <typename T>
void masked_softmax(std::span<T> row, std::span<const std::uint8_t> allowed);

template <typename T>
struct AttentionCache {
    AttentionParams<T> params;
    AttentionMask mask;
    Tensor<T> x;          // (r, n, C)
    Tensor<T> q, k, v;    // (r, n, C)
    Tensor<T> weights;    // (r, n_h, n, n), softmax rows
    Tensor<T> heads_out;  // (r, n, C), concatenated head outputs before Wo
};

template <typename T>
struct AttentionGrads {
    Tensor<T> wq, wk, wv, wo;

    static AttentionGrads zeros(std::size_t channels);
    void add(const AttentionGrads& other);
};

template <typename T>
struct AttentionBackward {
    Tensor<T> d_x;
    AttentionGrads<T> d_params;
};

/// x: (r, n, C). Returns (out, cache). NumericError names the first window with a non-finite input.
template <typename T>
std::pair<Tensor<T>, AttentionCache<T>> attention_forward(const Tensor<T>& x, const AttentionParams<T>& params,
                                                          const AttentionMask& mask);

/// Forward without saving activations.
template <typename T>
Tensor<T> attention_apply(const Tensor<T>& x, const AttentionParams<T>& params, const AttentionMask& mask);

/// Gradients of L = sum(d_out * out) with respect to x and the four projections.
template <typename T>
AttentionBackward<T> attention_backward(const AttentionCache<T>& cache, const Tensor<T>& d_out);

/// gather -> attention per window -> scatter on a (B, C, H, W) map.
template <typename T>
Tensor<T> windowed_attention(const Tensor<T>& map, const WindowPartition& partition,
                             const AttentionParams<T>& params, const AttentionMask& mask);

/// Largest map the full-attention reference accepts.
inline constexpr std::size_t kOracleMaxPositions = 4096;

/// HW x HW pair mask equivalent to windowed attention on a partition
/// (same window and same vertical segment).
std::vector<std::uint8_t> block_pair_mask(const WindowPartition& partition);

/// Single attention over all H*W positions of each batch element with an
/// explicit pair mask. Plain loops, no shared kernels; reference use only.
template <typename T>
Tensor<T> full_attention_oracle(const Tensor<T>& map, const AttentionParams<T>& params,
                                std::span<const std::uint8_t> pair_mask);

}  // namespace panoattn
