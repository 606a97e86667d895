#pragma once

// Flat tensor archive.
//
//   "panoattn-tensor-archive v1\n"
//   u64 record count
//   per record: u32 name length, name bytes, u32 rank, rank x u64 dims,
//               numel x f64 data (row-major)
//
// All integers and floats are little-endian regardless of host order.

#include <iosfwd>
#include <string>
#include <vector>

#include "panoattn/encoder.hpp"
#include "panoattn/tensor.hpp"

namespace panoattn {

inline constexpr const char* kArchiveMagic = "panoattn-tensor-archive v1";

struct ArchiveEntry {
    std::string name;
    Tensor<double> tensor;

    bool operator==(const ArchiveEntry&) const = default;
};

using TensorArchive = std::vector<ArchiveEntry>;

void write_archive(std::ostream& os, const TensorArchive& archive);
/// Throws FormatError on a bad header, truncation or trailing bytes.
TensorArchive read_archive(std::istream& is);
void save_archive(const std::string& path, const TensorArchive& archive);
TensorArchive load_archive(const std::string& path);

/// Entries named block<i>.mv.wq, ..., block<i>.norm_ffn.beta, block<i>.ffn_in, block<i>.ffn_out.
TensorArchive encoder_archive(const EncoderStack<double>& stack);
/// Restores parameters into a stack of matching layout and options.
void load_encoder_params(EncoderStack<double>& stack, const TensorArchive& archive);

/// Entries named <prefix>.level<l>.
void append_pyramid(TensorArchive& archive, const std::string& prefix, const FeaturePyramid<double>& pyramid);

}  // namespace panoattn
