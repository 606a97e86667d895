#include "panoattn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "panoattn/errors.hpp"

namespace panoattn {

namespace {

template <typename U>
void put(std::ostream& os, U v) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError(std::string("archive truncated in ") + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void write_archive(std::ostream& os, const TensorArchive& archive) {
    os << kArchiveMagic << '\n';
    put<std::uint64_t>(os, archive.size());
    for (const auto& e : archive) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape()) put<std::uint64_t>(os, d);
        for (double v : e.tensor.data()) put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
}

TensorArchive read_archive(std::istream& is) {
    std::string header;
    if (!std::getline(is, header) || header != kArchiveMagic) {
        throw FormatError("not a tensor archive (expected header '" + std::string(kArchiveMagic) + "')");
    }
    const auto count = get<std::uint64_t>(is, "record count");
    TensorArchive out;
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto len = get<std::uint32_t>(is, "name length");
        if (len > (1u << 16)) throw FormatError("archive record name too long");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("archive truncated in name");
        const auto rank = get<std::uint32_t>(is, "rank");
        if (rank > 8) throw FormatError("archive record '" + name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = get<std::uint64_t>(is, "dims");
        const std::size_t n = shape_numel(shape);
        if (n > (std::size_t{1} << 32)) throw FormatError("archive record '" + name + "' is too large");
        std::vector<double> data(n);
        for (auto& v : data) v = std::bit_cast<double>(get<std::uint64_t>(is, "data"));
        out.push_back({std::move(name), Tensor<double>(std::move(shape), std::move(data))});
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after archive");
    return out;
}

void save_archive(const std::string& path, const TensorArchive& archive) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_archive(os, archive);
    if (!os) throw FormatError("write failed: " + path);
}

TensorArchive load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_archive(is);
}

namespace {

template <typename Stack, typename Fn>
void visit_params(Stack& stack, Fn&& fn) {
    for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
        auto& blk = stack.blocks[b];
        const std::string p = "block" + std::to_string(b) + ".";
        auto attn = [&](const std::string& kind, auto& a) {
            fn(p + kind + ".wq", a.wq);
            fn(p + kind + ".wk", a.wk);
            fn(p + kind + ".wv", a.wv);
            fn(p + kind + ".wo", a.wo);
        };
        attn("mv", blk.mv);
        attn("roi", blk.roi);
        fn(p + "norm_attn.gamma", blk.norm_attn.gamma);
        fn(p + "norm_attn.beta", blk.norm_attn.beta);
        fn(p + "norm_ffn.gamma", blk.norm_ffn.gamma);
        fn(p + "norm_ffn.beta", blk.norm_ffn.beta);
        fn(p + "ffn_in", blk.ffn_in);
        fn(p + "ffn_out", blk.ffn_out);
    }
}

}  // namespace

TensorArchive encoder_archive(const EncoderStack<double>& stack) {
    TensorArchive out;
    visit_params(stack, [&](const std::string& name, const Tensor<double>& t) { out.push_back({name, t}); });
    return out;
}

void load_encoder_params(EncoderStack<double>& stack, const TensorArchive& archive) {
    std::map<std::string, const Tensor<double>*> byname;
    for (const auto& e : archive) byname[e.name] = &e.tensor;
    visit_params(stack, [&](const std::string& name, Tensor<double>& t) {
        auto it = byname.find(name);
        if (it == byname.end()) throw FormatError("archive is missing parameter " + name);
        if (it->second->shape() != t.shape()) {
            throw FormatError("parameter " + name + " has shape " + shape_string(it->second->shape()) + ", expected " +
                              shape_string(t.shape()));
        }
        t = *it->second;
    });
}

void append_pyramid(TensorArchive& archive, const std::string& prefix, const FeaturePyramid<double>& pyramid) {
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
        archive.push_back({prefix + ".level" + std::to_string(l), pyramid.levels[l]});
    }
}

}  // namespace panoattn
