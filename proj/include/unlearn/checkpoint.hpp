#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unlearn/errors.hpp"
#include "unlearn/nn.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

// Flat binary checkpoint: magic "UFTC", version u32, tensor count u32, then
// per tensor: name length u16, name bytes, rank u8, dims u32 each,
// little-endian f64 payload. All integers little-endian.

namespace detail_ckpt {

constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put<std::uint64_t>(os, bits);
}

template <class T>
T get(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw FormatError("checkpoint: truncated stream");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

inline double get_f64(std::istream& is) {
    std::uint64_t bits = get<std::uint64_t>(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace detail_ckpt

inline void save_checkpoint(std::ostream& os, const ParamSet& params) {
    using namespace detail_ckpt;
    os.write("UFTC", 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const std::string& name = params.names[i];
        const Tensor& t = params.values[i];
        put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (double v : t.vec()) put_f64(os, v);
    }
}

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("checkpoint: cannot open " + path + " for writing");
    save_checkpoint(os, params);
}

inline ParamSet load_checkpoint(std::istream& is) {
    using namespace detail_ckpt;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "UFTC", 4) != 0) {
        throw FormatError("checkpoint: bad magic, expected UFTC");
    }
    const auto version = get<std::uint32_t>(is);
    if (version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto count = get<std::uint32_t>(is);
    ParamSet p;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint: truncated tensor name");
        const auto rank = get<std::uint8_t>(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = get<std::uint32_t>(is);
        Tensor t(shape);
        for (double& v : t.vec()) v = get_f64(is);
        p.add(std::move(name), std::move(t));
    }
    return p;
}

inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open " + path);
    return load_checkpoint(is);
}

// Overwrites matching tensors by name; throws on missing name or shape
// mismatch. Used to restore network weights from a checkpoint.
inline void restore_into(ParamSet& dst, const ParamSet& src) {
    for (std::size_t i = 0; i < dst.count(); ++i) {
        bool found = false;
        for (std::size_t j = 0; j < src.count(); ++j) {
            if (src.names[j] != dst.names[i]) continue;
            if (!src.values[j].same_shape(dst.values[i])) {
                throw FormatError("checkpoint: shape mismatch on " + dst.names[i]);
            }
            dst.values[i] = src.values[j];
            found = true;
            break;
        }
        if (!found) throw FormatError("checkpoint: missing tensor " + dst.names[i]);
    }
}

}  // namespace unlearn
