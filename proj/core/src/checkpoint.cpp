#include "picl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace picl {
namespace {

// Explicit little-endian encoding keeps files identical across platforms.
template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    uint64_t bits;
    if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
        std::memcpy(&bits, &v, 8);
    } else {
        bits = static_cast<uint64_t>(v);
    }
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    uint64_t bits = 0;
    for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
        T v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

const char kMagic[] = "PCKT1";

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 5);
    for (const auto& name : params.names()) {
        const Tensor& t = params.get(name);
        write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) write_le<uint64_t>(os, static_cast<uint64_t>(d));
        for (double v : t.data()) write_le<double>(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
    ParamSet out;
    while (true) {
        uint32_t nlen;
        {
            unsigned char buf[4];
            is.read(reinterpret_cast<char*>(buf), 4);
            if (is.eof()) break;
            if (!is) throw std::runtime_error("checkpoint: truncated file");
            nlen = static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
                   (static_cast<uint32_t>(buf[2]) << 16) | (static_cast<uint32_t>(buf[3]) << 24);
        }
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t rank = read_le<uint32_t>(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_le<uint64_t>(is));
        int n = shape_size(shape);
        std::vector<double> vals(static_cast<size_t>(n));
        for (auto& v : vals) v = read_le<double>(is);
        out.add(name, Tensor(std::move(shape), std::move(vals)));
    }
    return out;
}

}  // namespace picl
