#include "fibro/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fibro/error.hpp"

namespace fibro {
namespace le {
namespace {

template <std::size_t N>
void put_bytes(std::ostream& os, std::uint64_t v) {
    std::array<char, N> buf{};
    for (std::size_t i = 0; i < N; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(buf.data(), N);
}

template <std::size_t N>
std::uint64_t get_bytes(std::istream& is) {
    std::array<unsigned char, N> buf{};
    is.read(reinterpret_cast<char*>(buf.data()), N);
    if (!is) throw DataError("unexpected end of binary stream");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < N; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

} // namespace

void put_u32(std::ostream& os, std::uint32_t v) { put_bytes<4>(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put_bytes<8>(os, v); }
void put_f64(std::ostream& os, double v) { put_bytes<8>(os, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) { return static_cast<std::uint32_t>(get_bytes<4>(is)); }
std::uint64_t get_u64(std::istream& is) { return get_bytes<8>(is); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_bytes<8>(is)); }

std::string get_str(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("unexpected end of binary stream");
    return s;
}

} // namespace le

void write_archive(std::ostream& os, const ArrayArchive& archive) {
    os.write(kArrayMagic, sizeof(kArrayMagic));
    le::put_u32(os, kArrayFormatVersion);
    le::put_u64(os, archive.arrays.size());
    for (const NamedArray& a : archive.arrays) {
        if (shape_numel(a.shape) != a.values.size()) {
            throw ShapeError("array '" + a.name + "' shape " + shape_str(a.shape) +
                             " does not match its payload");
        }
        le::put_str(os, a.name);
        le::put_u32(os, static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape) le::put_u64(os, d);
        for (double v : a.values) le::put_f64(os, v);
    }
    le::put_u64(os, archive.metadata.size());
    os.write(archive.metadata.data(), static_cast<std::streamsize>(archive.metadata.size()));
}

ArrayArchive read_archive(std::istream& is) {
    char magic[sizeof(kArrayMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kArrayMagic, sizeof(magic)) != 0) {
        throw DataError("not a parameter archive (bad magic)");
    }
    const std::uint32_t version = le::get_u32(is);
    if (version != kArrayFormatVersion) {
        throw DataError("unsupported parameter archive version " + std::to_string(version));
    }
    ArrayArchive archive;
    const std::uint64_t count = le::get_u64(is);
    for (std::uint64_t k = 0; k < count; ++k) {
        NamedArray a;
        a.name = le::get_str(is);
        const std::uint32_t rank = le::get_u32(is);
        if (rank > 16) throw DataError("array '" + a.name + "' has implausible rank");
        for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(le::get_u64(is));
        const std::size_t n = shape_numel(a.shape);
        a.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) a.values[i] = le::get_f64(is);
        archive.arrays.push_back(std::move(a));
    }
    const std::uint64_t meta = le::get_u64(is);
    archive.metadata.resize(meta);
    is.read(archive.metadata.data(), static_cast<std::streamsize>(meta));
    if (!is) throw DataError("truncated archive metadata");
    return archive;
}

void save_archive(const std::filesystem::path& path, const ArrayArchive& archive) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    write_archive(os, archive);
    if (!os) throw DataError("write failed: " + path.string());
}

ArrayArchive load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());
    return read_archive(is);
}

} // namespace fibro
