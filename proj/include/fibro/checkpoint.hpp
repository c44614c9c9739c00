#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fibro/tensor.hpp"

namespace fibro {

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

/// Versioned flat binary of named f64 arrays:
///
///   magic "FIBROARR" (8 bytes) | u32 version | u64 array count
///   per array: u32 name length | name bytes | u32 rank | u64 dims[rank]
///              | f64 payload[product(dims)]
///   u64 metadata length | metadata bytes (free-form, may be empty)
///
/// All integers and floats are little-endian regardless of host order.
inline constexpr char kArrayMagic[8] = {'F', 'I', 'B', 'R', 'O', 'A', 'R', 'R'};
inline constexpr std::uint32_t kArrayFormatVersion = 1;

struct ArrayArchive {
    std::vector<NamedArray> arrays;
    std::string metadata;
};

void write_archive(std::ostream& os, const ArrayArchive& archive);
ArrayArchive read_archive(std::istream& is);

void save_archive(const std::filesystem::path& path, const ArrayArchive& archive);
ArrayArchive load_archive(const std::filesystem::path& path);

namespace le {

void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f64(std::ostream& os, double v);
void put_str(std::ostream& os, const std::string& s);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
double get_f64(std::istream& is);
std::string get_str(std::istream& is);

} // namespace le

} // namespace fibro
