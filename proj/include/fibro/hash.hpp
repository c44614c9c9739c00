#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace fibro {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull);

/// splitmix64 finalizer; used to derive independent seeds.
std::uint64_t mix64(std::uint64_t x);

/// Derive a child seed from a parent seed and a sequence of tags.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

std::string hex64(std::uint64_t v);

} // namespace fibro
