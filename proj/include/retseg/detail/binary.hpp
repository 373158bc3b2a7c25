#pragma once

#include "retseg/core.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>
#include <type_traits>

// Little-endian fixed-width binary helpers shared by the model, embedding and
// pool file formats. The host is assumed little-endian.
namespace retseg::detail {

using Magic = std::array<char, 8>;

inline void write_magic(std::ostream& out, const Magic& magic)
{
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, const Magic& magic, std::string_view what)
{
    Magic got{};
    in.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!in || got != magic) throw Error("bad magic bytes: not a " + std::string(what) + " file");
}

template <typename T>
void write_pod(std::ostream& out, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in)
{
    static_assert(std::is_trivially_copyable_v<T>);
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw Error("unexpected end of file");
    return value;
}

}  // namespace retseg::detail
