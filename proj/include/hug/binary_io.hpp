#pragma once

#include "hug/types.hpp"

#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>
#include <type_traits>

// Little-endian host assumed; checkpoints are not portable to big-endian machines.
namespace hug::binary {

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    static_assert(std::is_trivially_copyable_v<T>);
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw ParseError("unexpected end of binary data");
    return value;
}

inline void put_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream& in, std::string_view magic) {
    char buf[4] = {};
    in.read(buf, 4);
    if (in.gcount() != 4 || std::memcmp(buf, magic.data(), 4) != 0)
        throw ParseError("bad magic, expected " + std::string(magic));
}

}  // namespace hug::binary
