#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "gaitprint/errors.hpp"

namespace gaitprint::binio {

static_assert(std::endian::native == std::endian::little, "binary caches assume a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_arithmetic_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    static_assert(std::is_arithmetic_v<T>);
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw DataError("binary stream truncated");
    return value;
}

inline void put_string16(std::ostream& out, const std::string& s) {
    if (s.size() > UINT16_MAX) throw DataError("string too long for binary record");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string16(std::istream& in) {
    auto len = get<std::uint16_t>(in);
    std::string s(len, '\0');
    if (len && !in.read(s.data(), len)) throw DataError("binary stream truncated");
    return s;
}

inline void put_magic(std::ostream& out, const char (&magic)[5], std::uint8_t version) {
    out.write(magic, 4);
    put<std::uint8_t>(out, version);
}

inline void expect_magic(std::istream& in, const char (&magic)[5], std::uint8_t version) {
    char got[4];
    if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
        throw DataError(std::string("bad magic, expected ") + magic);
    }
    auto v = get<std::uint8_t>(in);
    if (v != version) throw DataError("unsupported binary version " + std::to_string(v));
}

}  // namespace gaitprint::binio
