#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "esk/error.hpp"

// Little-endian scalar encoding shared by the ESKF/ESKM/ESKS/ESKE formats.
namespace esk::binio {

template <typename T>
void put(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw FormatError("unexpected end of file");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), magic.size()); }

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!is.read(got.data(), got.size()) || got != magic)
        throw FormatError("bad magic: expected '" + std::string(magic) + "'");
}

// u32 length prefix followed by raw bytes.
inline void put_string(std::ostream& os, std::string_view s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), s.size());
}

inline std::string get_string(std::istream& is, std::uint32_t max_len = 1u << 20) {
    auto n = get<std::uint32_t>(is);
    if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw FormatError("unexpected end of file");
    return s;
}

}  // namespace esk::binio
