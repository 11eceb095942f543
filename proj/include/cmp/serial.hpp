#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cmp/error.hpp"

namespace cmp {

// Little-endian primitive readers/writers shared by the CMPP and CMPR file
// formats. Streams are byte-oriented; multi-byte integers and floats are
// written LSB first regardless of host order.

namespace detail {

template <typename T>
void write_le_bytes(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le_bytes(std::istream& in, const char* what) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw TruncatedError(std::string("truncated while reading ") + what);
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace detail

inline void write_u8(std::ostream& out, std::uint8_t v) { detail::write_le_bytes(out, v); }
inline void write_u16(std::ostream& out, std::uint16_t v) { detail::write_le_bytes(out, v); }
inline void write_u32(std::ostream& out, std::uint32_t v) { detail::write_le_bytes(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { detail::write_le_bytes(out, v); }
inline void write_f32(std::ostream& out, float v) { detail::write_le_bytes(out, v); }
inline void write_f64(std::ostream& out, double v) { detail::write_le_bytes(out, v); }

inline std::uint8_t read_u8(std::istream& in, const char* what) { return detail::read_le_bytes<std::uint8_t>(in, what); }
inline std::uint16_t read_u16(std::istream& in, const char* what) { return detail::read_le_bytes<std::uint16_t>(in, what); }
inline std::uint32_t read_u32(std::istream& in, const char* what) { return detail::read_le_bytes<std::uint32_t>(in, what); }
inline std::uint64_t read_u64(std::istream& in, const char* what) { return detail::read_le_bytes<std::uint64_t>(in, what); }
inline float read_f32(std::istream& in, const char* what) { return detail::read_le_bytes<float>(in, what); }
inline double read_f64(std::istream& in, const char* what) { return detail::read_le_bytes<double>(in, what); }

inline void write_bytes(std::ostream& out, const std::vector<std::uint8_t>& bytes) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void read_bytes(std::istream& in, std::vector<std::uint8_t>& bytes, std::size_t n, const char* what) {
    bytes.resize(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!in) throw TruncatedError(std::string("truncated while reading ") + what);
}

}  // namespace cmp
