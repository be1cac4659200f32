#pragma once

// Little-endian scalar encoding shared by the checkpoint and raw tensor
// formats. Independent of host byte order.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "dbal/errors.hpp"

namespace dbal::detail {

inline void write_u64(std::ostream& out, std::uint64_t value, int bytes = 8) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    out.write(buf, bytes);
}

inline void write_f64(std::ostream& out, double value) {
    write_u64(out, std::bit_cast<std::uint64_t>(value));
}

inline std::uint64_t read_u64(std::istream& in, const std::string& what, int bytes = 8) {
    unsigned char buf[8] = {};
    if (!in.read(reinterpret_cast<char*>(buf), bytes)) {
        throw LoadError("truncated " + what);
    }
    std::uint64_t value = 0;
    for (int i = 0; i < bytes; ++i) value |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return value;
}

inline double read_f64(std::istream& in, const std::string& what) {
    return std::bit_cast<double>(read_u64(in, what));
}

}  // namespace dbal::detail
