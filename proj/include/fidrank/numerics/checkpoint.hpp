#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/numerics/parameters.hpp"
#include "fidrank/numerics/tensor.hpp"

// Layout (all integers little-endian):
//   "FIDR"  u32 version
//   u32 header_len  header bytes (UTF-8 key=value lines)
//   u32 record_count
//   per record: u32 name_len, name, u8 dtype (0 = f64, 1 = f32), u32 rank, u64 dims[rank], payload

namespace fidrank::checkpoint {

inline constexpr char kMagic[4] = {'F', 'I', 'D', 'R'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

template <typename T>
constexpr DType dtype_of()
{
    static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>);
    return std::is_same_v<T, double> ? DType::f64 : DType::f32;
}

namespace detail {

template <typename U>
void put_le(std::ostream& out, U value)
{
    static_assert(std::is_unsigned_v<U>);
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    }
    out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in)
{
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw DataError("checkpoint truncated");
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return value;
}

inline std::string get_bytes(std::istream& in, std::size_t n)
{
    std::string s(n, '\0');
    if (n != 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw DataError("checkpoint truncated");
    }
    return s;
}

}  // namespace detail

template <typename T>
void write(std::ostream& out, const std::string& header, const ParameterSet<T>& params)
{
    out.write(kMagic, 4);
    detail::put_le<std::uint32_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.name(i);
        const auto& t = params[i];
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(static_cast<char>(dtype_of<T>()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            detail::put_le<std::uint64_t>(out, d);
        }
        for (T v : t.data()) {
            if constexpr (std::is_same_v<T, double>) {
                detail::put_le(out, std::bit_cast<std::uint64_t>(v));
            } else {
                detail::put_le(out, std::bit_cast<std::uint32_t>(v));
            }
        }
    }
    if (!out) {
        throw DataError("checkpoint write failed");
    }
}

template <typename T>
struct Loaded {
    std::string header;
    ParameterSet<T> params;
};

/// Reads a checkpoint, converting payloads to T when the stored dtype differs.
template <typename T>
Loaded<T> read(std::istream& in)
{
    const std::string magic = detail::get_bytes(in, 4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw DataError("not a FIDR checkpoint");
    }
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Loaded<T> loaded;
    loaded.header = detail::get_bytes(in, detail::get_le<std::uint32_t>(in));
    const auto count = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < count; ++r) {
        std::string name = detail::get_bytes(in, detail::get_le<std::uint32_t>(in));
        const int tag = in.get();
        if (tag != 0 && tag != 1) {
            throw DataError("unknown dtype tag in record '" + name + "'");
        }
        const auto rank = detail::get_le<std::uint32_t>(in);
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(in));
        }
        std::vector<T> data(shape_size(shape));
        for (auto& v : data) {
            if (tag == 0) {
                v = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(in)));
            } else {
                v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(in)));
            }
        }
        loaded.params.add(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
    }
    return loaded;
}

template <typename T>
void save(const std::string& path, const std::string& header, const ParameterSet<T>& params)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    write(out, header, params);
}

template <typename T>
Loaded<T> load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint '" + path + "'");
    }
    return read<T>(in);
}

}  // namespace fidrank::checkpoint
