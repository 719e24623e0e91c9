#pragma once

// Flat binary container of named float64 arrays.
//
//   "SEMCKPT1"                          8-byte magic
//   u32 count
//   count x { u32 name_len, name bytes,
//             u32 ndim, u64 dims[ndim],
//             f64 values[prod(dims)] }   all little-endian, values row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "semcom/error.hpp"

namespace semcom {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct NamedArray {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'M', 'C', 'K', 'P', 'T', '1'};

namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw ConfigError("checkpoint: truncated while reading " + what);
    return v;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        const auto count = std::accumulate(a.shape.begin(), a.shape.end(), std::uint64_t{1}, std::multiplies<>());
        if (count != a.values.size()) throw Error("checkpoint: array " + a.name + " shape does not match its data");
        detail::put(os, static_cast<std::uint32_t>(a.name.size()));
        os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        detail::put(os, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) detail::put(os, d);
        os.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failed for checkpoint " + path.string());
}

inline std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint " + path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw ConfigError("checkpoint: bad magic in " + path.string());
    }
    const auto n = detail::take<std::uint32_t>(is, "array count");
    std::vector<NamedArray> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedArray a;
        const auto len = detail::take<std::uint32_t>(is, "name length");
        if (len > 4096) throw ConfigError("checkpoint: implausible name length");
        a.name.resize(len);
        is.read(a.name.data(), len);
        const auto ndim = detail::take<std::uint32_t>(is, "ndim of " + a.name);
        if (ndim > 8) throw ConfigError("checkpoint: implausible ndim for " + a.name);
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(detail::take<std::uint64_t>(is, "shape of " + a.name));
            count *= a.shape.back();
        }
        if (count > (std::uint64_t{1} << 32)) throw ConfigError("checkpoint: implausible size for " + a.name);
        a.values.resize(count);
        is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw ConfigError("checkpoint: truncated data for " + a.name);
        out.push_back(std::move(a));
    }
    return out;
}

inline const NamedArray& find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    throw ConfigError("checkpoint: missing array " + name);
}

}  // namespace semcom
