#pragma once

// Binary checkpoint:
//   "MXPT" u32 version
//   u32 len, config JSON
//   u64 step, u64 optimizer step
//   u32 len, rng state (text form)
//   u32 count, then per block: u32 len, name, u32 rows, u32 cols, f32 LE values
// Integers are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mixpretrain/errors.hpp"
#include "mixpretrain/tensor.hpp"

namespace mixpretrain {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlock {
    std::string name;
    Matrix<float> value;
};

struct Checkpoint {
    std::string config_json;
    std::uint64_t step = 0;
    std::uint64_t optimizer_step = 0;
    std::string rng_state;
    std::vector<NamedBlock> blocks;

    const NamedBlock* find(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return &b;
        return nullptr;
    }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& o, const std::string& s) {
    put_u32(o, static_cast<std::uint32_t>(s.size()));
    o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class U>
U get_pod(std::istream& in, const std::string& what) {
    U v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (in.gcount() != sizeof v) throw IoError("checkpoint truncated while reading " + what);
    return v;
}
inline std::string get_str(std::istream& in, const std::string& what) {
    const auto n = get_pod<std::uint32_t>(in, what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (static_cast<std::uint32_t>(in.gcount()) != n) throw IoError("checkpoint truncated while reading " + what);
    return s;
}

}  // namespace detail

inline std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream s;
    s << rng;
    return s.str();
}
inline std::mt19937_64 rng_from_string(const std::string& state) {
    std::mt19937_64 rng;
    std::istringstream s(state);
    s >> rng;
    if (!s) throw IoError("corrupt rng state in checkpoint");
    return rng;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw IoError("cannot write " + path.string());
    o.write("MXPT", 4);
    detail::put_u32(o, kCheckpointVersion);
    detail::put_str(o, ck.config_json);
    detail::put_u64(o, ck.step);
    detail::put_u64(o, ck.optimizer_step);
    detail::put_str(o, ck.rng_state);
    detail::put_u32(o, static_cast<std::uint32_t>(ck.blocks.size()));
    for (const auto& b : ck.blocks) {
        detail::put_str(o, b.name);
        detail::put_u32(o, static_cast<std::uint32_t>(b.value.rows()));
        detail::put_u32(o, static_cast<std::uint32_t>(b.value.cols()));
        o.write(reinterpret_cast<const char*>(b.value.data()), static_cast<std::streamsize>(b.value.size() * 4));
    }
    if (!o) throw IoError("short write on " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "MXPT", 4) != 0) throw IoError(path.string() + " is not a checkpoint");
    const auto version = detail::get_pod<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.config_json = detail::get_str(in, "config");
    ck.step = detail::get_pod<std::uint64_t>(in, "step");
    ck.optimizer_step = detail::get_pod<std::uint64_t>(in, "optimizer step");
    ck.rng_state = detail::get_str(in, "rng state");
    const auto count = detail::get_pod<std::uint32_t>(in, "block count");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedBlock b;
        b.name = detail::get_str(in, "block name");
        const auto rows = detail::get_pod<std::uint32_t>(in, b.name);
        const auto cols = detail::get_pod<std::uint32_t>(in, b.name);
        b.value = Matrix<float>(rows, cols);
        in.read(reinterpret_cast<char*>(b.value.data()), static_cast<std::streamsize>(b.value.size() * 4));
        if (static_cast<std::size_t>(in.gcount()) != b.value.size() * 4)
            throw IoError("checkpoint truncated in block '" + b.name + "'");
        ck.blocks.push_back(std::move(b));
    }
    return ck;
}

}  // namespace mixpretrain
