#include "fassl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "fassl/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

namespace fassl::ckpt {

namespace {
constexpr char kMagic[4] = {'F', 'A', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("checkpoint truncated");
}
}  // namespace

void save_checkpoint(const graph::ParamSet& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(params.count()));
    for (const auto& [name, arr] : params) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint32_t>(arr.shape.size()));
        for (std::size_t d : arr.shape) write_pod(out, static_cast<std::uint64_t>(d));
        for (double v : arr.data) write_pod(out, static_cast<float>(v));
    }
    if (!out) throw FormatError("short write: " + path);
}

graph::ParamSet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic in " + path);
    std::uint32_t version, count;
    read_pod(in, version);
    if (version != kVersion) throw FormatError("unsupported checkpoint version");
    read_pod(in, count);

    graph::ParamSet params;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len;
        read_pod(in, name_len);
        if (name_len == 0 || name_len > 4096) throw FormatError("implausible name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw FormatError("checkpoint truncated");
        std::uint32_t rank;
        read_pod(in, rank);
        if (rank > 8) throw FormatError("implausible array rank");
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (auto& d : shape) {
            std::uint64_t v;
            read_pod(in, v);
            d = static_cast<std::size_t>(v);
            total *= d;
        }
        if (total > (1ull << 30)) throw FormatError("implausible array size");
        std::vector<double> data(total);
        for (auto& v : data) {
            float f;
            read_pod(in, f);
            v = static_cast<double>(f);
        }
        params.add(name, std::move(shape), std::move(data));
    }
    return params;
}

}  // namespace fassl::ckpt
