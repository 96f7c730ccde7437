#include "cmaseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cmaseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");
static_assert(sizeof(scalar) == 8, "checkpoint scalars are 64-bit");

namespace {

constexpr char kMagic[5] = {'C', 'M', 'A', 'T', '1'};

void write_u64(std::ofstream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

bool read_u64(std::ifstream& is, uint64_t& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return is.gcount() == sizeof(v);
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorCode::io, "cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    for (const auto& [name, tensor] : entries) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(os, tensor.rank());
        for (size_t e : tensor.shape()) write_u64(os, e);
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.size() * sizeof(scalar)));
    }
    os.flush();
    if (!os) fail(ErrorCode::io, "write failure on checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::io, "cannot open checkpoint: " + path);
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(magic));
    if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        fail(ErrorCode::io, "not a CMAT1 checkpoint: " + path);

    std::vector<std::pair<std::string, Tensor>> out;
    uint64_t name_len = 0;
    while (read_u64(is, name_len)) {
        if (name_len > (1ull << 20)) fail(ErrorCode::io, "corrupt checkpoint (name length): " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        uint64_t rank = 0;
        if (static_cast<uint64_t>(is.gcount()) != name_len || !read_u64(is, rank) || rank > 16)
            fail(ErrorCode::io, "corrupt checkpoint (record header): " + path);
        Shape shape(rank);
        for (auto& e : shape) {
            uint64_t v = 0;
            if (!read_u64(is, v)) fail(ErrorCode::io, "corrupt checkpoint (extents): " + path);
            e = v;
        }
        Tensor t = Tensor::uninitialized(shape);
        const std::streamsize bytes = static_cast<std::streamsize>(t.size() * sizeof(scalar));
        is.read(reinterpret_cast<char*>(t.data()), bytes);
        if (is.gcount() != bytes) fail(ErrorCode::io, "corrupt checkpoint (payload): " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace cmaseg
