#include "iseg/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace iseg {

namespace {

constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

void get_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    check(static_cast<std::size_t>(is.gcount()) == n, "tensor file: truncated");
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    get_bytes(is, b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    get_bytes(is, b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

void expect_magic(std::istream& is, const char* magic) {
    char got[4];
    get_bytes(is, got, 4);
    check(std::memcmp(got, magic, 4) == 0,
          std::string("bad magic, expected ") + magic);
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
    check(t.defined(), "save_tensor: undefined tensor");
    put_bytes(os, "IATW", 4);
    put_u32(os, kTensorVersion);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t i = 0; i < t.rank(); ++i) put_u64(os, static_cast<std::uint64_t>(t.dim(i)));
    for (double v : t.data()) put_f64(os, v);
}

Tensor load_tensor(std::istream& is) {
    expect_magic(is, "IATW");
    const std::uint32_t version = get_u32(is);
    check(version == kTensorVersion, "tensor file: unsupported version " + std::to_string(version));
    const std::uint32_t rank = get_u32(is);
    check(rank <= 8, "tensor file: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<std::int64_t>(get_u64(is));
    const std::int64_t n = shape_numel(shape);
    check(n >= 0 && n < (1LL << 32), "tensor file: implausible element count");
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = get_f64(is);
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "save_tensor_file: cannot open " + path);
    save_tensor(os, t);
    os.flush();
    check(os.good(), "save_tensor_file: write failed for " + path);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "load_tensor_file: cannot open " + path);
    return load_tensor(is);
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "save_checkpoint: cannot open " + path);
    put_bytes(os, "IATC", 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, c.step);
    put_u64(os, c.config_text.size());
    put_bytes(os, c.config_text.data(), c.config_text.size());
    put_u64(os, c.entries.size());
    for (const auto& [name, t] : c.entries) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        put_bytes(os, name.data(), name.size());
        save_tensor(os, t);
    }
    os.flush();
    check(os.good(), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "load_checkpoint: cannot open " + path);
    expect_magic(is, "IATC");
    const std::uint32_t version = get_u32(is);
    check(version == kCheckpointVersion,
          "checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    c.step = get_u64(is);
    const std::uint64_t cfg_len = get_u64(is);
    check(cfg_len < (1ULL << 24), "checkpoint: implausible config length");
    c.config_text.resize(cfg_len);
    if (cfg_len) get_bytes(is, c.config_text.data(), cfg_len);
    const std::uint64_t count = get_u64(is);
    check(count < (1ULL << 20), "checkpoint: implausible entry count");
    c.entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is);
        check(name_len < (1U << 16), "checkpoint: implausible name length");
        std::string name(name_len, '\0');
        if (name_len) get_bytes(is, name.data(), name_len);
        c.entries.emplace_back(std::move(name), load_tensor(is));
    }
    return c;
}

}  // namespace iseg
