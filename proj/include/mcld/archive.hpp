#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "mcld/tensor.hpp"

namespace mcld {

// Single-file tensor archive:
//   magic "MCLD" | format_version u32 | metadata (u64 length + UTF-8 JSON)
//   entry count u64 | entries { name (u64 length + bytes), ndim u32,
//   dims u64..., dtype u32 (0=f32, 1=f64, 2=u8), raw payload }
// All integers and payloads little-endian.

constexpr uint32_t kArchiveVersion = 1;
constexpr char kArchiveMagic[4] = {'M', 'C', 'L', 'D'};

enum class ArchiveErrorKind { BadMagic, VersionMismatch, Truncated, Invalid, Io };

class ArchiveError : public std::runtime_error {
public:
    ArchiveError(ArchiveErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ArchiveErrorKind kind() const { return kind_; }

private:
    ArchiveErrorKind kind_;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>, Tensor<uint8_t>>;

inline uint32_t dtype_code(const AnyTensor& t) { return static_cast<uint32_t>(t.index()); }

inline const std::vector<int64_t>& any_shape(const AnyTensor& t) {
    return std::visit([](const auto& x) -> const std::vector<int64_t>& { return x.shape; }, t);
}

inline size_t dtype_size(uint32_t code) {
    switch (code) {
        case 0: return 4;
        case 1: return 8;
        case 2: return 1;
        default: throw ArchiveError(ArchiveErrorKind::Invalid, "archive: unknown dtype code");
    }
}

struct TensorArchive {
    std::map<std::string, AnyTensor> entries;
    std::string metadata;  // UTF-8 JSON blob

    void add(const std::string& name, AnyTensor t) {
        check(!entries.count(name), "archive: duplicate entry name: " + name);
        entries.emplace(name, std::move(t));
    }

    template <class S>
    const Tensor<S>& get(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end())
            throw ArchiveError(ArchiveErrorKind::Invalid, "archive: missing entry: " + name);
        const Tensor<S>* p = std::get_if<Tensor<S>>(&it->second);
        if (!p) throw ArchiveError(ArchiveErrorKind::Invalid, "archive: dtype mismatch: " + name);
        return *p;
    }

    bool has(const std::string& name) const { return entries.count(name) > 0; }
};

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) {
        if (pos + n > buf.size())
            throw ArchiveError(ArchiveErrorKind::Truncated,
                               std::string("archive: truncated while reading ") + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string serialize_archive(const TensorArchive& a) {
    std::string buf;
    buf.append(kArchiveMagic, 4);
    detail::put_u32(buf, kArchiveVersion);
    detail::put_u64(buf, a.metadata.size());
    buf += a.metadata;
    detail::put_u64(buf, a.entries.size());
    for (const auto& [name, t] : a.entries) {
        detail::put_u64(buf, name.size());
        buf += name;
        const auto& shape = any_shape(t);
        detail::put_u32(buf, static_cast<uint32_t>(shape.size()));
        for (int64_t d : shape) detail::put_u64(buf, static_cast<uint64_t>(d));
        detail::put_u32(buf, dtype_code(t));
        std::visit(
            [&](const auto& x) {
                const char* p = reinterpret_cast<const char*>(x.data.data());
                buf.append(p, static_cast<size_t>(x.numel()) * sizeof(x.data[0]));
            },
            t);
    }
    return buf;
}

inline TensorArchive deserialize_archive(const std::string& buf) {
    detail::Reader r{buf};
    std::string magic = r.bytes(4, "magic");
    if (std::memcmp(magic.data(), kArchiveMagic, 4) != 0)
        throw ArchiveError(ArchiveErrorKind::BadMagic, "archive: bad magic");
    uint32_t version = r.u32("version");
    if (version != kArchiveVersion)
        throw ArchiveError(ArchiveErrorKind::VersionMismatch,
                           "archive: version mismatch (file " + std::to_string(version) +
                               ", expected " + std::to_string(kArchiveVersion) + ")");
    TensorArchive a;
    uint64_t meta_len = r.u64("metadata length");
    a.metadata = r.bytes(meta_len, "metadata");
    uint64_t count = r.u64("entry count");
    for (uint64_t e = 0; e < count; ++e) {
        uint64_t name_len = r.u64("entry name length");
        std::string name = r.bytes(name_len, "entry name");
        uint32_t ndim = r.u32("ndim");
        if (ndim > 16) throw ArchiveError(ArchiveErrorKind::Invalid, "archive: ndim too large");
        std::vector<int64_t> shape(ndim);
        uint64_t numel = 1;
        for (uint32_t i = 0; i < ndim; ++i) {
            shape[i] = static_cast<int64_t>(r.u64("dim"));
            numel *= static_cast<uint64_t>(shape[i]);
        }
        uint32_t code = r.u32("dtype");
        size_t payload = numel * dtype_size(code);
        std::string raw = r.bytes(payload, "payload");
        AnyTensor t;
        if (code == 0) {
            Tensor<float> x(shape);
            std::memcpy(x.data.data(), raw.data(), payload);
            t = std::move(x);
        } else if (code == 1) {
            Tensor<double> x(shape);
            std::memcpy(x.data.data(), raw.data(), payload);
            t = std::move(x);
        } else {
            Tensor<uint8_t> x(shape);
            std::memcpy(x.data.data(), raw.data(), payload);
            t = std::move(x);
        }
        a.add(name, std::move(t));
    }
    if (r.pos != buf.size())
        throw ArchiveError(ArchiveErrorKind::Invalid, "archive: trailing bytes after last entry");
    return a;
}

inline void write_archive(const std::string& path, const TensorArchive& a) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArchiveError(ArchiveErrorKind::Io, "archive: cannot open for write: " + path);
    std::string buf = serialize_archive(a);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw ArchiveError(ArchiveErrorKind::Io, "archive: write failed: " + path);
}

inline TensorArchive read_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArchiveError(ArchiveErrorKind::Io, "archive: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_archive(buf);
}

}  // namespace mcld
