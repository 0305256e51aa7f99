#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "dualad/core/error.hpp"
#include "dualad/core/types.hpp"

namespace dualad::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and written without byte swapping");

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Incremental SHA-256.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(const void* data, std::size_t size) {
        EVP_DigestUpdate(ctx_, data, size);
        return *this;
    }
    Sha256& update(std::string_view s) {
        // Length-prefix so that ("ab","c") and ("a","bc") differ.
        const std::uint64_t n = s.size();
        update(&n, sizeof n);
        return update(s.data(), s.size());
    }

    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, digest, &len);
        static constexpr char kHex[] = "0123456789abcdef";
        std::string out;
        out.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(kHex[digest[i] >> 4]);
            out.push_back(kHex[digest[i] & 0xf]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::span<const std::byte> bytes) {
    return Sha256{}.update(bytes.data(), bytes.size()).hex();
}

inline std::vector<std::byte> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> buf(size);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) throw DataError("short read on " + path.string());
    return buf;
}

/// Write-temp-then-rename so readers never observe a partial file.
inline void atomic_write(const fs::path& path, std::span<const std::byte> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline void atomic_write(const fs::path& path, std::string_view text) {
    atomic_write(path, std::as_bytes(std::span(text.data(), text.size())));
}

inline void write_json(const fs::path& path, const json& j) {
    atomic_write(path, j.dump(2) + "\n");
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

/// Row-major float32 bytes of a matrix.
inline std::vector<std::byte> to_f32_bytes(const Matrix& m) {
    std::vector<std::byte> out(static_cast<std::size_t>(m.size()) * sizeof(float));
    auto* dst = reinterpret_cast<float*>(out.data());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            *dst++ = static_cast<float>(m(r, c));
    return out;
}

inline Matrix from_f32_bytes(std::span<const std::byte> bytes, Eigen::Index rows, Eigen::Index cols) {
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(float))
        throw DataError("float32 array size does not match its shape");
    Matrix m(rows, cols);
    const auto* src = reinterpret_cast<const float*>(bytes.data());
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = *src++;
    return m;
}

// ---------------------------------------------------------------------------
// Named float64 arrays with shape headers.
//
//   "DUALADA1" | u32 version | u32 count |
//   count x ( u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)] )
//
// Data is row-major.
// ---------------------------------------------------------------------------

struct NamedArray {
    std::vector<std::uint64_t> shape;
    std::vector<double> data;
};

inline constexpr char kArchiveMagic[8] = {'D', 'U', 'A', 'L', 'A', 'D', 'A', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

class ArrayArchive {
public:
    void put(const std::string& name, const Matrix& m) {
        NamedArray a;
        a.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
        a.data.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) a.data.push_back(m(r, c));
        arrays_[name] = std::move(a);
    }
    void put(const std::string& name, const Vector& v) {
        NamedArray a;
        a.shape = {static_cast<std::uint64_t>(v.size())};
        a.data.assign(v.data(), v.data() + v.size());
        arrays_[name] = std::move(a);
    }

    [[nodiscard]] bool contains(const std::string& name) const { return arrays_.contains(name); }

    [[nodiscard]] const NamedArray& at(const std::string& name) const {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw DataError("array '" + name + "' missing from archive");
        return it->second;
    }

    [[nodiscard]] Matrix matrix(const std::string& name) const {
        const auto& a = at(name);
        if (a.shape.size() != 2) throw DataError("array '" + name + "' is not 2-D");
        Matrix m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
        std::size_t i = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.data[i++];
        return m;
    }

    [[nodiscard]] Vector vector(const std::string& name) const {
        const auto& a = at(name);
        if (a.shape.size() != 1) throw DataError("array '" + name + "' is not 1-D");
        return Eigen::Map<const Vector>(a.data.data(), static_cast<Eigen::Index>(a.data.size()));
    }

    [[nodiscard]] const std::map<std::string, NamedArray>& arrays() const { return arrays_; }

    [[nodiscard]] std::vector<std::byte> serialize() const {
        std::vector<std::byte> out;
        auto append = [&out](const void* p, std::size_t n) {
            const auto* b = static_cast<const std::byte*>(p);
            out.insert(out.end(), b, b + n);
        };
        append(kArchiveMagic, sizeof kArchiveMagic);
        append(&kArchiveVersion, sizeof kArchiveVersion);
        const auto count = static_cast<std::uint32_t>(arrays_.size());
        append(&count, sizeof count);
        for (const auto& [name, a] : arrays_) {
            const auto name_len = static_cast<std::uint32_t>(name.size());
            append(&name_len, sizeof name_len);
            append(name.data(), name.size());
            const auto ndim = static_cast<std::uint32_t>(a.shape.size());
            append(&ndim, sizeof ndim);
            append(a.shape.data(), a.shape.size() * sizeof(std::uint64_t));
            append(a.data.data(), a.data.size() * sizeof(double));
        }
        return out;
    }

    static ArrayArchive deserialize(std::span<const std::byte> bytes) {
        std::size_t pos = 0;
        auto take = [&](void* dst, std::size_t n) {
            if (pos + n > bytes.size()) throw DataError("array archive truncated");
            std::memcpy(dst, bytes.data() + pos, n);
            pos += n;
        };
        char magic[8];
        take(magic, sizeof magic);
        if (std::memcmp(magic, kArchiveMagic, sizeof magic) != 0)
            throw DataError("not an array archive (bad magic)");
        std::uint32_t version = 0;
        take(&version, sizeof version);
        if (version != kArchiveVersion)
            throw DataError("unsupported array archive version " + std::to_string(version));
        std::uint32_t count = 0;
        take(&count, sizeof count);
        ArrayArchive archive;
        for (std::uint32_t i = 0; i < count; ++i) {
            std::uint32_t name_len = 0;
            take(&name_len, sizeof name_len);
            std::string name(name_len, '\0');
            take(name.data(), name_len);
            std::uint32_t ndim = 0;
            take(&ndim, sizeof ndim);
            NamedArray a;
            a.shape.resize(ndim);
            take(a.shape.data(), ndim * sizeof(std::uint64_t));
            std::uint64_t numel = 1;
            for (auto d : a.shape) numel *= d;
            if (numel > (bytes.size() - pos) / sizeof(double)) throw DataError("array archive truncated");
            a.data.resize(numel);
            take(a.data.data(), numel * sizeof(double));
            archive.arrays_[std::move(name)] = std::move(a);
        }
        if (pos != bytes.size()) throw DataError("trailing bytes in array archive");
        return archive;
    }

    void save(const fs::path& path) const { atomic_write(path, serialize()); }
    static ArrayArchive load(const fs::path& path) { return deserialize(read_bytes(path)); }

private:
    std::map<std::string, NamedArray> arrays_;
};

} // namespace dualad::io
