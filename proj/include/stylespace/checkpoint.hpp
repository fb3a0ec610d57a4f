#pragma once

// Binary tensor container:
//   "STYL" | u8 version (=1) | u32 count |
//   count x ( u16 name_len | name | u8 rank | rank x u32 dim | f32 payload ) |
//   u64 FNV-1a of every preceding byte
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stylespace/errors.hpp"
#include "stylespace/tensor.hpp"

namespace stylespace {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'Y', 'L'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;

    bool operator==(const StoredTensor&) const = default;
};

struct TensorFile {
    std::vector<StoredTensor> tensors;

    const StoredTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

class ByteWriter {
   public:
    void bytes(const void* p, std::size_t n) {
        auto* b = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void uint(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) { uint(std::bit_cast<std::uint32_t>(v), 4); }
    const std::vector<unsigned char>& buffer() const { return buf_; }

   private:
    std::vector<unsigned char> buf_;
};

class ByteReader {
   public:
    ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
    std::size_t remaining() const { return n_ - pos_; }
    bool has(std::size_t k) const { return remaining() >= k; }
    std::uint64_t uint(int width) {
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }
    std::string str(std::size_t k) {
        std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
        pos_ += k;
        return s;
    }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }

   private:
    const unsigned char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_tensor_file(const TensorFile& file) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u8(kCheckpointVersion);
    w.uint(file.tensors.size(), 4);
    for (const auto& t : file.tensors) {
        if (t.name.size() > 0xFFFF) throw ContractError("tensor name too long: " + t.name.substr(0, 40));
        if (t.shape.size() > 0xFF) throw ContractError("tensor rank too large for " + t.name);
        if (shape_numel(t.shape) != t.data.size()) throw DimensionError("stored tensor " + t.name + " size mismatch");
        w.uint(t.name.size(), 2);
        w.bytes(t.name.data(), t.name.size());
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) {
            if (d > 0xFFFFFFFFull) throw ContractError("dimension too large for " + t.name);
            w.uint(d, 4);
        }
        for (float v : t.data) w.f32(v);
    }
    auto bytes = w.buffer();
    std::uint64_t sum = fnv1a(bytes.data(), bytes.size());
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(sum >> (8 * i)));
    return bytes;
}

inline TensorFile decode_tensor_file(const unsigned char* p, std::size_t n) {
    constexpr std::size_t header = 4 + 1 + 4;
    if (n < 5 || std::memcmp(p, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
    if (p[4] != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(p[4]) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    if (n < header + 8) throw FormatError("checkpoint truncated in header");
    detail::ByteReader r(p + 5, n - 5 - 8);  // the trailer is checked separately
    std::uint64_t count = r.uint(4);
    TensorFile file;
    for (std::uint64_t k = 0; k < count; ++k) {
        if (!r.has(2)) throw FormatError("checkpoint truncated before tensor " + std::to_string(k));
        std::size_t name_len = r.uint(2);
        if (!r.has(name_len + 1)) throw FormatError("checkpoint truncated in name of tensor " + std::to_string(k));
        StoredTensor t;
        t.name = r.str(name_len);
        std::size_t rank = r.uint(1);
        if (!r.has(4 * rank)) throw FormatError("checkpoint truncated in dims of tensor '" + t.name + "'");
        std::uint64_t numel = 1;
        for (std::size_t i = 0; i < rank; ++i) {
            t.shape.push_back(r.uint(4));
            numel *= t.shape.back();
        }
        if (numel > r.remaining() / 4) throw FormatError("truncated payload for tensor '" + t.name + "'");
        t.data.resize(numel);
        for (auto& v : t.data) v = r.f32();
        file.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(p[n - 8 + i]) << (8 * i);
    if (stored != fnv1a(p, n - 8)) throw FormatError("checkpoint checksum mismatch");
    return file;
}

inline void write_tensor_file(const std::string& path, const TensorFile& file) {
    auto bytes = encode_tensor_file(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + path);
}

// The header is validated before the rest of the file is read.
inline TensorFile read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    unsigned char head[5];
    if (!in.read(reinterpret_cast<char*>(head), 5)) throw FormatError("not a checkpoint: file too short");
    if (std::memcmp(head, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
    if (head[4] != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(head[4]));
    }
    std::vector<unsigned char> bytes(head, head + 5);
    bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return decode_tensor_file(bytes.data(), bytes.size());
}

}  // namespace stylespace
