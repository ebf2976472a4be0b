#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "lcf/errors.hpp"

namespace lcf::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Little-endian byte sink.
class Writer {
   public:
    template <typename U>
        requires std::is_arithmetic_v<U>
    void put(U v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(U));
    }

    void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }

    const std::vector<unsigned char>& bytes() const { return bytes_; }

   private:
    std::vector<unsigned char> bytes_;
};

/// Bounds-checked little-endian reader that reports byte offsets on failure.
class Reader {
   public:
    explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    template <typename U>
        requires std::is_arithmetic_v<U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    std::string get_bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::string get_string(const char* what) {
        const auto n = get<std::uint32_t>(what);
        return get_bytes(n, what);
    }

    void expect_magic(std::string_view magic) {
        if (bytes_.empty()) throw FormatError("empty file", 0);
        const std::size_t at = pos_;
        if (get_bytes(magic.size(), "magic") != magic) {
            throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", at);
        }
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, pos_); }

   private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated payload while reading ") + what, pos_);
        }
    }

    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace lcf::io
