#pragma once

// Little-endian byte codec shared by every MPSI1 payload kind.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "mpsi/embedding_store.hpp"
#include "mpsi/errors.hpp"

namespace mpsi::codec {

inline constexpr std::uint8_t magic[4] = {0x4D, 0x50, 0x53, 0x49};
inline constexpr std::uint8_t version = 0x01;
inline constexpr std::size_t preamble_bytes = 8;

class Writer {
public:
    explicit Writer(PayloadKind kind) {
        bytes_.insert(bytes_.end(), std::begin(magic), std::end(magic));
        bytes_.push_back(version);
        bytes_.push_back(static_cast<std::uint8_t>(kind));
        bytes_.push_back(0);
        bytes_.push_back(0);
    }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

    void f32s(std::span<const double> vs) {
        for (double v : vs) f32(v);
    }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, PayloadKind expected) : bytes_(bytes) {
        if (bytes_.size() < preamble_bytes || std::memcmp(bytes_.data(), magic, 4) != 0) {
            throw FormatError("MPSI1: bad magic");
        }
        if (bytes_[4] != version) throw FormatError("MPSI1: unsupported version " + std::to_string(bytes_[4]));
        kind_ = bytes_[5];
        if (bytes_[6] != 0 || bytes_[7] != 0) throw FormatError("MPSI1: reserved bytes must be zero");
        if (kind_ != static_cast<std::uint8_t>(expected) && expected != any_kind) {
            throw FormatError("MPSI1: payload kind " + std::to_string(kind_) + ", expected " +
                              std::to_string(static_cast<int>(expected)));
        }
        pos_ = preamble_bytes;
    }

    static constexpr PayloadKind any_kind = static_cast<PayloadKind>(0);

    std::uint8_t kind() const { return kind_; }
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    std::uint32_t u32() {
        need(4, "header field");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    /// Reads `count` f32 values; the caller has already checked the size via require_floats.
    std::vector<double> f32s(std::size_t count) {
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t at = pos_;
            const float f = std::bit_cast<float>(u32());
            if (!std::isfinite(f)) throw DataError("MPSI1: non-finite value at byte offset " + std::to_string(at));
            out[i] = static_cast<double>(f);
        }
        return out;
    }

    void require_floats(std::uint64_t count) const {
        const std::uint64_t need_bytes = count * 4;
        if (need_bytes > remaining()) {
            throw TruncationError("MPSI1: header declares " + std::to_string(need_bytes) + " payload bytes, only " +
                                  std::to_string(remaining()) + " present");
        }
    }

    std::string str() {
        const std::uint32_t n = u32();
        need(n, "label");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void finish() const {
        if (pos_ != bytes_.size()) {
            throw FormatError("MPSI1: " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
        }
    }

private:
    void need(std::size_t n, const char* what) const {
        if (n > remaining()) throw TruncationError(std::string("MPSI1: truncated ") + what);
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::uint8_t kind_ = 0;
};

}  // namespace mpsi::codec
