#pragma once

#include "fei3d/error.hpp"

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fei3d::binary {

// Little-endian writers/readers shared by the checkpoint, dataset and asset
// containers.

class Writer {
public:
    void bytes(std::string_view raw) { out_.insert(out_.end(), raw.begin(), raw.end()); }

    template <typename T>
    void uint(T value) {
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
        }
    }

    void f64(double value) { uint(std::bit_cast<std::uint64_t>(value)); }

    [[nodiscard]] const std::vector<std::uint8_t> &data() const noexcept { return out_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t> &data, std::string_view what) : data_(data), what_(what) {}

    [[nodiscard]] std::size_t offset() const noexcept { return pos_; }
    [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }

    void need(std::size_t n, std::string_view field) const {
        if (remaining() < n) {
            throw Error(ErrorKind::format, std::string(what_) + " truncated at byte offset " + std::to_string(pos_) +
                                               ": need " + std::to_string(n) + " bytes for " + std::string(field) +
                                               ", " + std::to_string(remaining()) + " left");
        }
    }

    std::string bytes(std::size_t n, std::string_view field) {
        need(n, field);
        std::string s(reinterpret_cast<const char *>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    template <typename T>
    T uint(std::string_view field) {
        need(sizeof(T), field);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    double f64(std::string_view field) { return std::bit_cast<double>(uint<std::uint64_t>(field)); }

    [[noreturn]] void fail(const std::string &message) const {
        throw Error(ErrorKind::format, std::string(what_) + " at byte offset " + std::to_string(pos_) + ": " + message);
    }

    void expect_end() const {
        if (remaining() != 0) {
            fail(std::to_string(remaining()) + " trailing bytes");
        }
    }

private:
    const std::vector<std::uint8_t> &data_;
    std::string_view what_;
    std::size_t pos_ = 0;
};

}  // namespace fei3d::binary
