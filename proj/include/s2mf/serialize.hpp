#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2mf/errors.hpp"

namespace s2mf {

// Little-endian byte packing, independent of host endianness. All container
// files (checkpoints, streams, dreams, bases) are built from these.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v);
    void u64(uint64_t v);
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f64(double v);
    void str(const std::string& s);
    void f64_vec(const std::vector<double>& v);
    void i32_vec(const std::vector<int>& v);

    const std::vector<uint8_t>& bytes() const { return buf_; }
    std::vector<uint8_t>& bytes() { return buf_; }

private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : data_(v.data()), size_(v.size()) {}

    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    int32_t i32() { return static_cast<int32_t>(u32()); }
    double f64();
    std::string str();
    std::vector<double> f64_vec();
    std::vector<int> i32_vec();

    size_t offset() const { return pos_; }
    size_t remaining() const { return size_ - pos_; }
    void expect_magic(const char* magic);

private:
    void need(size_t n);
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::string& path);

// FNV-1a, used for config and checkpoint identity hashes
uint64_t fnv1a(const uint8_t* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a(const std::string& s);

}  // namespace s2mf
