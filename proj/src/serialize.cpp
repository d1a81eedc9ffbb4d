#include "s2mf/serialize.hpp"

#include <cstring>
#include <fstream>

namespace s2mf {

void ByteWriter::u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
}

void ByteWriter::str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::f64_vec(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
}

void ByteWriter::i32_vec(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) i32(x);
}

void ByteReader::need(size_t n) {
    if (pos_ + n > size_)
        throw FormatError("unexpected end of data, wanted " + std::to_string(n) + " more bytes",
                          pos_);
}

uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}

uint32_t ByteReader::u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

uint64_t ByteReader::u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

double ByteReader::f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string ByteReader::str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
}

std::vector<double> ByteReader::f64_vec() {
    uint64_t n = u64();
    if (n > remaining() / 8)
        throw FormatError("vector length " + std::to_string(n) + " exceeds remaining data", pos_);
    std::vector<double> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = f64();
    return v;
}

std::vector<int> ByteReader::i32_vec() {
    uint64_t n = u64();
    if (n > remaining() / 4)
        throw FormatError("vector length " + std::to_string(n) + " exceeds remaining data", pos_);
    std::vector<int> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = i32();
    return v;
}

void ByteReader::expect_magic(const char* magic) {
    const size_t start = pos_;
    for (const char* p = magic; *p; ++p) {
        if (pos_ >= size_ || data_[pos_] != static_cast<uint8_t>(*p))
            throw FormatError(std::string("bad magic, expected \"") + magic + "\"", start);
        ++pos_;
    }
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ConfigError("write failed: " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw ConfigError("cannot open: " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw FormatError("short read: " + path, static_cast<size_t>(f.gcount()));
    return bytes;
}

uint64_t fnv1a(const uint8_t* data, size_t n, uint64_t seed) {
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a(const std::string& s) {
    return fnv1a(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

}  // namespace s2mf
