#include "s2mf/io_util.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "s2mf/serialize.hpp"

namespace s2mf {

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << text;
    if (!f) throw ConfigError("write failed: " + path);
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw ConfigError("cannot create directory " + path + ": " + ec.message());
}

std::string hash_hex(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out += '\\';
            out += c;
        } else if (c == '\n') {
            out += "\\n";
        } else {
            out += c;
        }
    }
    return out;
}

}  // namespace

JsonlWriter::JsonlWriter(const std::string& path, uint64_t config_hash, uint64_t seed, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw ConfigError("cannot open metrics file: " + path);
    prefix_ = "\"config_hash\":\"" + hash_hex(config_hash) + "\",\"seed\":" + std::to_string(seed);
}

void JsonlWriter::epoch(const EpochRecord& r) {
    out_ << "{" << prefix_ << ",\"kind\":\"epoch\",\"phase\":\"" << json_escape(r.phase)
         << "\",\"task\":" << r.task << ",\"epoch\":" << r.epoch << ",\"train_loss\":"
         << r.train_loss << ",\"train_acc\":" << r.train_acc << "}\n";
    out_.flush();
}

void JsonlWriter::event(const std::string& kind, const std::map<std::string, std::string>& fields) {
    out_ << "{" << prefix_ << ",\"kind\":\"" << json_escape(kind) << "\"";
    for (const auto& [k, v] : fields)
        out_ << ",\"" << json_escape(k) << "\":\"" << json_escape(v) << "\"";
    out_ << "}\n";
    out_.flush();
}

namespace {

void png_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    auto push_u32 = [&](uint32_t v) {
        out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
        out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
        out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
        out.push_back(static_cast<uint8_t>(v & 0xff));
    };
    push_u32(static_cast<uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + crc_start,
                            static_cast<uInt>(out.size() - crc_start));
    push_u32(static_cast<uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& pixels, const std::string& comment) {
    if (channels != 1 && channels != 3)
        throw ContractError("write_png: only grayscale and rgb are supported");
    if (pixels.size() != static_cast<size_t>(width) * height * channels)
        throw ShapeError("write_png: pixel buffer does not match dimensions");

    // filter byte 0 per scanline, then one zlib stream
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * channels));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = pixels.data() + static_cast<size_t>(y) * width * channels;
        raw.insert(raw.end(), row, row + static_cast<size_t>(width) * channels);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw NumericError("write_png: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    auto push_be = [&](uint32_t v) {
        ihdr.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
        ihdr.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
        ihdr.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
        ihdr.push_back(static_cast<uint8_t>(v & 0xff));
    };
    push_be(static_cast<uint32_t>(width));
    push_be(static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png_chunk(out, "IHDR", ihdr);
    if (!comment.empty()) {
        std::vector<uint8_t> text;
        const std::string keyword = "Comment";
        text.insert(text.end(), keyword.begin(), keyword.end());
        text.push_back(0);
        text.insert(text.end(), comment.begin(), comment.end());
        png_chunk(out, "tEXt", text);
    }
    png_chunk(out, "IDAT", compressed);
    png_chunk(out, "IEND", {});
    write_file(path, out);
}

void write_dream_grid_png(const std::string& path, const DreamSet& dreams, const InputSpec& input,
                          uint64_t config_hash, uint64_t seed) {
    const Tensor& x = dreams.inputs;
    double lo = 1e300, hi = -1e300;
    for (double v : x.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    auto to_byte = [&](double v) {
        return static_cast<uint8_t>(std::clamp(255.0 * (v - lo) / span, 0.0, 255.0));
    };
    const std::string comment = "task=" + std::to_string(dreams.task) +
                                " config_hash=" + hash_hex(config_hash) +
                                " seed=" + std::to_string(seed);

    if (input.image) {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int cols =
            std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
        const int rows = (n + cols - 1) / cols;
        const int channels = c >= 3 ? 3 : 1;
        const int gap = 2;
        const int gw = cols * (w + gap) - gap;
        const int gh = rows * (h + gap) - gap;
        std::vector<uint8_t> pixels(static_cast<size_t>(gw) * gh * channels, 32);
        for (int i = 0; i < n; ++i) {
            const int gy = (i / cols) * (h + gap);
            const int gx = (i % cols) * (w + gap);
            for (int ch = 0; ch < channels; ++ch)
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx) {
                        const double v =
                            x.values[((static_cast<size_t>(i) * c + ch) * h + yy) * w + xx];
                        pixels[(static_cast<size_t>(gy + yy) * gw + gx + xx) * channels + ch] =
                            to_byte(v);
                    }
        }
        write_png(path, gw, gh, channels, pixels, comment);
    } else {
        // one row of pixels per dream sample
        const int dim = x.dim(0), n = x.dim(1);
        std::vector<uint8_t> pixels(static_cast<size_t>(dim) * n);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < dim; ++i)
                pixels[static_cast<size_t>(j) * dim + i] = to_byte(x.at(i, j));
        write_png(path, dim, n, 1, pixels, comment);
    }
}

}  // namespace s2mf
