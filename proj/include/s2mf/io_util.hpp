#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "s2mf/dreaming.hpp"
#include "s2mf/trainer.hpp"

namespace s2mf {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// JSON-lines metrics sink; every record carries the config hash and seed
class JsonlWriter {
public:
    JsonlWriter(const std::string& path, uint64_t config_hash, uint64_t seed, bool append = true);
    void epoch(const EpochRecord& r);
    void event(const std::string& kind, const std::map<std::string, std::string>& fields);

private:
    std::ofstream out_;
    std::string prefix_;
};

// 8-bit PNG writer (zlib-compressed); grayscale (channels=1) or rgb (3)
void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& pixels, const std::string& comment = "");

// Tiles a dream batch into one PNG for visual inspection: image inputs
// become a grid of images, vector inputs a strip of one row per dream.
// Values are normalized to [0,255] over the set.
void write_dream_grid_png(const std::string& path, const DreamSet& dreams,
                          const InputSpec& input, uint64_t config_hash, uint64_t seed);

std::string hash_hex(uint64_t h);

}  // namespace s2mf
