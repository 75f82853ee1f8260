#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace planesam::io {

// Decoded PNG. Samples are stored unpacked, one uint16 per channel value,
// regardless of the file's bit depth.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> samples;
};

PngImage read_png(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
               const std::vector<std::uint16_t>& samples);

}  // namespace planesam::io
