#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace msa2 {

// Interleaved H x W x channels image with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, 0.0) {}

    double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

// H x W grid of class labels, 0 = background.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return labels.size(); }

    bool operator==(const LabelMap&) const = default;
};

// 8-bit PNG I/O. Images are written as RGB (3 channels) or grayscale (1);
// masks as single-channel 8-bit label images.
Image read_image_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Image& image);
LabelMap read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const LabelMap& mask);

}  // namespace msa2
