#pragma once

#include <filesystem>
#include <vector>

namespace msth {

/// Interleaved float image, row-major, values nominally in [0,1].
struct Image {
  int width = 0, height = 0, channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.f) {}
  std::size_t pixels() const { return std::size_t(width) * height; }
  float& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }
};

/// 8-bit PNG; 1 channel is written as gray, 3 as RGB. Values are clamped.
void write_png(const std::filesystem::path& path, const Image& img);
/// Always returns 3 channels in [0,1].
Image read_png(const std::filesystem::path& path);

/// Raw float dump: "MSTI", width, height, channels (u32 LE), then floats.
void write_raw(const std::filesystem::path& path, const Image& img);
Image read_raw(const std::filesystem::path& path);

/// -10 log10(MSE), 99 for identical images.
double psnr(const Image& a, const Image& b);
/// Mean SSIM over channels, 11x11 Gaussian window (sigma 1.5), valid region.
double ssim(const Image& a, const Image& b);
inline double d_ssim(const Image& a, const Image& b) { return (1.0 - ssim(a, b)) / 2.0; }

}  // namespace msth
