#include "msth/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "msth/common.hpp"

namespace msth {

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ConfigError("write_png supports 1 or 3 channels");
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = png_uint_32(img.width);
  pi.height = png_uint_32(img.height);
  pi.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = std::uint8_t(std::lround(std::clamp(img.data[i], 0.f, 1.f) * 255.f));
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw FormatError("cannot write PNG " + path.string() + ": " + pi.message);
}

Image read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw FormatError("cannot read PNG " + path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr))
    throw FormatError("cannot decode PNG " + path.string() + ": " + pi.message);
  Image img{int(pi.width), int(pi.height), 3};
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[i] / 255.f;
  return img;
}

void write_raw(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  const std::uint32_t hdr[3] = {std::uint32_t(img.width), std::uint32_t(img.height),
                                std::uint32_t(img.channels)};
  os.write("MSTI", 4);
  os.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  os.write(reinterpret_cast<const char*>(img.data.data()),
           std::streamsize(img.data.size() * sizeof(float)));
  if (!os) throw FormatError("failed writing " + path.string());
}

Image read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[4];
  std::uint32_t hdr[3];
  if (!is.read(magic, 4) || std::memcmp(magic, "MSTI", 4) != 0)
    throw FormatError(path.string() + ": not a raw float image (bad magic)");
  if (!is.read(reinterpret_cast<char*>(hdr), sizeof hdr))
    throw FormatError(path.string() + ": truncated header");
  if (hdr[0] == 0 || hdr[1] == 0 || hdr[2] == 0 || hdr[0] > 65536 || hdr[1] > 65536 || hdr[2] > 16)
    throw FormatError(path.string() + ": implausible dimensions");
  Image img{int(hdr[0]), int(hdr[1]), int(hdr[2])};
  if (!is.read(reinterpret_cast<char*>(img.data.data()),
               std::streamsize(img.data.size() * sizeof(float))))
    throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

namespace {

void check_same(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ConfigError("image metric on images of different shape");
}

// Separable 11-tap Gaussian filter, valid region only.
std::vector<double> blur(const std::vector<double>& src, int w, int h, const double* k,
                         int& ow, int& oh) {
  constexpr int R = 5;
  ow = w - 2 * R;
  oh = h - 2 * R;
  std::vector<double> tmp(std::size_t(ow) * h), out(std::size_t(ow) * oh);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i <= 2 * R; ++i) s += k[i] * src[std::size_t(y) * w + x + i];
      tmp[std::size_t(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i <= 2 * R; ++i) s += k[i] * tmp[std::size_t(y + i) * ow + x];
      out[std::size_t(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same(a, b);
  double se = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    se += d * d;
  }
  const double mse = se / double(a.data.size());
  if (mse <= 0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b) {
  check_same(a, b);
  if (a.width < 11 || a.height < 11) throw ConfigError("ssim needs images of at least 11x11");
  double k[11], ks = 0;
  for (int i = 0; i < 11; ++i) ks += (k[i] = std::exp(-double((i - 5) * (i - 5)) / (2 * 1.5 * 1.5)));
  for (double& v : k) v /= ks;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int w = a.width, h = a.height;
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(a.pixels()), y(a.pixels()), xx(a.pixels()), yy(a.pixels()), xy(a.pixels());
    for (std::size_t i = 0; i < a.pixels(); ++i) {
      x[i] = a.data[i * a.channels + c];
      y[i] = b.data[i * b.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    int ow, oh;
    auto mx = blur(x, w, h, k, ow, oh), my = blur(y, w, h, k, ow, oh);
    auto sxx = blur(xx, w, h, k, ow, oh), syy = blur(yy, w, h, k, ow, oh),
         sxy = blur(xy, w, h, k, ow, oh);
    double acc = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i],
                   cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + C1) * (2 * cov + C2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    total += acc / double(mx.size());
  }
  return total / a.channels;
}

}  // namespace msth
