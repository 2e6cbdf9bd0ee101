#include "bags/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace bags {

Tensor read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const std::size_t h = image.height, w = image.width;
  std::vector<Real> data(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        data[(c * h + y) * w + x] = Real(buf[(y * w + x) * 3 + c]) / Real(255);
      }
    }
  }
  return Tensor::from({3, h, w}, std::move(data));
}

void write_png(const std::filesystem::path& path, const Tensor& img) {
  std::size_t c = 1, h = 0, w = 0;
  if (img.dim() == 2) {
    h = img.size(0);
    w = img.size(1);
  } else if (img.dim() == 3 && (img.size(0) == 1 || img.size(0) == 3)) {
    c = img.size(0);
    h = img.size(1);
    w = img.size(2);
  } else {
    throw ShapeError("write_png: unsupported image shape " + to_string(img.shape()));
  }
  std::vector<png_byte> buf(c * h * w);
  auto d = img.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(double(d[(ch * h + y) * w + x]), 0.0, 1.0);
        buf[(y * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace bags
