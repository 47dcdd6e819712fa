#pragma once

#include <png.h>

#include <array>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "pyrafuse/train/data.hpp"

namespace pyrafuse {

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_png(const std::filesystem::path& path, const std::uint8_t* px, std::size_t h, std::size_t w,
                      png_uint_32 format) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, px, 0, nullptr)) {
    throw PngError("cannot write " + path.string() + ": " + img.message);
  }
}

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, std::size_t& h,
                                          std::size_t& w) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw PngError("cannot read " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw PngError("cannot decode " + path.string() + ": " + img.message);
  }
  h = img.height;
  w = img.width;
  return buf;
}

}  // namespace detail

inline void write_rgb_png(const std::filesystem::path& path, const Image& im) {
  if (im.channels != 3) throw PngError("write_rgb_png: image must have 3 channels");
  detail::write_png(path, im.px.data(), im.h, im.w, PNG_FORMAT_RGB);
}

inline Image read_rgb_png(const std::filesystem::path& path) {
  Image im;
  im.channels = 3;
  im.px = detail::read_png(path, PNG_FORMAT_RGB, im.h, im.w);
  return im;
}

inline void write_label_png(const std::filesystem::path& path, const LabelImage& l) {
  detail::write_png(path, l.ids.data(), l.h, l.w, PNG_FORMAT_GRAY);
}

inline LabelImage read_label_png(const std::filesystem::path& path) {
  LabelImage l;
  l.ids = detail::read_png(path, PNG_FORMAT_GRAY, l.h, l.w);
  return l;
}

/// Fixed class palette for rendered predictions.
inline const std::array<std::array<std::uint8_t, 3>, 20>& palette() {
  static const std::array<std::array<std::uint8_t, 3>, 20> p{{{0, 0, 0},
                                                             {128, 64, 128},
                                                             {244, 35, 232},
                                                             {70, 70, 70},
                                                             {102, 102, 156},
                                                             {190, 153, 153},
                                                             {153, 153, 153},
                                                             {250, 170, 30},
                                                             {220, 220, 0},
                                                             {107, 142, 35},
                                                             {152, 251, 152},
                                                             {70, 130, 180},
                                                             {220, 20, 60},
                                                             {255, 0, 0},
                                                             {0, 0, 142},
                                                             {0, 0, 70},
                                                             {0, 60, 100},
                                                             {0, 80, 100},
                                                             {0, 0, 230},
                                                             {119, 11, 32}}};
  return p;
}

inline Image colorize(const LabelImage& l) {
  Image out = Image::blank(l.h, l.w);
  const auto& p = palette();
  for (std::size_t i = 0; i < l.ids.size(); ++i) {
    const auto& c = p[l.ids[i] % p.size()];
    for (std::size_t k = 0; k < 3; ++k) out.px[i * 3 + k] = c[k];
  }
  return out;
}

}  // namespace pyrafuse
