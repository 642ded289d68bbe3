#include "coronagan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace coronagan {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void write_raw_png(const std::filesystem::path& path, int width, int height, int color_type,
                   const std::vector<std::uint8_t>& bytes, int channels) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed encoder settings so identical pixels give identical bytes.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(r) * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

RawImage read_raw_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  RawImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bytes.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r) {
    rows[r] = img.bytes.data() + static_cast<std::size_t>(r) * img.width * img.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::uint8_t quantize(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(255.0f * clamped));
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::kOct ? "oct" : "histology"; }

Domain parse_domain(const std::string& s) {
  if (s == "oct") return Domain::kOct;
  if (s == "histology") return Domain::kHistology;
  throw ValidationError("unknown domain '" + s + "' (expected oct or histology)");
}

SegmentationMask SegmentationMask::crop(int row, int col, int height, int width) const {
  if (row < 0 || col < 0 || row + height > height_ || col + width > width_) {
    throw ShapeError("mask crop outside bounds");
  }
  SegmentationMask out(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) out.at(r, c) = at(row + r, col + c);
  }
  return out;
}

ImageTensor crop(const ImageTensor& image, int row, int col, int height, int width) {
  if (row < 0 || col < 0 || row + height > image.h() || col + width > image.w()) {
    throw ShapeError("image crop outside bounds of " + image.shape().str());
  }
  ImageTensor out(image.n(), image.c(), height, width);
  for (int n = 0; n < image.n(); ++n) {
    for (int c = 0; c < image.c(); ++c) {
      for (int r = 0; r < height; ++r) {
        for (int q = 0; q < width; ++q) out(n, c, r, q) = image(n, c, row + r, col + q);
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.n() != 1 || (image.c() != 1 && image.c() != 3)) {
    throw ShapeError("write_png: expected [1,1|3,H,W], got " + image.shape().str());
  }
  const int ch = image.c();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.h()) * image.w() * ch);
  for (int r = 0; r < image.h(); ++r) {
    for (int q = 0; q < image.w(); ++q) {
      for (int c = 0; c < ch; ++c) {
        bytes[(static_cast<std::size_t>(r) * image.w() + q) * ch + c] =
            quantize(image(0, c, r, q));
      }
    }
  }
  write_raw_png(path, image.w(), image.h(), ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                bytes, ch);
}

ImageTensor read_png(const std::filesystem::path& path) {
  const RawImage raw = read_raw_png(path);
  ImageTensor image(1, raw.channels, raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r) {
    for (int q = 0; q < raw.width; ++q) {
      for (int c = 0; c < raw.channels; ++c) {
        image(0, c, r, q) =
            raw.bytes[(static_cast<std::size_t>(r) * raw.width + q) * raw.channels + c] / 255.0f;
      }
    }
  }
  return image;
}

void write_mask_png(const std::filesystem::path& path, const SegmentationMask& mask) {
  write_raw_png(path, mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, mask.labels(), 1);
}

SegmentationMask read_mask_png(const std::filesystem::path& path) {
  RawImage raw = read_raw_png(path);
  if (raw.channels != 1) throw IoError("mask must be single-channel: " + path.string());
  SegmentationMask mask(raw.height, raw.width);
  mask.labels() = std::move(raw.bytes);
  return mask;
}

ImageTensor montage(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw ShapeError("montage of zero images");
  const int h = images.front().h();
  int total_w = 0;
  for (const auto& im : images) {
    if (im.h() != h) throw ShapeError("montage images must share a height");
    total_w += im.w();
  }
  ImageTensor out(1, 3, h, total_w);
  int offset = 0;
  for (const auto& im : images) {
    for (int c = 0; c < 3; ++c) {
      const int src_c = im.c() == 1 ? 0 : c;
      for (int r = 0; r < h; ++r) {
        for (int q = 0; q < im.w(); ++q) out(0, c, r, offset + q) = im(0, src_c, r, q);
      }
    }
    offset += im.w();
  }
  return out;
}

}  // namespace coronagan
