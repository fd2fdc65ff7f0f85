#include "esdmr/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace esdmr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

ImageBuffer read_png(std::FILE* fp, const std::string& path) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: allocation failed");
  }

  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: failed to decode " + path);
  }

  png_init_io(png, fp);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int out_depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: unsupported channel count in " + path);
  }

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = raw.data() + rowbytes * static_cast<std::size_t>(y);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.max_value = out_depth == 16 ? 65535 : 255;
  img.samples.resize(static_cast<std::size_t>(width) * height * channels);
  const std::size_t count = img.samples.size();
  if (out_depth == 16) {
    for (std::size_t i = 0; i < count; ++i) {  // network byte order in file
      img.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) img.samples[i] = raw[i];
  }
  return img;
}

int pnm_next_int(std::FILE* fp, const std::string& path) {
  int c;
  for (;;) {
    c = std::fgetc(fp);
    if (c == '#') {
      while (c != EOF && c != '\n') c = std::fgetc(fp);
    } else if (c != EOF && !std::isspace(c)) {
      break;
    } else if (c == EOF) {
      throw std::runtime_error("pnm: truncated header in " + path);
    }
  }
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = std::fgetc(fp);
  }
  return value;
}

ImageBuffer read_pnm(std::FILE* fp, const std::string& path) {
  const int p = std::fgetc(fp);
  const int kind = std::fgetc(fp);
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6')) {
    throw std::runtime_error("pnm: unsupported format in " + path);
  }
  ImageBuffer img;
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  img.width = pnm_next_int(fp, path);
  img.height = pnm_next_int(fp, path);
  img.max_value = pnm_next_int(fp, path);
  if (img.width < 1 || img.height < 1 || img.max_value < 1 ||
      img.max_value > 65535) {
    throw std::runtime_error("pnm: bad header in " + path);
  }
  const std::size_t count =
      static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(count);

  if (kind == '2' || kind == '3') {
    for (std::size_t i = 0; i < count; ++i) {
      img.samples[i] = static_cast<std::uint16_t>(pnm_next_int(fp, path));
    }
    return img;
  }
  // Binary payload starts after exactly one whitespace byte (consumed by the
  // last header read).
  const bool wide = img.max_value > 255;
  for (std::size_t i = 0; i < count; ++i) {
    const int hi = std::fgetc(fp);
    if (hi == EOF) throw std::runtime_error("pnm: truncated data in " + path);
    if (wide) {
      const int lo = std::fgetc(fp);
      if (lo == EOF) throw std::runtime_error("pnm: truncated data in " + path);
      img.samples[i] = static_cast<std::uint16_t>((hi << 8) | lo);
    } else {
      img.samples[i] = static_cast<std::uint16_t>(hi);
    }
  }
  return img;
}

void write_png(const std::string& path, int width, int height, int channels,
               const std::uint8_t* pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open for writing: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: allocation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(pixels + rowbytes * static_cast<std::size_t>(y));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageBuffer read_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image: " + path);
  unsigned char magic[2] = {0, 0};
  if (std::fread(magic, 1, 2, fp.get()) != 2) {
    throw std::runtime_error("cannot read image header: " + path);
  }
  std::rewind(fp.get());
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png(fp.get(), path);
  if (magic[0] == 'P') return read_pnm(fp.get(), path);
  throw std::runtime_error("unsupported image format (not PNG/PNM): " + path);
}

void write_png_gray8(const std::string& path, int width, int height,
                     const std::uint8_t* pixels) {
  write_png(path, width, height, 1, pixels);
}

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::uint8_t* pixels) {
  write_png(path, width, height, 3, pixels);
}

}  // namespace esdmr
