#include "palette_field/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "palette_field/common.hpp"

namespace palette_field {

namespace {

constexpr char kRawMagic[4] = {'P', 'L', 'T', 'I'};
constexpr uint32_t kRawVersion = 1;

uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void no_flush(png_structp) {}

}  // namespace

Image read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw Error(ErrorKind::kDatasetFormat, "cannot open image " + path);
  uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorKind::kDatasetFormat, "not a PNG file: " + path);
  }
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  g.info = png_create_info_struct(g.png);
  if (!g.png || !g.info) throw Error(ErrorKind::kIo, "libpng init failed");
  if (setjmp(png_jmpbuf(g.png))) throw Error(ErrorKind::kDatasetFormat, "corrupt PNG: " + path);
  png_init_io(g.png, fp.get());
  png_set_sig_bytes(g.png, 8);
  png_read_info(g.png, g.info);

  const int color_type = png_get_color_type(g.png, g.info);
  const int bit_depth = png_get_bit_depth(g.png, g.info);
  if (bit_depth == 16) png_set_strip_16(g.png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(g.png);
  }
  png_read_update_info(g.png, g.info);

  const int width = static_cast<int>(png_get_image_width(g.png, g.info));
  const int height = static_cast<int>(png_get_image_height(g.png, g.info));
  const int channels = png_get_channels(g.png, g.info);
  std::vector<uint8_t> raw(static_cast<size_t>(width) * height * channels);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * width * channels;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);

  Image img(width, height, channels);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

std::vector<uint8_t> encode_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3 && image.channels != 4) {
    throw Error(ErrorKind::kInvalidArgument, "PNG needs 1, 3 or 4 channels");
  }
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  g.info = png_create_info_struct(g.png);
  if (!g.png || !g.info) throw Error(ErrorKind::kIo, "libpng init failed");
  std::vector<uint8_t> out;
  std::vector<uint8_t> raw(image.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(image.data[i]);
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = raw.data() + static_cast<size_t>(y) * image.width * image.channels;
  }
  if (setjmp(png_jmpbuf(g.png))) throw Error(ErrorKind::kIo, "PNG encode failed");
  png_set_write_fn(g.png, &out, append_bytes, no_flush);
  const int color_type = image.channels == 1   ? PNG_COLOR_TYPE_GRAY
                         : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                               : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(g.png, g.info, image.width, image.height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  png_write_image(g.png, rows.data());
  png_write_end(g.png, nullptr);
  return out;
}

void write_png(const std::string& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_raw_image(const std::string& path, const Image& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path);
  const uint32_t header[4] = {kRawVersion, static_cast<uint32_t>(image.width),
                              static_cast<uint32_t>(image.height),
                              static_cast<uint32_t>(image.channels)};
  f.write(kRawMagic, 4);
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  f.write(reinterpret_cast<const char*>(image.data.data()),
          static_cast<std::streamsize>(image.data.size() * sizeof(float)));
}

Image read_raw_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot open " + path);
  char magic[4];
  uint32_t header[4];
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!f || std::memcmp(magic, kRawMagic, 4) != 0 || header[0] != kRawVersion) {
    throw Error(ErrorKind::kIo, "bad PLTI header in " + path);
  }
  Image img(static_cast<int>(header[1]), static_cast<int>(header[2]), static_cast<int>(header[3]));
  f.read(reinterpret_cast<char*>(img.data.data()),
         static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!f) throw Error(ErrorKind::kIo, "truncated PLTI payload in " + path);
  return img;
}

void quantize_to_8bit(Image& image) {
  for (float& v : image.data) v = static_cast<float>(to_byte(v)) / 255.0f;
}

}  // namespace palette_field
