#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace palette_field {

// Float image, interleaved channels, row-major, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// PNG decode to [0,1] floats (k/255). Gray is expanded to RGB; RGBA keeps 4 channels.
Image read_png(const std::string& path);

// Values are clamped to [0,1] and scaled by 255 with rounding; no gamma transform.
void write_png(const std::string& path, const Image& image);
std::vector<uint8_t> encode_png(const Image& image);

// Raw little-endian f32 image with a `PLTI` header (magic, version, width, height, channels).
void write_raw_image(const std::string& path, const Image& image);
Image read_raw_image(const std::string& path);

// Rounds every value to the nearest k/255, the storage precision of PNG inputs.
void quantize_to_8bit(Image& image);

}  // namespace palette_field
