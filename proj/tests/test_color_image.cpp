#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "palette_field/color.hpp"
#include "palette_field/image.hpp"
#include "support/fixtures.hpp"

using namespace palette_field;
using palette_field::testing::TempDir;

TEST_CASE("hsv of primaries and grays") {
  Hsv h = rgb_to_hsv({1, 0, 0});
  CHECK(h.h == 0.0);
  CHECK(h.s == 1.0);
  CHECK(h.v == 1.0);
  CHECK(rgb_to_hsv({0, 1, 0}).h == doctest::Approx(120));
  CHECK(rgb_to_hsv({0, 0, 1}).h == doctest::Approx(240));
  CHECK(rgb_to_hsv({0, 1, 1}).h == doctest::Approx(180));
  CHECK(rgb_to_hsv({1, 0, 1}).h == doctest::Approx(300));
  h = rgb_to_hsv({0.4, 0.4, 0.4});
  CHECK(h.h == 0.0);
  CHECK(h.s == 0.0);
  CHECK(h.v == doctest::Approx(0.4));
  CHECK(rgb_to_hsv({0, 0, 0}).s == 0.0);
}

TEST_CASE("hue wrapping") {
  CHECK(wrap_hue(-30) == 330);
  CHECK(wrap_hue(720) == 0);
  CHECK(wrap_hue(360) == 0);
  CHECK(wrap_hue(-360) == 0);
  CHECK(wrap_hue(45.5) == 45.5);
  for (double h : {-1e-18, -1e-300}) {
    const double w = wrap_hue(h);
    CHECK(w >= 0.0);
    CHECK(w < 360.0);
  }
}

TEST_CASE("rgb -> hsv -> rgb round trip over random colors") {
  CounterRng rng(5, 1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 c{rng.uniform(), rng.uniform(), rng.uniform()};
    const Hsv h = rgb_to_hsv(c);
    CHECK(h.h >= 0.0);
    CHECK(h.h < 360.0);
    worst = std::max(worst, norm(hsv_to_rgb(h) - c));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("every 8-bit color survives a zero-delta hsv round trip") {
  int bad = 0;
  for (int r = 0; r < 256; ++r) {
    for (int g = 0; g < 256; ++g) {
      for (int b = 0; b < 256; ++b) {
        const Vec3 c = hsv_to_rgb(rgb_to_hsv({r / 255.0, g / 255.0, b / 255.0}));
        bad += std::lround(c.x * 255) != r || std::lround(c.y * 255) != g || std::lround(c.z * 255) != b;
      }
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("png round trip is exact for 8-bit values") {
  TempDir dir;
  for (int channels : {3, 4}) {
    Image img(7, 5, channels);
    CounterRng rng(channels, 9);
    for (float& v : img.data) v = static_cast<float>(std::floor(rng.uniform() * 256) / 255.0);
    quantize_to_8bit(img);
    const std::string path = (dir / ("i" + std::to_string(channels) + ".png")).string();
    write_png(path, img);
    const Image back = read_png(path);
    CHECK(back.same_shape(img));
    CHECK(back.data == img.data);
  }
}

TEST_CASE("png writing clamps and rounds") {
  TempDir dir;
  Image img(1, 1, 3);
  img.data = {-0.5f, 0.5f, 1.7f};
  write_png((dir / "c.png").string(), img);
  const Image back = read_png((dir / "c.png").string());
  CHECK(back.data == std::vector<float>{0.0f, 128 / 255.0f, 1.0f});
}

TEST_CASE("gray pngs load as rgb") {
  TempDir dir;
  Image img(2, 1, 1);
  img.data = {0.0f, 1.0f};
  write_png((dir / "g.png").string(), img);
  const Image back = read_png((dir / "g.png").string());
  CHECK(back.channels == 3);
  CHECK(back.data == std::vector<float>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("raw images round trip bit-exact") {
  TempDir dir;
  Image img(4, 3, 2);
  CounterRng rng(1, 1);
  for (float& v : img.data) v = static_cast<float>(rng.normal());
  write_raw_image((dir / "x.plti").string(), img);
  const Image back = read_raw_image((dir / "x.plti").string());
  CHECK(back.same_shape(img));
  CHECK(std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0);
}

TEST_CASE("image read errors") {
  TempDir dir;
  CHECK_THROWS_AS(read_png((dir / "missing.png").string()), Error);
  std::ofstream((dir / "bad.png").string()) << "not a png";
  try {
    read_png((dir / "bad.png").string());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDatasetFormat);
  }
  std::ofstream((dir / "bad.plti").string()) << "PLTI";
  CHECK_THROWS_AS(read_raw_image((dir / "bad.plti").string()), Error);
}

TEST_CASE("quantization is idempotent and lands on k/255") {
  Image img(10, 1, 1);
  for (int i = 0; i < 10; ++i) img.data[i] = 0.1f * i + 0.013f;
  quantize_to_8bit(img);
  Image again = img;
  quantize_to_8bit(again);
  CHECK(again.data == img.data);
  for (float v : img.data) CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-4);
}
