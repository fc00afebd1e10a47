#include <gtest/gtest.h>

#include <png.h>

#include <cmath>

#include "mlsr/error.hpp"
#include "mlsr/image.hpp"
#include "test_util.hpp"

using namespace mlsr;
using testutil::random_image;

namespace {

// Direct 2-D evaluation of Keys bicubic (a = -0.5): every output pixel sums
// 16 clamped source taps with product weights.
double keys_ref(double t) {
  t = std::fabs(t);
  if (t < 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
  if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
  return 0;
}

double bicubic_ref(const Image& in, double scale, int ox, int oy, int c) {
  const double sx = (ox + 0.5) / scale - 0.5, sy = (oy + 0.5) / scale - 0.5;
  const int bx = static_cast<int>(std::floor(sx)), by = static_cast<int>(std::floor(sy));
  double acc = 0;
  for (int j = by - 1; j <= by + 2; ++j) {
    for (int i = bx - 1; i <= bx + 2; ++i) {
      const int cx = std::min(std::max(i, 0), in.width() - 1), cy = std::min(std::max(j, 0), in.height() - 1);
      acc += keys_ref(sx - i) * keys_ref(sy - j) * in.at(cx, cy, c);
    }
  }
  return acc;
}

}  // namespace

TEST(Image, ClampsAndValidates) {
  Image img(2, 1, 1, std::vector<float>{-0.5f, 1.5f});
  EXPECT_EQ(img.at(0, 0, 0), 0.0f);
  EXPECT_EQ(img.at(1, 0, 0), 1.0f);
  EXPECT_THROW(Image(0, 2, 3), ContractError);
  EXPECT_THROW(Image(2, 2, 2), ContractError);
  EXPECT_THROW(Image(2, 2, 1, std::vector<float>(3)), ContractError);
  img.set(0, 0, 0, 7.0f);
  EXPECT_EQ(img.at(0, 0, 0), 1.0f);
}

TEST(Png, RoundTripWithinQuantization) {
  testutil::TempDir dir("png");
  for (int c : {1, 3}) {
    const Image img = random_image(13, 7, c, 11 + static_cast<std::uint64_t>(c));
    save_png(img, dir.file("a.png"));
    const Image back = load_png(dir.file("a.png"));
    ASSERT_EQ(back.width(), 13);
    ASSERT_EQ(back.height(), 7);
    ASSERT_EQ(back.channels(), c);
    for (std::size_t i = 0; i < img.pixels().size(); ++i) {
      EXPECT_LE(std::abs(back.pixels()[i] - img.pixels()[i]), 0.5 / 255.0 + 1e-7);
    }
  }
}

TEST(Png, BlackRoundTripsExactly) {
  testutil::TempDir dir("png");
  const Image black(9, 4, 3, 0.0f);
  save_png(black, dir.file("b.png"));
  EXPECT_EQ(load_png(dir.file("b.png")), black);
}

TEST(Png, SixteenBitScaling) {
  testutil::TempDir dir("png");
  // Written with libpng's simplified API, independently of save_png.
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = 3;
  desc.height = 1;
  desc.format = PNG_FORMAT_LINEAR_Y;
  const png_uint_16 px[3] = {0, 1000, 65535};
  ASSERT_TRUE(png_image_write_to_file(&desc, dir.file("g16.png").c_str(), 0, px, 0, nullptr));
  const Image img = load_png(dir.file("g16.png"));
  ASSERT_EQ(img.channels(), 1);
  EXPECT_FLOAT_EQ(img.at(0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(img.at(1, 0, 0), static_cast<float>(1000.0 / 65535.0));
  EXPECT_FLOAT_EQ(img.at(2, 0, 0), 1.0f);
}

TEST(Png, ErrorsNamePath) {
  testutil::TempDir dir("png");
  try {
    load_png(dir.file("missing.png"));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.png"), std::string::npos);
  }
  testutil::write_file(dir.file("junk.png"), "not a png at all");
  EXPECT_THROW(load_png(dir.file("junk.png")), IoError);
  // Truncated PNG: valid signature, broken body.
  save_png(random_image(8, 8, 3, 1), dir.file("ok.png"));
  const std::string bytes = testutil::read_file(dir.file("ok.png"));
  testutil::write_file(dir.file("trunc.png"), bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_png(dir.file("trunc.png")), IoError);
}

TEST(Bicubic, ConstantPreserved) {
  const Image img(10, 6, 3, 0.37f);
  for (Ratio r : {Ratio{1, 2}, Ratio{2, 1}, Ratio{3, 1}, Ratio{4, 1}, Ratio{2, 3}}) {
    const Image out = bicubic_resize(img, r);
    for (float v : out.pixels()) EXPECT_NEAR(v, 0.37f, 1e-6);
  }
}

TEST(Bicubic, UnitScaleIsIdentity) {
  const Image img = random_image(9, 7, 3, 3);
  const Image out = bicubic_resize(img, Ratio{1, 1});
  for (std::size_t i = 0; i < img.pixels().size(); ++i) EXPECT_NEAR(out.pixels()[i], img.pixels()[i], 1e-6);
}

TEST(Bicubic, RampHalfMatchesDirectReference) {
  std::vector<float> px(64);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) px[static_cast<std::size_t>(y * 8 + x)] = static_cast<float>(x) / 7.0f;
  const Image ramp(8, 8, 1, px);
  const Image out = bicubic_resize(ramp, Ratio{1, 2});
  ASSERT_EQ(out.width(), 4);
  ASSERT_EQ(out.height(), 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double ref = std::clamp(bicubic_ref(ramp, 0.5, x, y, 0), 0.0, 1.0);
      EXPECT_NEAR(out.at(x, y, 0), ref, 1e-4) << x << "," << y;
    }
}

TEST(Bicubic, RandomUpAndDownMatchDirectReference) {
  const Image img = random_image(11, 9, 3, 5, 0.2, 0.8);
  for (auto [r, s] : {std::pair{Ratio{2, 1}, 2.0}, std::pair{Ratio{1, 3}, 1.0 / 3.0}, std::pair{Ratio{3, 2}, 1.5}}) {
    const Image out = bicubic_resize(img, r);
    ASSERT_EQ(out.width(), static_cast<int>(std::lround(11 * s)));
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        for (int c = 0; c < 3; ++c)
          EXPECT_NEAR(out.at(x, y, c), std::clamp(bicubic_ref(img, s, x, y, c), 0.0, 1.0), 1e-5);
  }
}

TEST(Bicubic, RoundTripSmokeBound) {
  // Smooth content stands in for a natural image.
  std::vector<float> px(48 * 48 * 3);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x)
      for (int c = 0; c < 3; ++c)
        px[static_cast<std::size_t>((y * 48 + x) * 3 + c)] =
            static_cast<float>(0.5 + 0.3 * std::sin(0.2 * x + c) * std::cos(0.15 * y));
  const Image img(48, 48, 3, px);
  const Image back = bicubic_resize(bicubic_resize(img, Ratio{1, 2}), Ratio{2, 1});
  double mad = 0;
  int n = 0;
  for (int y = 4; y < 44; ++y)
    for (int x = 4; x < 44; ++x)
      for (int c = 0; c < 3; ++c, ++n) mad += std::abs(back.at(x, y, c) - img.at(x, y, c));
  EXPECT_LE(mad / n, 0.08);
}

TEST(Bicubic, DegenerateOutputIsContractError) {
  EXPECT_THROW(bicubic_resize(Image(1, 1, 1), Ratio{1, 4}), ContractError);
  EXPECT_THROW(bicubic_resize(Image(4, 4, 1), Ratio{0, 1}), ContractError);
}

TEST(Patch, ExactCrops) {
  const Image img = random_image(6, 5, 3, 8);
  EXPECT_EQ(extract_patch(img, 0, 0, 6, 5), img);
  const Image p = extract_patch(img, 0, 0, 1, 1);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(p.at(0, 0, c), img.at(0, 0, c));
  const Image q = extract_patch(img, 2, 1, 3, 2);
  EXPECT_EQ(q.at(2, 1, 1), img.at(4, 2, 1));
  EXPECT_THROW(extract_patch(img, 4, 0, 3, 1), ContractError);
  EXPECT_THROW(extract_patch(img, -1, 0, 1, 1), ContractError);
  EXPECT_THROW(extract_patch(img, 0, 0, 0, 1), ContractError);
}

TEST(Patch, RandomPatchIsSeeded) {
  const Image img = random_image(20, 17, 3, 9);
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(random_patch(img, 6, a), random_patch(img, 6, b));
  Rng c(1);
  EXPECT_THROW(random_patch(img, 18, c), ContractError);
}

TEST(TensorLayout, RoundTripAndClamp) {
  const Image img = random_image(5, 4, 3, 10);
  const auto t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape4{1, 3, 4, 5}));
  EXPECT_EQ(t(0, 2, 3, 1), img.at(1, 3, 2));
  EXPECT_EQ(tensor_to_image(t), img);
  Tensor<float> over({1, 1, 1, 2}, std::vector<float>{1.5f, -0.25f});
  const Image o = tensor_to_image(over);
  EXPECT_EQ(o.at(0, 0, 0), 1.0f);
  EXPECT_EQ(o.at(1, 0, 0), 0.0f);
  EXPECT_THROW(tensor_to_image(Tensor<float>({2, 3, 2, 2})), ContractError);
}
