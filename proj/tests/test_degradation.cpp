#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "mlsr/degradation.hpp"
#include "mlsr/error.hpp"
#include "test_util.hpp"

using namespace mlsr;
using testutil::random_image;

namespace {

int refl(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// out(oy, ox) = sum_{u,v} k(r+u, r+v) * in(s*oy - u, s*ox - v), reflected.
double downsample_ref(const Image& in, const SRKernel& k, int s, int ox, int oy, int c) {
  const int r = k.size / 2;
  double acc = 0;
  for (int u = -r; u <= r; ++u)
    for (int v = -r; v <= r; ++v)
      acc += static_cast<double>(k.weights[static_cast<std::size_t>((r + u) * k.size + (r + v))]) *
             in.at(refl(s * ox - v, in.width()), refl(s * oy - u, in.height()), c);
  return acc;
}

void expect_kernel_invariants(const SRKernel& k) {
  double sum = 0, mx = 0, my = 0;
  const int r = k.radius();
  for (int i = 0; i < k.size; ++i)
    for (int j = 0; j < k.size; ++j) {
      const double w = k.at(i, j);
      ASSERT_GE(w, 0.0);
      sum += w;
      my += w * (i - r);
      mx += w * (j - r);
    }
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_LE(std::hypot(mx, my), 0.5);
}

}  // namespace

TEST(Kernel, GeneratedIsDeterministicAndValid) {
  EXPECT_EQ(generate_random_kernel(7), generate_random_kernel(7));
  EXPECT_NE(generate_random_kernel(7), generate_random_kernel(8));
  for (std::uint64_t s = 0; s < 200; ++s) {
    const SRKernel k = generate_random_kernel(s);
    EXPECT_EQ(k.size, 5);
    expect_kernel_invariants(k);
  }
}

TEST(Kernel, IsotropicIsRotationSymmetric) {
  for (double sigma : {0.5, 1.2, 2.0}) {
    const SRKernel k = generate_random_kernel(3, 5, {sigma, sigma});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) EXPECT_NEAR(k.at(i, j), k.at(j, 4 - i), 1e-6);
  }
}

TEST(Kernel, AnisotropicOrientation) {
  // theta = 0: sigma1 along x, so the horizontal spread is wider.
  const SRKernel k = gaussian_kernel(5, 2.0, 0.5, 0.0);
  EXPECT_GT(k.at(2, 0), k.at(0, 2));
  const SRKernel rot = gaussian_kernel(5, 2.0, 0.5, std::numbers::pi / 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(k.at(i, j), rot.at(j, i), 1e-6);
  EXPECT_THROW(generate_random_kernel(1, 5, {2.0, 1.0}), ContractError);
  EXPECT_THROW(gaussian_kernel(4, 1.0, 1.0, 0.0), ContractError);
}

TEST(KernelDownsample, DeltaUnitScaleIsIdentity) {
  const Image img = random_image(9, 8, 3, 1);
  EXPECT_EQ(apply_kernel_downsample(img, delta_kernel(1), 1), img);
  EXPECT_EQ(apply_kernel_downsample(img, delta_kernel(5), 1), img);
}

TEST(KernelDownsample, ConstantImage) {
  const Image img(12, 10, 3, 0.42f);
  const Image out = apply_kernel_downsample(img, generate_random_kernel(5), 2);
  EXPECT_EQ(out.width(), 6);
  EXPECT_EQ(out.height(), 5);
  for (float v : out.pixels()) EXPECT_NEAR(v, 0.42f, 1e-6);
}

TEST(KernelDownsample, MatchesNaiveLoop) {
  const Image img = random_image(12, 12, 3, 2);
  const SRKernel k = generate_random_kernel(11);
  const Image out = apply_kernel_downsample(img, k, 2);
  ASSERT_EQ(out.width(), 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(x, y, c), downsample_ref(img, k, 2, x, y, c), 1e-5);
}

TEST(KernelDownsample, IsConvolutionNotCorrelation) {
  // A one-hot off-centre kernel shifts content; the flip decides the direction.
  SRKernel k{3, std::vector<float>(9, 0.0f)};
  k.weights[5] = 1.0f;  // row 1, col 2
  std::vector<float> px(5 * 5);
  for (int i = 0; i < 25; ++i) px[static_cast<std::size_t>(i)] = static_cast<float>(i) / 25.0f;
  const Image img(5, 5, 1, px);
  const Image out = apply_kernel_downsample(img, k, 1);
  // out(x) = in(x - 1): reads the left neighbour.
  EXPECT_FLOAT_EQ(out.at(2, 2, 0), img.at(1, 2, 0));
}

TEST(KernelDownsample, CommutesWithOffset) {
  const Image base = random_image(10, 10, 3, 3, 0.1, 0.6);
  std::vector<float> shifted = base.pixels();
  for (float& v : shifted) v += 0.25f;
  const SRKernel k = generate_random_kernel(4);
  const Image a = apply_kernel_downsample(base, k, 2);
  const Image b = apply_kernel_downsample(Image(10, 10, 3, shifted), k, 2);
  for (std::size_t i = 0; i < a.pixels().size(); ++i) EXPECT_NEAR(b.pixels()[i], a.pixels()[i] + 0.25f, 1e-5);
}

TEST(KernelDownsample, TooSmallIsContractError) {
  EXPECT_THROW(apply_kernel_downsample(Image(3, 3, 1), generate_random_kernel(1), 2), ContractError);
  EXPECT_THROW(apply_kernel_downsample(Image(1, 8, 1), delta_kernel(1), 2), ContractError);
}

TEST(TaskSample, ShapesAndCrop) {
  const Image hr = random_image(64, 64, 3, 4);
  const TaskSample t = make_task_sample(hr, std::nullopt, 2);
  EXPECT_EQ(t.lr.width(), 32);
  EXPECT_EQ(t.lr.height(), 32);
  EXPECT_EQ(t.lr_down.width(), 16);
  EXPECT_EQ(t.lr_down.height(), 16);
  const TaskSample odd = make_task_sample(random_image(67, 50, 3, 5), std::nullopt, 2);
  EXPECT_EQ(odd.hr.width(), 64);
  EXPECT_EQ(odd.hr.height(), 48);
  EXPECT_EQ(odd.crop_x, 1);
  EXPECT_EQ(odd.crop_y, 1);
  const TaskSample s3 = make_task_sample(random_image(40, 40, 3, 6), std::nullopt, 3);
  EXPECT_EQ(s3.hr.width(), 36);
  EXPECT_EQ(s3.lr.width(), 12);
  EXPECT_EQ(s3.lr_down.width(), 4);
}

TEST(TaskSample, SameOperatorAtBothLevels) {
  const Image hr = random_image(48, 48, 3, 7);
  KernelSpec spec;
  spec.mode = KernelMode::random_gaussian;
  spec.seed = 99;
  const TaskSample t = make_task_sample(hr, spec, 2);
  ASSERT_TRUE(t.kernel.has_value());
  EXPECT_EQ(*t.kernel, generate_random_kernel(99));
  EXPECT_EQ(t.lr, apply_kernel_downsample(t.hr, *t.kernel, 2));
  EXPECT_EQ(t.lr_down, apply_kernel_downsample(t.lr, *t.kernel, 2));
  const TaskSample b = make_task_sample(hr, KernelSpec{}, 2);
  EXPECT_EQ(b.lr, bicubic_resize(b.hr, Ratio{1, 2}));
  EXPECT_EQ(b.lr_down, bicubic_resize(b.lr, Ratio{1, 2}));
  // Deterministic.
  const TaskSample again = make_task_sample(hr, spec, 2);
  EXPECT_EQ(again.lr_down, t.lr_down);
}

TEST(TaskSample, ConstantStaysConstant) {
  const Image hr(32, 32, 3, 0.6f);
  for (const auto& k : {std::optional<SRKernel>{}, std::optional<SRKernel>{generate_random_kernel(2)}}) {
    const TaskSample t = make_task_sample(hr, k, 2);
    for (float v : t.lr.pixels()) EXPECT_NEAR(v, 0.6f, 1e-6);
    for (float v : t.lr_down.pixels()) EXPECT_NEAR(v, 0.6f, 1e-6);
  }
}

TEST(KernelFile, RoundTrip) {
  testutil::TempDir dir("kernel");
  const SRKernel k = generate_random_kernel(21);
  save_kernel(k, dir.file("k.txt"));
  const SRKernel back = load_kernel(dir.file("k.txt"));
  ASSERT_EQ(back.size, k.size);
  for (std::size_t i = 0; i < k.weights.size(); ++i) EXPECT_NEAR(back.weights[i], k.weights[i], 1e-8);
  EXPECT_EQ(back, k);  // 9 significant digits pin a float exactly
  EXPECT_EQ(testutil::read_file(dir.file("k.txt")).substr(0, 13), "SRKERNEL 1 5\n");
}

TEST(KernelFile, DeltaFileIsIdentityAtUnitScale) {
  testutil::TempDir dir("kernel");
  testutil::write_file(dir.file("d.txt"), "SRKERNEL 1 3\n0 0 0\n0 1 0\n0 0 0\n");
  const Image img = random_image(7, 6, 3, 8);
  EXPECT_EQ(apply_kernel_downsample(img, load_kernel(dir.file("d.txt")), 1), img);
}

TEST(KernelFile, ParseErrorsCarryLineNumbers) {
  testutil::TempDir dir("kernel");
  auto message = [&](const std::string& body) -> std::string {
    testutil::write_file(dir.file("bad.txt"), body);
    try {
      load_kernel(dir.file("bad.txt"));
    } catch (const ParseError& e) {
      return e.what();
    }
    return "no error";
  };
  const std::string rows = message("SRKERNEL 1 3\n0 0 0\n0 1 0\n");
  EXPECT_NE(rows.find("expected 3 rows, found 2"), std::string::npos) << rows;
  const std::string extra = message("SRKERNEL 1 1\n1\n0\n");
  EXPECT_NE(extra.find("expected 1 rows, found 2"), std::string::npos) << extra;
  const std::string cols = message("SRKERNEL 1 3\n0 0 0\n0 1\n0 0 0\n");
  EXPECT_NE(cols.find(":3:"), std::string::npos) << cols;
  EXPECT_NE(message("KERNEL 1 3\n").find(":1:"), std::string::npos);
  EXPECT_NE(message("SRKERNEL 1 3\n0 x 0\n0 1 0\n0 0 0\n").find("bad number"), std::string::npos);
  EXPECT_THROW(load_kernel(dir.file("nope.txt")), IoError);
}
