#pragma once

// SR degradation kernels and the (HR, LR, LR-down) task triplets built from them.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlsr/error.hpp"
#include "mlsr/image.hpp"
#include "mlsr/random.hpp"

namespace mlsr {

/// Normalized square blur kernel (odd size, nonnegative, unit sum).
struct SRKernel {
  int size = 1;
  std::vector<float> weights{1.0f};

  float at(int row, int col) const noexcept { return weights[static_cast<std::size_t>(row) * size + col]; }
  int radius() const noexcept { return size / 2; }

  friend bool operator==(const SRKernel&, const SRKernel&) = default;
};

inline SRKernel delta_kernel(int size = 1) {
  SRKernel k{size, std::vector<float>(static_cast<std::size_t>(size) * size, 0.0f)};
  k.weights[static_cast<std::size_t>(size / 2) * size + size / 2] = 1.0f;
  return k;
}

enum class KernelMode { bicubic, random_gaussian, from_file };

struct KernelSpec {
  KernelMode mode = KernelMode::bicubic;
  std::uint64_t seed = 0;
  std::array<double, 2> sigma_range{0.35, 2.0};
  std::string path;

  void validate() const {
    if (sigma_range[0] > sigma_range[1]) throw ConfigError("kernel sigma range requires lo <= hi");
    if (mode == KernelMode::random_gaussian && !(sigma_range[0] > 0.0)) {
      throw ConfigError("kernel sigma range requires lo > 0");
    }
    if (mode == KernelMode::from_file && path.empty()) throw ConfigError("kernel mode 'file' requires a path");
  }
};

// Disjoint kernel seed ranges, 38k/1k/1k.
struct SeedRange {
  std::uint64_t begin;
  std::uint64_t end;
  std::uint64_t size() const noexcept { return end - begin; }
  std::uint64_t at(std::uint64_t i) const noexcept { return begin + i % size(); }
};
inline constexpr SeedRange kTrainKernelSeeds{0, 38000};
inline constexpr SeedRange kValKernelSeeds{38000, 39000};
inline constexpr SeedRange kTestKernelSeeds{39000, 40000};

/// Anisotropic Gaussian with standard deviations (sigma1, sigma2) along axes
/// rotated by theta, sampled on a size x size grid centred on the middle tap.
inline SRKernel gaussian_kernel(int size, double sigma1, double sigma2, double theta) {
  if (size <= 0 || size % 2 == 0) throw ContractError("kernel size must be odd and positive");
  const double c = std::cos(theta), s = std::sin(theta);
  const double i1 = 1.0 / (sigma1 * sigma1), i2 = 1.0 / (sigma2 * sigma2);
  // Inverse covariance R diag(1/s1^2, 1/s2^2) R^T.
  const double a = c * c * i1 + s * s * i2;
  const double b = c * s * (i1 - i2);
  const double d = s * s * i1 + c * c * i2;
  const int r = size / 2;
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  double sum = 0.0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-0.5 * (a * x * x + 2.0 * b * x * y + d * y * y));
      w[static_cast<std::size_t>(y + r) * size + (x + r)] = v;
      sum += v;
    }
  }
  SRKernel k{size, std::vector<float>(w.size())};
  for (std::size_t i = 0; i < w.size(); ++i) k.weights[i] = static_cast<float>(w[i] / sum);
  return k;
}

inline SRKernel generate_random_kernel(std::uint64_t seed, int size = 5,
                                       std::array<double, 2> sigma_range = {0.35, 2.0}) {
  if (sigma_range[0] > sigma_range[1] || !(sigma_range[0] > 0.0)) {
    throw ContractError("generate_random_kernel: invalid sigma range");
  }
  Rng rng(derive_seed(seed, 0x6B65726E656CULL));
  const double s1 = rng.uniform(sigma_range[0], sigma_range[1]);
  const double s2 = rng.uniform(sigma_range[0], sigma_range[1]);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  return gaussian_kernel(size, s1, s2, theta);
}

/// Convolve with reflect padding, then keep every `scale`-th sample starting
/// at index 0 on each axis. Output is floor(dim / scale).
inline Image apply_kernel_downsample(const Image& image, const SRKernel& kernel, int scale) {
  if (scale < 1) throw ContractError("apply_kernel_downsample: scale must be >= 1");
  const int r = kernel.radius();
  const int W = image.width(), H = image.height(), C = image.channels();
  if (W < scale * r || H < scale * r || W <= r || H <= r || W < scale || H < scale) {
    throw ContractError("apply_kernel_downsample: image " + std::to_string(W) + "x" + std::to_string(H) +
                        " too small for kernel radius " + std::to_string(r) + " at scale " +
                        std::to_string(scale));
  }
  const int OW = W / scale, OH = H / scale;
  std::vector<float> out(static_cast<std::size_t>(OW) * OH * C);
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      const int cy = oy * scale, cx = ox * scale;
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        // True convolution: tap (i, j) reads the pixel at offset (r - i, r - j).
        for (int i = 0; i < kernel.size; ++i) {
          const auto sy = static_cast<int>(reflect_index(cy + r - i, H));
          for (int j = 0; j < kernel.size; ++j) {
            const auto sx = static_cast<int>(reflect_index(cx + r - j, W));
            acc += static_cast<double>(kernel.at(i, j)) * image.at(sx, sy, c);
          }
        }
        out[(static_cast<std::size_t>(oy) * OW + ox) * C + c] = static_cast<float>(acc);
      }
    }
  }
  return Image(OW, OH, C, std::move(out));
}

/// One degradation operator: bicubic (nullopt) or an explicit kernel.
inline Image degrade(const Image& image, const std::optional<SRKernel>& kernel, int scale) {
  if (kernel) return apply_kernel_downsample(image, *kernel, scale);
  return bicubic_resize(image, Ratio{1, scale});
}

// ---------------------------------------------------------------------------
// Kernel text format

inline void save_kernel(const SRKernel& kernel, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot create kernel file '" + path + "'");
  os << "SRKERNEL 1 " << kernel.size << '\n' << std::setprecision(9);
  for (int i = 0; i < kernel.size; ++i) {
    for (int j = 0; j < kernel.size; ++j) os << (j ? " " : "") << kernel.at(i, j);
    os << '\n';
  }
  if (!os) throw IoError("cannot write kernel file '" + path + "'");
}

inline SRKernel load_kernel(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open kernel file '" + path + "'");
  auto fail = [&](int line, const std::string& why) {
    return ParseError(path + ":" + std::to_string(line) + ": " + why);
  };
  std::string line;
  if (!std::getline(is, line)) throw fail(1, "missing header");
  std::istringstream hs(line);
  std::string magic;
  int version = 0, size = 0;
  if (!(hs >> magic >> version >> size) || magic != "SRKERNEL") {
    throw fail(1, "expected header 'SRKERNEL 1 <size>'");
  }
  if (version != 1) throw fail(1, "unsupported version " + std::to_string(version));
  if (size <= 0 || size % 2 == 0) throw fail(1, "kernel size must be odd and positive");

  SRKernel k{size, {}};
  k.weights.reserve(static_cast<std::size_t>(size) * size);
  int rows = 0;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++rows;
    std::istringstream rs(line);
    std::string tok;
    int cols = 0;
    while (rs >> tok) {
      float v = 0.0f;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || p != tok.data() + tok.size()) throw fail(lineno, "bad number '" + tok + "'");
      k.weights.push_back(v);
      ++cols;
    }
    if (cols != size) {
      throw fail(lineno, "expected " + std::to_string(size) + " values, found " + std::to_string(cols));
    }
  }
  if (rows != size) {
    throw fail(lineno, "expected " + std::to_string(size) + " rows, found " + std::to_string(rows));
  }
  return k;
}

/// Kernel selected by a spec; nullopt means bicubic.
inline std::optional<SRKernel> resolve_kernel(const KernelSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case KernelMode::bicubic:
      return std::nullopt;
    case KernelMode::random_gaussian:
      return generate_random_kernel(spec.seed, 5, spec.sigma_range);
    case KernelMode::from_file:
      return load_kernel(spec.path);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Task samples

struct TaskSample {
  Image hr;
  Image lr;
  Image lr_down;
  std::optional<SRKernel> kernel;  // nullopt: bicubic
  int scale = 2;
  // Centre crop applied to the source HR, in source pixels.
  int crop_x = 0;
  int crop_y = 0;
};

/// Largest multiple of m not exceeding v.
constexpr int floor_multiple(int v, int m) noexcept { return v / m * m; }

inline TaskSample make_task_sample(const Image& hr, const std::optional<SRKernel>& kernel, int scale) {
  if (scale < 2) throw ContractError("make_task_sample: scale must be >= 2");
  const int m = scale * scale;
  const int w = floor_multiple(hr.width(), m), h = floor_multiple(hr.height(), m);
  if (w < m || h < m) {
    throw ContractError("make_task_sample: image " + std::to_string(hr.width()) + "x" +
                        std::to_string(hr.height()) + " smaller than scale^2");
  }
  TaskSample t;
  t.crop_x = (hr.width() - w) / 2;
  t.crop_y = (hr.height() - h) / 2;
  t.hr = (w == hr.width() && h == hr.height()) ? hr : extract_patch(hr, t.crop_x, t.crop_y, w, h);
  t.kernel = kernel;
  t.scale = scale;
  t.lr = degrade(t.hr, kernel, scale);
  t.lr_down = degrade(t.lr, kernel, scale);
  return t;
}

inline TaskSample make_task_sample(const Image& hr, const KernelSpec& spec, int scale) {
  return make_task_sample(hr, resolve_kernel(spec), scale);
}

}  // namespace mlsr
