#pragma once

// Synthetic "tiled-texture" corpus: each image repeats its own random motif
// on a jittered grid, so small patches recur strongly within the image.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mlsr/image.hpp"
#include "mlsr/random.hpp"

namespace mlsr {

struct TextureParams {
  int min_period = 7;
  int max_period = 13;
  int jitter = 1;      // per-tile offset in [-jitter, jitter]
  int min_shapes = 3;
  int max_shapes = 6;
  int supersample = 4;
};

namespace detail {

struct Motif {
  int w = 0, h = 0;
  std::vector<float> rgb;  // w*h*3

  const float* at(int x, int y) const noexcept { return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3; }
};

inline Motif make_motif(Rng& rng, const TextureParams& p) {
  Motif m;
  m.w = p.min_period + static_cast<int>(rng.index(static_cast<std::uint64_t>(p.max_period - p.min_period + 1)));
  m.h = p.min_period + static_cast<int>(rng.index(static_cast<std::uint64_t>(p.max_period - p.min_period + 1)));
  const int ss = p.supersample;
  const int sw = m.w * ss, sh = m.h * ss;
  std::vector<float> hi(static_cast<std::size_t>(sw) * sh * 3);
  float bg[3];
  for (float& c : bg) c = static_cast<float>(rng.uniform(0.1, 0.9));
  for (int i = 0; i < sw * sh; ++i) std::copy(bg, bg + 3, hi.begin() + i * 3);

  const int nshapes = p.min_shapes + static_cast<int>(rng.index(static_cast<std::uint64_t>(p.max_shapes - p.min_shapes + 1)));
  for (int s = 0; s < nshapes; ++s) {
    float col[3];
    for (float& c : col) c = static_cast<float>(rng.uniform(0.05, 0.95));
    const int kind = static_cast<int>(rng.index(3));
    // Shape parameters in motif units (periodic wrap keeps tiles seamless).
    const double cx = rng.uniform(0.0, m.w), cy = rng.uniform(0.0, m.h);
    const double rx = rng.uniform(0.8, m.w * 0.45), ry = rng.uniform(0.8, m.h * 0.45);
    const double ang = rng.uniform(0.0, 3.14159265358979);
    const double thick = rng.uniform(0.6, 1.8);
    for (int y = 0; y < sh; ++y) {
      for (int x = 0; x < sw; ++x) {
        double dx = (x + 0.5) / ss - cx, dy = (y + 0.5) / ss - cy;
        dx -= m.w * std::round(dx / m.w);
        dy -= m.h * std::round(dy / m.h);
        bool inside = false;
        if (kind == 0) {
          inside = std::abs(dx) <= rx && std::abs(dy) <= ry;
        } else if (kind == 1) {
          inside = (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) <= 1.0;
        } else {
          inside = std::abs(-std::sin(ang) * dx + std::cos(ang) * dy) <= thick * 0.5;
        }
        if (inside) std::copy(col, col + 3, hi.begin() + (static_cast<std::size_t>(y) * sw + x) * 3);
      }
    }
  }
  // Box-filter down to motif resolution.
  m.rgb.assign(static_cast<std::size_t>(m.w) * m.h * 3, 0.0f);
  const float inv = 1.0f / static_cast<float>(ss * ss);
  for (int y = 0; y < sh; ++y) {
    for (int x = 0; x < sw; ++x) {
      for (int c = 0; c < 3; ++c) {
        m.rgb[(static_cast<std::size_t>(y / ss) * m.w + x / ss) * 3 + c] +=
            hi[(static_cast<std::size_t>(y) * sw + x) * 3 + c] * inv;
      }
    }
  }
  return m;
}

}  // namespace detail

/// One tiled-texture image, a pure function of (width, height, seed).
inline Image tiled_texture(int width, int height, std::uint64_t seed, const TextureParams& p = {}) {
  Rng rng(derive_seed(seed, 0x7465787475726555ULL));
  const detail::Motif m = detail::make_motif(rng, p);
  const int tiles_x = width / m.w + 2, tiles_y = height / m.h + 2;
  std::vector<int> jx(static_cast<std::size_t>(tiles_x * tiles_y)), jy(jx.size());
  for (std::size_t i = 0; i < jx.size(); ++i) {
    jx[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(2 * p.jitter + 1))) - p.jitter;
    jy[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(2 * p.jitter + 1))) - p.jitter;
  }
  // Slow illumination ramp so the image is not exactly periodic.
  const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
  const int ox = static_cast<int>(rng.index(static_cast<std::uint64_t>(m.w)));
  const int oy = static_cast<int>(rng.index(static_cast<std::uint64_t>(m.h)));

  std::vector<float> px(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int tx = (x + ox) / m.w, ty = (y + oy) / m.h;
      const std::size_t ti = static_cast<std::size_t>(ty * tiles_x + tx);
      const int mx = (((x + ox - tx * m.w - jx[ti]) % m.w) + m.w) % m.w;
      const int my = (((y + oy - ty * m.h - jy[ti]) % m.h) + m.h) % m.h;
      const double light = 1.0 + gx * (x / static_cast<double>(width) - 0.5) + gy * (y / static_cast<double>(height) - 0.5);
      const float* src = m.at(mx, my);
      for (int c = 0; c < 3; ++c) {
        px[(static_cast<std::size_t>(y) * width + x) * 3 + c] = static_cast<float>(src[c] * light);
      }
    }
  }
  return Image(width, height, 3, std::move(px));
}

inline std::vector<Image> tiled_texture_set(int count, int width, int height, std::uint64_t seed,
                                            const TextureParams& p = {}) {
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(tiled_texture(width, height, derive_seed(seed, static_cast<std::uint64_t>(i)), p));
  return out;
}

}  // namespace mlsr
