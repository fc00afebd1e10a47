#pragma once

// PSNR and single-scale SSIM on [0,1] images (peak 1.0).

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mlsr/error.hpp"
#include "mlsr/image.hpp"

namespace mlsr {

enum class ChannelMode { rgb, luminance };

struct MetricConfig {
  int border_crop = 2;
  ChannelMode channel_mode = ChannelMode::rgb;
};

namespace detail {

// Cropped planes (one per evaluated channel) as doubles.
inline std::vector<std::vector<double>> metric_planes(const Image& img, const MetricConfig& cfg, int& w, int& h) {
  const int b = cfg.border_crop;
  w = img.width() - 2 * b;
  h = img.height() - 2 * b;
  const int nplanes = (cfg.channel_mode == ChannelMode::luminance && img.channels() == 3) ? 1 : img.channels();
  std::vector<std::vector<double>> planes(static_cast<std::size_t>(nplanes),
                                          std::vector<double>(static_cast<std::size_t>(w) * h));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (nplanes == 1 && img.channels() == 3) {
        // BT.601 luma weights.
        planes[0][i] = 0.299 * img.at(x + b, y + b, 0) + 0.587 * img.at(x + b, y + b, 1) +
                       0.114 * img.at(x + b, y + b, 2);
      } else {
        for (int c = 0; c < nplanes; ++c) planes[static_cast<std::size_t>(c)][i] = img.at(x + b, y + b, c);
      }
    }
  }
  return planes;
}

inline void check_metric_inputs(const Image& a, const Image& b, const MetricConfig& cfg, const char* who) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels()) {
    throw ContractError(std::string(who) + ": image sizes differ (" + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + "x" + std::to_string(a.channels()) + " vs " +
                        std::to_string(b.width()) + "x" + std::to_string(b.height()) + "x" +
                        std::to_string(b.channels()) + ")");
  }
  if (cfg.border_crop < 0 || 2 * cfg.border_crop >= a.width() || 2 * cfg.border_crop >= a.height()) {
    throw ContractError(std::string(who) + ": border_crop " + std::to_string(cfg.border_crop) +
                        " must be >= 0 and less than half of each dimension");
  }
}

}  // namespace detail

/// 10 log10(1 / MSE) over the cropped region; +inf when the images agree.
inline double psnr(const Image& a, const Image& b, const MetricConfig& cfg = {}) {
  detail::check_metric_inputs(a, b, cfg, "psnr");
  int w = 0, h = 0;
  const auto pa = detail::metric_planes(a, cfg, w, h);
  const auto pb = detail::metric_planes(b, cfg, w, h);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < pa.size(); ++c) {
    for (std::size_t i = 0; i < pa[c].size(); ++i) {
      const double d = pa[c][i] - pb[c][i];
      sum += d * d;
    }
    n += pa[c].size();
  }
  const double mse = sum / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// 11x11 Gaussian window, sigma 1.5, normalized to unit sum.
inline std::array<double, 121> ssim_window() {
  std::array<double, 121> w{};
  double sum = 0.0;
  for (int y = -5; y <= 5; ++y) {
    for (int x = -5; x <= 5; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
      w[static_cast<std::size_t>((y + 5) * 11 + (x + 5))] = v;
      sum += v;
    }
  }
  for (double& v : w) v /= sum;
  return w;
}

/// Mean SSIM over all fully contained 11x11 window positions, averaged over
/// the evaluated channels.
inline double ssim(const Image& a, const Image& b, const MetricConfig& cfg = {}) {
  detail::check_metric_inputs(a, b, cfg, "ssim");
  int w = 0, h = 0;
  const auto pa = detail::metric_planes(a, cfg, w, h);
  const auto pb = detail::metric_planes(b, cfg, w, h);
  if (w < 11 || h < 11) {
    throw ContractError("ssim: evaluated region " + std::to_string(w) + "x" + std::to_string(h) +
                        " smaller than 11x11");
  }
  static const auto win = ssim_window();
  double total = 0.0;
  for (std::size_t c = 0; c < pa.size(); ++c) {
    const auto& x = pa[c];
    const auto& y = pb[c];
    double plane_sum = 0.0;
    for (int oy = 0; oy + 11 <= h; ++oy) {
      for (int ox = 0; ox + 11 <= w; ++ox) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int ky = 0; ky < 11; ++ky) {
          for (int kx = 0; kx < 11; ++kx) {
            const double g = win[static_cast<std::size_t>(ky * 11 + kx)];
            const std::size_t i = static_cast<std::size_t>(oy + ky) * w + (ox + kx);
            mx += g * x[i];
            my += g * y[i];
            sxx += g * x[i] * x[i];
            syy += g * y[i] * y[i];
            sxy += g * x[i] * y[i];
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        plane_sum += ((2 * mx * my + kSsimC1) * (2 * cxy + kSsimC2)) /
                     ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
      }
    }
    total += plane_sum / static_cast<double>((w - 10) * (h - 10));
  }
  return total / static_cast<double>(pa.size());
}

}  // namespace mlsr
