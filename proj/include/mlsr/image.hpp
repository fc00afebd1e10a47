#pragma once

// Float rasters in [0,1], PNG I/O, Keys bicubic resampling and cropping.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cerrno>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "mlsr/error.hpp"
#include "mlsr/random.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

/// Interleaved row-major raster: pixel (x, y, c) lives at (y*width + x)*channels + c.
/// Values are clamped to [0,1] on construction and on every set().
class Image {
 public:
  Image() = default;

  Image(int width, int height, int channels, float fill = 0.0f)
      : width_(width), height_(height), channels_(channels) {
    check_dims();
    pixels_.assign(static_cast<std::size_t>(width) * height * channels, clamp01(fill));
  }

  Image(int width, int height, int channels, std::vector<float> pixels)
      : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
    check_dims();
    if (pixels_.size() != static_cast<std::size_t>(width) * height * channels) {
      throw ContractError("image pixel count " + std::to_string(pixels_.size()) + " != " +
                          std::to_string(width) + "x" + std::to_string(height) + "x" +
                          std::to_string(channels));
    }
    for (float& v : pixels_) v = clamp01(v);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float at(int x, int y, int c) const noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  void set(int x, int y, int c, float v) noexcept {
    pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c] = clamp01(v);
  }

  const std::vector<float>& pixels() const noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

  static float clamp01(float v) noexcept {
    if (!(v > 0.0f)) return 0.0f;  // also maps NaN to 0
    return v < 1.0f ? v : 1.0f;
  }

 private:
  void check_dims() const {
    if (width_ <= 0 || height_ <= 0) {
      throw ContractError("image dimensions " + std::to_string(width_) + "x" +
                          std::to_string(height_) + " must be positive");
    }
    if (channels_ != 1 && channels_ != 3) {
      throw ContractError("image channels must be 1 or 3, got " + std::to_string(channels_));
    }
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> pixels_;
};

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngReadResult {
  png_uint_32 width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<unsigned char> bytes;
  char error[256] = {};
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* res = static_cast<PngReadResult*>(png_get_error_ptr(png));
  if (res != nullptr) std::snprintf(res->error, sizeof res->error, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

// Plain C-style body: no objects with non-trivial destructors live across setjmp.
inline bool png_read_raw(std::FILE* fp, PngReadResult& res) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &res, png_error_fn, png_warning_fn);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_png(png, info, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA, nullptr);
  res.width = png_get_image_width(png, info);
  res.height = png_get_image_height(png, info);
  res.channels = png_get_channels(png, info);
  res.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  png_bytepp rows = png_get_rows(png, info);
  res.bytes.resize(rowbytes * res.height);
  for (png_uint_32 y = 0; y < res.height; ++y) std::memcpy(res.bytes.data() + y * rowbytes, rows[y], rowbytes);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool png_write_raw(std::FILE* fp, const unsigned char* data, png_uint_32 w, png_uint_32 h,
                          int channels, char* err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    std::snprintf(err, 256, "libpng write failure");
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace detail

/// Reads an 8- or 16-bit gray/RGB PNG (palettes expanded, alpha dropped).
inline Image load_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (fp == nullptr) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
  unsigned char sig[8] = {};
  const bool is_png = std::fread(sig, 1, 8, fp) == 8 && png_sig_cmp(sig, 0, 8) == 0;
  if (!is_png) {
    std::fclose(fp);
    throw IoError("'" + path + "' is not a PNG file");
  }
  std::rewind(fp);
  detail::PngReadResult res;
  const bool ok = detail::png_read_raw(fp, res);
  std::fclose(fp);
  if (!ok) throw IoError("cannot decode '" + path + "': " + (res.error[0] ? res.error : "libpng failure"));
  if (res.channels != 1 && res.channels != 3) {
    throw IoError("'" + path + "': unsupported channel count " + std::to_string(res.channels));
  }
  const std::size_t n = static_cast<std::size_t>(res.width) * res.height * res.channels;
  std::vector<float> px(n);
  if (res.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = (static_cast<unsigned>(res.bytes[2 * i]) << 8) | res.bytes[2 * i + 1];
      px[i] = static_cast<float>(v / 65535.0);
    }
  } else if (res.bit_depth == 8) {
    for (std::size_t i = 0; i < n; ++i) px[i] = static_cast<float>(res.bytes[i] / 255.0);
  } else {
    throw IoError("'" + path + "': unsupported bit depth " + std::to_string(res.bit_depth));
  }
  return Image(static_cast<int>(res.width), static_cast<int>(res.height), res.channels, std::move(px));
}

/// Writes an 8-bit PNG, rounding each value to the nearest level.
inline void save_png(const Image& image, const std::string& path) {
  if (image.empty()) throw ContractError("save_png: empty image");
  std::vector<unsigned char> bytes(image.pixels().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(image.pixels()[i] * 255.0f));
  }
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw IoError("cannot create '" + path + "': " + std::strerror(errno));
  char err[256] = {};
  const bool ok = detail::png_write_raw(fp, bytes.data(), static_cast<png_uint_32>(image.width()),
                                        static_cast<png_uint_32>(image.height()), image.channels(), err);
  const bool closed = std::fclose(fp) == 0;
  if (!ok || !closed) throw IoError("cannot write '" + path + "': " + (err[0] ? err : "close failed"));
}

// ---------------------------------------------------------------------------
// Resampling

/// Positive rational scale factor num/den.
struct Ratio {
  long num = 1;
  long den = 1;

  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  Ratio inverse() const noexcept { return {den, num}; }
};

/// Keys cubic convolution kernel, a = -0.5.
inline double keys_cubic(double t) noexcept {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

/// Output size for one axis: round(len * num / den), half away from zero.
inline int scaled_length(int len, Ratio s) {
  return static_cast<int>((2 * static_cast<long long>(len) * s.num + s.den) / (2 * static_cast<long long>(s.den)));
}

namespace detail {

struct Taps {
  int first;
  double w[4];
};

// Half-pixel-centre mapping src = (dst + 0.5)/scale - 0.5; taps are clamped
// to the edge at lookup time.
inline std::vector<Taps> cubic_taps(int out_len, Ratio s) {
  std::vector<Taps> taps(static_cast<std::size_t>(out_len));
  const double inv = static_cast<double>(s.den) / static_cast<double>(s.num);
  for (int i = 0; i < out_len; ++i) {
    const double src = (i + 0.5) * inv - 0.5;
    const double base = std::floor(src);
    const double f = src - base;
    Taps& t = taps[static_cast<std::size_t>(i)];
    t.first = static_cast<int>(base) - 1;
    for (int k = 0; k < 4; ++k) t.w[k] = keys_cubic(f - (k - 1));
  }
  return taps;
}

}  // namespace detail

/// Separable Keys bicubic resize by `scale`, edge-clamped, result clamped to [0,1].
inline Image bicubic_resize(const Image& image, Ratio scale) {
  if (scale.num <= 0 || scale.den <= 0) throw ContractError("bicubic_resize: scale must be positive");
  const int W = image.width(), H = image.height(), C = image.channels();
  const int OW = scaled_length(W, scale), OH = scaled_length(H, scale);
  if (OW < 1 || OH < 1) {
    throw ContractError("bicubic_resize: output size " + std::to_string(OW) + "x" +
                        std::to_string(OH) + " is degenerate");
  }
  const auto tx = detail::cubic_taps(OW, scale);
  const auto ty = detail::cubic_taps(OH, scale);

  // Horizontal pass into an unclamped double buffer, then vertical.
  std::vector<double> mid(static_cast<std::size_t>(OW) * H * C);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < OW; ++x) {
      const auto& t = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += t.w[k] * image.at(std::clamp(t.first + k, 0, W - 1), y, c);
        mid[(static_cast<std::size_t>(y) * OW + x) * C + c] = acc;
      }
    }
  }
  std::vector<float> out(static_cast<std::size_t>(OW) * OH * C);
  for (int y = 0; y < OH; ++y) {
    const auto& t = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < OW; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          acc += t.w[k] * mid[(static_cast<std::size_t>(std::clamp(t.first + k, 0, H - 1)) * OW + x) * C + c];
        }
        out[(static_cast<std::size_t>(y) * OW + x) * C + c] = static_cast<float>(acc);
      }
    }
  }
  return Image(OW, OH, C, std::move(out));
}

// ---------------------------------------------------------------------------
// Cropping

inline Image extract_patch(const Image& image, int x, int y, int w, int h) {
  if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > image.width() || y + h > image.height()) {
    throw ContractError("extract_patch: " + std::to_string(w) + "x" + std::to_string(h) + " at (" +
                        std::to_string(x) + "," + std::to_string(y) + ") outside " +
                        std::to_string(image.width()) + "x" + std::to_string(image.height()));
  }
  const int C = image.channels();
  std::vector<float> px;
  px.reserve(static_cast<std::size_t>(w) * h * C);
  for (int row = y; row < y + h; ++row) {
    const auto* begin = image.pixels().data() + (static_cast<std::size_t>(row) * image.width() + x) * C;
    px.insert(px.end(), begin, begin + static_cast<std::size_t>(w) * C);
  }
  return Image(w, h, C, std::move(px));
}

/// Square patch with a uniformly drawn top-left corner.
inline Image random_patch(const Image& image, int size, Rng& rng) {
  if (size <= 0 || size > image.width() || size > image.height()) {
    throw ContractError("random_patch: size " + std::to_string(size) + " does not fit " +
                        std::to_string(image.width()) + "x" + std::to_string(image.height()));
  }
  const int x = static_cast<int>(rng.index(static_cast<std::uint64_t>(image.width() - size + 1)));
  const int y = static_cast<int>(rng.index(static_cast<std::uint64_t>(image.height() - size + 1)));
  return extract_patch(image, x, y, size, size);
}

/// Centre crop to (w, h).
inline Image center_crop(const Image& image, int w, int h) {
  return extract_patch(image, (image.width() - w) / 2, (image.height() - h) / 2, w, h);
}

// ---------------------------------------------------------------------------
// Tensor layout conversion

template <class T = float>
Tensor<T> image_to_tensor(const Image& image) {
  const std::size_t C = static_cast<std::size_t>(image.channels());
  const std::size_t H = static_cast<std::size_t>(image.height());
  const std::size_t W = static_cast<std::size_t>(image.width());
  Tensor<T> t({1, C, H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) t(0, c, y, x) = static_cast<T>(image.pixels()[(y * W + x) * C + c]);
    }
  }
  return t;
}

template <class T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.n() != 1) throw ContractError("tensor_to_image: batch size " + std::to_string(t.n()) + " != 1");
  const std::size_t C = t.c(), H = t.h(), W = t.w();
  std::vector<float> px(C * H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) px[(y * W + x) * C + c] = static_cast<float>(t(0, c, y, x));
    }
  }
  return Image(static_cast<int>(W), static_cast<int>(H), static_cast<int>(C), std::move(px));
}

}  // namespace mlsr
