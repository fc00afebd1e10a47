#pragma once

// Dense NCHW tensors and the hand-derived forward/backward kernels the SR
// network is built from: "same" 2-D convolution, ReLU, MSE.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mlsr/error.hpp"

namespace mlsr {

using Shape4 = std::array<std::size_t, 4>;

inline std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << '(' << s[0] << ',' << s[1] << ',' << s[2] << ',' << s[3] << ')';
  return os.str();
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape4 shape, T fill = T{0}) : shape_(shape), data_(count(shape), fill) {
    check_shape();
  }

  Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_shape();
    if (data_.size() != count(shape_)) {
      throw ContractError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + to_string(shape_));
    }
  }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  // Pointer to the start of plane (n, c).
  T* plane(std::size_t n, std::size_t c) noexcept {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }
  const T* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t count(const Shape4& s) noexcept { return s[0] * s[1] * s[2] * s[3]; }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ContractError("tensor shape " + to_string(shape_) + " has a zero dimension");
    }
  }

  Shape4 shape_{1, 1, 1, 1};
  std::vector<T> data_ = std::vector<T>(1, T{0});
};

template <class U, class T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  std::vector<U> out(t.size());
  std::transform(t.data().begin(), t.data().end(), out.begin(), [](T v) { return static_cast<U>(v); });
  return Tensor<U>(t.shape(), std::move(out));
}

enum class Padding { reflect, zero };

/// Mirror an out-of-range index back into [0, n) without repeating the edge
/// sample (-1 -> 1, n -> n-2). Periodic for arbitrarily distant indices.
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) noexcept {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace detail {

// Copy one plane into a (h+2p)x(w+2p) buffer with the requested border rule.
template <class T>
void pad_plane(const T* src, std::size_t h, std::size_t w, std::size_t pad, Padding mode, T* dst) {
  const std::size_t pw = w + 2 * pad;
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::ptrdiff_t y = -p; y < ih + p; ++y) {
    T* row = dst + static_cast<std::size_t>(y + p) * pw;
    const bool y_in = y >= 0 && y < ih;
    if (!y_in && mode == Padding::zero) {
      std::fill(row, row + pw, T{0});
      continue;
    }
    const T* srow = src + static_cast<std::size_t>(y_in ? y : reflect_index(y, ih)) * w;
    for (std::ptrdiff_t x = -p; x < 0; ++x) {
      row[x + p] = mode == Padding::zero ? T{0} : srow[reflect_index(x, iw)];
    }
    std::copy(srow, srow + w, row + pad);
    for (std::ptrdiff_t x = iw; x < iw + p; ++x) {
      row[x + p] = mode == Padding::zero ? T{0} : srow[reflect_index(x, iw)];
    }
  }
}

// Adjoint of pad_plane: fold a padded gradient back onto the source plane.
template <class T>
void unpad_plane_add(const T* padded, std::size_t h, std::size_t w, std::size_t pad, Padding mode,
                     T* dst) {
  const std::size_t pw = w + 2 * pad;
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::ptrdiff_t y = -p; y < ih + p; ++y) {
    const T* row = padded + static_cast<std::size_t>(y + p) * pw;
    const bool y_in = y >= 0 && y < ih;
    if (!y_in && mode == Padding::zero) continue;
    T* drow = dst + static_cast<std::size_t>(y_in ? y : reflect_index(y, ih)) * w;
    for (std::ptrdiff_t x = -p; x < iw + p; ++x) {
      const bool x_in = x >= 0 && x < iw;
      if (!x_in && mode == Padding::zero) continue;
      drow[x_in ? x : reflect_index(x, iw)] += row[x + p];
    }
  }
}

inline void check_conv_shapes(const Shape4& in, const Shape4& wt, std::size_t bias_len) {
  if (in[1] != wt[1]) {
    throw ContractError("conv2d: input channels " + std::to_string(in[1]) +
                        " != weight input channels " + std::to_string(wt[1]));
  }
  if (wt[2] % 2 == 0 || wt[3] % 2 == 0) {
    throw ContractError("conv2d: kernel " + std::to_string(wt[2]) + "x" + std::to_string(wt[3]) +
                        " must have odd height and width");
  }
  if (bias_len != wt[0]) {
    throw ContractError("conv2d: bias length " + std::to_string(bias_len) +
                        " != output channels " + std::to_string(wt[0]));
  }
}

}  // namespace detail

/// "Same" 2-D cross-correlation: out[n,o,y,x] = b[o] + sum w[o,i,ky,kx] * in[n,i,y+ky-r,x+kx-r].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::type_identity_t<std::span<const T>> bias,
                 Padding padding = Padding::reflect) {
  detail::check_conv_shapes(input.shape(), weight.shape(), bias.size());
  const std::size_t N = input.n(), Cin = input.c(), H = input.h(), W = input.w();
  const std::size_t Cout = weight.n(), KH = weight.h(), KW = weight.w();
  const std::size_t pad = std::max(KH, KW) / 2, ph = pad - KH / 2, pw_off = pad - KW / 2;
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;

  Tensor<T> out({N, Cout, H, W});
  std::vector<T> padded(Cin * PH * PW);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t ci = 0; ci < Cin; ++ci) {
      detail::pad_plane(input.plane(n, ci), H, W, pad, padding, padded.data() + ci * PH * PW);
    }
    for (std::size_t co = 0; co < Cout; ++co) {
      T* dst = out.plane(n, co);
      std::fill(dst, dst + H * W, bias[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* src = padded.data() + ci * PH * PW;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const T k = weight(co, ci, ky, kx);
            for (std::size_t y = 0; y < H; ++y) {
              const T* s = src + (y + ky + ph) * PW + kx + pw_off;
              T* d = dst + y * W;
              for (std::size_t x = 0; x < W; ++x) d[x] += k * s[x];
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;
};

/// Exact gradients of <upstream, conv2d(input, weight, b)>. Set want_input
/// to false to skip the input gradient (first layer of a network).
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                             const Tensor<T>& upstream, Padding padding = Padding::reflect,
                             bool want_input = true) {
  detail::check_conv_shapes(input.shape(), weight.shape(), weight.n());
  const Shape4 expect{input.n(), weight.n(), input.h(), input.w()};
  if (upstream.shape() != expect) {
    throw ContractError("conv2d_backward: upstream shape " + to_string(upstream.shape()) +
                        " != output shape " + to_string(expect));
  }
  const std::size_t N = input.n(), Cin = input.c(), H = input.h(), W = input.w();
  const std::size_t Cout = weight.n(), KH = weight.h(), KW = weight.w();
  const std::size_t pad = std::max(KH, KW) / 2, ph = pad - KH / 2, pw_off = pad - KW / 2;
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;

  ConvGrads<T> g{want_input ? Tensor<T>(input.shape()) : Tensor<T>(), Tensor<T>(weight.shape()),
                 std::vector<T>(Cout, T{0})};
  std::vector<T> padded(Cin * PH * PW);
  std::vector<T> grad_padded(want_input ? Cin * PH * PW : 0);
  std::vector<T> lane(W);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t ci = 0; ci < Cin; ++ci) {
      detail::pad_plane(input.plane(n, ci), H, W, pad, padding, padded.data() + ci * PH * PW);
    }
    std::fill(grad_padded.begin(), grad_padded.end(), T{0});
    for (std::size_t co = 0; co < Cout; ++co) {
      const T* up = upstream.plane(n, co);
      T bsum{0};
      for (std::size_t i = 0; i < H * W; ++i) bsum += up[i];
      g.bias[co] += bsum;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* src = padded.data() + ci * PH * PW;
        T* gsrc = want_input ? grad_padded.data() + ci * PH * PW : nullptr;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const T k = weight(co, ci, ky, kx);
            // Column-wise partial sums keep the inner loop vectorizable
            // while fixing the reduction order.
            std::fill(lane.begin(), lane.end(), T{0});
            for (std::size_t y = 0; y < H; ++y) {
              const std::size_t off = (y + ky + ph) * PW + kx + pw_off;
              const T* s = src + off;
              const T* u = up + y * W;
              T* l = lane.data();
              for (std::size_t x = 0; x < W; ++x) l[x] += u[x] * s[x];
              if (gsrc != nullptr) {
                T* gs = gsrc + off;
                for (std::size_t x = 0; x < W; ++x) gs[x] += k * u[x];
              }
            }
            T acc{0};
            for (T v : lane) acc += v;
            g.weight(co, ci, ky, kx) += acc;
          }
        }
      }
    }
    if (want_input) {
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        detail::unpad_plane_add(grad_padded.data() + ci * PH * PW, H, W, pad, padding,
                                g.input.plane(n, ci));
      }
    }
  }
  return g;
}

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

// Subgradient at exactly zero is zero.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
  if (input.shape() != upstream.shape()) {
    throw ContractError("relu_backward: input shape " + to_string(input.shape()) +
                        " != upstream shape " + to_string(upstream.shape()));
  }
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? upstream[i] : T{0};
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ContractError("add: shape " + to_string(a.shape()) + " != " + to_string(b.shape()));
  }
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <class T>
struct LossAndGrad {
  T loss;
  Tensor<T> grad;
};

/// Mean squared error and its gradient 2(pred - target)/count.
template <class T>
LossAndGrad<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ContractError("mse_loss: pred shape " + to_string(pred.shape()) + " != target shape " +
                        to_string(target.shape()));
  }
  const auto count = static_cast<T>(pred.size());
  LossAndGrad<T> r{T{0}, Tensor<T>(pred.shape())};
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    sum += static_cast<double>(d) * static_cast<double>(d);
    r.grad[i] = T{2} * d / count;
  }
  r.loss = static_cast<T>(sum / static_cast<double>(pred.size()));
  if (!std::isfinite(r.loss)) throw NumericError("mse_loss: non-finite loss");
  return r;
}

}  // namespace mlsr
