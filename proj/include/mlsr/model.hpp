#pragma once

// The SR network: bicubic pre-upsampling followed by a conv/ReLU stack that
// predicts a residual. Parameters are templated on the scalar type so the
// same code runs in float (production) and double (verification).

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "mlsr/error.hpp"
#include "mlsr/image.hpp"
#include "mlsr/params.hpp"
#include "mlsr/random.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

struct ArchConfig {
  int scale = 2;
  int layers = 3;
  int channels = 16;
  int kernel_size = 3;

  void validate() const {
    if (scale < 2) throw ConfigError("arch requires scale >= 2");
    if (layers < 2) throw ConfigError("arch requires layers >= 2");
    if (channels < 4) throw ConfigError("arch requires channels >= 4");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("arch requires odd kernel_size");
  }

  int in_channels(int layer) const noexcept { return layer == 0 ? 3 : channels; }
  int out_channels(int layer) const noexcept { return layer == layers - 1 ? 3 : channels; }

  // Closed form: sum over layers of cin*cout*k*k + cout.
  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    const auto kk = static_cast<std::size_t>(kernel_size) * kernel_size;
    for (int l = 0; l < layers; ++l) {
      n += static_cast<std::size_t>(in_channels(l)) * out_channels(l) * kk + out_channels(l);
    }
    return n;
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline std::string weight_name(int layer) { return "conv" + std::to_string(layer) + ".weight"; }
inline std::string bias_name(int layer) { return "conv" + std::to_string(layer) + ".bias"; }

/// Expected (name, shape) table for an architecture, in serialization order.
inline std::vector<std::pair<std::string, Shape4>> param_layout(const ArchConfig& arch) {
  std::vector<std::pair<std::string, Shape4>> out;
  const auto k = static_cast<std::size_t>(arch.kernel_size);
  for (int l = 0; l < arch.layers; ++l) {
    const auto cin = static_cast<std::size_t>(arch.in_channels(l));
    const auto cout = static_cast<std::size_t>(arch.out_channels(l));
    out.emplace_back(weight_name(l), Shape4{cout, cin, k, k});
    out.emplace_back(bias_name(l), Shape4{cout, 1, 1, 1});
  }
  return out;
}

/// He fan-in normal weights and zero biases; the last layer's weights start
/// at zero so the untrained network reproduces bicubic upsampling.
template <class T = float>
ParamSet<T> init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(derive_seed(seed, 0x696E6974ULL));
  ParamSet<T> params;
  const auto layout = param_layout(arch);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    Tensor<T> t(shape);
    if (i % 2 == 0 && i + 2 < layout.size()) {  // hidden weight; odd entries are biases
      const double stddev = std::sqrt(2.0 / static_cast<double>(shape[1] * shape[2] * shape[3]));
      for (T& v : t.data()) v = static_cast<T>(stddev * rng.normal());
    }
    params.add(name, std::move(t));
  }
  return params;
}

template <class T>
void check_layout(const ArchConfig& arch, const ParamSet<T>& params) {
  const auto layout = param_layout(arch);
  if (layout.size() != params.size()) {
    throw ContractError("parameter set has " + std::to_string(params.size()) + " tensors, arch expects " +
                        std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params[i].name != layout[i].first || params[i].value.shape() != layout[i].second) {
      throw ContractError("parameter " + std::to_string(i) + " is '" + params[i].name + "' " +
                          to_string(params[i].value.shape()) + ", arch expects '" + layout[i].first +
                          "' " + to_string(layout[i].second));
    }
  }
}

/// A training/evaluation pair with the bicubic upsampling of the input
/// already applied (it does not depend on the parameters).
template <class T>
struct SrPair {
  Tensor<T> upsampled;
  Tensor<T> target;
};

template <class T>
Tensor<T> upsample_tensor(const Image& lr, int scale) {
  return image_to_tensor<T>(bicubic_resize(lr, Ratio{scale, 1}));
}

template <class T>
SrPair<T> make_sr_pair(const Image& input, const Image& target, int scale) {
  SrPair<T> p{upsample_tensor<T>(input, scale), image_to_tensor<T>(target)};
  if (p.upsampled.shape() != p.target.shape()) {
    throw ContractError("SR pair: upscaled input " + to_string(p.upsampled.shape()) + " != target " +
                        to_string(p.target.shape()));
  }
  return p;
}

namespace detail {

template <class T>
std::span<const T> bias_span(const ParamSet<T>& p, int layer) {
  return p[static_cast<std::size_t>(2 * layer + 1)].value.data();
}
template <class T>
const Tensor<T>& weight_of(const ParamSet<T>& p, int layer) {
  return p[static_cast<std::size_t>(2 * layer)].value;
}

}  // namespace detail

// The conv stack sees the upsampled image shifted to zero mid-grey.
inline constexpr double kInputShift = 0.5;

template <class T>
Tensor<T> centered(const Tensor<T>& t) {
  Tensor<T> out = t;
  for (T& v : out.data()) v -= static_cast<T>(kInputShift);
  return out;
}

/// Unclamped network output: upsampled + residual(upsampled).
template <class T>
Tensor<T> predict(const ArchConfig& arch, const ParamSet<T>& params, const Tensor<T>& upsampled) {
  Tensor<T> x = centered(upsampled);
  for (int l = 0; l < arch.layers; ++l) {
    x = conv2d(x, detail::weight_of(params, l), detail::bias_span(params, l));
    if (l + 1 < arch.layers) x = relu(x);
  }
  return add(upsampled, x);
}

/// Sign pattern of every hidden pre-activation; the loss is smooth in the
/// parameters wherever this pattern is constant.
template <class T>
std::vector<bool> relu_pattern(const ArchConfig& arch, const ParamSet<T>& params, const Tensor<T>& upsampled) {
  std::vector<bool> out;
  Tensor<T> x = centered(upsampled);
  for (int l = 0; l + 1 < arch.layers; ++l) {
    x = conv2d(x, detail::weight_of(params, l), detail::bias_span(params, l));
    for (T v : x.data()) out.push_back(v > T{0});
    x = relu(x);
  }
  return out;
}

/// Mean-squared loss of the unclamped prediction against the target and its
/// exact gradient with respect to every parameter.
template <class T>
std::pair<T, GradSet<T>> loss_and_grad(const ArchConfig& arch, const ParamSet<T>& params,
                                       const SrPair<T>& pair) {
  // acts[l] is the input of layer l; pre[l] its pre-activation output.
  std::vector<Tensor<T>> acts;
  std::vector<Tensor<T>> pre;
  acts.reserve(static_cast<std::size_t>(arch.layers));
  pre.reserve(static_cast<std::size_t>(arch.layers));
  acts.push_back(centered(pair.upsampled));
  for (int l = 0; l < arch.layers; ++l) {
    pre.push_back(conv2d(acts.back(), detail::weight_of(params, l), detail::bias_span(params, l)));
    if (l + 1 < arch.layers) acts.push_back(relu(pre.back()));
  }
  auto [loss, grad] = mse_loss(add(pair.upsampled, pre.back()), pair.target);

  std::vector<ConvGrads<T>> layer_grads(static_cast<std::size_t>(arch.layers));
  Tensor<T> up = std::move(grad);
  for (int l = arch.layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    if (l + 1 < arch.layers) up = relu_backward(pre[li], up);
    layer_grads[li] = conv2d_backward(acts[li], detail::weight_of(params, l), up, Padding::reflect, l > 0);
    if (l > 0) up = std::move(layer_grads[li].input);
  }
  GradSet<T> grads;
  for (int l = 0; l < arch.layers; ++l) {
    auto& g = layer_grads[static_cast<std::size_t>(l)];
    grads.add(weight_name(l), std::move(g.weight));
    const auto cout = static_cast<std::size_t>(arch.out_channels(l));
    grads.add(bias_name(l), Tensor<T>({cout, 1, 1, 1}, std::move(g.bias)));
  }
  return {loss, std::move(grads)};
}

template <class T>
T loss_only(const ArchConfig& arch, const ParamSet<T>& params, const SrPair<T>& pair) {
  return mse_loss(predict(arch, params, pair.upsampled), pair.target).loss;
}

// ---------------------------------------------------------------------------
// Checkpoints

enum class Stage : std::uint8_t { init = 0, pretrained = 1, meta = 2, adapted = 3 };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::init: return "init";
    case Stage::pretrained: return "pretrained";
    case Stage::meta: return "meta";
    case Stage::adapted: return "adapted";
  }
  return "unknown";
}

struct ModelCheckpoint {
  ArchConfig arch;
  ParamSet<float> params;
  Stage stage = Stage::init;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

inline ModelCheckpoint init_model(const ArchConfig& arch, std::uint64_t seed) {
  return ModelCheckpoint{arch, init_params<float>(arch, seed), Stage::init, seed, 0};
}

/// Super-resolves `lr` by the checkpoint's scale; output clamped to [0,1].
inline Image forward(const ModelCheckpoint& ckpt, const Image& lr) {
  if (lr.channels() != 3) throw ContractError("forward: input must be RGB");
  return tensor_to_image(predict(ckpt.arch, ckpt.params, upsample_tensor<float>(lr, ckpt.arch.scale)));
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  const unsigned char* take(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated reading ") + field);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* field) {
    const unsigned char* p = take(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* field) {
    const unsigned char* p = take(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Little-endian layout: "MLSR", u32 version, u32 scale/layers/channels/kernel_size,
/// u8 stage, u64 seed, u64 iteration, u32 tensor count, per tensor
/// (u32 name length, name bytes, 4 x u32 dims), then all float32 data in table order.
inline std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  check_layout(ckpt.arch, ckpt.params);
  std::string out = "MLSR";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.arch.scale));
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.arch.layers));
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.arch.channels));
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.arch.kernel_size));
  out.push_back(static_cast<char>(ckpt.stage));
  detail::put_u64(out, ckpt.seed);
  detail::put_u64(out, ckpt.iteration);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    for (std::size_t d : e.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& e : ckpt.params) {
    for (float v : e.value.data()) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline ModelCheckpoint deserialize_checkpoint(std::string bytes) {
  detail::ByteReader in(std::move(bytes));
  if (std::memcmp(in.take(4, "magic"), "MLSR", 4) != 0) throw FormatError("checkpoint bad magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint unsupported version " + std::to_string(version));
  }
  ModelCheckpoint ck;
  ck.arch.scale = static_cast<int>(in.u32("scale"));
  ck.arch.layers = static_cast<int>(in.u32("layers"));
  ck.arch.channels = static_cast<int>(in.u32("channels"));
  ck.arch.kernel_size = static_cast<int>(in.u32("kernel_size"));
  try {
    ck.arch.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint arch fields invalid: ") + e.what());
  }
  const std::uint8_t stage = *in.take(1, "stage");
  if (stage > static_cast<std::uint8_t>(Stage::adapted)) {
    throw FormatError("checkpoint stage tag " + std::to_string(stage) + " unknown");
  }
  ck.stage = static_cast<Stage>(stage);
  ck.seed = in.u64("seed");
  ck.iteration = in.u64("iteration");

  const auto layout = param_layout(ck.arch);
  const std::uint32_t count = in.u32("shape table count");
  if (count != layout.size()) {
    throw FormatError("checkpoint shape table has " + std::to_string(count) + " entries, arch expects " +
                      std::to_string(layout.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = in.u32("shape table name length");
    if (len > 256) throw FormatError("checkpoint shape table name length " + std::to_string(len) + " too large");
    const unsigned char* p = in.take(len, "shape table name");
    std::string name(reinterpret_cast<const char*>(p), len);
    Shape4 shape{};
    for (auto& d : shape) d = in.u32("shape table dims");
    if (name != layout[i].first || shape != layout[i].second) {
      throw FormatError("checkpoint shape table entry " + std::to_string(i) + " '" + name + "' " +
                        to_string(shape) + " does not match arch ('" + layout[i].first + "' " +
                        to_string(layout[i].second) + ")");
    }
  }
  for (const auto& [name, shape] : layout) {
    std::vector<float> data(Tensor<float>::count(shape));
    for (float& v : data) {
      const std::uint32_t bits = in.u32("parameter data");
      std::memcpy(&v, &bits, 4);
    }
    ck.params.add(name, Tensor<float>(shape, std::move(data)));
  }
  if (!in.done()) throw FormatError("checkpoint has trailing bytes after parameter data");
  return ck;
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot create checkpoint '" + path + "'");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

}  // namespace mlsr
