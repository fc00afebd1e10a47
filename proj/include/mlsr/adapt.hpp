#pragma once

// Test-time adaptation: n SGD steps on the self-supervised (LR-down, LR)
// pair of the input, then super-resolve with the adapted parameters.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mlsr/degradation.hpp"
#include "mlsr/error.hpp"
#include "mlsr/image.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/model.hpp"
#include "mlsr/parallel.hpp"
#include "mlsr/train.hpp"

namespace mlsr {

struct AdaptConfig {
  int n = 5;
  double alpha = 0.5;
  KernelSpec kernel_spec;
  int record_every = 1;
  // Explicit record points; when non-empty it replaces record_every.
  std::vector<int> record_steps;
  // 0: whole-image steps. Otherwise each step uses a random LR patch of this size.
  int patch_size = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 0) throw ConfigError("n: requires n >= 0");
    if (n > 0 && !(alpha > 0.0)) throw ConfigError("alpha: requires alpha > 0 when n > 0");
    if (record_every < 1) throw ConfigError("record_every: requires record_every >= 1");
    if (patch_size < 0) throw ConfigError("patch_size: requires patch_size >= 0");
    kernel_spec.validate();
  }

  bool records(int step) const {
    if (record_steps.empty()) return step % record_every == 0;
    for (int s : record_steps) {
      if (s == step) return true;
    }
    return false;
  }
};

struct AdaptRecord {
  int step = 0;
  double self_loss = 0.0;
  std::optional<double> psnr;
  std::optional<double> ssim;
  double wall_ms = 0.0;  // adaptation time since the previous record
};

struct AdaptReport {
  std::vector<AdaptRecord> steps;
};

struct AdaptResult {
  Image sr;
  ModelCheckpoint adapted;
  AdaptReport report;
};

/// Runs the adaptation loop from `ckpt` with an explicit degradation kernel
/// (nullopt: bicubic). The input checkpoint is not modified.
inline AdaptResult adapt_and_super_resolve(const ModelCheckpoint& ckpt, const Image& lr,
                                           const std::optional<SRKernel>& kernel, const AdaptConfig& cfg,
                                           const std::optional<Image>& ground_truth,
                                           const MetricConfig& metric_cfg) {
  cfg.validate();
  if (lr.channels() != 3) throw ContractError("mlsr_infer: input must be RGB");
  const int scale = ckpt.arch.scale;
  if (ground_truth && (ground_truth->width() != lr.width() * scale || ground_truth->height() != lr.height() * scale)) {
    throw ContractError("mlsr_infer: ground truth " + std::to_string(ground_truth->width()) + "x" +
                        std::to_string(ground_truth->height()) + " != input x" + std::to_string(scale) + " (" +
                        std::to_string(lr.width() * scale) + "x" + std::to_string(lr.height() * scale) + ")");
  }
  const bool zero_times = deterministic_mode();
  const Tensor<float> upsampled = upsample_tensor<float>(lr, scale);
  const SrPair<float> whole = make_self_pair<float>(lr, kernel, scale);

  AdaptResult res{Image(), ckpt, {}};
  using Clock = std::chrono::steady_clock;
  auto last = Clock::now();
  auto record = [&](int step, const ParamSet<float>& theta, double self_loss) {
    AdaptRecord r;
    r.step = step;
    r.self_loss = self_loss;
    const auto now = Clock::now();
    r.wall_ms = zero_times ? 0.0 : std::chrono::duration<double, std::milli>(now - last).count();
    if (ground_truth) {
      const Image sr = tensor_to_image(predict(ckpt.arch, theta, upsampled));
      r.psnr = psnr(sr, *ground_truth, metric_cfg);
      r.ssim = ssim(sr, *ground_truth, metric_cfg);
    }
    res.report.steps.push_back(r);
    last = Clock::now();
  };

  ParamSet<float> theta = ckpt.params;
  const auto alpha = static_cast<float>(cfg.alpha);
  if (cfg.patch_size == 0) {
    theta = adapt_on_pair<float>(ckpt.arch, theta, whole, alpha, cfg.n,
                                 [&](int k, const ParamSet<float>& p, float loss) {
                                   if (cfg.records(k)) record(k, p, loss);
                                 });
  } else {
    Rng rng(derive_seed(cfg.seed, 0x6164617074ULL));
    const int size = floor_multiple(cfg.patch_size, scale * scale);
    for (int k = 0; k < cfg.n; ++k) {
      if (cfg.records(k)) record(k, theta, loss_only(ckpt.arch, theta, whole));
      const bool fits = size >= scale * scale && size <= lr.width() && size <= lr.height();
      const SrPair<float> pair = fits ? make_self_pair<float>(random_patch(lr, size, rng), kernel, scale) : whole;
      theta = sgd_step(theta, loss_and_grad(ckpt.arch, theta, pair).second, alpha);
    }
    if (cfg.records(cfg.n)) record(cfg.n, theta, loss_only(ckpt.arch, theta, whole));
  }

  res.adapted.params = std::move(theta);
  if (cfg.n > 0) {
    res.adapted.stage = Stage::adapted;
    res.adapted.iteration = ckpt.iteration + static_cast<std::uint64_t>(cfg.n);
  }
  res.sr = tensor_to_image(predict(ckpt.arch, res.adapted.params, upsampled));
  return res;
}

/// Test-time adaptation. LR-down is built with cfg.kernel_spec at the
/// checkpoint's scale; ground truth is only used for the report metrics.
inline AdaptResult mlsr_infer(const ModelCheckpoint& ckpt, const Image& lr, const AdaptConfig& cfg,
                              const std::optional<Image>& ground_truth = std::nullopt) {
  cfg.validate();
  return adapt_and_super_resolve(ckpt, lr, resolve_kernel(cfg.kernel_spec), cfg, ground_truth,
                                 MetricConfig{ckpt.arch.scale, ChannelMode::rgb});
}

inline void write_report_csv(const AdaptReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot create report '" + path + "'");
  os << "step,self_loss,psnr_db,ssim,wall_ms\n";
  for (const auto& r : report.steps) {
    os << r.step << ',' << fmt_num(r.self_loss, 9) << ',' << (r.psnr ? fmt_num(*r.psnr) : "") << ','
       << (r.ssim ? fmt_num(*r.ssim) : "") << ',' << fmt_num(r.wall_ms, 3) << '\n';
  }
  if (!os) throw IoError("cannot write report '" + path + "'");
}

}  // namespace mlsr
