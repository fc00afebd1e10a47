#pragma once

// Benchmark harness: PSNR/SSIM trajectories of the meta-trained model
// (test-time adaptation) and the pretrained baseline (naive fine-tuning)
// over a step grid, plus an optional long fine-tuning curve.

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mlsr/adapt.hpp"
#include "mlsr/degradation.hpp"
#include "mlsr/error.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/model.hpp"
#include "mlsr/parallel.hpp"
#include "mlsr/train.hpp"

namespace mlsr {

inline const std::vector<int>& default_step_grid() {
  static const std::vector<int> grid{0, 1, 2, 3, 4, 5, 10, 15, 20, 50, 100};
  return grid;
}

// Test image i in random-kernel mode is degraded by test kernel i mod this.
inline constexpr int kBenchTestKernels = 5;

struct BenchConfig {
  std::vector<int> grid = default_step_grid();
  double alpha = 0.5;
  KernelSpec kernel_spec;
  MetricConfig metric;
  int jobs = 1;
  int curve_steps = 0;  // 0: no long fine-tune curve
  int curve_every = 1;

  void validate() const {
    if (grid.empty()) throw ConfigError("grid: requires at least one step");
    if (!std::is_sorted(grid.begin(), grid.end()) || std::adjacent_find(grid.begin(), grid.end()) != grid.end() ||
        grid.front() < 0) {
      throw ConfigError("grid: requires strictly increasing steps >= 0");
    }
    if (!(alpha > 0.0)) throw ConfigError("alpha: requires alpha > 0");
    if (curve_steps < 0) throw ConfigError("curve_steps: requires curve_steps >= 0");
    if (curve_every < 1) throw ConfigError("curve_every: requires curve_every >= 1");
    if (jobs < 1) throw ConfigError("jobs: requires jobs >= 1");
    kernel_spec.validate();
  }
};

struct BenchPoint {
  int step = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct CurvePoint {
  int step = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double self_loss = 0.0;
};

struct ImageTrajectory {
  std::string name;
  std::vector<BenchPoint> meta;
  std::vector<BenchPoint> baseline;
  std::vector<CurvePoint> curve;  // baseline, long run
};

struct BenchResult {
  std::vector<int> grid;
  std::vector<ImageTrajectory> images;

  /// Mean over images at each grid step.
  std::vector<BenchPoint> mean(bool meta) const {
    std::vector<BenchPoint> out;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      BenchPoint p{grid[g], 0.0, 0.0};
      for (const auto& im : images) {
        const auto& tr = meta ? im.meta : im.baseline;
        p.psnr += tr[g].psnr / static_cast<double>(images.size());
        p.ssim += tr[g].ssim / static_cast<double>(images.size());
      }
      out.push_back(p);
    }
    return out;
  }
};

/// Degradation for test image `index`: bicubic, the file kernel, or a
/// held-out test-range kernel.
inline std::optional<SRKernel> test_kernel(const KernelSpec& spec, std::size_t index) {
  switch (spec.mode) {
    case KernelMode::bicubic:
      return std::nullopt;
    case KernelMode::random_gaussian:
      return generate_random_kernel(kTestKernelSeeds.at(index % kBenchTestKernels), 5, spec.sigma_range);
    case KernelMode::from_file:
      return load_kernel(spec.path);
  }
  return std::nullopt;
}

/// Baseline trajectory: finetune_baseline continued segment by segment
/// between grid points (SGD is memoryless, so this equals one long run).
inline std::vector<BenchPoint> finetune_trajectory(const ModelCheckpoint& start, const Image& lr, const Image& hr,
                                                   const std::optional<SRKernel>& kernel,
                                                   const std::vector<int>& grid, double rate,
                                                   const MetricConfig& mc) {
  std::vector<BenchPoint> out;
  ModelCheckpoint ck = start;
  int at = 0;
  for (int step : grid) {
    ck = finetune_baseline(ck, lr, kernel, step - at, rate).ckpt;
    at = step;
    const Image sr = forward(ck, lr);
    out.push_back({step, psnr(sr, hr, mc), ssim(sr, hr, mc)});
  }
  return out;
}

inline std::vector<CurvePoint> finetune_curve(const ModelCheckpoint& start, const Image& lr, const Image& hr,
                                              const std::optional<SRKernel>& kernel, int steps, int every,
                                              double rate, const MetricConfig& mc) {
  std::vector<CurvePoint> out;
  const auto pair = make_self_pair<float>(lr, kernel, start.arch.scale);
  const Tensor<float> up = upsample_tensor<float>(lr, start.arch.scale);
  adapt_on_pair<float>(start.arch, start.params, pair, static_cast<float>(rate), steps,
                       [&](int k, const ParamSet<float>& p, float loss) {
                         if (k % every != 0 && k != steps) return;
                         const Image sr = tensor_to_image(predict(start.arch, p, up));
                         out.push_back({k, psnr(sr, hr, mc), ssim(sr, hr, mc), loss});
                       });
  return out;
}

/// HR test images are degraded per test_kernel(); both models are scored
/// against the (scale-aligned) HR crop.
inline BenchResult run_benchmark(const ModelCheckpoint& meta, const ModelCheckpoint& baseline,
                                 const std::vector<Image>& hr_images, const std::vector<std::string>& names,
                                 const BenchConfig& cfg) {
  cfg.validate();
  if (hr_images.empty()) throw ConfigError("benchmark: requires at least one test image with ground truth");
  if (!(meta.arch == baseline.arch)) throw ConfigError("benchmark: meta and baseline architectures differ");
  const int scale = meta.arch.scale;
  BenchResult res{cfg.grid, std::vector<ImageTrajectory>(hr_images.size())};
  parallel_for(hr_images.size(), cfg.jobs, [&](std::size_t i) {
    const auto kernel = test_kernel(cfg.kernel_spec, i);
    const TaskSample t = make_task_sample(hr_images[i], kernel, scale);
    auto& tr = res.images[i];
    tr.name = i < names.size() ? names[i] : "image" + std::to_string(i);

    AdaptConfig ac;
    ac.n = cfg.grid.back();
    ac.alpha = cfg.alpha;
    ac.record_steps = cfg.grid;
    const auto r = adapt_and_super_resolve(meta, t.lr, kernel, ac, t.hr, cfg.metric);
    for (const auto& rec : r.report.steps) tr.meta.push_back({rec.step, *rec.psnr, *rec.ssim});

    tr.baseline = finetune_trajectory(baseline, t.lr, t.hr, kernel, cfg.grid, cfg.alpha, cfg.metric);
    if (cfg.curve_steps > 0) {
      tr.curve = finetune_curve(baseline, t.lr, t.hr, kernel, cfg.curve_steps, cfg.curve_every, cfg.alpha, cfg.metric);
    }
  });
  return res;
}

/// `image,model,step,psnr_db,ssim`: one row per (image, model, step), then
/// the mean rows with image = "mean".
inline void write_trajectories_csv(const BenchResult& res, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot create '" + path + "'");
  os << "image,model,step,psnr_db,ssim\n";
  auto rows = [&](const std::string& name, const char* model, const std::vector<BenchPoint>& pts) {
    for (const auto& p : pts) os << name << ',' << model << ',' << p.step << ',' << fmt_num(p.psnr) << ',' << fmt_num(p.ssim) << '\n';
  };
  for (const auto& im : res.images) {
    rows(im.name, "meta", im.meta);
    rows(im.name, "baseline", im.baseline);
  }
  rows("mean", "meta", res.mean(true));
  rows("mean", "baseline", res.mean(false));
  if (!os) throw IoError("cannot write '" + path + "'");
}

/// `image,step,psnr_db,ssim,self_loss` for the long baseline fine-tune run.
inline void write_curve_csv(const BenchResult& res, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot create '" + path + "'");
  os << "image,step,psnr_db,ssim,self_loss\n";
  for (const auto& im : res.images) {
    for (const auto& p : im.curve) {
      os << im.name << ',' << p.step << ',' << fmt_num(p.psnr) << ',' << fmt_num(p.ssim) << ',' << fmt_num(p.self_loss, 9)
         << '\n';
    }
  }
  if (!os) throw IoError("cannot write '" + path + "'");
}

}  // namespace mlsr
