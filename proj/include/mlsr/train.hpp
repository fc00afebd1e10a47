#pragma once

// Training stages: supervised pretraining, single-pair fine-tuning, and
// first-order meta-training over batches of (HR, LR, LR-down) tasks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlsr/degradation.hpp"
#include "mlsr/error.hpp"
#include "mlsr/image.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/model.hpp"
#include "mlsr/parallel.hpp"
#include "mlsr/params.hpp"

namespace mlsr {

struct TrainConfig {
  double alpha = 0.5;   // inner step size
  double beta = 0.2;    // outer step size
  int inner_steps = 5;
  int batch_size = 4;
  int patch_size = 64;
  int iterations = 3000;
  int scale = 2;
  KernelSpec kernel_spec;
  std::uint64_t seed = 0;
  double pretrain_lr = 0.1;
  double pretrain_momentum = 0.9;
  int val_every = 0;  // 0 disables validation
  int jobs = 1;

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha: requires alpha > 0");
    if (!(beta > 0.0)) throw ConfigError("beta: requires beta > 0");
    if (inner_steps < 0) throw ConfigError("inner_steps: requires inner_steps >= 0");
    if (batch_size < 1) throw ConfigError("batch_size: requires batch_size >= 1");
    if (iterations < 0) throw ConfigError("iterations: requires iterations >= 0");
    if (scale < 2) throw ConfigError("scale: requires scale >= 2");
    if (patch_size < 1 || patch_size % (scale * scale) != 0) {
      throw ConfigError("patch_size: requires patch_size divisible by scale^2");
    }
    if (!(pretrain_lr > 0.0)) throw ConfigError("pretrain_lr: requires pretrain_lr > 0");
    if (pretrain_momentum < 0.0 || pretrain_momentum >= 1.0) {
      throw ConfigError("pretrain_momentum: requires 0 <= pretrain_momentum < 1");
    }
    if (val_every < 0) throw ConfigError("val_every: requires val_every >= 0");
    if (jobs < 1) throw ConfigError("jobs: requires jobs >= 1");
    kernel_spec.validate();
  }
};

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
  std::string root_dir;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct Dataset {
  std::vector<Image> train;
  std::vector<Image> val;
  std::vector<Image> test;
  std::vector<std::string> test_names;
};

namespace detail {

inline std::vector<std::string> read_list(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace detail

/// Uses train.txt / val.txt / test.txt in root_dir when present; otherwise
/// every *.png in root_dir (sorted) goes to the training split.
inline DatasetSpec dataset_spec_from_dir(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ConfigError("dataset: '" + root + "' is not a directory");
  DatasetSpec spec{root, {}, {}, {}};
  const fs::path r(root);
  if (fs::exists(r / "train.txt") || fs::exists(r / "val.txt") || fs::exists(r / "test.txt")) {
    if (fs::exists(r / "train.txt")) spec.train = detail::read_list(r / "train.txt");
    if (fs::exists(r / "val.txt")) spec.val = detail::read_list(r / "val.txt");
    if (fs::exists(r / "test.txt")) spec.test = detail::read_list(r / "test.txt");
  } else {
    for (const auto& e : fs::directory_iterator(r)) {
      if (e.is_regular_file() && e.path().extension() == ".png") spec.train.push_back(e.path().filename().string());
    }
    std::sort(spec.train.begin(), spec.train.end());
  }
  return spec;
}

inline Dataset load_dataset(const DatasetSpec& spec) {
  std::set<std::string> seen;
  for (const auto* split : {&spec.train, &spec.val, &spec.test}) {
    for (const auto& f : *split) {
      if (!seen.insert(f).second) throw ConfigError("dataset: '" + f + "' is listed more than once across train/val/test");
    }
  }
  auto load_all = [&](const std::vector<std::string>& files) {
    std::vector<Image> out;
    for (const auto& f : files) {
      Image img = load_png((std::filesystem::path(spec.root_dir) / f).string());
      if (img.channels() != 3) throw ConfigError("dataset: '" + f + "' is not an RGB image");
      out.push_back(std::move(img));
    }
    return out;
  };
  return Dataset{load_all(spec.train), load_all(spec.val), load_all(spec.test), spec.test};
}

// ---------------------------------------------------------------------------
// Task construction

template <class T>
struct TaskPairs {
  SrPair<T> inner;  // LR-down -> LR
  SrPair<T> outer;  // LR -> HR
};

template <class T>
TaskPairs<T> make_task_pairs(const TaskSample& t) {
  return {make_sr_pair<T>(t.lr_down, t.lr, t.scale), make_sr_pair<T>(t.lr, t.hr, t.scale)};
}

/// Self-supervised pair for a lone LR image: LR is centre-cropped to a
/// multiple of the scale, then degraded with the same operator.
template <class T>
SrPair<T> make_self_pair(const Image& lr, const std::optional<SRKernel>& kernel, int scale) {
  const int w = floor_multiple(lr.width(), scale), h = floor_multiple(lr.height(), scale);
  const Image target = (w == lr.width() && h == lr.height()) ? lr : center_crop(lr, w, h);
  return make_sr_pair<T>(degrade(target, kernel, scale), target, scale);
}

/// Kernel for task `slot` of a meta-training batch. Random mode draws a fresh
/// kernel from the training seed range.
inline std::optional<SRKernel> task_kernel(const KernelSpec& spec, Rng& rng,
                                           const std::optional<SRKernel>& file_kernel) {
  switch (spec.mode) {
    case KernelMode::bicubic:
      return std::nullopt;
    case KernelMode::random_gaussian:
      return generate_random_kernel(kTrainKernelSeeds.at(rng.next_u64()), 5, spec.sigma_range);
    case KernelMode::from_file:
      return file_kernel;
  }
  return std::nullopt;
}

/// Batch for one iteration: uniform image choice, one random patch per image.
/// Randomness comes only from (seed, iteration).
inline std::vector<TaskSample> sample_tasks(const std::vector<Image>& images, const TrainConfig& cfg,
                                            std::uint64_t iteration, const KernelSpec& kernel_spec,
                                            const std::optional<SRKernel>& file_kernel = std::nullopt) {
  if (images.empty()) throw ConfigError("dataset: training split is empty");
  Rng rng(derive_seed(cfg.seed, iteration));
  const int m = cfg.scale * cfg.scale;
  std::vector<TaskSample> tasks;
  tasks.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    const Image& img = images[rng.index(images.size())];
    const int size = std::min(cfg.patch_size, floor_multiple(std::min(img.width(), img.height()), m));
    Image patch = random_patch(img, size, rng);
    tasks.push_back(make_task_sample(patch, task_kernel(kernel_spec, rng, file_kernel), cfg.scale));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Gradient steps

template <class T>
using StepObserver = std::function<void(int step, const ParamSet<T>& params, T loss)>;

/// `steps` SGD steps on one pair. The observer, when given, sees every step
/// k = 0..steps with the parameters and loss at that step.
template <class T>
ParamSet<T> adapt_on_pair(const ArchConfig& arch, const ParamSet<T>& params, const SrPair<T>& pair, T alpha,
                          int steps, const StepObserver<T>& observer = {}) {
  if (steps < 0) throw ContractError("adaptation steps must be >= 0");
  ParamSet<T> theta = params;
  for (int k = 0; k < steps; ++k) {
    auto [loss, grads] = loss_and_grad(arch, theta, pair);
    if (observer) observer(k, theta, loss);
    theta = sgd_step(theta, grads, alpha);
  }
  if (observer) observer(steps, theta, loss_only(arch, theta, pair));
  return theta;
}

/// Inner update: steps of theta <- theta - alpha * grad L(f(lr_down), lr).
template <class T>
ParamSet<T> inner_adapt(const ArchConfig& arch, const ParamSet<T>& params, const SrPair<T>& pair, T alpha,
                        int steps) {
  if (steps < 0) throw ContractError("inner_adapt: steps must be >= 0");
  if (steps == 0 || alpha == T{0}) {
    if (pair.upsampled.shape() != pair.target.shape()) throw ContractError("inner_adapt: pair shapes differ");
    return params;
  }
  return adapt_on_pair(arch, params, pair, alpha, steps);
}

template <class T>
ParamSet<T> inner_adapt(const ArchConfig& arch, const ParamSet<T>& params, const Image& lr_down, const Image& lr,
                        T alpha, int steps) {
  return inner_adapt(arch, params, make_sr_pair<T>(lr_down, lr, arch.scale), alpha, steps);
}

template <class T>
struct StepResult {
  ParamSet<T> params;
  double loss = 0.0;  // mean over tasks
};

struct MetaStepConfig {
  double alpha = 0.0;
  double beta = 0.0;
  int inner_steps = 0;
  int jobs = 1;
};

/// First-order meta update: theta_i = inner_adapt(theta), g_i = grad L(f_{theta_i}(LR_i), HR_i)
/// evaluated at theta_i, theta <- theta - beta * sum_i g_i (summed in task order).
template <class T>
StepResult<T> meta_step(const ArchConfig& arch, const ParamSet<T>& params, const std::vector<TaskPairs<T>>& tasks,
                        const MetaStepConfig& cfg) {
  if (tasks.empty()) throw ContractError("meta_step: no tasks");
  std::vector<GradSet<T>> grads(tasks.size());
  std::vector<double> losses(tasks.size());
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    const ParamSet<T> adapted =
        inner_adapt(arch, params, tasks[i].inner, static_cast<T>(cfg.alpha), cfg.inner_steps);
    auto [loss, g] = loss_and_grad(arch, adapted, tasks[i].outer);
    grads[i] = std::move(g);
    losses[i] = loss;
  });
  GradSet<T> total = std::move(grads[0]);
  double loss_sum = losses[0];
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    accumulate(total, grads[i]);
    loss_sum += losses[i];
  }
  return {sgd_step(params, total, static_cast<T>(cfg.beta)), loss_sum / static_cast<double>(tasks.size())};
}

template <class T>
StepResult<T> meta_step(const ArchConfig& arch, const ParamSet<T>& params, const std::vector<TaskSample>& tasks,
                        const MetaStepConfig& cfg) {
  std::vector<TaskPairs<T>> pairs;
  pairs.reserve(tasks.size());
  for (const auto& t : tasks) pairs.push_back(make_task_pairs<T>(t));
  return meta_step(arch, params, pairs, cfg);
}

/// Plain supervised step theta <- theta - lr * sum_i grad L(f(LR_i), HR_i).
template <class T>
StepResult<T> supervised_step(const ArchConfig& arch, const ParamSet<T>& params, const std::vector<SrPair<T>>& pairs,
                              double lr, int jobs = 1) {
  if (pairs.empty()) throw ContractError("supervised_step: no pairs");
  std::vector<GradSet<T>> grads(pairs.size());
  std::vector<double> losses(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    auto [loss, g] = loss_and_grad(arch, params, pairs[i]);
    grads[i] = std::move(g);
    losses[i] = loss;
  });
  GradSet<T> total = std::move(grads[0]);
  double loss_sum = losses[0];
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    accumulate(total, grads[i]);
    loss_sum += losses[i];
  }
  return {sgd_step(params, total, static_cast<T>(lr)), loss_sum / static_cast<double>(pairs.size())};
}

// ---------------------------------------------------------------------------
// Run logs

/// Append-only CSV sink; a missing value is written as an empty field.
class CsvLog {
 public:
  CsvLog() = default;
  CsvLog(const std::string& path, const std::string& header) : os_(std::make_unique<std::ofstream>(path)) {
    if (!*os_) throw IoError("cannot create log '" + path + "'");
    *os_ << header << '\n';
  }
  bool active() const noexcept { return os_ != nullptr; }
  void row(const std::string& line) {
    if (os_) *os_ << line << '\n' << std::flush;
  }

 private:
  std::unique_ptr<std::ofstream> os_;
};

inline std::string fmt_num(double v, int precision = 6) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

struct TrainOutputs {
  std::string out_dir;  // empty: no files written
};

// ---------------------------------------------------------------------------
// Stages

/// Supervised training on bicubic (LR, HR) patch pairs from the training split.
template <class T = float>
ParamSet<T> pretrain_params(const ArchConfig& arch, ParamSet<T> params, const Dataset& data, const TrainConfig& cfg,
                            const std::function<void(int, double)>& on_iteration = {}) {
  if (data.train.empty()) throw ConfigError("pretrain: training split is empty");
  const KernelSpec bicubic{};
  GradSet<T> velocity = zeros_like<GradSet<T>>(params);
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto tasks = sample_tasks(data.train, cfg, static_cast<std::uint64_t>(it), bicubic);
    std::vector<SrPair<T>> pairs;
    for (const auto& t : tasks) pairs.push_back(make_sr_pair<T>(t.lr, t.hr, cfg.scale));
    if (cfg.pretrain_momentum == 0.0) {
      auto r = supervised_step(arch, params, pairs, cfg.pretrain_lr, cfg.jobs);
      params = std::move(r.params);
      if (on_iteration) on_iteration(it, r.loss);
      continue;
    }
    // Heavy-ball momentum: v <- m v + g, theta <- theta - lr v.
    std::vector<GradSet<T>> grads(pairs.size());
    std::vector<double> losses(pairs.size());
    parallel_for(pairs.size(), cfg.jobs, [&](std::size_t i) {
      auto [loss, g] = loss_and_grad(arch, params, pairs[i]);
      grads[i] = std::move(g);
      losses[i] = loss;
    });
    double loss_sum = 0.0;
    for (std::size_t e = 0; e < velocity.size(); ++e) {
      for (T& v : velocity[e].value.data()) v *= static_cast<T>(cfg.pretrain_momentum);
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      accumulate(velocity, grads[i]);
      loss_sum += losses[i];
    }
    params = sgd_step(params, velocity, static_cast<T>(cfg.pretrain_lr));
    if (on_iteration) on_iteration(it, loss_sum / static_cast<double>(pairs.size()));
  }
  return params;
}

inline ModelCheckpoint pretrain(const ArchConfig& arch, const Dataset& data, const TrainConfig& cfg,
                                const TrainOutputs& out = {}) {
  cfg.validate();
  arch.validate();
  if (data.train.empty()) throw ConfigError("pretrain: training split is empty");
  if (arch.scale != cfg.scale) throw ConfigError("scale: arch and training scale differ");
  ModelCheckpoint ck = init_model(arch, cfg.seed);
  CsvLog log;
  if (!out.out_dir.empty()) log = CsvLog(out.out_dir + "/pretrain_log.csv", "iteration,loss");
  ck.params = pretrain_params<float>(arch, std::move(ck.params), data, cfg, [&](int it, double loss) {
    log.row(std::to_string(it) + "," + fmt_num(loss, 9));
  });
  ck.stage = Stage::pretrained;
  ck.iteration = static_cast<std::uint64_t>(cfg.iterations);
  if (!out.out_dir.empty()) {
    save_checkpoint(ck, out.out_dir + "/ckpt_pretrained_" + std::to_string(cfg.iterations));
  }
  return ck;
}

/// Validation tasks: the val split, degraded with the val kernel seed range
/// in random mode.
inline std::vector<TaskSample> validation_tasks(const std::vector<Image>& images, const TrainConfig& cfg,
                                                const std::optional<SRKernel>& file_kernel = std::nullopt) {
  std::vector<TaskSample> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::optional<SRKernel> k;
    if (cfg.kernel_spec.mode == KernelMode::random_gaussian) {
      k = generate_random_kernel(kValKernelSeeds.at(i), 5, cfg.kernel_spec.sigma_range);
    } else if (cfg.kernel_spec.mode == KernelMode::from_file) {
      k = file_kernel;
    }
    out.push_back(make_task_sample(images[i], k, cfg.scale));
  }
  return out;
}

struct ValidationScore {
  double psnr_pre = 0.0;   // mean PSNR before adaptation
  double psnr_post = 0.0;  // mean PSNR after inner_steps adaptation steps
};

inline ValidationScore validate_params(const ArchConfig& arch, const ParamSet<float>& params,
                                       const std::vector<TaskSample>& tasks, double alpha, int steps, int jobs = 1) {
  std::vector<ValidationScore> s(tasks.size());
  const MetricConfig mc{arch.scale, ChannelMode::rgb};
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const auto pairs = make_task_pairs<float>(tasks[i]);
    const Image pre = tensor_to_image(predict(arch, params, pairs.outer.upsampled));
    const auto adapted = inner_adapt(arch, params, pairs.inner, static_cast<float>(alpha), steps);
    const Image post = tensor_to_image(predict(arch, adapted, pairs.outer.upsampled));
    s[i] = {psnr(pre, tasks[i].hr, mc), psnr(post, tasks[i].hr, mc)};
  });
  ValidationScore mean;
  for (const auto& v : s) {
    mean.psnr_pre += v.psnr_pre / static_cast<double>(s.size());
    mean.psnr_post += v.psnr_post / static_cast<double>(s.size());
  }
  return mean;
}

/// Meta-training loop over parameter sets of any precision. on_iteration
/// receives (iteration, mean outer loss, parameters after the update).
template <class T>
ParamSet<T> meta_train_params(const ArchConfig& arch, ParamSet<T> params, const Dataset& data,
                              const TrainConfig& cfg,
                              const std::function<void(int, double, const ParamSet<T>&)>& on_iteration = {}) {
  if (cfg.iterations > 0 && data.train.empty()) throw ConfigError("meta_train: training split is empty");
  const std::optional<SRKernel> file_kernel =
      cfg.kernel_spec.mode == KernelMode::from_file ? resolve_kernel(cfg.kernel_spec) : std::nullopt;
  const MetaStepConfig step_cfg{cfg.alpha, cfg.beta, cfg.inner_steps, cfg.jobs};
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto tasks = sample_tasks(data.train, cfg, static_cast<std::uint64_t>(it), cfg.kernel_spec, file_kernel);
    auto r = meta_step<T>(arch, params, tasks, step_cfg);
    if (!std::isfinite(r.loss)) throw NumericError("meta_train: non-finite meta loss at iteration " + std::to_string(it));
    params = std::move(r.params);
    if (on_iteration) on_iteration(it, r.loss, params);
  }
  return params;
}

/// Checkpoint-level meta-training. Logs `iteration,meta_loss,val_psnr_pre,val_psnr_post`
/// and, when validation is enabled, returns the checkpoint with the best
/// post-adaptation validation PSNR.
inline ModelCheckpoint meta_train(const ModelCheckpoint& start, const Dataset& data, const TrainConfig& cfg,
                                  const TrainOutputs& out = {}) {
  cfg.validate();
  if (start.arch.scale != cfg.scale) throw ConfigError("scale: checkpoint and training scale differ");
  check_layout(start.arch, start.params);
  const std::optional<SRKernel> file_kernel =
      cfg.kernel_spec.mode == KernelMode::from_file ? resolve_kernel(cfg.kernel_spec) : std::nullopt;
  const bool validating = cfg.val_every > 0 && !data.val.empty();
  const auto val_tasks = validating ? validation_tasks(data.val, cfg, file_kernel) : std::vector<TaskSample>{};

  CsvLog log;
  if (!out.out_dir.empty()) log = CsvLog(out.out_dir + "/meta_log.csv", "iteration,meta_loss,val_psnr_pre,val_psnr_post");

  ModelCheckpoint current = start;
  current.stage = Stage::meta;
  std::optional<ModelCheckpoint> best;
  double best_psnr = -std::numeric_limits<double>::infinity();
  auto consider = [&](const ModelCheckpoint& ck, int it, double loss, bool log_row) {
    std::string val_cols = ",";
    if (validating && (it % cfg.val_every == 0 || it == cfg.iterations)) {
      const auto score = validate_params(ck.arch, ck.params, val_tasks, cfg.alpha, cfg.inner_steps, cfg.jobs);
      val_cols = fmt_num(score.psnr_pre) + "," + fmt_num(score.psnr_post);
      if (score.psnr_post > best_psnr) {
        best_psnr = score.psnr_post;
        best = ck;
      }
      if (!out.out_dir.empty() && it > 0) {
        save_checkpoint(ck, out.out_dir + "/ckpt_meta_" + std::to_string(it));
      }
    }
    if (log_row) log.row(std::to_string(it) + "," + fmt_num(loss, 9) + "," + val_cols);
  };
  if (validating) consider(current, 0, std::nan(""), false);

  current.params = meta_train_params<float>(start.arch, std::move(current.params), data, cfg,
                                            [&](int it, double loss, const ParamSet<float>& p) {
                                              ModelCheckpoint snap{start.arch, {}, Stage::meta, start.seed,
                                                                   start.iteration + static_cast<std::uint64_t>(it)};
                                              if (validating && (it % cfg.val_every == 0 || it == cfg.iterations)) {
                                                snap.params = p;
                                                consider(snap, it, loss, true);
                                              } else {
                                                log.row(std::to_string(it) + "," + fmt_num(loss, 9) + ",,");
                                              }
                                            });
  current.iteration = start.iteration + static_cast<std::uint64_t>(cfg.iterations);
  ModelCheckpoint result = best ? *best : current;
  if (!out.out_dir.empty()) {
    save_checkpoint(result, out.out_dir + "/ckpt_meta_" + std::to_string(result.iteration) + "_best");
  }
  return result;
}

struct FinetuneResult {
  ModelCheckpoint ckpt;
  std::vector<double> loss_trace;  // loss at steps 0..steps-1, before each update
};

/// Naive fine-tuning on the (LR-down, LR) pair of a single LR image.
inline FinetuneResult finetune_baseline(const ModelCheckpoint& start, const Image& lr,
                                        const std::optional<SRKernel>& kernel, int steps, double rate) {
  if (steps < 0) throw ContractError("finetune_baseline: steps must be >= 0");
  const auto pair = make_self_pair<float>(lr, kernel, start.arch.scale);
  FinetuneResult r{start, {}};
  r.loss_trace.reserve(static_cast<std::size_t>(steps));
  r.ckpt.params = adapt_on_pair<float>(start.arch, start.params, pair, static_cast<float>(rate), steps,
                                       [&](int k, const ParamSet<float>&, float loss) {
                                         if (k < steps) r.loss_trace.push_back(loss);
                                       });
  if (steps > 0) r.ckpt.stage = Stage::adapted;
  return r;
}

inline FinetuneResult finetune_baseline(const ModelCheckpoint& start, const Image& lr, const KernelSpec& spec,
                                        int steps, double rate) {
  return finetune_baseline(start, lr, resolve_kernel(spec), steps, rate);
}

}  // namespace mlsr
