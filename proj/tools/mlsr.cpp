// mlsr command-line tool. Exit codes: 0 success, 1 user/configuration
// error, 2 internal failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mlsr/adapt.hpp"
#include "mlsr/bench.hpp"
#include "mlsr/config.hpp"
#include "mlsr/degradation.hpp"
#include "mlsr/error.hpp"
#include "mlsr/model.hpp"
#include "mlsr/synth.hpp"
#include "mlsr/train.hpp"

namespace fs = std::filesystem;
using namespace mlsr;

namespace {

constexpr const char* kSchemas = R"(Outputs (all CSV headers are fixed):
  pretrain   ckpt_pretrained_<N>, pretrain_log.csv: iteration,loss
  metatrain  ckpt_meta_<N>_best (+ ckpt_meta_<it> at validation points),
             meta_log.csv: iteration,meta_loss,val_psnr_pre,val_psnr_post
  adapt      sr.png, ckpt_adapted, adapt_report.csv: step,self_loss,psnr_db,ssim,wall_ms
  eval       sr.png, eval.csv: image,psnr_db,ssim
  genkernel  kernel.txt
  degrade    lr.png, hr.png (HR cropped to a multiple of the scale)
  benchmark  trajectories.csv: image,model,step,psnr_db,ssim (mean rows: image=mean)
             curve.csv: image,step,psnr_db,ssim,self_loss (with --curve-steps)
  gendata    *.png, train.txt, val.txt, test.txt
Every command also writes manifest.txt: the resolved configuration, usable as --config.
Set MLSR_DETERMINISTIC=1 for bitwise-reproducible runs.)";

struct Common {
  std::string config_path;
  std::string out_dir;
  std::map<std::string, std::string> keys;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "config file of key = value lines");
  cmd->add_option("--out", c.out_dir, "output directory")->required();
  for (const auto& k : config_keys()) cmd->add_option(std::string("--") + k.name, c.keys[k.name], k.help);
}

RunConfig resolve(CLI::App* cmd, const Common& c) {
  ConfigEntries file = c.config_path.empty() ? ConfigEntries{} : read_config_file(c.config_path);
  ConfigEntries over;
  for (const auto& k : config_keys()) {
    if (cmd->count(std::string("--") + k.name) > 0) over.emplace_back(k.name, c.keys.at(k.name));
  }
  return resolve_config(file, over);
}

struct Manifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::string> outputs;
};

void write_manifest(const std::string& dir, const Manifest& m, const RunConfig& cfg) {
  std::ofstream os(fs::path(dir) / "manifest.txt");
  if (!os) throw IoError("cannot write manifest in '" + dir + "'");
  os << "# mlsr " << MLSR_VERSION << "\n# command: " << m.command << '\n';
  for (const auto& [k, v] : m.inputs) os << "# input " << k << ": " << v << '\n';
  for (const auto& o : m.outputs) os << "# output: " << o << '\n';
  os << config_to_text(cfg);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// Test images for eval/benchmark: the test split when lists exist, else every PNG.
std::pair<std::vector<Image>, std::vector<std::string>> test_images(const std::string& dir) {
  DatasetSpec spec = dataset_spec_from_dir(dir);
  const fs::path r(dir);
  const bool lists = fs::exists(r / "train.txt") || fs::exists(r / "val.txt") || fs::exists(r / "test.txt");
  if (!lists) spec.test.swap(spec.train);
  spec.train.clear();
  spec.val.clear();
  if (spec.test.empty()) throw ConfigError("benchmark: no test images in '" + dir + "'");
  Dataset d = load_dataset(spec);
  return {std::move(d.test), d.test_names};
}

Image load_rgb(const std::string& path) {
  Image img = load_png(path);
  if (img.channels() != 3) throw ConfigError("'" + path + "' is not an RGB image");
  return img;
}

std::vector<int> parse_grid(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(detail::parse_int("grid", detail::trim(item)));
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Meta-learned test-time adaptation for single-image super-resolution"};
  app.footer(kSchemas);
  app.set_version_flag("--version", MLSR_VERSION);
  app.require_subcommand(1);

  Common c;
  std::string data_dir, init_ckpt, ckpt_path, input, gt, hr_path, meta_ckpt, base_ckpt, grid_text;
  int curve_steps = 0, curve_every = 1, n_train = 24, n_val = 4, n_test = 10, size = 96, min_period = 7,
      max_period = 13;

  auto* pre = app.add_subcommand("pretrain", "supervised bicubic pretraining");
  add_common(pre, c);
  pre->add_option("--data", data_dir, "dataset directory")->required();

  auto* meta = app.add_subcommand("metatrain", "meta-train from a pretrained checkpoint");
  add_common(meta, c);
  meta->add_option("--data", data_dir, "dataset directory")->required();
  meta->add_option("--init", init_ckpt, "pretrained checkpoint")->required();

  auto* adapt = app.add_subcommand("adapt", "test-time adaptation and super-resolution");
  add_common(adapt, c);
  adapt->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  adapt->add_option("--input", input, "LR image")->required();
  adapt->add_option("--gt", gt, "ground-truth HR image (only read when given)");

  auto* eval = app.add_subcommand("eval", "super-resolve without adaptation and score");
  add_common(eval, c);
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  auto* eval_in = eval->add_option("--input", input, "LR image (with --gt)");
  auto* eval_gt = eval->add_option("--gt", gt, "ground-truth HR image");
  auto* eval_hr = eval->add_option("--hr", hr_path, "HR image, degraded with the configured kernel");
  eval_in->needs(eval_gt);
  eval_gt->needs(eval_in);
  eval_hr->excludes(eval_in);

  auto* genk = app.add_subcommand("genkernel", "write a random anisotropic Gaussian kernel (seed: --seed)");
  add_common(genk, c);

  auto* deg = app.add_subcommand("degrade", "downsample an HR image with the configured kernel");
  add_common(deg, c);
  deg->add_option("--input", input, "HR image")->required();

  auto* bench = app.add_subcommand("benchmark", "meta vs fine-tune trajectories over a step grid");
  add_common(bench, c);
  bench->add_option("--data", data_dir, "directory of HR test images")->required();
  bench->add_option("--meta", meta_ckpt, "meta-trained checkpoint")->required();
  bench->add_option("--baseline", base_ckpt, "pretrained checkpoint")->required();
  bench->add_option("--grid", grid_text, "comma-separated steps (default 0,1,2,3,4,5,10,15,20,50,100)");
  bench->add_option("--curve-steps", curve_steps, "long fine-tune curve length, 0 = off");
  bench->add_option("--curve-every", curve_every, "curve sampling period");

  auto* gen = app.add_subcommand("gendata", "generate a tiled-texture corpus");
  add_common(gen, c);
  gen->add_option("--train", n_train, "training images");
  gen->add_option("--val", n_val, "validation images");
  gen->add_option("--test", n_test, "test images");
  gen->add_option("--size", size, "image side length");
  gen->add_option("--min-period", min_period, "smallest motif period");
  gen->add_option("--max-period", max_period, "largest motif period");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const RunConfig cfg = resolve(cmd, c);
  const std::string out = c.out_dir;
  ensure_dir(out);
  Manifest man{cmd->get_name(), {}, {}};

  if (cmd == pre) {
    const Dataset data = load_dataset(dataset_spec_from_dir(data_dir));
    const auto ck = pretrain(cfg.arch, data, cfg.train, TrainOutputs{out});
    man.inputs = {{"data", data_dir}};
    man.outputs = {"ckpt_pretrained_" + std::to_string(ck.iteration), "pretrain_log.csv"};
  } else if (cmd == meta) {
    const Dataset data = load_dataset(dataset_spec_from_dir(data_dir));
    const auto start = load_checkpoint(init_ckpt);
    const auto ck = meta_train(start, data, cfg.train, TrainOutputs{out});
    man.inputs = {{"data", data_dir}, {"init", init_ckpt}};
    man.outputs = {"ckpt_meta_" + std::to_string(ck.iteration) + "_best", "meta_log.csv"};
  } else if (cmd == adapt) {
    const auto ck = load_checkpoint(ckpt_path);
    const Image lr = load_rgb(input);
    std::optional<Image> truth;
    if (!gt.empty()) truth = load_rgb(gt);
    AdaptConfig ac = cfg.resolved_adapt();
    const auto r = adapt_and_super_resolve(ck, lr, resolve_kernel(ac.kernel_spec), ac, truth, cfg.metric());
    save_png(r.sr, in_dir(out, "sr.png"));
    save_checkpoint(r.adapted, in_dir(out, "ckpt_adapted"));
    write_report_csv(r.report, in_dir(out, "adapt_report.csv"));
    man.inputs = {{"ckpt", ckpt_path}, {"input", input}};
    if (truth) man.inputs.emplace_back("gt", gt);
    man.outputs = {"sr.png", "ckpt_adapted", "adapt_report.csv"};
    const auto& last = r.report.steps.back();
    if (last.psnr) std::cout << "psnr_db " << fmt_num(*last.psnr) << " ssim " << fmt_num(*last.ssim) << '\n';
  } else if (cmd == eval) {
    if (input.empty() && hr_path.empty()) throw ConfigError("eval: requires --input with --gt, or --hr");
    const auto ck = load_checkpoint(ckpt_path);
    Image lr, truth;
    if (!hr_path.empty()) {
      const TaskSample t = make_task_sample(load_rgb(hr_path), cfg.train.kernel_spec, ck.arch.scale);
      lr = t.lr;
      truth = t.hr;
      man.inputs = {{"ckpt", ckpt_path}, {"hr", hr_path}};
    } else {
      lr = load_rgb(input);
      truth = load_rgb(gt);
      man.inputs = {{"ckpt", ckpt_path}, {"input", input}, {"gt", gt}};
    }
    if (truth.width() != lr.width() * ck.arch.scale || truth.height() != lr.height() * ck.arch.scale) {
      throw ConfigError("eval: ground truth size does not match input x" + std::to_string(ck.arch.scale));
    }
    const Image sr = forward(ck, lr);
    const double p = psnr(sr, truth, cfg.metric()), s = ssim(sr, truth, cfg.metric());
    save_png(sr, in_dir(out, "sr.png"));
    std::ofstream os(in_dir(out, "eval.csv"));
    os << "image,psnr_db,ssim\n" << fs::path(hr_path.empty() ? input : hr_path).filename().string() << ',' << fmt_num(p)
       << ',' << fmt_num(s) << '\n';
    if (!os) throw IoError("cannot write eval.csv");
    man.outputs = {"sr.png", "eval.csv"};
    std::cout << "psnr_db " << fmt_num(p) << " ssim " << fmt_num(s) << '\n';
  } else if (cmd == genk) {
    save_kernel(generate_random_kernel(cfg.train.seed, 5, cfg.train.kernel_spec.sigma_range), in_dir(out, "kernel.txt"));
    man.outputs = {"kernel.txt"};
  } else if (cmd == deg) {
    const Image hr = load_rgb(input);
    const int s = cfg.arch.scale;
    const int w = floor_multiple(hr.width(), s), h = floor_multiple(hr.height(), s);
    if (w < s || h < s) throw ConfigError("degrade: image smaller than the scale");
    const Image crop = (w == hr.width() && h == hr.height()) ? hr : center_crop(hr, w, h);
    save_png(degrade(crop, resolve_kernel(cfg.train.kernel_spec), s), in_dir(out, "lr.png"));
    save_png(crop, in_dir(out, "hr.png"));
    man.inputs = {{"input", input}};
    man.outputs = {"lr.png", "hr.png"};
  } else if (cmd == bench) {
    const auto mck = load_checkpoint(meta_ckpt), bck = load_checkpoint(base_ckpt);
    auto [images, names] = test_images(data_dir);
    BenchConfig bc;
    if (!grid_text.empty()) bc.grid = parse_grid(grid_text);
    bc.alpha = cfg.resolved_adapt().alpha;
    bc.kernel_spec = cfg.train.kernel_spec;
    bc.metric = cfg.metric();
    bc.jobs = cfg.train.jobs;
    bc.curve_steps = curve_steps;
    bc.curve_every = curve_every;
    const auto res = run_benchmark(mck, bck, images, names, bc);
    write_trajectories_csv(res, in_dir(out, "trajectories.csv"));
    man.outputs = {"trajectories.csv"};
    if (curve_steps > 0) {
      write_curve_csv(res, in_dir(out, "curve.csv"));
      man.outputs.push_back("curve.csv");
    }
    man.inputs = {{"data", data_dir}, {"meta", meta_ckpt}, {"baseline", base_ckpt}};
    for (const auto& p : res.mean(true)) {
      std::cout << "step " << p.step << " meta " << fmt_num(p.psnr) << '\n';
    }
  } else if (cmd == gen) {
    if (n_train < 0 || n_val < 0 || n_test < 0 || size < 8) throw ConfigError("gendata: requires counts >= 0 and size >= 8");
    if (min_period < 2 || max_period < min_period) throw ConfigError("gendata: requires 2 <= min-period <= max-period");
    TextureParams tp;
    tp.min_period = min_period;
    tp.max_period = max_period;
    const std::pair<const char*, int> splits[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& [name, count] = splits[s];
      const auto imgs = tiled_texture_set(count, size, size, derive_seed(cfg.train.seed, s), tp);
      std::ofstream list(in_dir(out, std::string(name) + ".txt"));
      for (int i = 0; i < count; ++i) {
        const std::string file = std::string(name) + "_" + std::to_string(i) + ".png";
        save_png(imgs[static_cast<std::size_t>(i)], in_dir(out, file));
        list << file << '\n';
      }
      if (!list) throw IoError("cannot write list in '" + out + "'");
      man.outputs.push_back(std::string(name) + ".txt");
    }
  }
  write_manifest(out, man, cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
