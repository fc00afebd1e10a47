#pragma once

// Run configuration: `key = value` lines with `#` comments, a named preset,
// and per-key overrides. Every key is listed in config_keys().

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mlsr/adapt.hpp"
#include "mlsr/error.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/model.hpp"
#include "mlsr/train.hpp"

namespace mlsr {

struct RunConfig {
  std::string preset = "desk";
  ArchConfig arch;
  TrainConfig train;
  AdaptConfig adapt;
  // Unset: follow train.alpha / the scale.
  std::optional<double> adapt_alpha;
  std::optional<int> border_crop;
  ChannelMode channel_mode = ChannelMode::rgb;

  MetricConfig metric() const { return {border_crop.value_or(arch.scale), channel_mode}; }

  AdaptConfig resolved_adapt() const {
    AdaptConfig a = adapt;
    a.alpha = adapt_alpha.value_or(train.alpha);
    a.kernel_spec = train.kernel_spec;
    a.seed = train.seed;
    return a;
  }

  void validate() const;
};

struct ConfigKey {
  const char* name;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"preset", "desk | paper; applied before every other key"},
      {"scale", "SR scale factor (>= 2)"},
      {"layers", "conv layers (>= 2)"},
      {"channels", "hidden channels (>= 4)"},
      {"kernel_size", "conv kernel size (odd)"},
      {"alpha", "inner / adaptation step size (> 0)"},
      {"beta", "outer step size (> 0)"},
      {"inner_steps", "inner SGD steps per task (>= 0)"},
      {"batch_size", "tasks per meta-iteration (>= 1)"},
      {"patch_size", "HR training patch size (multiple of scale^2)"},
      {"iterations", "training iterations (>= 0)"},
      {"seed", "master seed (unsigned 64-bit)"},
      {"pretrain_lr", "pretraining step size (> 0)"},
      {"pretrain_momentum", "heavy-ball momentum for pretraining, 0 = plain SGD"},
      {"val_every", "validation period in iterations, 0 = off"},
      {"jobs", "worker threads (>= 1)"},
      {"kernel", "bicubic | random | file"},
      {"kernel_path", "kernel file for kernel = file"},
      {"kernel_seed", "kernel seed for kernel = random in adapt, eval, degrade"},
      {"sigma_min", "random kernel sigma lower bound"},
      {"sigma_max", "random kernel sigma upper bound"},
      {"adapt_steps", "test-time gradient steps n (>= 0)"},
      {"adapt_alpha", "test-time step size (default: alpha)"},
      {"record_every", "report period in steps (>= 1)"},
      {"adapt_patch", "test-time patch size, 0 = whole image"},
      {"border_crop", "metric border crop in pixels (default: scale)"},
      {"channel_mode", "rgb | luminance"},
  };
  return keys;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* first = value.data();
  const char* last = first + value.size();
  if (!value.empty() && value[0] == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty()) {
    throw ConfigError(key + ": cannot parse '" + value + "' as a number");
  }
  return out;
}

inline int parse_int(const std::string& key, const std::string& v) { return parse_number<int>(key, v); }
inline double parse_real(const std::string& key, const std::string& v) { return parse_number<double>(key, v); }

inline std::string real_text(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline void apply_preset(RunConfig& cfg, const std::string& name) {
  RunConfig fresh;
  if (name == "desk") {
    // defaults as declared
  } else if (name == "paper") {
    fresh.train.alpha = 1e-5;
    fresh.train.beta = 1e-6;
    fresh.train.inner_steps = 5;
    fresh.train.patch_size = 512;
    fresh.train.batch_size = 16;
    fresh.train.pretrain_lr = 1e-4;
    fresh.train.pretrain_momentum = 0.0;
  } else {
    throw ConfigError("preset: requires one of desk, paper (got '" + name + "')");
  }
  fresh.preset = name;
  cfg = std::move(fresh);
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_int;
  using detail::parse_real;
  auto& t = cfg.train;
  if (key == "preset") {
    apply_preset(cfg, value);
  } else if (key == "scale") {
    cfg.arch.scale = t.scale = parse_int(key, value);
  } else if (key == "layers") {
    cfg.arch.layers = parse_int(key, value);
  } else if (key == "channels") {
    cfg.arch.channels = parse_int(key, value);
  } else if (key == "kernel_size") {
    cfg.arch.kernel_size = parse_int(key, value);
  } else if (key == "alpha") {
    t.alpha = parse_real(key, value);
  } else if (key == "beta") {
    t.beta = parse_real(key, value);
  } else if (key == "inner_steps") {
    t.inner_steps = parse_int(key, value);
  } else if (key == "batch_size") {
    t.batch_size = parse_int(key, value);
  } else if (key == "patch_size") {
    t.patch_size = parse_int(key, value);
  } else if (key == "iterations") {
    t.iterations = parse_int(key, value);
  } else if (key == "seed") {
    t.seed = detail::parse_number<std::uint64_t>(key, value);
  } else if (key == "pretrain_lr") {
    t.pretrain_lr = parse_real(key, value);
  } else if (key == "pretrain_momentum") {
    t.pretrain_momentum = parse_real(key, value);
  } else if (key == "val_every") {
    t.val_every = parse_int(key, value);
  } else if (key == "jobs") {
    t.jobs = parse_int(key, value);
  } else if (key == "kernel") {
    if (value == "bicubic") {
      t.kernel_spec.mode = KernelMode::bicubic;
    } else if (value == "random") {
      t.kernel_spec.mode = KernelMode::random_gaussian;
    } else if (value == "file") {
      t.kernel_spec.mode = KernelMode::from_file;
    } else {
      throw ConfigError("kernel: requires one of bicubic, random, file (got '" + value + "')");
    }
  } else if (key == "kernel_path") {
    t.kernel_spec.path = value;
  } else if (key == "kernel_seed") {
    t.kernel_spec.seed = detail::parse_number<std::uint64_t>(key, value);
  } else if (key == "sigma_min") {
    t.kernel_spec.sigma_range[0] = parse_real(key, value);
  } else if (key == "sigma_max") {
    t.kernel_spec.sigma_range[1] = parse_real(key, value);
  } else if (key == "adapt_steps") {
    cfg.adapt.n = parse_int(key, value);
  } else if (key == "adapt_alpha") {
    cfg.adapt_alpha = parse_real(key, value);
  } else if (key == "record_every") {
    cfg.adapt.record_every = parse_int(key, value);
  } else if (key == "adapt_patch") {
    cfg.adapt.patch_size = parse_int(key, value);
  } else if (key == "border_crop") {
    cfg.border_crop = parse_int(key, value);
  } else if (key == "channel_mode") {
    if (value == "rgb") {
      cfg.channel_mode = ChannelMode::rgb;
    } else if (value == "luminance") {
      cfg.channel_mode = ChannelMode::luminance;
    } else {
      throw ConfigError("channel_mode: requires one of rgb, luminance (got '" + value + "')");
    }
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

inline void RunConfig::validate() const {
  arch.validate();
  train.validate();
  if (adapt_alpha && !(*adapt_alpha > 0.0)) throw ConfigError("adapt_alpha: requires adapt_alpha > 0");
  resolved_adapt().validate();
  if (border_crop && *border_crop < 0) throw ConfigError("border_crop: requires border_crop >= 0");
}

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Splits `key = value` lines. Blank lines and `#` comments are skipped.
inline ConfigEntries parse_config_text(const std::string& text, const std::string& source = "<config>") {
  ConfigEntries out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = detail::trim(std::string_view(body).substr(0, eq));
    std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// The preset (an override wins over the file) is applied first, then the
/// remaining file keys, then the remaining overrides, in order.
inline RunConfig resolve_config(const ConfigEntries& file_entries, const ConfigEntries& overrides = {}) {
  RunConfig cfg;
  std::optional<std::string> preset;
  for (const auto* entries : {&file_entries, &overrides}) {
    for (const auto& [k, v] : *entries) {
      if (k == "preset") preset = v;
    }
  }
  if (preset) apply_preset(cfg, *preset);
  for (const auto* entries : {&file_entries, &overrides}) {
    for (const auto& [k, v] : *entries) {
      if (k != "preset") apply_setting(cfg, k, v);
    }
  }
  cfg.validate();
  return cfg;
}

inline ConfigEntries read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Resolved configuration in the input format; feeding it back reproduces `cfg`.
inline std::string config_to_text(const RunConfig& cfg) {
  using detail::real_text;
  const auto& t = cfg.train;
  const auto mode = t.kernel_spec.mode == KernelMode::bicubic           ? "bicubic"
                    : t.kernel_spec.mode == KernelMode::random_gaussian ? "random"
                                                                        : "file";
  std::ostringstream os;
  os << "preset = " << cfg.preset << '\n'
     << "scale = " << cfg.arch.scale << '\n'
     << "layers = " << cfg.arch.layers << '\n'
     << "channels = " << cfg.arch.channels << '\n'
     << "kernel_size = " << cfg.arch.kernel_size << '\n'
     << "alpha = " << real_text(t.alpha) << '\n'
     << "beta = " << real_text(t.beta) << '\n'
     << "inner_steps = " << t.inner_steps << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "patch_size = " << t.patch_size << '\n'
     << "iterations = " << t.iterations << '\n'
     << "seed = " << t.seed << '\n'
     << "pretrain_lr = " << real_text(t.pretrain_lr) << '\n'
     << "pretrain_momentum = " << real_text(t.pretrain_momentum) << '\n'
     << "val_every = " << t.val_every << '\n'
     << "jobs = " << t.jobs << '\n'
     << "kernel = " << mode << '\n'
     << "kernel_path = " << t.kernel_spec.path << '\n'
     << "kernel_seed = " << t.kernel_spec.seed << '\n'
     << "sigma_min = " << real_text(t.kernel_spec.sigma_range[0]) << '\n'
     << "sigma_max = " << real_text(t.kernel_spec.sigma_range[1]) << '\n'
     << "adapt_steps = " << cfg.adapt.n << '\n'
     << "adapt_alpha = " << real_text(cfg.resolved_adapt().alpha) << '\n'
     << "record_every = " << cfg.adapt.record_every << '\n'
     << "adapt_patch = " << cfg.adapt.patch_size << '\n'
     << "border_crop = " << cfg.metric().border_crop << '\n'
     << "channel_mode = " << (cfg.channel_mode == ChannelMode::rgb ? "rgb" : "luminance") << '\n';
  return os.str();
}

}  // namespace mlsr
