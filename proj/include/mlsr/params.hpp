#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mlsr/error.hpp"
#include "mlsr/random.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ParamTag {};
struct GradTag {};

/// Ordered collection of uniquely named tensors. Insertion order is the
/// iteration order and the serialization order.
template <class T, class Tag>
class TensorSet {
 public:
  using Entry = NamedTensor<T>;

  TensorSet() = default;

  void add(std::string name, Tensor<T> value) {
    if (find(name) != nullptr) throw ContractError("duplicate tensor name '" + name + "'");
    entries_.push_back({std::move(name), std::move(value)});
  }

  const Tensor<T>* find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &it->value;
  }

  const Tensor<T>& at(const std::string& name) const {
    const Tensor<T>* t = find(name);
    if (t == nullptr) throw ContractError("no tensor named '" + name + "'");
    return *t;
  }
  Tensor<T>& at(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Entry& operator[](std::size_t i) noexcept { return entries_[i]; }
  const Entry& operator[](std::size_t i) const noexcept { return entries_[i]; }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  std::size_t total_count() const noexcept {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

  friend bool operator==(const TensorSet&, const TensorSet&) = default;

 private:
  std::vector<Entry> entries_;
};

template <class T>
using ParamSet = TensorSet<T, ParamTag>;
template <class T>
using GradSet = TensorSet<T, GradTag>;

template <class Out, class T, class Tag>
Out zeros_like(const TensorSet<T, Tag>& s) {
  Out out;
  for (const auto& e : s) out.add(e.name, Tensor<T>(e.value.shape()));
  return out;
}

template <class U, class T, class Tag>
TensorSet<U, Tag> cast_set(const TensorSet<T, Tag>& s) {
  TensorSet<U, Tag> out;
  for (const auto& e : s) out.add(e.name, tensor_cast<U>(e.value));
  return out;
}

template <class T, class TagA, class TagB>
void check_paired(const TensorSet<T, TagA>& a, const TensorSet<T, TagB>& b, const char* what) {
  if (a.size() != b.size()) {
    throw ContractError(std::string(what) + ": " + std::to_string(a.size()) + " tensors vs " +
                        std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].value.shape() != b[i].value.shape()) {
      throw ContractError(std::string(what) + ": entry " + std::to_string(i) + " '" + a[i].name +
                          "' " + to_string(a[i].value.shape()) + " vs '" + b[i].name + "' " +
                          to_string(b[i].value.shape()));
    }
  }
}

/// acc += g, entry by entry.
template <class T>
void accumulate(GradSet<T>& acc, const GradSet<T>& g) {
  check_paired(acc, g, "accumulate");
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto dst = acc[i].value.data();
    auto src = g[i].value.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

/// Returns params - lr * grads. The input is left untouched.
template <class T>
ParamSet<T> sgd_step(const ParamSet<T>& params, const GradSet<T>& grads, T lr) {
  check_paired(params, grads, "sgd_step");
  ParamSet<T> out = params;
  if (lr == T{0}) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out[i].value.data();
    auto g = grads[i].value.data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    if (!out[i].value.all_finite()) {
      throw NumericError("sgd_step: parameter '" + out[i].name + "' became non-finite");
    }
  }
  return out;
}

struct FdOptions {
  // Coordinates checked; 0 means every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Below this magnitude (both gradients) the error is absolute.
  double abs_threshold = 1e-6;
};

template <class T>
using LossGradFn = std::function<std::pair<T, GradSet<T>>(const ParamSet<T>&)>;

// True when a probe point lies on the same smooth piece of a piecewise-smooth
// loss as the base point (e.g. identical ReLU sign pattern).
template <class T>
using SamePieceFn = std::function<bool(const ParamSet<T>&)>;

struct FdReport {
  double worst = 0.0;        // worst error over checked coordinates
  std::size_t checked = 0;
  std::size_t skipped = 0;   // probe crossed a non-differentiable point
};

/// Central differences (L(p+eps) - L(p-eps)) / 2eps of `loss` at `params`
/// against the analytic gradient `grads`, over a sampled set of coordinates.
/// The loss may run at a different precision U than the gradient (a 64-bit
/// oracle for a 32-bit gradient). Coordinates whose probes leave the base
/// point's smooth piece are skipped: the quotient is no derivative estimate.
template <class U, class T>
FdReport finite_difference_report(const std::function<U(const ParamSet<U>&)>& loss, const ParamSet<U>& params,
                                  const GradSet<T>& grads, U eps, const FdOptions& opt = {},
                                  const SamePieceFn<U>& same_piece = {}) {
  if (!(eps > U{0})) throw ContractError("finite_difference_check: eps must be > 0");
  if (!std::isfinite(loss(params))) throw NumericError("finite_difference_check: non-finite loss at base point");
  check_paired(params, cast_set<U>(grads), "finite_difference_check");

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].value.size(); ++j) coords.emplace_back(i, j);
  }
  if (opt.max_coords != 0 && opt.max_coords < coords.size()) {
    Rng rng(opt.seed);
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < opt.max_coords; ++k) {
      std::swap(coords[k], coords[k + rng.index(coords.size() - k)]);
    }
    coords.resize(opt.max_coords);
  }

  FdReport rep;
  ParamSet<U> probe = params;
  for (auto [i, j] : coords) {
    U& p = probe[i].value[j];
    const U orig = p;
    p = orig + eps;
    const U up = loss(probe);
    const bool up_same = !same_piece || same_piece(probe);
    p = orig - eps;
    const U down = loss(probe);
    const bool down_same = !same_piece || same_piece(probe);
    p = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_check: non-finite loss probing '" + params[i].name +
                         "'[" + std::to_string(j) + "]");
    }
    if (!up_same || !down_same) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
    const double analytic = grads[i].value[j];
    const double scale = std::max(std::abs(numeric), std::abs(analytic));
    const double diff = std::abs(numeric - analytic);
    rep.worst = std::max(rep.worst, scale < opt.abs_threshold ? diff : diff / scale);
    ++rep.checked;
  }
  return rep;
}

template <class T>
FdReport finite_difference_report(const LossGradFn<T>& fn, const ParamSet<T>& params, T eps,
                                  const FdOptions& opt = {}, const SamePieceFn<T>& same_piece = {}) {
  const GradSet<T> grads = fn(params).second;
  const std::function<T(const ParamSet<T>&)> loss = [&](const ParamSet<T>& p) { return fn(p).first; };
  return finite_difference_report<T, T>(loss, params, grads, eps, opt, same_piece);
}

/// Worst error of finite_difference_report.
template <class T>
double finite_difference_check(const LossGradFn<T>& fn, const ParamSet<T>& params, T eps, const FdOptions& opt = {},
                               const SamePieceFn<T>& same_piece = {}) {
  return finite_difference_report(fn, params, eps, opt, same_piece).worst;
}

}  // namespace mlsr
