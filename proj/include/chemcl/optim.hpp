//
// Project ChemCL - Copyright 2026 ChemCL Developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef CHEMCL_OPTIM_HPP_
#define CHEMCL_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chemcl/error.hpp"
#include "chemcl/tensor.hpp"

namespace chemcl {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named trainable tensors plus Adam moment state. Insertion order is the
/// canonical iteration order, so runs are reproducible.
class ParameterSet {
 public:
  void add(const std::string &name, const Tensor &t) {
    if (!t.trainable())
      throw Error(errc::config_invalid,
                  "ParameterSet: '" + name + "' is not trainable");
    if (index_.count(name))
      throw Error(errc::config_invalid,
                  "ParameterSet: duplicate name '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, t, std::vector<double>(t.size(), 0.0),
                        std::vector<double>(t.size(), 0.0)});
  }

  /// Absorb all parameters of another set (names must not collide).
  void merge(const ParameterSet &other) {
    for (const Entry &e : other.entries_) add(e.name, e.tensor);
  }

  bool contains(const std::string &name) const { return index_.count(name); }

  Tensor &get(const std::string &name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error(errc::config_invalid, "ParameterSet: no '" + name + "'");
    return entries_[it->second].tensor;
  }

  const Tensor &get(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error(errc::config_invalid, "ParameterSet: no '" + name + "'");
    return entries_[it->second].tensor;
  }

  std::size_t size() const { return entries_.size(); }
  std::int64_t step_count() const { return step_; }

  struct Entry {
    std::string name;
    Tensor tensor;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
  };

  std::vector<Entry> &entries() { return entries_; }
  const std::vector<Entry> &entries() const { return entries_; }
  void set_step_count(std::int64_t t) { step_ = t; }

  /// Copy of all parameter values, for early-stopping snapshots.
  std::vector<std::vector<double>> snapshot_values() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries_.size());
    for (const Entry &e : entries_) {
      auto v = e.tensor.values();
      out.emplace_back(v.begin(), v.end());
    }
    return out;
  }

  void restore_values(const std::vector<std::vector<double>> &snap) {
    if (snap.size() != entries_.size())
      throw Error(errc::config_invalid, "restore_values: size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i)
      entries_[i].tensor.mutable_values() = snap[i];
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

/// One Adam update. Parameters whose gradient was never populated in this
/// round are skipped (their moments stay untouched, matching a zero-touch
/// sparse step); if nothing at all has a gradient the step is a bug and
/// raises missing_gradient. Populated gradients are zeroed after the update.
inline void adam_step(ParameterSet &params, const AdamConfig &cfg = {}) {
  bool any = false;
  for (const auto &e : params.entries()) any = any || e.tensor.has_grad();
  if (!any)
    throw Error(errc::missing_gradient,
                "adam_step: no parameter has a gradient");
  std::int64_t t = params.step_count() + 1;
  params.set_step_count(t);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto &e : params.entries()) {
    if (!e.tensor.has_grad()) continue;
    auto g = e.tensor.grad();
    auto &x = e.tensor.mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      double mhat = e.m[i] / bc1;
      double vhat = e.v[i] / bc2;
      x[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    e.tensor.clear_grad();
  }
}

}  // namespace chemcl

#endif  // CHEMCL_OPTIM_HPP_
