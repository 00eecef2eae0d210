#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rsdh/autodiff.hpp"

namespace rsdh {

/// Ordered collection of uniquely named tensors.
template <std::floating_point T>
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const { return entries_[position(name)].second; }
  Tensor<T>& at(const std::string& name) { return entries_[position(name)].second; }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  template <std::floating_point U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

  bool bit_equal(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].first != other.entries_[i].first) return false;
      if (!entries_[i].second.bit_equal(other.entries_[i].second)) return false;
    }
    return true;
  }

 private:
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter named '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters wrapped as Vars for one forward pass: tape leaves when
/// gradients are wanted, constants otherwise.
template <std::floating_point T>
class BoundParams {
 public:
  static BoundParams track(Tape<T>& tape, const ParamSet<T>& params) {
    BoundParams b;
    for (const auto& [name, t] : params.entries()) b.vars_.emplace(name, tape.leaf(t, name));
    return b;
  }

  static BoundParams constant(const ParamSet<T>& params) {
    BoundParams b;
    for (const auto& [name, t] : params.entries()) b.vars_.emplace(name, Var<T>(t));
    return b;
  }

  const Var<T>& operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("BoundParams: no parameter named '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

 private:
  std::unordered_map<std::string, Var<T>> vars_;
};

/// Prefix-qualified view of BoundParams, e.g. scope "enc1.0." + "norm1.weight".
template <std::floating_point T>
class ParamScope {
 public:
  ParamScope(const BoundParams<T>& params, std::string prefix = {}) : params_(&params), prefix_(std::move(prefix)) {}

  const Var<T>& operator()(const std::string& name) const { return (*params_)(prefix_ + name); }
  bool contains(const std::string& name) const { return params_->contains(prefix_ + name); }
  ParamScope sub(const std::string& name) const { return ParamScope(*params_, prefix_ + name + "."); }
  const std::string& prefix() const noexcept { return prefix_; }

 private:
  const BoundParams<T>* params_;
  std::string prefix_;
};

/// Declares parameters with deterministic initial values. Scopes share the
/// underlying set and generator, so declaration order fixes every value.
class ParamBuilder {
 public:
  ParamBuilder(ParamSet<float>& params, std::mt19937_64& rng, std::string prefix = {})
      : params_(&params), rng_(&rng), prefix_(std::move(prefix)) {}

  ParamBuilder sub(const std::string& name) const { return ParamBuilder(*params_, *rng_, prefix_ + name + "."); }

  /// Kaiming-uniform (fan-in) weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void kaiming(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<float> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(dist(*rng_));
    add(name, std::move(t));
  }

  void constant(const std::string& name, Shape shape, float value) { add(name, Tensor<float>(std::move(shape), value)); }

  void add(const std::string& name, Tensor<float> value) { params_->add(prefix_ + name, std::move(value)); }

  std::mt19937_64& rng() noexcept { return *rng_; }

 private:
  ParamSet<float>* params_;
  std::mt19937_64* rng_;
  std::string prefix_;
};

}  // namespace rsdh
