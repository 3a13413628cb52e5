#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "saot/autodiff.hpp"

namespace saot {

// Named trainable tensors in insertion order. The order is part of the
// contract: optimizer state and serialized bundles follow it.
template <typename T>
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

  bool operator==(const ParamSet& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// A ParamSet viewed as Vars for one forward pass: tape leaves when a tape is
// given, constants otherwise.
template <typename T>
class BoundParams {
 public:
  BoundParams(const ParamSet<T>& params, GradTape<T>* tape);

  const Var<T>& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Gradients in ParamSet order (zeros for unused parameters).
  std::vector<Tensor<T>> grads() const;

 private:
  std::vector<Var<T>> vars_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long step = 0;
};

// One Adam step with decoupled weight decay. Rejects the whole update (and
// throws NumericError) if any gradient is non-finite.
template <typename T>
void adam_step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr,
               double weight_decay, const AdamConfig& cfg = {});

}  // namespace saot
