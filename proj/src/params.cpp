#include "saot/params.hpp"

#include <cmath>

namespace saot {

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(value));
}

template <typename T>
Tensor<T>& ParamSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
const Tensor<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
BoundParams<T>::BoundParams(const ParamSet<T>& params, GradTape<T>* tape) {
  vars_.reserve(params.size());
  for (const auto& [name, value] : params.entries()) {
    index_[name] = vars_.size();
    vars_.push_back(tape ? tape->leaf(value) : Var<T>(value));
  }
}

template <typename T>
const Var<T>& BoundParams<T>::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unbound parameter '" + name + "'");
  return vars_[it->second];
}

template <typename T>
std::vector<Tensor<T>> BoundParams<T>::grads() const {
  std::vector<Tensor<T>> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(v.grad());
  return out;
}

template <typename T>
void adam_step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr,
               double weight_decay, const AdamConfig& cfg) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) throw DimensionError("adam_step: gradient count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].shape() != entries[i].second.shape())
      throw DimensionError("adam_step: gradient shape mismatch for '" + entries[i].first + "'");
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for '" + entries[i].first + "'");
  }
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(e.second.shape());
      state.v.emplace_back(e.second.shape());
    }
  }
  if (state.m.size() != entries.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<T>& p = entries[i].second;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (m.shape() != p.shape()) throw DimensionError("adam_step: state shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      double pj = p[j];
      pj -= lr * weight_decay * pj;
      pj -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p[j] = static_cast<T>(pj);
    }
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class BoundParams<float>;
template class BoundParams<double>;
template void adam_step<float>(ParamSet<float>&, const std::vector<Tensor<float>>&, AdamState<float>&, double,
                               double, const AdamConfig&);
template void adam_step<double>(ParamSet<double>&, const std::vector<Tensor<double>>&, AdamState<double>&, double,
                                double, const AdamConfig&);

}  // namespace saot
