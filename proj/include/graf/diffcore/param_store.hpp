#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/diffcore/var.hpp"

namespace graf::ad {

// Named tensors of one model. Iteration is sorted by name. Trainable entries
// are differentiable leaves; buffers (e.g. power-iteration vectors) are not.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Var<T> var;
    bool trainable = true;
  };

  Var<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    auto [it, ok] = entries_.emplace(name, Entry{Var<T>(std::move(value), trainable), trainable});
    return it->second.var;
  }

  // Swap in an externally owned variable (same shape) under an existing name.
  void bind(const std::string& name, Var<T> var) {
    Var<T>& slot = at(name);
    if (slot.shape() != var.shape()) {
      throw ShapeError("bind '" + name + "': " + to_string(var.shape()) + " vs " + to_string(slot.shape()));
    }
    slot = std::move(var);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Var<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second.var;
  }
  Var<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second.var;
  }
  bool trainable(const std::string& name) const { return entries_.at(name).trainable; }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries_) {
      if (e.trainable) out.push_back(k);
    }
    return out;
  }

  std::vector<Var<T>> trainable_vars() const {
    std::vector<Var<T>> out;
    for (const auto& [k, e] : entries_) {
      if (e.trainable) out.push_back(e.var);
    }
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) {
      if (e.trainable) n += e.var.size();
    }
    return n;
  }

  // Trainable values concatenated in name order.
  std::vector<T> flatten() const {
    std::vector<T> out;
    for (const auto& [k, e] : entries_) {
      if (e.trainable) out.insert(out.end(), e.var.value().values().begin(), e.var.value().values().end());
    }
    return out;
  }

  void unflatten(const std::vector<T>& flat) {
    std::size_t off = 0;
    for (auto& [k, e] : entries_) {
      if (!e.trainable) continue;
      auto& v = e.var.mutable_value().values();
      if (off + v.size() > flat.size()) throw std::invalid_argument("unflatten: buffer too short");
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
      off += v.size();
    }
    if (off != flat.size()) throw std::invalid_argument("unflatten: buffer too long");
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, e] : entries_) out.add(k, e.var.value().template cast<U>(), e.trainable);
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// Gradients of scalar `root` for every trainable entry, keyed by name.
template <typename T>
std::map<std::string, Tensor<T>> backward(const Var<T>& root, const ParamStore<T>& params) {
  const std::vector<std::string> names = params.trainable_names();
  const std::vector<Var<T>> grads = grad(root, params.trainable_vars());
  std::map<std::string, Tensor<T>> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], grads[i].value());
  return out;
}

}  // namespace graf::ad
