#pragma once

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trasend/tape.hpp"
#include "trasend/tensor.hpp"

namespace trasend {

enum class ParamGroup { feature_extractor, output_layer };

inline const char* param_group_name(ParamGroup g) {
  return g == ParamGroup::output_layer ? "output_layer" : "feature_extractor";
}

inline ParamGroup param_group_from_name(const std::string& s) {
  if (s == "output_layer") return ParamGroup::output_layer;
  if (s == "feature_extractor") return ParamGroup::feature_extractor;
  throw ConfigError("unknown parameter group: " + s);
}

/// One named model parameter. Non-trainable entries carry persistent state
/// (batch-norm running statistics) that checkpoints must round-trip.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  ParamGroup group = ParamGroup::feature_extractor;
  bool trainable = true;
};

template <typename S>
class ParamTable {
 public:
  Parameter<S>& add(std::string name, Tensor<S> value, ParamGroup group, bool trainable = true) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    items_.push_back(Parameter<S>{std::move(name), std::move(value), group, trainable});
    return items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return items_[it->second];
  }
  const Parameter<S>& at(const std::string& name) const {
    return const_cast<ParamTable*>(this)->at(name);
  }

  std::vector<Parameter<S>>& items() { return items_; }
  const std::vector<Parameter<S>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  int64_t total_values() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.value.numel();
    return n;
  }

 private:
  std::vector<Parameter<S>> items_;
  std::unordered_map<std::string, size_t> index_;
};

template <typename S>
using GradMap = std::map<std::string, Tensor<S>>;

/// Leaf bindings of a parameter table onto one tape, created per forward pass.
template <typename S>
class BoundParams {
 public:
  BoundParams(GradTape<S>& tape, ParamTable<S>& table) : table_(&table) {
    for (auto& p : table.items()) {
      vars_.emplace(p.name, tape.leaf(p.value, p.trainable));
    }
  }

  Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractError("parameter not bound: " + name);
    return it->second;
  }

  ParamTable<S>& table() const { return *table_; }

  // Gradients for every trainable parameter; exactly zero where the loss did
  // not reach the parameter.
  GradMap<S> collect_grads(const GradTape<S>& tape) const {
    GradMap<S> grads;
    for (const auto& p : table_->items()) {
      if (!p.trainable) continue;
      grads.emplace(p.name, tape.grad_or_zeros(vars_.at(p.name)));
    }
    return grads;
  }

 private:
  ParamTable<S>* table_;
  std::unordered_map<std::string, Var> vars_;
};

// Runs the reverse sweep and gathers per-parameter gradients.
template <typename S>
GradMap<S> backward(GradTape<S>& tape, Var loss, const BoundParams<S>& params) {
  tape.backward(loss);
  return params.collect_grads(tape);
}

// Fan-balanced uniform initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename S>
Tensor<S> glorot_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out,
                         std::mt19937_64& rng) {
  S limit = std::sqrt(S(6) / S(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-static_cast<double>(limit), static_cast<double>(limit));
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(u(rng));
  return t;
}

}  // namespace trasend
