#pragma once

#include <deque>
#include <string>
#include <unordered_map>

#include "patchtts/tensor.hpp"

namespace patchtts {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
  bool decay = true;  // false for biases and norm gains
};

/// Named parameters in registration order. Iteration order is the order
/// of add() calls; checkpoints and the optimizer rely on it.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init, bool decay = true);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  size_t size() const { return params_.size(); }
  size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter& operator[](size_t i) { return params_[i]; }
  const Parameter& operator[](size_t i) const { return params_[i]; }

 private:
  std::deque<Parameter> params_;  // stable addresses for graph leaves
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace patchtts
