#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "confopt/tensor.hpp"

namespace confopt {

// Named trainable tensors owned by a network. Ids are dense and stable for
// the lifetime of the network, which makes checkpointing and optimizer
// buffers straightforward.
class ParamSet {
 public:
  int add(std::string name, Tensor<float> value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  size_t count() const { return values_.size(); }
  const std::string& name(int id) const { return names_.at(id); }
  Tensor<float>& value(int id) { return values_.at(id); }
  const Tensor<float>& value(int id) const { return values_.at(id); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<float>> values_;
};

// Per-forward gradient map keyed by param id. Empty slot = no gradient.
struct GradMap {
  std::vector<Tensor<float>> grads;

  explicit GradMap(size_t n = 0) : grads(n) {}
  bool has(int id) const { return !grads.at(id).data.empty(); }
  const Tensor<float>& at(int id) const {
    if (!has(id)) throw std::invalid_argument("missing gradient for param " + std::to_string(id));
    return grads.at(id);
  }
};

}  // namespace confopt
