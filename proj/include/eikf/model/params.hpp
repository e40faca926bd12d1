#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "eikf/numeric/tape.hpp"

namespace eikf {

using Rng = std::mt19937_64;

/// Named collection of trainable tensors. Ids are dense indices in
/// registration order, which fixes the serialization order.
class ParamStore {
public:
  ParamId add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
    const ParamId id = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
    index_.emplace(name, id);
    return id;
  }

  std::size_t size() const noexcept { return values_.size(); }
  const Tensor& value(ParamId id) const { return values_.at(id); }
  Tensor& value(ParamId id) { return values_.at(id); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  const std::vector<Tensor>& values() const noexcept { return values_; }

  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Var on(Tape& tape, ParamId id) const { return tape.param(id, values_.at(id)); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, ParamId> index_;
};

/// Glorot-uniform matrix, bound sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng);
}

}  // namespace eikf
