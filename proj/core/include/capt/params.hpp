#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "capt/tape.hpp"
#include "capt/tensor.hpp"

namespace capt {

/// Named parameter tensors in insertion order.
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  // Registers the parameter on `tape` and returns its leaf.
  Var bind(Tape& tape, const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t element_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace capt
