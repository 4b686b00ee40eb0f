#include "capt/params.hpp"

#include "capt/error.hpp"

namespace capt {

void ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return values_[it->second];
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return values_[it->second];
}

Var ParamStore::bind(Tape& tape, const std::string& name) const { return tape.parameter(name, get(name)); }

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool operator==(const ParamStore& a, const ParamStore& b) { return a.names_ == b.names_ && a.values_ == b.values_; }

}  // namespace capt
