#include "seqtrojan/tensor.hpp"

#include <cstring>

#include "seqtrojan/error.hpp"

namespace seqtrojan {

Matrix& ParameterStore::add(std::string name, ParamGroup group, Index rows, Index cols) {
  if (contains(name)) throw Error(ErrorKind::Spec, "duplicate parameter " + name);
  entries_.push_back(Entry{std::move(name), group, Matrix::Zero(rows, cols)});
  return entries_.back().value;
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw Error(ErrorKind::Spec, "no parameter named " + std::string(name));
}

bool ParameterStore::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

bool ParameterStore::identical(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
    if (std::memcmp(a.value.data(), b.value.data(),
                    static_cast<std::size_t>(a.value.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

Gradients::Gradients(const ParameterStore& params) {
  grads_.reserve(params.size());
  for (const auto& e : params) grads_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
}

void Gradients::zero() {
  for (auto& g : grads_) g.setZero();
}

}  // namespace seqtrojan
