#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace seqtrojan {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

enum class ParamGroup { Embedding, Encoder, Head };

// Ordered collection of named parameter tensors. Order is fixed by the model
// spec, so gradient vectors can be index-aligned with it.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Matrix value;
  };

  Matrix& add(std::string name, ParamGroup group, Index rows, Index cols);

  std::size_t size() const { return entries_.size(); }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Matrix& operator[](std::string_view name) { return entries_[index_of(name)].value; }
  const Matrix& operator[](std::string_view name) const { return entries_[index_of(name)].value; }

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const;

  // Bit-level equality of names, shapes and values.
  bool identical(const ParameterStore& other) const;

 private:
  std::vector<Entry> entries_;
};

// Gradient buffers index-aligned with a ParameterStore.
class Gradients {
 public:
  explicit Gradients(const ParameterStore& params);

  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }
  void zero();

 private:
  std::vector<Matrix> grads_;
};

}  // namespace seqtrojan
