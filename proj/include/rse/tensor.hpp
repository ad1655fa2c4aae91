// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef RSE_TENSOR_HPP_
#define RSE_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "rse/util.hpp"

namespace rse {

// Dense row-major tensor of doubles. Most of the model works with rank-2
// [rows, cols]; helper accessors assume that layout.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), 0.0);
  }
  Tensor(size_t r, size_t c) : Tensor(std::vector<size_t>{r, c}) {}

  static size_t numel_of(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
  }

  size_t numel() const { return v.size(); }
  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(size_t r, size_t c) { return v[r * cols() + c]; }
  double at(size_t r, size_t c) const { return v[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros(size_t r, size_t c) { return Tensor(r, c); }

  static Tensor full(size_t r, size_t c, double value) {
    Tensor t(r, c);
    for (double& x : t.v) x = value;
    return t;
  }

  static Tensor scalar(double value) { return full(1, 1, value); }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows_in) {
    if (rows_in.empty()) throw DataError("Tensor::from_rows: empty input");
    Tensor t(rows_in.size(), rows_in[0].size());
    for (size_t r = 0; r < rows_in.size(); ++r) {
      if (rows_in[r].size() != t.cols())
        throw DataError("Tensor::from_rows: ragged rows");
      for (size_t c = 0; c < t.cols(); ++c) t.at(r, c) = rows_in[r][c];
    }
    return t;
  }

  // Uniform in [-a, a], deterministic under rng.
  static Tensor uniform(size_t r, size_t c, double a, Rng& rng) {
    Tensor t(r, c);
    for (double& x : t.v) x = rng.uniform(-a, a);
    return t;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace rse

#endif  // RSE_TENSOR_HPP_
