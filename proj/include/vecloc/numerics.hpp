/*
 * Copyright 2026 The vecloc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef VECLOC_NUMERICS_HPP_
#define VECLOC_NUMERICS_HPP_

// Small dense containers and kernels written once for `double` and
// `ad::Var`.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <type_traits>
#include <vector>

namespace vecloc {

namespace ad {
struct Var;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

// tanh approximation.
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline double gelu_derivative(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double v = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) v += a[k] * b[k];
  return v;
}

inline double affine(double bias, std::span<const double> w,
                     std::span<const double> x) {
  return bias + dot(w, x);
}

inline double value_of(double x) { return x; }

inline double sum(std::span<const double> x) {
  double v = 0.0;
  for (double e : x) v += e;
  return v;
}

// Row-major matrix.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c) {}

  T& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
  std::span<T> row(int r) {
    return {v.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  std::span<const T> row(int r) const {
    return {v.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
};

// y = W x + b
template <class T>
struct Linear {
  Mat<T> w;
  std::vector<T> b;

  Linear() = default;
  Linear(int in, int out) : w(out, in), b(static_cast<std::size_t>(out)) {}

  int in() const { return w.cols; }
  int out() const { return w.rows; }
};

template <class T>
std::vector<T> apply(const Linear<T>& layer, std::span<const T> x) {
  std::vector<T> y;
  y.reserve(static_cast<std::size_t>(layer.out()));
  for (int r = 0; r < layer.out(); ++r) {
    y.push_back(affine(layer.b[static_cast<std::size_t>(r)], layer.w.row(r), x));
  }
  return y;
}

template <class T>
std::vector<T> matvec(const Mat<T>& m, std::span<const T> x) {
  std::vector<T> y;
  y.reserve(static_cast<std::size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r) y.push_back(dot(m.row(r), x));
  return y;
}

template <class T>
std::vector<T> gelu_all(std::vector<T> x) {
  for (T& e : x) e = gelu(e);
  return x;
}

// Max-subtracted softmax. The shift is a constant so it does not alter the
// recorded gradient.
template <class T>
std::vector<T> softmax(std::span<const T> x) {
  using std::exp;
  double shift = -std::numeric_limits<double>::infinity();
  for (const T& e : x) shift = std::max(shift, value_of(e));
  std::vector<T> out;
  out.reserve(x.size());
  for (const T& e : x) out.push_back(exp(e - shift));
  const T total = sum(std::span<const T>(out));
  for (T& e : out) e = e / total;
  return out;
}

template <class T>
T logsumexp(std::span<const T> x) {
  using std::exp;
  using std::log;
  double shift = -std::numeric_limits<double>::infinity();
  for (const T& e : x) shift = std::max(shift, value_of(e));
  std::vector<T> terms;
  terms.reserve(x.size());
  for (const T& e : x) terms.push_back(exp(e - shift));
  return log(sum(std::span<const T>(terms))) + shift;
}

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain,
                          std::span<const T> bias) {
  using std::sqrt;
  const double n = static_cast<double>(x.size());
  const T mean = sum(x) / n;
  std::vector<T> centered;
  centered.reserve(x.size());
  for (const T& e : x) centered.push_back(e - mean);
  const T var = dot(std::span<const T>(centered), std::span<const T>(centered)) / n;
  const T inv = 1.0 / sqrt(var + kLayerNormEps);
  std::vector<T> y;
  y.reserve(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    y.push_back(centered[k] * inv * gain[k] + bias[k]);
  }
  return y;
}

}  // namespace vecloc

#include "vecloc/autodiff.hpp"

namespace vecloc {

using ad::gelu;
using ad::sigmoid;
using ad::dot;
using ad::affine;
using ad::sum;

}  // namespace vecloc

#endif  // VECLOC_NUMERICS_HPP_
