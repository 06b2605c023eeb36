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

#ifndef VECLOC_AUTODIFF_HPP_
#define VECLOC_AUTODIFF_HPP_

// Minimal reverse-mode differentiation: a scalar tape with n-ary nodes and
// fused vector ops that supply their own backward pass.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace vecloc::ad {

class NotRecordedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A recorded scalar, or a constant when idx < 0.
struct Var {
  double val = 0.0;
  std::int32_t idx = -1;
  std::uint32_t tape = 0;

  Var() = default;
  Var(double v) : val(v) {}  // NOLINT(google-explicit-constructor)

  bool recorded() const { return idx >= 0; }
};

class Tape {
 public:
  // Receives the adjoints of the fused op's outputs and the full adjoint
  // vector, to which it adds the input contributions.
  using Backward =
      std::function<void(std::span<const double> output_adjoints,
                         std::span<double> adjoints)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  Var leaf(double value);

  // Node with explicit partial derivatives w.r.t. `parents`. Constant parents
  // are skipped.
  Var node(double value, std::span<const Var> parents,
           std::span<const double> partials);
  Var node(double value, const Var& a, double da);
  Var node(double value, const Var& a, double da, const Var& b, double db);

  // Reserves outputs of a fused op; `backward` runs once their adjoints are
  // final.
  std::vector<Var> fused(std::span<const double> values, Backward backward);

  // Adjoint of `output` with respect to every node on the tape.
  std::vector<double> gradient(const Var& output) const;

  std::size_t size() const { return edge_end_.size(); }
  std::uint32_t id() const { return id_; }

  // Throws NotRecordedError for variables recorded on another tape.
  void check(const Var& v) const {
    if (v.recorded() && (v.tape != id_ || static_cast<std::size_t>(v.idx) >= size())) {
      throw NotRecordedError("variable was not recorded on the active tape");
    }
  }

  static Tape& active();
  static bool has_active();

  // Makes a tape the target of overloaded operators for its lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope();

   private:
    Tape* previous_;
  };

 private:
  Var push(double value);

  std::uint32_t id_;
  std::vector<std::int64_t> edge_end_;
  std::vector<std::int32_t> parents_;
  std::vector<double> partials_;
  struct Callback {
    std::int32_t first;
    std::int32_t count;
    Backward fn;
  };
  std::vector<Callback> callbacks_;
};

inline double value_of(const Var& x) { return x.val; }

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var gelu(const Var& x);

// Single n-ary nodes for the inner loops of linear layers.
Var dot(std::span<const Var> a, std::span<const Var> b);
Var affine(const Var& bias, std::span<const Var> w, std::span<const Var> x);
Var sum(std::span<const Var> x);

// Adjoints of the given variables, read from a full adjoint vector.
double adjoint_of(const Var& v, std::span<const double> adjoints);

}  // namespace vecloc::ad

#endif  // VECLOC_AUTODIFF_HPP_
