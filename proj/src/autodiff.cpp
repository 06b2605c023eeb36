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

#include "vecloc/autodiff.hpp"

#include <atomic>
#include <numbers>

#include "vecloc/numerics.hpp"

namespace vecloc::ad {
namespace {

std::atomic<std::uint32_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  if (active_tape == this) active_tape = nullptr;
}

Tape& Tape::active() {
  if (active_tape == nullptr) {
    throw NotRecordedError("no active tape for a recorded operation");
  }
  return *active_tape;
}

bool Tape::has_active() { return active_tape != nullptr; }

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }
Tape::Scope::~Scope() { active_tape = previous_; }

Var Tape::push(double value) {
  edge_end_.push_back(static_cast<std::int64_t>(parents_.size()));
  Var v(value);
  v.idx = static_cast<std::int32_t>(edge_end_.size() - 1);
  v.tape = id_;
  return v;
}

Var Tape::leaf(double value) { return push(value); }

Var Tape::node(double value, std::span<const Var> parents,
               std::span<const double> partials) {
  for (std::size_t k = 0; k < parents.size(); ++k) {
    const Var& p = parents[k];
    if (!p.recorded()) continue;
    check(p);
    parents_.push_back(p.idx);
    partials_.push_back(partials[k]);
  }
  return push(value);
}

Var Tape::node(double value, const Var& a, double da) {
  if (a.recorded()) {
    check(a);
    parents_.push_back(a.idx);
    partials_.push_back(da);
  }
  return push(value);
}

Var Tape::node(double value, const Var& a, double da, const Var& b, double db) {
  if (a.recorded()) {
    check(a);
    parents_.push_back(a.idx);
    partials_.push_back(da);
  }
  if (b.recorded()) {
    check(b);
    parents_.push_back(b.idx);
    partials_.push_back(db);
  }
  return push(value);
}

std::vector<Var> Tape::fused(std::span<const double> values, Backward backward) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(push(v));
  if (!out.empty()) {
    callbacks_.push_back({out.front().idx, static_cast<std::int32_t>(out.size()),
                          std::move(backward)});
  }
  return out;
}

std::vector<double> Tape::gradient(const Var& output) const {
  std::vector<double> adj(size(), 0.0);
  if (!output.recorded()) return adj;
  check(output);
  adj[static_cast<std::size_t>(output.idx)] = 1.0;
  auto cb = callbacks_.rbegin();
  for (std::int64_t k = output.idx; k >= 0; --k) {
    const double a = adj[static_cast<std::size_t>(k)];
    if (a != 0.0) {
      const std::int64_t begin = k == 0 ? 0 : edge_end_[static_cast<std::size_t>(k - 1)];
      const std::int64_t end = edge_end_[static_cast<std::size_t>(k)];
      for (std::int64_t e = begin; e < end; ++e) {
        adj[static_cast<std::size_t>(parents_[static_cast<std::size_t>(e)])] +=
            partials_[static_cast<std::size_t>(e)] * a;
      }
    }
    while (cb != callbacks_.rend() && cb->first > k) ++cb;
    while (cb != callbacks_.rend() && cb->first == k) {
      const std::span<const double> outs(adj.data() + cb->first,
                                         static_cast<std::size_t>(cb->count));
      bool any = false;
      for (double g : outs) any = any || g != 0.0;
      if (any) cb->fn(outs, adj);
      ++cb;
    }
  }
  return adj;
}

Var operator+(const Var& a, const Var& b) {
  if (!a.recorded() && !b.recorded()) return Var(a.val + b.val);
  return Tape::active().node(a.val + b.val, a, 1.0, b, 1.0);
}

Var operator-(const Var& a, const Var& b) {
  if (!a.recorded() && !b.recorded()) return Var(a.val - b.val);
  return Tape::active().node(a.val - b.val, a, 1.0, b, -1.0);
}

Var operator*(const Var& a, const Var& b) {
  if (!a.recorded() && !b.recorded()) return Var(a.val * b.val);
  return Tape::active().node(a.val * b.val, a, b.val, b, a.val);
}

Var operator/(const Var& a, const Var& b) {
  const double q = a.val / b.val;
  if (!a.recorded() && !b.recorded()) return Var(q);
  return Tape::active().node(q, a, 1.0 / b.val, b, -q / b.val);
}

Var operator-(const Var& a) {
  if (!a.recorded()) return Var(-a.val);
  return Tape::active().node(-a.val, a, -1.0);
}

Var exp(const Var& x) {
  const double e = std::exp(x.val);
  if (!x.recorded()) return Var(e);
  return Tape::active().node(e, x, e);
}

Var log(const Var& x) {
  const double l = std::log(x.val);
  if (!x.recorded()) return Var(l);
  return Tape::active().node(l, x, 1.0 / x.val);
}

Var sqrt(const Var& x) {
  const double s = std::sqrt(x.val);
  if (!x.recorded()) return Var(s);
  return Tape::active().node(s, x, 0.5 / s);
}

Var tanh(const Var& x) {
  const double t = std::tanh(x.val);
  if (!x.recorded()) return Var(t);
  return Tape::active().node(t, x, 1.0 - t * t);
}

Var sigmoid(const Var& x) {
  const double s = vecloc::sigmoid(x.val);
  if (!x.recorded()) return Var(s);
  return Tape::active().node(s, x, s * (1.0 - s));
}

Var gelu(const Var& x) {
  const double g = vecloc::gelu(x.val);
  if (!x.recorded()) return Var(g);
  return Tape::active().node(g, x, vecloc::gelu_derivative(x.val));
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
  double v = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    v += a[k].val * b[k].val;
    any = any || a[k].recorded() || b[k].recorded();
  }
  if (!any) return Var(v);
  std::vector<Var> parents;
  std::vector<double> partials;
  parents.reserve(2 * a.size());
  partials.reserve(2 * a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    parents.push_back(a[k]);
    partials.push_back(b[k].val);
    parents.push_back(b[k]);
    partials.push_back(a[k].val);
  }
  return Tape::active().node(v, parents, partials);
}

Var affine(const Var& bias, std::span<const Var> w, std::span<const Var> x) {
  double v = bias.val;
  bool any = bias.recorded();
  for (std::size_t k = 0; k < w.size(); ++k) {
    v += w[k].val * x[k].val;
    any = any || w[k].recorded() || x[k].recorded();
  }
  if (!any) return Var(v);
  std::vector<Var> parents;
  std::vector<double> partials;
  parents.reserve(2 * w.size() + 1);
  partials.reserve(2 * w.size() + 1);
  parents.push_back(bias);
  partials.push_back(1.0);
  for (std::size_t k = 0; k < w.size(); ++k) {
    parents.push_back(w[k]);
    partials.push_back(x[k].val);
    parents.push_back(x[k]);
    partials.push_back(w[k].val);
  }
  return Tape::active().node(v, parents, partials);
}

Var sum(std::span<const Var> x) {
  double v = 0.0;
  bool any = false;
  for (const Var& e : x) {
    v += e.val;
    any = any || e.recorded();
  }
  if (!any) return Var(v);
  std::vector<double> ones(x.size(), 1.0);
  return Tape::active().node(v, x, ones);
}

double adjoint_of(const Var& v, std::span<const double> adjoints) {
  if (!v.recorded()) return 0.0;
  return adjoints[static_cast<std::size_t>(v.idx)];
}

}  // namespace vecloc::ad
