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

#include <cmath>
#include <functional>
#include <random>

#include "gtest/gtest.h"
#include "support/oracles.hpp"
#include "vecloc/matcher.hpp"

namespace vecloc::ad {
namespace {

double Central(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct UnaryCase {
  const char* name;
  std::function<Var(const Var&)> f;
  std::function<double(double)> g;
  double lo, hi;
};

TEST(AutodiffTest, UnaryDerivatives) {
  const std::vector<UnaryCase> cases{
      {"exp", [](const Var& x) { return exp(x); }, [](double x) { return std::exp(x); }, -3, 3},
      {"log", [](const Var& x) { return log(x); }, [](double x) { return std::log(x); }, 0.1, 5},
      {"sqrt", [](const Var& x) { return sqrt(x); }, [](double x) { return std::sqrt(x); }, 0.1, 5},
      {"tanh", [](const Var& x) { return tanh(x); }, [](double x) { return std::tanh(x); }, -3, 3},
      {"sigmoid", [](const Var& x) { return sigmoid(x); },
       [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, -6, 6},
      {"gelu", [](const Var& x) { return gelu(x); }, [](double x) { return oracle::gelu(x); }, -4, 4},
      {"neg", [](const Var& x) { return -x; }, [](double x) { return -x; }, -3, 3},
  };
  std::mt19937_64 rng(1);
  for (const auto& c : cases) {
    for (int k = 0; k < 20; ++k) {
      const double x0 = oracle::uniform(rng, c.lo, c.hi);
      Tape tape;
      Tape::Scope scope(tape);
      const Var x = tape.leaf(x0);
      const Var y = c.f(x);
      EXPECT_NEAR(y.val, c.g(x0), 1e-12) << c.name;
      EXPECT_NEAR(tape.gradient(y)[static_cast<std::size_t>(x.idx)], Central(c.g, x0), 1e-6) << c.name;
    }
  }
}

TEST(AutodiffTest, CompositeMatchesFiniteDifferences) {
  // f(a, b) = exp(a * b) / (1 + a^2) - sqrt(b) * tanh(a - b)
  const auto f = [](auto a, auto b) {
    using std::exp, std::sqrt, std::tanh;
    return exp(a * b) / (1.0 + a * a) - sqrt(b) * tanh(a - b);
  };
  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    const double a0 = oracle::uniform(rng, -1, 1), b0 = oracle::uniform(rng, 0.2, 2);
    Tape tape;
    Tape::Scope scope(tape);
    const Var a = tape.leaf(a0), b = tape.leaf(b0);
    const Var y = f(a, b);
    const auto g = tape.gradient(y);
    EXPECT_NEAR(g[0], Central([&](double x) { return f(x, b0); }, a0), 1e-6);
    EXPECT_NEAR(g[1], Central([&](double x) { return f(a0, x); }, b0), 1e-6);
  }
}

TEST(AutodiffTest, ReusedVariableAccumulates) {
  Tape tape;
  Tape::Scope scope(tape);
  const Var x = tape.leaf(3.0);
  const Var y = x * x * x + x;  // 3x^2 + 1 = 28
  EXPECT_DOUBLE_EQ(tape.gradient(y)[0], 28.0);
}

TEST(AutodiffTest, ConstantsAreNotRecorded) {
  const Var c = Var(2.0) * Var(3.0) + exp(Var(0.0));
  EXPECT_FALSE(c.recorded());
  EXPECT_DOUBLE_EQ(c.val, 7.0);
  Tape tape;
  Tape::Scope scope(tape);
  const Var x = tape.leaf(1.0);
  const std::size_t before = tape.size();
  const Var y = x * c;
  EXPECT_EQ(tape.size(), before + 1);
  EXPECT_DOUBLE_EQ(tape.gradient(y)[0], 7.0);
  EXPECT_EQ(tape.gradient(c), std::vector<double>(tape.size(), 0.0));
}

TEST(AutodiffTest, DotAffineSum) {
  Tape tape;
  Tape::Scope scope(tape);
  std::vector<Var> w, x;
  for (int k = 0; k < 4; ++k) w.push_back(tape.leaf(k + 1.0));
  for (int k = 0; k < 4; ++k) x.push_back(tape.leaf(0.5 * k - 1.0));
  const Var bias = tape.leaf(0.25);
  const Var d = dot(w, x);
  const Var a = affine(bias, w, x);
  const Var s = sum(x);
  EXPECT_DOUBLE_EQ(d.val, 1 * -1.0 + 2 * -0.5 + 3 * 0.0 + 4 * 0.5);
  EXPECT_DOUBLE_EQ(a.val, d.val + 0.25);
  EXPECT_DOUBLE_EQ(s.val, -1.0);
  const auto ga = tape.gradient(a);
  for (int k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(ga[static_cast<std::size_t>(w[k].idx)], x[k].val);
    EXPECT_DOUBLE_EQ(ga[static_cast<std::size_t>(x[k].idx)], w[k].val);
  }
  EXPECT_DOUBLE_EQ(ga[static_cast<std::size_t>(bias.idx)], 1.0);
  const auto gs = tape.gradient(s);
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(gs[static_cast<std::size_t>(x[k].idx)], 1.0);
}

TEST(AutodiffTest, FusedOpBackward) {
  // Fused y = (x0 * x1, x0 + x1) with a hand-written backward.
  Tape tape;
  Tape::Scope scope(tape);
  const Var x0 = tape.leaf(2.0), x1 = tape.leaf(5.0);
  const std::vector<double> vals{10.0, 7.0};
  const auto y = tape.fused(vals, [=](std::span<const double> gy, std::span<double> adj) {
    adj[static_cast<std::size_t>(x0.idx)] += gy[0] * 5.0 + gy[1];
    adj[static_cast<std::size_t>(x1.idx)] += gy[0] * 2.0 + gy[1];
  });
  const Var out = y[0] * 3.0 + y[1] * y[1];  // d/dy0 = 3, d/dy1 = 14
  const auto g = tape.gradient(out);
  EXPECT_DOUBLE_EQ(g[static_cast<std::size_t>(x0.idx)], 3.0 * 5.0 + 14.0);
  EXPECT_DOUBLE_EQ(g[static_cast<std::size_t>(x1.idx)], 3.0 * 2.0 + 14.0);
}

TEST(AutodiffTest, ForeignVariableThrows) {
  Tape a, b;
  const Var x = a.leaf(1.0);
  Tape::Scope scope(b);
  EXPECT_THROW(x * x, NotRecordedError);
  EXPECT_THROW(b.gradient(x), NotRecordedError);
}

TEST(AutodiffTest, NoActiveTapeThrows) {
  Tape t;
  const Var x = t.leaf(1.0);
  EXPECT_FALSE(Tape::has_active());
  EXPECT_THROW(exp(x), NotRecordedError);
}

TEST(AutodiffTest, ScopesNest) {
  Tape outer, inner;
  {
    Tape::Scope s1(outer);
    EXPECT_EQ(&Tape::active(), &outer);
    {
      Tape::Scope s2(inner);
      EXPECT_EQ(&Tape::active(), &inner);
    }
    EXPECT_EQ(&Tape::active(), &outer);
  }
  EXPECT_FALSE(Tape::has_active());
}

// Recorded decoder pass against central differences of the double pass, on
// a scalar probe of the output embeddings.
TEST(AutodiffTest, DecoderGradientMatchesFiniteDifferences) {
  MatcherDims dims;
  dims.channels = 8;
  dims.heads = 2;
  dims.points = 2;
  dims.layers = 1;
  dims.ffn_hidden = 8;
  dims.head_hidden = 4;
  dims.level_channels = {8, 4, 4};
  Model<double> m = init_model(dims, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.3);
  auto flat = flatten(m);
  for (double& v : flat) v += n(rng);
  assign(m, flat);

  const BevGrid bev = oracle::random_grid(GridSpec::centered(12, 12, 0.5), 8, rng);
  Pose6 p;
  p.t = {0.3, -0.2, 1.8};
  const std::vector elements{MapElement::vertical(1, SemanticType::kPole, {1, 1}, 5),
                             MapElement::segment(2, SemanticType::kLaneLine, {-2, 0}, {2, 1})};
  const DecoderInputs in = prepare_decoder_inputs(elements, p, bev);
  std::vector<double> probe(16);
  for (double& v : probe) v = n(rng);
  const auto value = [&](const Model<double>& model) {
    const auto e = decode(model, in);
    double s = 0.0;
    for (int i = 0; i < 2; ++i) {
      for (int c = 0; c < 8; ++c) s += probe[static_cast<std::size_t>(i * 8 + c)] * e[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    return s;
  };

  Tape tape;
  const Model<Var> lifted = lift(m, tape);
  Tape::Scope scope(tape);
  const auto e = decode(lifted, in);
  Var s(0.0);
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 8; ++c) s = s + probe[static_cast<std::size_t>(i * 8 + c)] * e[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  EXPECT_NEAR(s.val, value(m), 1e-12);
  const auto grad = gradient_of(lifted, tape.gradient(s));

  double worst = 0.0;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    Model<double> plus = m, minus = m;
    auto fp = flat, fm = flat;
    fp[k] += 1e-5;
    fm[k] -= 1e-5;
    assign(plus, fp);
    assign(minus, fm);
    const double numeric = (value(plus) - value(minus)) / 2e-5;
    const double rel = std::abs(grad[k] - numeric) / std::max({std::abs(grad[k]), std::abs(numeric), 1e-3});
    worst = std::max(worst, rel);
  }
  EXPECT_LT(worst, 1e-5);
}

}  // namespace
}  // namespace vecloc::ad
