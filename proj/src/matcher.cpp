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

#include "vecloc/matcher.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <Eigen/QR>
#include <fmt/format.h>
#include "json.hpp"

#include "vecloc/errors.hpp"

namespace vecloc {
namespace {

using ad::Var;

template <class T>
std::vector<T> add(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<T> out;
  out.reserve(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out.push_back(a[k] + b[k]);
  return out;
}

template <class T>
std::span<const T> slice(const std::vector<T>& v, int begin, int count) {
  return {v.data() + begin, static_cast<std::size_t>(count)};
}

std::vector<double> sample_at(const BevGrid& grid, double u, double v) {
  std::vector<double> out(static_cast<std::size_t>(grid.channels), 0.0);
  accumulate_bilinear(grid, bilinear_stencil(grid.spec, u, v), 1.0, out);
  return out;
}

// One node per channel with the two position partials.
std::vector<Var> sample_at(const BevGrid& grid, const Var& u, const Var& v) {
  const std::size_t C = static_cast<std::size_t>(grid.channels);
  const BilinearStencil s = bilinear_stencil(grid.spec, u.val, v.val);
  std::vector<double> val(C, 0.0), du(C, 0.0), dv(C, 0.0);
  if (s.inside) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double* cell = grid.data.data() + static_cast<std::size_t>(s.node[k]) * C;
      for (std::size_t c = 0; c < C; ++c) {
        val[c] += s.weight[k] * cell[c];
        du[c] += s.dweight_du[k] * cell[c];
        dv[c] += s.dweight_dv[k] * cell[c];
      }
    }
  }
  std::vector<Var> out;
  out.reserve(C);
  if (!u.recorded() && !v.recorded()) {
    for (double x : val) out.emplace_back(x);
    return out;
  }
  ad::Tape& tape = ad::Tape::active();
  for (std::size_t c = 0; c < C; ++c) out.push_back(tape.node(val[c], u, du[c], v, dv[c]));
  return out;
}

template <class T>
void shape_linear(Linear<T>& l, int in, int out) {
  l = Linear<T>(in, out);
}

void fill_uniform(std::vector<double>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : v) x = dist(rng);
}

void init_linear(Linear<double>& l, std::mt19937_64& rng) {
  fill_uniform(l.w.v, 1.0 / std::sqrt(static_cast<double>(l.in())), rng);
  std::fill(l.b.begin(), l.b.end(), 0.0);
}

void init_mat(Mat<double>& m, std::mt19937_64& rng) {
  fill_uniform(m.v, 1.0 / std::sqrt(static_cast<double>(m.cols)), rng);
}

void set_identity(Mat<double>& m) {
  std::fill(m.v.begin(), m.v.end(), 0.0);
  for (int k = 0; k < std::min(m.rows, m.cols); ++k) m(k, k) = 1.0;
}

nlohmann::json dims_to_json(const MatcherDims& d) {
  return {{"channels", d.channels},     {"heads", d.heads},
          {"points", d.points},         {"layers", d.layers},
          {"ffn_hidden", d.ffn_hidden}, {"head_hidden", d.head_hidden},
          {"level_channels", d.level_channels}};
}

MatcherDims dims_from_json(const nlohmann::json& j) {
  MatcherDims d;
  d.channels = j.at("channels").get<int>();
  d.heads = j.at("heads").get<int>();
  d.points = j.at("points").get<int>();
  d.layers = j.at("layers").get<int>();
  d.ffn_hidden = j.at("ffn_hidden").get<int>();
  d.head_hidden = j.at("head_hidden").get<int>();
  d.level_channels = j.at("level_channels").get<std::array<int, kPyramidLevels>>();
  return d;
}

}  // namespace

MatcherDims MatcherDims::toy() {
  MatcherDims d;
  d.channels = 8;
  d.heads = 2;
  d.points = 2;
  d.layers = 1;
  d.ffn_hidden = 16;
  d.head_hidden = 4;
  d.level_channels = {8, 6, 4};
  return d;
}

void MatcherDims::validate() const {
  if (channels <= 0 || heads <= 0 || points <= 0 || layers < 0 || ffn_hidden <= 0 ||
      head_hidden <= 0) {
    throw ValidationError("matcher dims must be positive");
  }
  if (channels % heads != 0) {
    throw ValidationError("matcher channels must be divisible by heads");
  }
  if (level_channels[0] != channels) {
    throw ValidationError("level-0 channels must equal the matcher width");
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    const int c = level_channels[static_cast<std::size_t>(l)];
    if (c <= 0 || (l > 0 && c > level_channels[static_cast<std::size_t>(l - 1)])) {
      throw ValidationError("level channels must be positive and non-increasing");
    }
  }
}

template <class T>
Model<T> shaped_model(const MatcherDims& dims) {
  dims.validate();
  const int C = dims.channels;
  const int MP = dims.heads * dims.points;
  Model<T> m;
  m.dims = dims;
  m.table.E = Mat<T>(kNumSemanticTypes, C);
  shape_linear(m.params.pos1, kGeometrySlots, C);
  shape_linear(m.params.pos2, C, C);
  m.params.layers.resize(static_cast<std::size_t>(dims.layers));
  for (DecoderLayer<T>& layer : m.params.layers) {
    for (auto* v : {&layer.ln1_g, &layer.ln1_b, &layer.ln2_g, &layer.ln2_b, &layer.ln3_g,
                    &layer.ln3_b}) {
      v->assign(static_cast<std::size_t>(C), T(0.0));
    }
    for (auto* mat : {&layer.sa_q, &layer.sa_k, &layer.sa_v, &layer.sa_o, &layer.ca_v,
                      &layer.ca_o}) {
      *mat = Mat<T>(C, C);
    }
    shape_linear(layer.ca_offset, C, 2 * MP);
    shape_linear(layer.ca_weight, C, MP);
    shape_linear(layer.ffn1, C, dims.ffn_hidden);
    shape_linear(layer.ffn2, dims.ffn_hidden, C);
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    const int Cl = dims.level_channels[s];
    m.params.layer_proj[s] = Mat<T>(Cl, C);
    m.params.bev_proj[s] = Mat<T>(Cl, Cl);
    shape_linear(m.params.heads[s].l1, Cl, dims.head_hidden);
    shape_linear(m.params.heads[s].l2, dims.head_hidden, 1);
  }
  return m;
}

template Model<double> shaped_model<double>(const MatcherDims&);
template Model<Var> shaped_model<Var>(const MatcherDims&);

Model<double> init_model(const MatcherDims& dims, std::uint64_t seed) {
  Model<double> m = shaped_model<double>(dims);
  std::mt19937_64 rng(seed);
  fill_uniform(m.table.E.v, 1.0, rng);
  init_linear(m.params.pos1, rng);
  init_linear(m.params.pos2, rng);
  for (DecoderLayer<double>& layer : m.params.layers) {
    for (auto* g : {&layer.ln1_g, &layer.ln2_g, &layer.ln3_g}) {
      std::fill(g->begin(), g->end(), 1.0);
    }
    for (auto* mat : {&layer.sa_q, &layer.sa_k, &layer.sa_v, &layer.sa_o, &layer.ca_v,
                      &layer.ca_o}) {
      init_mat(*mat, rng);
    }
    init_linear(layer.ca_weight, rng);
    init_linear(layer.ffn1, rng);
    init_linear(layer.ffn2, rng);
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    if (l == 0) {
      set_identity(m.params.layer_proj[s]);
    } else {
      init_mat(m.params.layer_proj[s], rng);
    }
    set_identity(m.params.bev_proj[s]);
    init_linear(m.params.heads[s].l1, rng);
    init_linear(m.params.heads[s].l2, rng);
  }
  return m;
}

Model<double> oracle_model(const MatcherDims& dims_in, std::uint64_t seed,
                           const std::array<double, kPyramidLevels>& score_scale) {
  MatcherDims dims = dims_in;
  dims.layers = 0;
  dims.head_hidden = 1;
  for (int c : dims.level_channels) {
    if (c < kNumSemanticTypes) {
      throw ArgumentError("oracle matcher needs at least N_e channels per level");
    }
  }
  Model<double> m = shaped_model<double>(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(kNumSemanticTypes, kNumSemanticTypes);
  for (int r = 0; r < g.rows(); ++r) {
    for (int c = 0; c < g.cols(); ++c) g(r, c) = normal(rng);
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  for (int j = 0; j < kNumSemanticTypes; ++j) {
    for (int c = 0; c < kNumSemanticTypes; ++c) m.table.E(j, c) = q(j, c);
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    set_identity(m.params.layer_proj[s]);
    set_identity(m.params.bev_proj[s]);
    ScoreHead<double>& h = m.params.heads[s];
    std::fill(h.l1.w.v.begin(), h.l1.w.v.end(), 1.0);
    h.l2.w(0, 0) = score_scale[s];
  }
  return m;
}

std::size_t parameter_count(const Model<double>& model) {
  std::size_t n = 0;
  visit_tensors(model, [&](const std::string&, const auto& v, const auto&) { n += v.size(); });
  return n;
}

std::vector<double> flatten(const Model<double>& model) {
  std::vector<double> flat;
  visit_tensors(model, [&](const std::string&, const auto& v, const auto&) {
    flat.insert(flat.end(), v.begin(), v.end());
  });
  return flat;
}

void assign(Model<double>& model, std::span<const double> flat) {
  if (flat.size() != parameter_count(model)) {
    throw ArgumentError("assign: parameter vector has the wrong length");
  }
  std::size_t k = 0;
  visit_tensors(model, [&](const std::string&, auto& v, const auto&) {
    for (double& x : v) x = flat[k++];
  });
}

Model<Var> lift(const Model<double>& model, ad::Tape& tape) {
  const std::vector<double> flat = flatten(model);
  Model<Var> out = shaped_model<Var>(model.dims);
  std::size_t k = 0;
  visit_tensors(out, [&](const std::string&, auto& v, const auto&) {
    for (Var& x : v) x = tape.leaf(flat[k++]);
  });
  return out;
}

std::vector<double> gradient_of(const Model<Var>& model, std::span<const double> adjoints) {
  std::vector<double> grad;
  visit_tensors(model, [&](const std::string&, const auto& v, const auto&) {
    for (const Var& x : v) grad.push_back(ad::adjoint_of(x, adjoints));
  });
  return grad;
}

void save_checkpoint(const Model<double>& model, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  visit_tensors(model, [&](const std::string& name, const auto& v, const auto& shape) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"data", v}});
  });
  const nlohmann::json doc = {{"format", "vecloc-checkpoint"},
                              {"version", 1},
                              {"dims", dims_to_json(model.dims)},
                              {"tensors", tensors}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write checkpoint {}", path.string()));
  out << doc.dump() << "\n";
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

Model<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("checkpoint {}: {}", path.string(), e.what()));
  }
  try {
    if (doc.at("format") != "vecloc-checkpoint" || doc.at("version") != 1) {
      throw ParseError("unsupported checkpoint format or version");
    }
    Model<double> model = shaped_model<double>(dims_from_json(doc.at("dims")));
    std::map<std::string, const nlohmann::json*> by_name;
    for (const nlohmann::json& t : doc.at("tensors")) {
      by_name[t.at("name").get<std::string>()] = &t;
    }
    visit_tensors(model, [&](const std::string& name, auto& v, const auto& shape) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ParseError(fmt::format("missing tensor {}", name));
      const nlohmann::json& t = *it->second;
      if (t.at("shape").get<std::vector<int>>() != shape) {
        throw ParseError(fmt::format("tensor {} has the wrong shape", name));
      }
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != v.size()) {
        throw ParseError(fmt::format("tensor {} has the wrong length", name));
      }
      std::copy(data.begin(), data.end(), v.begin());
    });
    for (double x : flatten(model)) {
      if (!std::isfinite(x)) throw ValidationError("checkpoint contains non-finite values");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("checkpoint {}: {}", path.string(), e.what()));
  }
}

NormalizationFrame NormalizationFrame::around(const Pose6& pose, const GridSpec& spec) {
  return {pose.t.head<2>(), {0.5 * spec.extent_h(), 0.5 * spec.extent_w()}};
}

GeometryDescriptor normalize_element(const MapElement& element,
                                     const NormalizationFrame& frame) {
  GeometryDescriptor d = element.geom;
  auto point = [&](int k) {
    d[static_cast<std::size_t>(k)] = (d[static_cast<std::size_t>(k)] - frame.origin.x()) / frame.scale.x();
    d[static_cast<std::size_t>(k + 1)] =
        (d[static_cast<std::size_t>(k + 1)] - frame.origin.y()) / frame.scale.y();
  };
  point(0);
  switch (element.kind()) {
    case GeometryKind::kSegment:
      point(2);
      break;
    case GeometryKind::kVertical:
      d[3] /= frame.scale.x();
      break;
    case GeometryKind::kSurfel:
      break;
  }
  return d;
}

template <class T>
std::vector<std::vector<T>> positional_encode(const MatcherParams<T>& params,
                                              std::span<const GeometryDescriptor> normalized) {
  std::vector<std::vector<T>> out;
  out.reserve(normalized.size());
  for (const GeometryDescriptor& d : normalized) {
    for (double x : d) {
      if (!(std::abs(x) <= kMaxNormalizedMagnitude)) {
        throw ArgumentError(fmt::format(
            "positional_encode: descriptor slot {} exceeds the normalized range", x));
      }
    }
    const std::vector<T> x(d.begin(), d.end());
    const std::vector<T> hidden = gelu_all(apply(params.pos1, std::span<const T>(x)));
    out.push_back(apply(params.pos2, std::span<const T>(hidden)));
  }
  return out;
}

template <class T>
std::vector<std::vector<T>> init_queries(const std::vector<std::vector<T>>& pos,
                                         std::span<const SemanticType> types,
                                         const SemanticEmbeddingTable<T>& table) {
  if (pos.size() != types.size()) {
    throw ArgumentError("init_queries: encodings and types differ in length");
  }
  std::vector<std::vector<T>> q;
  q.reserve(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const int j = index_of(types[i]);
    if (j < 0 || j >= table.E.rows) {
      throw ArgumentError(fmt::format("init_queries: unknown semantic index {}", j));
    }
    const auto row = table.E.row(j);
    q.push_back(add(pos[i], std::vector<T>(row.begin(), row.end())));
  }
  return q;
}

template <class T>
std::vector<std::vector<T>> self_attention(const DecoderLayer<T>& layer,
                                           const MatcherDims& dims,
                                           const std::vector<std::vector<T>>& x,
                                           std::vector<Mat<double>>* attention) {
  const int K = static_cast<int>(x.size());
  const int C = dims.channels;
  const int d = dims.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<std::vector<T>> q(x.size()), k(x.size()), v(x.size());
  for (int i = 0; i < K; ++i) {
    const auto h = layer_norm(std::span<const T>(x[static_cast<std::size_t>(i)]),
                              std::span<const T>(layer.ln1_g), std::span<const T>(layer.ln1_b));
    q[static_cast<std::size_t>(i)] = matvec(layer.sa_q, std::span<const T>(h));
    k[static_cast<std::size_t>(i)] = matvec(layer.sa_k, std::span<const T>(h));
    v[static_cast<std::size_t>(i)] = matvec(layer.sa_v, std::span<const T>(h));
  }
  if (attention != nullptr) attention->assign(static_cast<std::size_t>(dims.heads), Mat<double>(K, K));
  std::vector<std::vector<T>> mixed(x.size(), std::vector<T>(static_cast<std::size_t>(C)));
  std::vector<T> logits(x.size());
  std::vector<T> column(x.size());
  for (int m = 0; m < dims.heads; ++m) {
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) {
        logits[static_cast<std::size_t>(j)] =
            dot(slice(q[static_cast<std::size_t>(i)], m * d, d),
                slice(k[static_cast<std::size_t>(j)], m * d, d)) *
            inv_sqrt_d;
      }
      const std::vector<T> a = softmax(std::span<const T>(logits));
      if (attention != nullptr) {
        for (int j = 0; j < K; ++j) {
          (*attention)[static_cast<std::size_t>(m)](i, j) = value_of(a[static_cast<std::size_t>(j)]);
        }
      }
      for (int c = m * d; c < (m + 1) * d; ++c) {
        for (int j = 0; j < K; ++j) {
          column[static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        }
        mixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
            dot(std::span<const T>(a), std::span<const T>(column));
      }
    }
  }
  std::vector<std::vector<T>> out;
  out.reserve(x.size());
  for (int i = 0; i < K; ++i) {
    out.push_back(add(x[static_cast<std::size_t>(i)],
                      matvec(layer.sa_o, std::span<const T>(mixed[static_cast<std::size_t>(i)]))));
  }
  return out;
}

template <class T>
std::vector<std::vector<T>> deformable_cross_attention(
    const DecoderLayer<T>& layer, const MatcherDims& dims,
    const std::vector<std::vector<T>>& x, std::span<const Eigen::Vector2d> refs,
    const BevGrid& bev_plus_pos) {
  if (refs.size() != x.size()) {
    throw ArgumentError("deformable_cross_attention: one reference point per query");
  }
  if (bev_plus_pos.channels != dims.channels) {
    throw ArgumentError("deformable_cross_attention: grid width differs from the matcher");
  }
  const int C = dims.channels;
  const int d = dims.head_dim();
  const int P = dims.points;
  std::vector<std::vector<T>> out;
  out.reserve(x.size());
  std::vector<std::vector<T>> samples(static_cast<std::size_t>(P));
  std::vector<T> column(static_cast<std::size_t>(P));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto h = layer_norm(std::span<const T>(x[i]), std::span<const T>(layer.ln2_g),
                              std::span<const T>(layer.ln2_b));
    const std::vector<T> offsets = apply(layer.ca_offset, std::span<const T>(h));
    const std::vector<T> weight_logits = apply(layer.ca_weight, std::span<const T>(h));
    std::vector<T> heads(static_cast<std::size_t>(C));
    std::vector<T> agg(static_cast<std::size_t>(C));
    for (int m = 0; m < dims.heads; ++m) {
      const std::vector<T> a = softmax(slice(weight_logits, m * P, P));
      for (int p = 0; p < P; ++p) {
        const std::size_t idx = static_cast<std::size_t>(m * P + p);
        const T u = offsets[2 * idx] + refs[i].x();
        const T v = offsets[2 * idx + 1] + refs[i].y();
        samples[static_cast<std::size_t>(p)] = sample_at(bev_plus_pos, u, v);
      }
      for (int c = 0; c < C; ++c) {
        for (int p = 0; p < P; ++p) {
          column[static_cast<std::size_t>(p)] = samples[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)];
        }
        agg[static_cast<std::size_t>(c)] = dot(std::span<const T>(a), std::span<const T>(column));
      }
      for (int r = m * d; r < (m + 1) * d; ++r) {
        heads[static_cast<std::size_t>(r)] = dot(layer.ca_v.row(r), std::span<const T>(agg));
      }
    }
    out.push_back(add(x[i], matvec(layer.ca_o, std::span<const T>(heads))));
  }
  return out;
}

template <class T>
std::vector<std::vector<T>> feed_forward(const DecoderLayer<T>& layer,
                                         const std::vector<std::vector<T>>& x) {
  std::vector<std::vector<T>> out;
  out.reserve(x.size());
  for (const std::vector<T>& xi : x) {
    const auto h = layer_norm(std::span<const T>(xi), std::span<const T>(layer.ln3_g),
                              std::span<const T>(layer.ln3_b));
    const std::vector<T> hidden = gelu_all(apply(layer.ffn1, std::span<const T>(h)));
    out.push_back(add(xi, apply(layer.ffn2, std::span<const T>(hidden))));
  }
  return out;
}

DecoderInputs prepare_decoder_inputs(std::span<const MapElement> elements,
                                     const Pose6& init_pose, const BevGrid& layer0) {
  DecoderInputs in;
  const NormalizationFrame frame = NormalizationFrame::around(init_pose, layer0.spec);
  for (const MapElement& e : elements) {
    in.descriptors.push_back(normalize_element(e, frame));
    in.types.push_back(e.sem);
    in.refs.push_back(project_endpoint_to_bev(init_pose, e.anchor(), layer0.spec));
  }
  in.bev_plus_pos = positional_encoding_2d(layer0.spec, layer0.channels);
  for (std::size_t k = 0; k < in.bev_plus_pos.data.size(); ++k) {
    in.bev_plus_pos.data[k] += layer0.data[k];
  }
  return in;
}

template <class T>
std::vector<std::vector<T>> decode(const Model<T>& model, const DecoderInputs& inputs) {
  auto q = init_queries(positional_encode(model.params, std::span<const GeometryDescriptor>(
                                                            inputs.descriptors)),
                        std::span<const SemanticType>(inputs.types), model.table);
  for (const DecoderLayer<T>& layer : model.params.layers) {
    q = self_attention(layer, model.dims, q);
    q = deformable_cross_attention(layer, model.dims, q,
                                   std::span<const Eigen::Vector2d>(inputs.refs),
                                   inputs.bev_plus_pos);
    q = feed_forward(layer, q);
  }
  return q;
}

std::vector<std::vector<double>> decode(const Model<double>& model,
                                        std::span<const MapElement> elements,
                                        const Pose6& init_pose, const BevGrid& layer0) {
  return decode(model, prepare_decoder_inputs(elements, init_pose, layer0));
}

std::vector<MapEmbedding> map_embeddings(std::span<const MapElement> elements,
                                         const std::vector<std::vector<double>>& values) {
  if (elements.size() != values.size()) {
    throw ArgumentError("map_embeddings: one embedding per element");
  }
  std::vector<MapEmbedding> out;
  out.reserve(elements.size());
  for (std::size_t i = 0; i < elements.size(); ++i) {
    out.push_back({elements[i].id, elements[i].sem, values[i]});
  }
  return out;
}

template <class T>
std::vector<T> level_embedding(const MatcherParams<T>& params, int level,
                               std::span<const T> v) {
  return matvec(params.layer_proj[static_cast<std::size_t>(level)], v);
}

BevGrid unify_channels(const BevGrid& grid, const Mat<double>& projection) {
  if (projection.cols != grid.channels) {
    throw ArgumentError("unify_channels: projection width differs from the grid");
  }
  BevGrid out(grid.spec, projection.rows, grid.layer);
  const std::size_t cells = static_cast<std::size_t>(grid.spec.H) * grid.spec.W;
  const std::size_t Ci = static_cast<std::size_t>(grid.channels);
  const std::size_t Co = static_cast<std::size_t>(projection.rows);
  for (std::size_t c = 0; c < cells; ++c) {
    const std::span<const double> in(grid.data.data() + c * Ci, Ci);
    for (std::size_t r = 0; r < Co; ++r) {
      out.data[c * Co + r] = dot(projection.row(static_cast<int>(r)), in);
    }
  }
  return out;
}

std::vector<std::vector<double>> semantic_logits(const BevGrid& grid,
                                                 const Model<double>& model, int level) {
  const std::size_t s = static_cast<std::size_t>(level);
  const BevGrid unified = unify_channels(grid, model.params.bev_proj[s]);
  const std::size_t cells = static_cast<std::size_t>(grid.spec.H) * grid.spec.W;
  const std::size_t C = static_cast<std::size_t>(unified.channels);
  std::vector<std::vector<double>> out;
  for (int j = 0; j < kNumSemanticTypes; ++j) {
    const std::vector<double> e = level_embedding(model.params, level, model.table.E.row(j));
    if (e.size() != C) throw ArgumentError("semantic_logits: channel mismatch");
    std::vector<double> z(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      z[c] = dot(std::span<const double>(unified.data.data() + c * C, C),
                 std::span<const double>(e));
    }
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<std::vector<double>> semantic_probabilities(const BevGrid& grid,
                                                        const Model<double>& model,
                                                        int level) {
  auto out = semantic_logits(grid, model, level);
  for (auto& type_grid : out) {
    for (double& z : type_grid) z = sigmoid(z);
  }
  return out;
}

#define VECLOC_INSTANTIATE(T)                                                           \
  template std::vector<std::vector<T>> positional_encode<T>(                            \
      const MatcherParams<T>&, std::span<const GeometryDescriptor>);                    \
  template std::vector<std::vector<T>> init_queries<T>(                                 \
      const std::vector<std::vector<T>>&, std::span<const SemanticType>,                \
      const SemanticEmbeddingTable<T>&);                                                \
  template std::vector<std::vector<T>> self_attention<T>(                               \
      const DecoderLayer<T>&, const MatcherDims&, const std::vector<std::vector<T>>&,   \
      std::vector<Mat<double>>*);                                                       \
  template std::vector<std::vector<T>> deformable_cross_attention<T>(                   \
      const DecoderLayer<T>&, const MatcherDims&, const std::vector<std::vector<T>>&,   \
      std::span<const Eigen::Vector2d>, const BevGrid&);                                \
  template std::vector<std::vector<T>> feed_forward<T>(                                 \
      const DecoderLayer<T>&, const std::vector<std::vector<T>>&);                      \
  template std::vector<std::vector<T>> decode<T>(const Model<T>&, const DecoderInputs&); \
  template std::vector<T> level_embedding<T>(const MatcherParams<T>&, int,              \
                                             std::span<const T>);

VECLOC_INSTANTIATE(double)
VECLOC_INSTANTIATE(Var)

#undef VECLOC_INSTANTIATE

}  // namespace vecloc
