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

#ifndef VECLOC_MATCHER_HPP_
#define VECLOC_MATCHER_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vecloc/bev_grid.hpp"
#include "vecloc/geometry.hpp"
#include "vecloc/map_core.hpp"
#include "vecloc/numerics.hpp"

namespace vecloc {

struct MatcherDims {
  int channels = 32;
  int heads = 4;
  int points = 4;
  int layers = 4;
  int ffn_hidden = 64;
  int head_hidden = 16;
  std::array<int, kPyramidLevels> level_channels{32, 16, 8};

  // Gradient-check scale.
  static MatcherDims toy();

  int head_dim() const { return channels / heads; }
  void validate() const;
  bool operator==(const MatcherDims&) const = default;
};

template <class T>
struct SemanticEmbeddingTable {
  Mat<T> E;  // N_e x C
};

template <class T>
struct DecoderLayer {
  std::vector<T> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  // Head m owns rows [m d, (m + 1) d) of q, k, v and columns of o.
  Mat<T> sa_q, sa_k, sa_v, sa_o;
  Linear<T> ca_offset;  // C -> M P 2, grid cells of layer 0
  Linear<T> ca_weight;  // C -> M P
  Mat<T> ca_v, ca_o;
  Linear<T> ffn1, ffn2;
};

// h: C_l -> hidden -> 1.
template <class T>
struct ScoreHead {
  Linear<T> l1;
  Linear<T> l2;
};

template <class T>
struct MatcherParams {
  Linear<T> pos1, pos2;  // 8 -> C -> C
  std::vector<DecoderLayer<T>> layers;
  std::array<Mat<T>, kPyramidLevels> layer_proj;  // C_l x C, embeddings
  std::array<Mat<T>, kPyramidLevels> bev_proj;    // C_l x C_l, BEV features
  std::array<ScoreHead<T>, kPyramidLevels> heads;
};

template <class T>
struct Model {
  MatcherDims dims;
  SemanticEmbeddingTable<T> table;
  MatcherParams<T> params;
};

// Calls f(name, values, shape) on every tensor in a fixed order. Works on
// const and mutable models alike.
template <class M, class F>
void visit_tensors(M& model, F&& f) {
  auto mat = [&](const std::string& name, auto& m) {
    f(name, m.v, std::vector<int>{m.rows, m.cols});
  };
  auto vec = [&](const std::string& name, auto& v) {
    f(name, v, std::vector<int>{static_cast<int>(v.size())});
  };
  auto lin = [&](const std::string& name, auto& l) {
    mat(name + ".w", l.w);
    vec(name + ".b", l.b);
  };
  mat("table", model.table.E);
  lin("pos1", model.params.pos1);
  lin("pos2", model.params.pos2);
  for (std::size_t k = 0; k < model.params.layers.size(); ++k) {
    auto& layer = model.params.layers[k];
    const std::string p = "layer" + std::to_string(k) + ".";
    vec(p + "ln1.g", layer.ln1_g);
    vec(p + "ln1.b", layer.ln1_b);
    mat(p + "sa.q", layer.sa_q);
    mat(p + "sa.k", layer.sa_k);
    mat(p + "sa.v", layer.sa_v);
    mat(p + "sa.o", layer.sa_o);
    vec(p + "ln2.g", layer.ln2_g);
    vec(p + "ln2.b", layer.ln2_b);
    lin(p + "ca.offset", layer.ca_offset);
    lin(p + "ca.weight", layer.ca_weight);
    mat(p + "ca.v", layer.ca_v);
    mat(p + "ca.o", layer.ca_o);
    vec(p + "ln3.g", layer.ln3_g);
    vec(p + "ln3.b", layer.ln3_b);
    lin(p + "ffn1", layer.ffn1);
    lin(p + "ffn2", layer.ffn2);
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::string p = "level" + std::to_string(l) + ".";
    mat(p + "layer_proj", model.params.layer_proj[static_cast<std::size_t>(l)]);
    mat(p + "bev_proj", model.params.bev_proj[static_cast<std::size_t>(l)]);
    lin(p + "head1", model.params.heads[static_cast<std::size_t>(l)].l1);
    lin(p + "head2", model.params.heads[static_cast<std::size_t>(l)].l2);
  }
}

// All tensors allocated and zero.
template <class T>
Model<T> shaped_model(const MatcherDims& dims);

// Fan-in scaled uniform weights, unit norm gains, zero biases, zero offset
// head, identity BEV projections.
Model<double> init_model(const MatcherDims& dims, std::uint64_t seed);

// Hand-built matcher for oracle scenes: no decoder layers and no positional
// path, so embeddings equal the semantic rows, which are orthonormal in the
// first N_e channels. Each level head computes scale_l * gelu(x . 1).
Model<double> oracle_model(const MatcherDims& dims, std::uint64_t seed,
                           const std::array<double, kPyramidLevels>& score_scale);

std::size_t parameter_count(const Model<double>& model);
std::vector<double> flatten(const Model<double>& model);
void assign(Model<double>& model, std::span<const double> flat);

// Records every parameter as a leaf on `tape`.
Model<ad::Var> lift(const Model<double>& model, ad::Tape& tape);
// Adjoints in flatten() order.
std::vector<double> gradient_of(const Model<ad::Var>& model,
                                std::span<const double> adjoints);

void save_checkpoint(const Model<double>& model, const std::filesystem::path& path);
Model<double> load_checkpoint(const std::filesystem::path& path);

// Maps coordinate slots to (p - origin) / scale. Heights use scale.x().
struct NormalizationFrame {
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  Eigen::Vector2d scale = Eigen::Vector2d::Ones();

  // Centered on the pose, scaled by the BEV half extents.
  static NormalizationFrame around(const Pose6& pose, const GridSpec& spec);
};

GeometryDescriptor normalize_element(const MapElement& element,
                                     const NormalizationFrame& frame);

inline constexpr double kMaxNormalizedMagnitude = 10.0;

// Shared two-layer MLP over normalized descriptors. Throws ArgumentError if
// any slot exceeds kMaxNormalizedMagnitude in magnitude.
template <class T>
std::vector<std::vector<T>> positional_encode(const MatcherParams<T>& params,
                                              std::span<const GeometryDescriptor> normalized);

// Q_i = E_pos_i + E_sem[s_i].
template <class T>
std::vector<std::vector<T>> init_queries(const std::vector<std::vector<T>>& pos,
                                         std::span<const SemanticType> types,
                                         const SemanticEmbeddingTable<T>& table);

// x + SA(LN(x)). Per-head attention matrices (K x K) are written to
// `attention` when given.
template <class T>
std::vector<std::vector<T>> self_attention(const DecoderLayer<T>& layer,
                                           const MatcherDims& dims,
                                           const std::vector<std::vector<T>>& x,
                                           std::vector<Mat<double>>* attention = nullptr);

// x + DA(LN(x)): per head, P offsets around the reference point and P
// softmax weights, bilinear samples of `bev_plus_pos`.
template <class T>
std::vector<std::vector<T>> deformable_cross_attention(
    const DecoderLayer<T>& layer, const MatcherDims& dims,
    const std::vector<std::vector<T>>& x, std::span<const Eigen::Vector2d> refs,
    const BevGrid& bev_plus_pos);

// x + FFN(LN(x)).
template <class T>
std::vector<std::vector<T>> feed_forward(const DecoderLayer<T>& layer,
                                         const std::vector<std::vector<T>>& x);

// Everything the decoder needs from one frame, computed once.
struct DecoderInputs {
  std::vector<GeometryDescriptor> descriptors;
  std::vector<SemanticType> types;
  std::vector<Eigen::Vector2d> refs;  // layer-0 grid coordinates
  BevGrid bev_plus_pos;
};

DecoderInputs prepare_decoder_inputs(std::span<const MapElement> elements,
                                     const Pose6& init_pose, const BevGrid& layer0);

template <class T>
std::vector<std::vector<T>> decode(const Model<T>& model, const DecoderInputs& inputs);

std::vector<std::vector<double>> decode(const Model<double>& model,
                                        std::span<const MapElement> elements,
                                        const Pose6& init_pose, const BevGrid& layer0);

struct MapEmbedding {
  std::int64_t id = 0;
  SemanticType sem = SemanticType::kLaneLine;
  std::vector<double> values;
};

std::vector<MapEmbedding> map_embeddings(std::span<const MapElement> elements,
                                         const std::vector<std::vector<double>>& values);

// layer_proj_l * v.
template <class T>
std::vector<T> level_embedding(const MatcherParams<T>& params, int level,
                               std::span<const T> v);

// bev_proj_l applied to every cell.
BevGrid unify_channels(const BevGrid& grid, const Mat<double>& projection);

// S_j(h, w) = sigmoid(F'(h, w) . E'_j) for each type, row-major H x W.
std::vector<std::vector<double>> semantic_logits(const BevGrid& grid,
                                                 const Model<double>& model, int level);
std::vector<std::vector<double>> semantic_probabilities(const BevGrid& grid,
                                                        const Model<double>& model,
                                                        int level);

}  // namespace vecloc

#endif  // VECLOC_MATCHER_HPP_
