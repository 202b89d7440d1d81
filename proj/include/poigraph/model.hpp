#pragma once

// NAICS-aware GraphSAGE edge regressor.
//
//   node input   x_i = [embed(naics_i) || p_i]                (17 wide by default)
//   encoder      h_i <- dropout(tanh(W_k [h_i || mean_{j in N(i)} h_j] + b_k)), k = 1..depth
//   fusion head  f_n = relu(W_node [z_i || z_j] + b_node)      (256)
//                f_e = relu(W_edge x_ij + b_edge)              (32)
//                y   = w . [f_n || f_e] + b
//
// All shapes derive from ModelDims so the ablation variants reuse the same code.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "poigraph/autodiff.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/graph.hpp"
#include "poigraph/rng.hpp"

namespace poigraph {

using nn::Matrix;
using nn::Mode;
using nn::Vector;

struct ModelDims {
  int vocab_rows = 1;       // embedding rows including the reserved slot 0
  int embed_dim = 16;       // 0 disables the NAICS embedding
  bool use_popularity = true;
  int identity_width = 0;   // > 0: one-hot node identity replaces NAICS and popularity
  int hidden = 512;
  int depth = 5;
  int node_proj = 256;
  int edge_in = 48;         // 0 disables the edge branch
  int edge_proj = 32;
  double dropout = 0.2;

  int node_input_dim() const { return identity_width > 0 ? identity_width : embed_dim + (use_popularity ? 1 : 0); }
  int fused_dim() const { return node_proj + (edge_in > 0 ? edge_proj : 0); }
  int layer_input_dim(int k) const { return k == 0 ? node_input_dim() : hidden; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct Dense {
  Matrix weight;  // [out x in]
  Matrix bias;    // [1 x out]
};

struct ModelParameters {
  ModelDims dims;
  Matrix embed;  // [vocab_rows x embed_dim]
  std::vector<Dense> encoder;
  Dense node_proj;
  Dense edge_proj;
  Dense head;  // weight [1 x fused], bias [1 x 1]
  bool embed_frozen = false;

  static ModelParameters zeros(const ModelDims& d) {
    if (d.depth < 1 || d.hidden < 1 || d.node_proj < 1 || d.node_input_dim() < 1)
      throw ConfigError("model dimensions must be positive");
    ModelParameters p;
    p.dims = d;
    p.embed = Matrix::Zero(d.identity_width > 0 ? 0 : d.vocab_rows, d.identity_width > 0 ? 0 : d.embed_dim);
    for (int k = 0; k < d.depth; ++k)
      p.encoder.push_back({Matrix::Zero(d.hidden, 2 * d.layer_input_dim(k)), Matrix::Zero(1, d.hidden)});
    p.node_proj = {Matrix::Zero(d.node_proj, 2 * d.hidden), Matrix::Zero(1, d.node_proj)};
    const int edge_out = d.edge_in > 0 ? d.edge_proj : 0;
    p.edge_proj = {Matrix::Zero(edge_out, d.edge_in), Matrix::Zero(1, edge_out)};
    p.head = {Matrix::Zero(1, d.fused_dim()), Matrix::Zero(1, 1)};
    return p;
  }

  static ModelParameters zeros_like(const ModelParameters& other) {
    ModelParameters p = zeros(other.dims);
    p.embed_frozen = other.embed_frozen;
    return p;
  }

  /// Tensors in declared (checkpoint) order.
  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out{&embed};
    for (auto& l : encoder) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    for (Dense* d : {&node_proj, &edge_proj, &head}) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    }
    return out;
  }

  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (Matrix* m : const_cast<ModelParameters*>(this)->tensors()) out.push_back(m);
    return out;
  }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> out{"naics_embed"};
    for (std::size_t k = 0; k < encoder.size(); ++k) {
      out.push_back("encoder." + std::to_string(k) + ".weight");
      out.push_back("encoder." + std::to_string(k) + ".bias");
    }
    for (const char* n : {"node_proj", "edge_proj", "head"}) {
      out.push_back(std::string(n) + ".weight");
      out.push_back(std::string(n) + ".bias");
    }
    return out;
  }

  std::vector<bool> frozen_mask() const {
    std::vector<bool> mask(tensors().size(), false);
    mask[0] = embed_frozen;
    return mask;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* m : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  friend bool operator==(const ModelParameters& a, const ModelParameters& b) {
    if (a.dims != b.dims || a.embed_frozen != b.embed_frozen) return false;
    const auto ta = a.tensors(), tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols() || *ta[i] != *tb[i]) return false;
    return true;
  }
};

/// Closed-form parameter count for a set of dimensions.
inline std::size_t expected_parameter_count(const ModelDims& d) {
  std::size_t n = d.identity_width > 0 ? 0 : static_cast<std::size_t>(d.vocab_rows) * d.embed_dim;
  for (int k = 0; k < d.depth; ++k) n += static_cast<std::size_t>(d.hidden) * (2 * d.layer_input_dim(k) + 1);
  n += static_cast<std::size_t>(d.node_proj) * (2 * d.hidden + 1);
  if (d.edge_in > 0) n += static_cast<std::size_t>(d.edge_proj) * (d.edge_in + 1);
  n += static_cast<std::size_t>(d.fused_dim()) + 1;
  return n;
}

enum class EmbedInit { normal, zero };

/// Linear layers: uniform(+-1/sqrt(fan_in)) for weights and biases, fan_in
/// being the weight's column count. Embedding rows >= 1: standard normal (or
/// zero); row 0 always starts at zero. Each tensor draws from its own named stream.
inline ModelParameters init_parameters(const ModelDims& dims, Rng rng, EmbedInit embed_init = EmbedInit::normal) {
  ModelParameters p = ModelParameters::zeros(dims);
  if (embed_init == EmbedInit::normal && p.embed.size() > 0) {
    Rng r = rng.split("naics_embed");
    for (Eigen::Index i = 1; i < p.embed.rows(); ++i)
      for (Eigen::Index j = 0; j < p.embed.cols(); ++j) p.embed(i, j) = r.normal();
  }
  auto init_dense = [&](Dense& d, const std::string& name) {
    if (d.weight.size() == 0) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.weight.cols()));
    Rng r = rng.split(name);
    for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = r.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias.data()[i] = r.uniform(-bound, bound);
  };
  for (std::size_t k = 0; k < p.encoder.size(); ++k) init_dense(p.encoder[k], "encoder." + std::to_string(k));
  init_dense(p.node_proj, "node_proj");
  init_dense(p.edge_proj, "edge_proj");
  init_dense(p.head, "head");
  return p;
}

// ---------------------------------------------------------------------------
// Node inputs

/// Per-node static attributes of one state graph.
struct NodeTable {
  std::vector<int> naics_index;  // row into the embedding table (0 = unknown)
  std::vector<int> popularity;   // 0, 1, 2
  std::vector<int> identity;     // global brand index, for one-hot inputs
};

/// Rows of `nodes`: [embed(naics) || p], or a one-hot identity row.
inline Matrix assemble_node_features(std::span<const NodeId> nodes, const NodeTable& table,
                                     const ModelParameters& params) {
  const ModelDims& d = params.dims;
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(nodes.size()), d.node_input_dim());
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    const NodeId u = nodes[r];
    const auto row = static_cast<Eigen::Index>(r);
    if (d.identity_width > 0) {
      const int id = table.identity.at(u);
      if (id < 0 || id >= d.identity_width) throw ArgumentError("identity index out of range");
      x(row, id) = 1.0;
      continue;
    }
    if (d.embed_dim > 0) {
      const int idx = table.naics_index.at(u);
      if (idx < 0 || idx >= params.embed.rows())
        throw ArgumentError("NAICS index " + std::to_string(idx) + " outside embedding table");
      x.row(row).head(d.embed_dim) = params.embed.row(idx);
    }
    if (d.use_popularity) x(row, d.embed_dim) = table.popularity.at(u);
  }
  return x;
}

/// Scatters the embedding part of dX back into embedding-table rows.
inline void node_features_backward(std::span<const NodeId> nodes, const NodeTable& table, const Matrix& dx,
                                   ModelParameters& grads) {
  const ModelDims& d = grads.dims;
  if (d.identity_width > 0 || d.embed_dim == 0) return;
  for (std::size_t r = 0; r < nodes.size(); ++r)
    grads.embed.row(table.naics_index.at(nodes[r])) += dx.row(static_cast<Eigen::Index>(r)).head(d.embed_dim);
}

// ---------------------------------------------------------------------------
// GraphSAGE layer

struct LayerCache {
  Matrix concat;     // [rows x 2in]
  Matrix activated;  // tanh output before dropout
  Matrix mask;       // empty when dropout is inactive
};

/// One mean-aggregation layer over a block slice. Rows with no sampled
/// neighbors aggregate the zero vector.
inline Matrix sage_layer(const Matrix& h_in, const BlockLayer& slice, const Dense& layer, double dropout, Mode mode,
                         Rng& rng, LayerCache* cache = nullptr) {
  const Eigen::Index rows = static_cast<Eigen::Index>(slice.rows());
  const Eigen::Index in = h_in.cols();
  if (rows > h_in.rows() || layer.weight.cols() != 2 * in)
    throw ShapeError("sage_layer: input " + nn::shape_of(h_in) + " with " + std::to_string(rows) +
                     " output rows and weight " + nn::shape_of(layer.weight));
  Matrix concat = Matrix::Zero(rows, 2 * in);
  concat.leftCols(in) = h_in.topRows(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto nb = slice.row(static_cast<std::size_t>(r));
    if (nb.empty()) continue;
    auto agg = concat.row(r).rightCols(in);
    for (std::uint32_t p : nb) {
      if (p >= h_in.rows()) throw ShapeError("sage_layer: neighbor position outside input frontier");
      agg += h_in.row(p);
    }
    agg /= static_cast<double>(nb.size());
  }
  Matrix out = nn::tanh_act(nn::linear_forward(concat, layer.weight, layer.bias));
  if (cache) cache->activated = out;
  Matrix mask = nn::apply_dropout(out, dropout, mode, rng);
  if (cache) {
    cache->concat = std::move(concat);
    cache->mask = std::move(mask);
  }
  return out;
}

/// Returns dH_in; accumulates weight/bias gradients into `grad`.
inline Matrix sage_layer_backward(const Matrix& d_out, Eigen::Index input_rows, const BlockLayer& slice,
                                  const Dense& layer, const LayerCache& cache, Dense& grad, bool need_dx = true) {
  const Matrix dy = nn::dropout_backward(cache.mask, d_out);
  const Matrix dpre = nn::tanh_backward(cache.activated, dy);
  const nn::LinearGrads g = nn::linear_backward(cache.concat, layer.weight, dpre, need_dx);
  grad.weight += g.dw;
  grad.bias += g.db;
  if (!need_dx) return {};
  const Eigen::Index in = layer.weight.cols() / 2;
  const Eigen::Index rows = static_cast<Eigen::Index>(slice.rows());
  Matrix dh = Matrix::Zero(input_rows, in);
  dh.topRows(rows) += g.dx.leftCols(in);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto nb = slice.row(static_cast<std::size_t>(r));
    if (nb.empty()) continue;
    const double scale = 1.0 / static_cast<double>(nb.size());
    for (std::uint32_t p : nb) dh.row(p) += scale * g.dx.row(r).rightCols(in);
  }
  return dh;
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderCache {
  Matrix input;  // node features of the input frontier
  std::vector<LayerCache> layers;
};

/// Runs all layers of `block`; the result has one row per output-frontier node.
inline Matrix encode(const SampledBlock& block, const NodeTable& table, const ModelParameters& params, Mode mode,
                     Rng& rng, EncoderCache* cache = nullptr) {
  if (block.depth() != params.encoder.size())
    throw ConfigError("block depth " + std::to_string(block.depth()) + " does not match encoder depth " +
                      std::to_string(params.encoder.size()));
  Matrix h = assemble_node_features(block.input_nodes(), table, params);
  if (cache) {
    cache->input = h;
    cache->layers.assign(block.depth(), {});
  }
  for (std::size_t k = 0; k < block.depth(); ++k) {
    Rng layer_rng = rng.split("dropout/layer-" + std::to_string(k));
    h = sage_layer(h, block.layers[k], params.encoder[k], params.dims.dropout, mode, layer_rng,
                   cache ? &cache->layers[k] : nullptr);
  }
  return h;
}

inline void encode_backward(const SampledBlock& block, const NodeTable& table, const ModelParameters& params,
                            const EncoderCache& cache, Matrix dz, ModelParameters& grads) {
  const bool embed_trainable = !params.embed_frozen && params.dims.identity_width == 0 && params.dims.embed_dim > 0;
  for (std::size_t k = block.depth(); k-- > 0;) {
    const auto input_rows = static_cast<Eigen::Index>(block.frontiers[k].size());
    const bool need_dx = k > 0 || embed_trainable;
    dz = sage_layer_backward(dz, input_rows, block.layers[k], params.encoder[k], cache.layers[k], grads.encoder[k],
                             need_dx);
  }
  if (embed_trainable) node_features_backward(block.input_nodes(), table, dz, grads);
}

// ---------------------------------------------------------------------------
// Fusion head

struct HeadCache {
  Matrix zcat;
  Matrix node_hidden;
  Matrix edge_input;
  Matrix edge_hidden;
  Matrix fused;
};

/// Raw (unclamped) predictions for `seed_edges` (rows of z).
inline Vector predict_edges(const Matrix& z, std::span<const std::pair<std::uint32_t, std::uint32_t>> seed_edges,
                            const Matrix& edge_features, const ModelParameters& params, HeadCache* cache = nullptr) {
  const ModelDims& d = params.dims;
  const auto batch = static_cast<Eigen::Index>(seed_edges.size());
  if (z.cols() != d.hidden) throw ShapeError("predict_edges: embeddings " + nn::shape_of(z));
  if (d.edge_in > 0 && (edge_features.rows() != batch || edge_features.cols() != d.edge_in))
    throw ShapeError("predict_edges: edge features " + nn::shape_of(edge_features) + ", expected width " +
                     std::to_string(d.edge_in));
  Matrix zcat(batch, 2 * d.hidden);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto [i, j] = seed_edges[static_cast<std::size_t>(b)];
    if (i >= z.rows() || j >= z.rows()) throw ShapeError("predict_edges: endpoint outside embeddings");
    zcat.row(b).head(d.hidden) = z.row(i);
    zcat.row(b).tail(d.hidden) = z.row(j);
  }
  Matrix fn = nn::relu_act(nn::linear_forward(zcat, params.node_proj.weight, params.node_proj.bias));
  Matrix fused(batch, d.fused_dim());
  fused.leftCols(d.node_proj) = fn;
  Matrix fe;
  if (d.edge_in > 0) {
    fe = nn::relu_act(nn::linear_forward(edge_features, params.edge_proj.weight, params.edge_proj.bias));
    fused.rightCols(d.edge_proj) = fe;
  }
  const Matrix y = nn::linear_forward(fused, params.head.weight, params.head.bias);
  if (cache) {
    cache->zcat = std::move(zcat);
    cache->node_hidden = std::move(fn);
    cache->edge_input = d.edge_in > 0 ? edge_features : Matrix{};
    cache->edge_hidden = std::move(fe);
    cache->fused = std::move(fused);
  }
  return y.col(0);
}

/// Returns dZ; accumulates head and projection gradients.
inline Matrix predict_edges_backward(const Vector& dy, Eigen::Index z_rows,
                                     std::span<const std::pair<std::uint32_t, std::uint32_t>> seed_edges,
                                     const ModelParameters& params, const HeadCache& cache, ModelParameters& grads) {
  const ModelDims& d = params.dims;
  const Matrix dy_m = dy;  // [B x 1]
  const nn::LinearGrads gh = nn::linear_backward(cache.fused, params.head.weight, dy_m);
  grads.head.weight += gh.dw;
  grads.head.bias += gh.db;

  const Matrix dfn = nn::relu_backward(cache.node_hidden, gh.dx.leftCols(d.node_proj));
  const nn::LinearGrads gn = nn::linear_backward(cache.zcat, params.node_proj.weight, dfn);
  grads.node_proj.weight += gn.dw;
  grads.node_proj.bias += gn.db;

  if (d.edge_in > 0) {
    const Matrix dfe = nn::relu_backward(cache.edge_hidden, gh.dx.rightCols(d.edge_proj));
    const nn::LinearGrads ge = nn::linear_backward(cache.edge_input, params.edge_proj.weight, dfe, false);
    grads.edge_proj.weight += ge.dw;
    grads.edge_proj.bias += ge.db;
  }

  Matrix dz = Matrix::Zero(z_rows, d.hidden);
  for (std::size_t b = 0; b < seed_edges.size(); ++b) {
    const auto [i, j] = seed_edges[b];
    const auto row = static_cast<Eigen::Index>(b);
    dz.row(i) += gn.dx.row(row).head(d.hidden);
    dz.row(j) += gn.dx.row(row).tail(d.hidden);
  }
  return dz;
}

// ---------------------------------------------------------------------------
// Whole-model passes

/// Predictions for the block's seed edges.
inline Vector forward(const SampledBlock& block, const NodeTable& table, const Matrix& edge_features,
                      const ModelParameters& params, Mode mode, Rng rng) {
  const Matrix z = encode(block, table, params, mode, rng);
  return predict_edges(z, block.seed_edges, edge_features, params);
}

struct StepResult {
  double loss = 0.0;
  Vector predictions;
  ModelParameters grads;
};

/// MSE loss over the block's seed edges and gradients for every tensor.
inline StepResult forward_backward(const SampledBlock& block, const NodeTable& table, const Matrix& edge_features,
                                   const Vector& targets, const ModelParameters& params, Mode mode, Rng rng) {
  EncoderCache enc;
  HeadCache head;
  const Matrix z = encode(block, table, params, mode, rng, &enc);
  StepResult out;
  out.predictions = predict_edges(z, block.seed_edges, edge_features, params, &head);
  out.loss = nn::mse_loss(out.predictions, targets);
  out.grads = ModelParameters::zeros_like(params);
  const Vector dy = nn::mse_backward(out.predictions, targets);
  Matrix dz = predict_edges_backward(dy, z.rows(), block.seed_edges, params, head, out.grads);
  encode_backward(block, table, params, enc, std::move(dz), out.grads);
  return out;
}

/// Rounds every tensor through 32-bit floats (checkpoint precision).
inline ModelParameters quantize_to_f32(ModelParameters p) {
  for (Matrix* m : p.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<double>(static_cast<float>(m->data()[i]));
  return p;
}

}  // namespace poigraph
