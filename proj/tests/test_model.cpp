#include <gtest/gtest.h>

#include "oracles.hpp"
#include "poigraph/checkpoint.hpp"
#include "poigraph/model.hpp"
#include "test_util.hpp"

namespace pg = poigraph;
using pg::Matrix;

TEST(Model, DefaultParameterCount) {
  pg::ModelDims d;
  d.vocab_rows = 277;
  const std::size_t by_hand = 277 * 16                  // embedding
                              + 512 * (2 * 17) + 512     // layer 1
                              + 4 * (512 * 1024 + 512)   // layers 2..5
                              + 256 * 1024 + 256         // node projection
                              + 32 * 48 + 32             // edge projection
                              + 288 + 1;                 // head
  EXPECT_EQ(pg::expected_parameter_count(d), by_hand);
  EXPECT_EQ(pg::ModelParameters::zeros(d).parameter_count(), by_hand);
  EXPECT_EQ(d.fused_dim(), 288);
  EXPECT_EQ(d.node_input_dim(), 17);
}

TEST(Model, InitRespectsSchemeAndSeed) {
  pg::ModelDims d = oracle::toy_dims();
  d.hidden = 16;
  const auto a = pg::init_parameters(d, pg::Rng(3));
  EXPECT_EQ(a, pg::init_parameters(d, pg::Rng(3)));
  EXPECT_FALSE(a == pg::init_parameters(d, pg::Rng(4)));
  EXPECT_TRUE(a.embed.row(0).isZero(0.0));
  EXPECT_FALSE(a.embed.row(1).isZero(0.0));
  auto bounded = [](const pg::Dense& l) {
    const double b = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    return l.weight.cwiseAbs().maxCoeff() <= b && l.bias.cwiseAbs().maxCoeff() <= b;
  };
  for (const auto& l : a.encoder) EXPECT_TRUE(bounded(l));
  EXPECT_TRUE(bounded(a.node_proj));
  EXPECT_TRUE(bounded(a.edge_proj));
  EXPECT_TRUE(bounded(a.head));
  const auto z = pg::init_parameters(d, pg::Rng(3), pg::EmbedInit::zero);
  EXPECT_TRUE(z.embed.isZero(0.0));
}

TEST(Model, NodeFeaturesLayout) {
  pg::ModelDims d;
  d.vocab_rows = 5;
  auto p = pg::init_parameters(d, pg::Rng(1));
  pg::NodeTable t{{0, 3}, {2, 1}, {}};
  const std::vector<pg::NodeId> nodes{0, 1};
  const Matrix x = pg::assemble_node_features(nodes, t, p);
  ASSERT_EQ(x.cols(), 17);
  EXPECT_TRUE(x.row(0).head(16).isZero(0.0));
  EXPECT_EQ(x(0, 16), 2.0);
  EXPECT_EQ(x.row(1).head(16), p.embed.row(3));
  t.naics_index[1] = 5;
  EXPECT_THROW(pg::assemble_node_features(nodes, t, p), pg::ArgumentError);
}

TEST(Model, EmbeddingRowGradientMatchesFiniteDifferences) {
  // covered for every tensor by the whole-model check; here the row-level view
  const auto g = oracle::toy6();
  pg::Rng rng(5);
  const auto table = oracle::random_table(g.n, 4, rng);
  const auto params0 = pg::init_parameters(oracle::toy_dims(2), pg::Rng(6));
  auto params = params0;
  const std::vector<int> fan{-1, -1};
  pg::Rng br(1);
  const auto block = pg::sample_edge_block(g.graph, g.edges, fan, br);
  Matrix x = Matrix::Ones(static_cast<Eigen::Index>(g.edges.size()), 48);
  pg::Vector y = pg::Vector::Constant(static_cast<Eigen::Index>(g.edges.size()), 2.0);
  const auto step = pg::forward_backward(block, table, x, y, params, pg::Mode::eval, pg::Rng(0));
  const int row = table.naics_index[0];
  Matrix r = params.embed.row(row);
  const Matrix numeric = test::numeric_grad(r, [&] {
    params.embed.row(row) = r;
    return pg::nn::mse_loss(pg::forward(block, table, x, params, pg::Mode::eval, pg::Rng(0)), y);
  });
  EXPECT_LT(test::rel_err(step.grads.embed.row(row), numeric), 1e-4);
}

TEST(Model, SageLayerEmptyNeighbourhoodIsSelfPassthrough) {
  pg::Dense l{Matrix::Zero(2, 4), Matrix::Zero(1, 2)};
  l.weight(0, 0) = l.weight(1, 1) = 1.0;
  Matrix h(1, 2);
  h << 0.3, -1.2;
  pg::BlockLayer slice;
  slice.offsets = {0, 0};
  pg::Rng r(1);
  const Matrix out = pg::sage_layer(h, slice, l, 0.0, pg::Mode::eval, r);
  EXPECT_DOUBLE_EQ(out(0, 0), std::tanh(0.3));
  EXPECT_DOUBLE_EQ(out(0, 1), std::tanh(-1.2));
}

TEST(Model, SageLayerMeanAggregate) {
  // 1-D features; weight reads only the aggregate half
  pg::Dense l{Matrix::Zero(1, 2), Matrix::Zero(1, 1)};
  l.weight(0, 1) = 1.0;
  Matrix h(3, 1);
  h << 10, 1, 3;
  pg::BlockLayer slice;
  slice.offsets = {0, 2};
  slice.neighbors = {1, 2};
  pg::Rng r(1);
  EXPECT_DOUBLE_EQ(pg::sage_layer(h, slice, l, 0.0, pg::Mode::eval, r)(0, 0), std::tanh(2.0));
  pg::Dense bad{Matrix::Zero(1, 3), Matrix::Zero(1, 1)};
  EXPECT_THROW(pg::sage_layer(h, slice, bad, 0.0, pg::Mode::eval, r), pg::ShapeError);
}

TEST(Model, SampledEncoderEqualsDenseOracle) { EXPECT_LT(oracle::dense_equivalence_gap(40, 11), 1e-10); }

TEST(Model, FourNodeLayerMatchesDenseOracle) {
  const auto g = oracle::make_graph(4, {{0, 1}, {1, 2}, {1, 3}, {2, 3}});
  auto d = oracle::toy_dims(1);
  pg::Rng rng(12);
  const auto table = oracle::random_table(4, d.vocab_rows, rng);
  const auto p = pg::init_parameters(d, pg::Rng(13));
  const std::vector<pg::NodeId> seeds{0, 1, 2, 3};
  const std::vector<int> fan{3};
  pg::Rng r(14);
  const auto block = pg::sample_neighborhood(g.graph, seeds, fan, r);
  const Matrix z = pg::encode(block, table, p, pg::Mode::eval, r);
  EXPECT_LT((z - oracle::dense_encode(g, table, p)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, EncodeEvalDeterministicAndDepthChecked) {
  const auto g = oracle::toy6();
  pg::Rng rng(15);
  const auto table = oracle::random_table(g.n, 4, rng);
  const auto p = pg::init_parameters(oracle::toy_dims(), pg::Rng(16));
  const std::vector<int> fan = pg::default_fanouts(5);
  const std::vector<pg::NodeId> seeds{0, 3};
  pg::Rng r(17);
  const auto block = pg::sample_neighborhood(g.graph, seeds, fan, r);
  pg::Rng a(1), b(2);
  EXPECT_EQ(pg::encode(block, table, p, pg::Mode::eval, a), pg::encode(block, table, p, pg::Mode::eval, b));
  EXPECT_EQ(pg::encode(block, table, p, pg::Mode::eval, a).cols(), 5);
  const auto shallow = pg::init_parameters(oracle::toy_dims(3), pg::Rng(16));
  EXPECT_THROW(pg::encode(block, table, shallow, pg::Mode::eval, a), pg::ConfigError);
}

TEST(Model, ZeroParametersPredictBias) {
  pg::ModelDims d;
  d.vocab_rows = 3;
  auto p = pg::ModelParameters::zeros(d);
  p.head.bias(0, 0) = 1.75;
  const auto g = oracle::toy6();
  pg::Rng rng(18);
  const auto table = oracle::random_table(g.n, 3, rng);
  pg::Rng r(19);
  const auto block = pg::sample_edge_block(g.graph, g.edges, pg::default_fanouts(5), r);
  Matrix x = Matrix::Random(static_cast<Eigen::Index>(g.edges.size()), 48);
  const pg::Vector y = pg::forward(block, table, x, p, pg::Mode::train, pg::Rng(1));
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 1.75);
  Matrix narrow = Matrix::Zero(static_cast<Eigen::Index>(g.edges.size()), 10);
  EXPECT_THROW(pg::forward(block, table, narrow, p, pg::Mode::eval, pg::Rng(1)), pg::ShapeError);
}

TEST(Model, WholeModelGradientsEvalMode) {
  const auto r = oracle::full_model_gradcheck(pg::Mode::eval, 21);
  for (std::size_t i = 0; i < r.names.size(); ++i) EXPECT_LT(r.rel_errors[i], 1e-4) << r.names[i];
}

TEST(Model, WholeModelGradientsWithDropout) {
  const auto r = oracle::full_model_gradcheck(pg::Mode::train, 22);
  for (std::size_t i = 0; i < r.names.size(); ++i) EXPECT_LT(r.rel_errors[i], 1e-4) << r.names[i];
}

TEST(Model, ReceptiveFieldIsDepthHops) {
  // path 0-1-...-8; seed edge (0, 1). Node 7 is 6 hops from node 1, node 6 is 5.
  std::vector<pg::NodePair> e;
  for (pg::NodeId u = 0; u + 1 < 9; ++u) e.emplace_back(u, u + 1);
  const auto g = oracle::make_graph(9, e);
  auto d = oracle::toy_dims(5);
  d.edge_in = 0;
  const auto p = pg::init_parameters(d, pg::Rng(23));
  pg::NodeTable t;
  for (int i = 0; i < 9; ++i) {
    t.naics_index.push_back(1 + i % 3);
    t.popularity.push_back(i % 3);
  }
  const std::vector<pg::NodePair> seeds{{0, 1}};
  const std::vector<int> fan(5, -1);
  auto predict = [&](const pg::NodeTable& table) {
    pg::Rng r(1);
    const auto block = pg::sample_edge_block(g.graph, seeds, fan, r);
    return pg::forward(block, table, Matrix{}, p, pg::Mode::eval, pg::Rng(1))[0];
  };
  const double base = predict(t);
  auto far = t;
  far.naics_index[7] = 0;
  far.popularity[7] = 2 - far.popularity[7];
  far.naics_index[8] = 0;
  EXPECT_EQ(predict(far), base);
  auto near = t;
  near.naics_index[6] = 0;
  near.popularity[6] = 2 - near.popularity[6];
  EXPECT_NE(predict(near), base);
}

TEST(Model, EmbeddingGradientTouchesOnlyFrontierRows) {
  const auto g = oracle::make_graph(6, {{0, 1}, {2, 3}, {4, 5}});
  auto d = oracle::toy_dims(2);
  d.vocab_rows = 7;
  const auto p = pg::init_parameters(d, pg::Rng(24));
  pg::NodeTable t{{1, 2, 3, 4, 5, 6}, {0, 1, 2, 0, 1, 2}, {}};
  const std::vector<pg::NodePair> batch{{0, 1}, {2, 3}};
  pg::Rng r(1);
  const auto block = pg::sample_edge_block(g.graph, batch, pg::default_fanouts(2), r);
  Matrix x = Matrix::Ones(2, 48);
  pg::Vector y(2);
  y << 5, 1;
  const auto step = pg::forward_backward(block, t, x, y, p, pg::Mode::train, pg::Rng(2));
  for (int row = 0; row < 7; ++row) {
    const bool used = row >= 1 && row <= 4;
    EXPECT_EQ(!step.grads.embed.row(row).isZero(0.0), used) << "row " << row;
  }
}

TEST(Model, FrozenEmbeddingGetsNoGradient) {
  const auto g = oracle::toy6();
  pg::Rng rng(25);
  const auto table = oracle::random_table(g.n, 4, rng);
  auto p = pg::init_parameters(oracle::toy_dims(2), pg::Rng(26));
  p.embed_frozen = true;
  pg::Rng r(1);
  const auto block = pg::sample_edge_block(g.graph, g.edges, pg::default_fanouts(2), r);
  Matrix x = Matrix::Ones(static_cast<Eigen::Index>(g.edges.size()), 48);
  pg::Vector y = pg::Vector::Ones(static_cast<Eigen::Index>(g.edges.size()));
  EXPECT_TRUE(pg::forward_backward(block, table, x, y, p, pg::Mode::train, pg::Rng(2)).grads.embed.isZero(0.0));
}

TEST(Model, CheckpointRoundTrip) {
  test::TempDir dir;
  auto p = pg::init_parameters(oracle::toy_dims(), pg::Rng(27));
  pg::CheckpointMeta meta;
  meta.vocab_hash = 0xfeedfacecafebeefULL;
  meta.seed = 9;
  meta.epoch = 4;
  meta.fanouts = pg::default_fanouts(5);
  meta.edge_columns.resize(48);
  std::iota(meta.edge_columns.begin(), meta.edge_columns.end(), 0);
  meta.best_val_mae = 3.25;
  pg::nn::AdamWState opt(pg::nn::AdamWConfig{}, std::as_const(p).tensors());
  opt.step = 17;
  opt.m[1].setConstant(0.5);
  pg::save_checkpoint(dir.path / "m.ckpt", p, meta, &opt);

  const auto ck = pg::load_checkpoint(dir.path / "m.ckpt", meta.vocab_hash);
  EXPECT_EQ(ck.params, pg::quantize_to_f32(p));
  EXPECT_EQ(ck.meta, meta);
  ASSERT_TRUE(ck.optimizer);
  EXPECT_EQ(ck.optimizer->step, 17u);
  EXPECT_EQ(ck.optimizer->m[1], opt.m[1]);
  // a re-save of the loaded checkpoint is byte-identical
  EXPECT_EQ(pg::serialize_checkpoint(ck.params, ck.meta, &*ck.optimizer), pg::io::read_text(dir.path / "m.ckpt"));

  EXPECT_THROW(pg::load_checkpoint(dir.path / "m.ckpt", 1ULL), pg::CheckpointError);
  std::string bytes = pg::io::read_text(dir.path / "m.ckpt");
  bytes[0] = 'X';
  EXPECT_THROW(pg::deserialize_checkpoint(pg::io::BinaryReader(bytes)), pg::CheckpointError);
  bytes = pg::io::read_text(dir.path / "m.ckpt");
  EXPECT_THROW(pg::deserialize_checkpoint(pg::io::BinaryReader(bytes.substr(0, bytes.size() - 3))), pg::CheckpointError);
  EXPECT_THROW(pg::deserialize_checkpoint(pg::io::BinaryReader(bytes + "x")), pg::CheckpointError);
}
