#pragma once

// Balanced mini-batch training over state graphs, validation and the
// plateau / early-stopping schedule.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poigraph/autodiff.hpp"
#include "poigraph/checkpoint.hpp"
#include "poigraph/dataset.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/graph.hpp"
#include "poigraph/model.hpp"
#include "poigraph/rng.hpp"

namespace poigraph {

struct TrainConfig {
  int max_epochs = 300;
  int patience = 20;
  int plateau_window = 10;
  double lr_decay = 0.5;
  int batch_edges = 512;  // per polarity
  std::vector<int> fanouts = default_fanouts(5);
  std::vector<int> inference_fanouts;  // empty: same as `fanouts`
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  double min_improvement = 1e-6;

  void validate() const {
    if (max_epochs < 1 || patience < 1 || plateau_window < 1 || batch_edges < 1)
      throw ConfigError("train: max_epochs, patience, plateau_window and batch_edges must be >= 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay must be in (0, 1]");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("train: lr and weight_decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must be in [0, 1)");
    if (fanouts.empty()) throw ConfigError("train.fanouts must not be empty");
  }

  const std::vector<int>& eval_fanouts() const { return inference_fanouts.empty() ? fanouts : inference_fanouts; }
};

/// Architecture plus the input columns it consumes.
struct ModelConfig {
  ModelDims dims;
  std::vector<int> edge_columns = all_edge_columns();
  EmbedInit embed_init = EmbedInit::normal;
  bool embed_frozen = false;
  std::string variant = "full";
};

inline ModelConfig default_model_config(const FeatureStore& fs) {
  ModelConfig mc;
  mc.dims.vocab_rows = fs.vocab.table_rows();
  mc.dims.edge_in = static_cast<int>(mc.edge_columns.size());
  return mc;
}

inline ModelParameters init_model(const ModelConfig& mc, std::uint64_t seed) {
  if (static_cast<int>(mc.edge_columns.size()) != mc.dims.edge_in)
    throw ConfigError("edge column list does not match the edge input width");
  ModelParameters p = init_parameters(mc.dims, Rng(seed).split("init"), mc.embed_init);
  p.embed_frozen = mc.embed_frozen;
  return p;
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  std::vector<NodePair> pairs;  // positives first, then negatives
  Vector targets;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Up to `batch_edges` positives of month `month` (uniform, without
/// replacement) and exactly as many sampled non-edges with target 0.
inline Batch make_balanced_batch(const StateGraph& graph, YearMonth month, int batch_edges, Rng& rng) {
  const auto m = graph.month_index(month);
  if (!m) throw ArgumentError("month " + month.to_string() + " outside graph " + graph.state());
  const auto& pos = graph.positive_edges(*m);
  const std::size_t take = std::min(pos.size(), static_cast<std::size_t>(std::max(batch_edges, 0)));
  std::vector<EdgeId> pool(pos.begin(), pos.end());
  Rng rp = rng.split("positives");
  for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rp.below(pool.size() - i)]);
  Batch b;
  b.targets.resize(static_cast<Eigen::Index>(2 * take));
  for (std::size_t i = 0; i < take; ++i) {
    b.pairs.push_back(graph.endpoints(pool[i]));
    b.targets[static_cast<Eigen::Index>(i)] = graph.target(pool[i], *m);
  }
  Rng rn = rng.split("negatives");
  for (const NodePair& p : sample_negative_edges(graph, take, rn)) {
    b.targets[static_cast<Eigen::Index>(b.pairs.size())] = 0.0;
    b.pairs.push_back(p);
  }
  b.positives = take;
  b.negatives = b.pairs.size() - take;
  if (b.positives != b.negatives)
    throw TrainingError("unbalanced batch: " + std::to_string(b.positives) + " positives, " +
                        std::to_string(b.negatives) + " negatives");
  return b;
}

// ---------------------------------------------------------------------------
// Epochs

struct TrainTelemetry {
  std::size_t batches = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t unbalanced_batches = 0;
  std::size_t train_targets_in_gradients = 0;
  std::size_t heldout_targets_in_gradients = 0;  // must stay 0
};

struct EpochResult {
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

inline std::string epoch_stream(int epoch) { return "epoch-" + std::to_string(epoch); }

/// One pass of Algorithm-1 style updates: states in a seeded shuffled order,
/// training months chronologically, one balanced batch per (state, month).
inline EpochResult train_epoch(const Dataset& data, ModelParameters& params, nn::AdamWState& opt,
                               const TrainConfig& cfg, const ModelConfig& mc, int epoch, TrainTelemetry& telemetry) {
  const Rng root(cfg.seed);
  std::vector<std::string> states = data.states();
  Rng order_rng = root.split("state-order").split(epoch_stream(epoch));
  shuffle(std::span<std::string>(states), order_rng);

  const auto frozen = params.frozen_mask();
  EpochResult out;
  double loss_sum = 0.0;
  for (const std::string& state : states) {
    const StateGraph& g = data.graph(state);
    const NodeTable table = data.features.node_table(state);
    for (const YearMonth& month : data.features.split.train) {
      const std::string tag = state + "/" + month.to_string() + "/" + epoch_stream(epoch);
      Rng batch_rng = root.split("batch/" + tag);
      const Batch batch = make_balanced_batch(g, month, cfg.batch_edges, batch_rng);
      ++telemetry.batches;
      telemetry.positives += batch.positives;
      telemetry.negatives += batch.negatives;
      if (batch.positives != batch.negatives) ++telemetry.unbalanced_batches;
      if (batch.positives == 0) continue;
      // Every target entering the loss is checked against the split.
      (data.features.split.is_train(month) ? telemetry.train_targets_in_gradients
                                           : telemetry.heldout_targets_in_gradients) += batch.pairs.size();

      Rng block_rng = root.split("block/" + tag);
      const SampledBlock block = sample_edge_block(g, batch.pairs, cfg.fanouts, block_rng);
      const Matrix x_edge = data.features.edge_matrix(state, batch.pairs, month, mc.edge_columns);
      StepResult step = forward_backward(block, table, x_edge, batch.targets, params, Mode::train,
                                         root.split("dropout/" + tag));
      if (!std::isfinite(step.loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", state " + state + ", batch " +
                            month.to_string());
      nn::adamw_step(params.tensors(), std::as_const(step.grads).tensors(), opt, frozen);
      loss_sum += step.loss;
      ++out.steps;
    }
  }
  out.mean_loss = out.steps ? loss_sum / static_cast<double>(out.steps) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Inference over held-out edge sets

/// Labelled node pairs for one (state, month): positives then negatives.
struct EdgeSet {
  std::string state;
  YearMonth month;
  std::vector<NodePair> pairs;
  std::vector<double> targets;
  std::size_t positives = 0;
};

/// Every positive edge of each month plus an equal number of seeded non-edges.
inline std::vector<EdgeSet> make_edge_sets(const Dataset& data, const std::vector<YearMonth>& months,
                                           std::uint64_t seed, const std::string& stream) {
  std::vector<EdgeSet> out;
  const Rng root = Rng(seed).split(stream);
  for (const auto& [state, g] : data.graphs)
    for (const YearMonth& month : months) {
      const std::size_t m = *g.month_index(month);
      EdgeSet s{state, month, {}, {}, 0};
      for (EdgeId e : g.positive_edges(m)) {
        s.pairs.push_back(g.endpoints(e));
        s.targets.push_back(g.target(e, m));
      }
      s.positives = s.pairs.size();
      Rng r = root.split(state + "/" + month.to_string());
      for (const NodePair& p : sample_negative_edges(g, s.positives, r)) {
        s.pairs.push_back(p);
        s.targets.push_back(0.0);
      }
      out.push_back(std::move(s));
    }
  return out;
}

/// Eval-mode embeddings of every node of a state; row = node id.
inline Matrix encode_state(const StateGraph& g, const NodeTable& table, const ModelParameters& params,
                           const std::vector<int>& fanouts, std::uint64_t seed) {
  std::vector<NodeId> all(g.num_nodes());
  std::iota(all.begin(), all.end(), 0u);
  Rng r = Rng(seed).split("inference").split(g.state());
  const SampledBlock block = sample_neighborhood(g, all, fanouts, r);
  return encode(block, table, params, Mode::eval, r);
}

/// Head evaluation for node pairs given precomputed state embeddings.
inline Vector predict_pairs(const Matrix& z, const FeatureStore& fs, const std::string& state,
                            std::span<const NodePair> pairs, YearMonth month, const ModelParameters& params,
                            const std::vector<int>& edge_columns) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> seeds(pairs.begin(), pairs.end());
  const Matrix x = fs.edge_matrix(state, pairs, month, edge_columns);
  return predict_edges(z, seeds, x, params);
}

/// Predictions for each edge set, aligned with `sets[i].pairs`.
inline std::vector<Vector> predict_edge_sets(const Dataset& data, const std::vector<EdgeSet>& sets,
                                             const ModelParameters& params, const std::vector<int>& edge_columns,
                                             const std::vector<int>& fanouts, std::uint64_t seed) {
  std::map<std::string, Matrix> z;
  std::vector<Vector> out;
  for (const EdgeSet& s : sets) {
    auto it = z.find(s.state);
    if (it == z.end())
      it = z.emplace(s.state, encode_state(data.graph(s.state), data.features.node_table(s.state), params, fanouts,
                                           seed))
               .first;
    out.push_back(s.pairs.empty() ? Vector{}
                                  : predict_pairs(it->second, data.features, s.state, s.pairs, s.month, params,
                                                  edge_columns));
  }
  return out;
}

inline double mean_absolute_error(const std::vector<EdgeSet>& sets, const std::vector<Vector>& preds) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t k = 0; k < sets[i].targets.size(); ++k) {
      sum += std::abs(preds[i][static_cast<Eigen::Index>(k)] - sets[i].targets[k]);
      ++n;
    }
  if (n == 0) throw ConfigError("empty evaluation set");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Fit

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since fit started

  nlohmann::ordered_json to_json() const {
    return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_mae", val_mae}, {"lr", lr}, {"wall_time", wall_time}};
  }
};

/// Early stopping and learning-rate decay driven by validation MAE. An epoch
/// improves when it beats the best so far by more than min_improvement; every
/// plateau_window non-improving epochs in a row decay the rate, and patience of
/// them stop training.
class PlateauSchedule {
 public:
  struct Step {
    bool improved = false;
    bool decay = false;
    bool stop = false;
  };

  explicit PlateauSchedule(const TrainConfig& cfg)
      : window_(cfg.plateau_window), patience_(cfg.patience), min_improvement_(cfg.min_improvement) {}

  Step observe(double val) {
    Step s;
    if (val < best_ - min_improvement_) {
      best_ = val;
      since_ = 0;
      s.improved = true;
      return s;
    }
    ++since_;
    s.decay = since_ % window_ == 0;
    s.stop = since_ >= patience_;
    return s;
  }

  double best() const { return best_; }
  int epochs_since_improvement() const { return since_; }

 private:
  int window_;
  int patience_;
  double min_improvement_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_ = 0;
};

struct FitOptions {
  std::optional<Checkpoint> resume;
  std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
  ModelParameters best;
  ModelParameters last;      // parameters after the last epoch
  nn::AdamWState optimizer;  // state after the last epoch
  int last_epoch = 0;
  std::vector<EpochLog> logs;
  int best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<int> lr_halvings;  // epochs after which the learning rate was decayed
  bool early_stopped = false;
  TrainTelemetry telemetry;
};

inline FitResult fit(const Dataset& data, const TrainConfig& cfg, const ModelConfig& mc, FitOptions options = {}) {
  cfg.validate();
  data.features.split.validate();
  if (static_cast<int>(cfg.fanouts.size()) != mc.dims.depth)
    throw ConfigError("train.fanouts has " + std::to_string(cfg.fanouts.size()) + " entries for a depth-" +
                      std::to_string(mc.dims.depth) + " encoder");
  if (static_cast<int>(cfg.eval_fanouts().size()) != mc.dims.depth)
    throw ConfigError("inference fanouts do not match encoder depth");

  ModelDims dims = mc.dims;
  dims.dropout = cfg.dropout;
  ModelConfig model_cfg = mc;
  model_cfg.dims = dims;

  FitResult res;
  ModelParameters params;
  nn::AdamWConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  int first_epoch = 1;
  if (options.resume) {
    params = options.resume->params;
    if (params.dims != dims) throw CheckpointError("checkpoint dimensions differ from the configured model");
    res.optimizer = options.resume->optimizer ? *options.resume->optimizer : nn::AdamWState(adam, std::as_const(params).tensors());
    first_epoch = options.resume->meta.epoch + 1;
  } else {
    params = init_model(model_cfg, cfg.seed);
    res.optimizer = nn::AdamWState(adam, std::as_const(params).tensors());
  }

  const auto val_sets = make_edge_sets(data, data.features.split.validation, cfg.seed, "validation-negatives");
  std::size_t val_edges = 0;
  for (const auto& s : val_sets) val_edges += s.pairs.size();
  if (val_edges == 0) throw ConfigError("validation split has no edges");

  res.best = params;
  PlateauSchedule schedule(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = first_epoch; epoch < first_epoch + cfg.max_epochs; ++epoch) {
    const double lr_used = res.optimizer.config.lr;
    const EpochResult er = train_epoch(data, params, res.optimizer, cfg, model_cfg, epoch, res.telemetry);
    const auto preds = predict_edge_sets(data, val_sets, params, model_cfg.edge_columns, cfg.eval_fanouts(), cfg.seed);
    const double val = mean_absolute_error(val_sets, preds);
    if (!std::isfinite(val)) throw TrainingError("non-finite validation MAE at epoch " + std::to_string(epoch));
    EpochLog log{epoch, er.mean_loss, val, lr_used,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    res.logs.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    const PlateauSchedule::Step step = schedule.observe(val);
    if (step.improved) {
      res.best_val_mae = val;
      res.best_epoch = epoch;
      res.best = params;
    }
    if (step.decay) {
      res.optimizer.config.lr *= cfg.lr_decay;
      res.lr_halvings.push_back(epoch);
    }
    if (step.stop) {
      res.early_stopped = true;
      break;
    }
  }
  res.last = std::move(params);
  res.last_epoch = res.logs.empty() ? first_epoch - 1 : res.logs.back().epoch;
  return res;
}

}  // namespace poigraph
