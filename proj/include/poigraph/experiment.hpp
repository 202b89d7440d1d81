#pragma once

// Model variants, ablation runs and geographic cross-validation.

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "poigraph/dataset.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/eval.hpp"
#include "poigraph/rng.hpp"
#include "poigraph/train.hpp"

namespace poigraph {

inline const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> v = {"full",          "no_naics",      "random_naics",
                                             "no_socio",      "layers_3",      "hidden_256",
                                             "no_popularity", "no_temporal",   "static_only"};
  return v;
}

inline void check_variants(const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (std::find(known_variants().begin(), known_variants().end(), n) == known_variants().end())
      throw ConfigError("unknown variant '" + n + "'");
}

struct VariantSetup {
  ModelConfig model;
  TrainConfig train;
};

/// Applies a named variant on top of the base configuration.
inline VariantSetup make_variant(const std::string& name, const FeatureStore& fs, const ModelConfig& base,
                                 const TrainConfig& train) {
  check_variants({name});
  VariantSetup v{base, train};
  ModelConfig& m = v.model;
  m.variant = name;
  m.dims.vocab_rows = fs.vocab.table_rows();
  auto drop_columns = [&](int lo, int hi) {
    std::erase_if(m.edge_columns, [&](int c) { return c >= lo && c <= hi; });
  };
  if (name == "no_naics") {
    m.embed_init = EmbedInit::zero;
    m.embed_frozen = true;
  } else if (name == "random_naics") {
    m.embed_init = EmbedInit::normal;
    m.embed_frozen = true;
  } else if (name == "no_socio") {
    drop_columns(static_cast<int>(kEdgeBaseDim), static_cast<int>(kEdgeExtendedDim) - 1);
  } else if (name == "layers_3") {
    m.dims.depth = 3;
    v.train.fanouts = default_fanouts(3);
    if (!v.train.inference_fanouts.empty()) v.train.inference_fanouts = default_fanouts(3);
  } else if (name == "hidden_256") {
    m.dims.hidden = 256;
  } else if (name == "no_popularity") {
    m.dims.use_popularity = false;
    drop_columns(3, 9);
  } else if (name == "no_temporal") {
    drop_columns(1, 2);
  } else if (name == "static_only") {
    m.dims.identity_width = fs.identity_width;
    m.dims.embed_dim = 0;
    m.dims.use_popularity = false;
    m.edge_columns.clear();
  }
  m.dims.edge_in = static_cast<int>(m.edge_columns.size());
  if (m.dims.node_input_dim() < 1) throw ConfigError("variant " + name + " leaves no node inputs");
  if (static_cast<int>(v.train.fanouts.size()) != m.dims.depth)
    throw ConfigError("variant " + name + ": fanouts do not match depth " + std::to_string(m.dims.depth));
  return v;
}

inline std::string config_hash(const TrainConfig& t, const ModelConfig& m) {
  nlohmann::ordered_json j = {{"max_epochs", t.max_epochs},   {"patience", t.patience},
                              {"plateau_window", t.plateau_window}, {"lr_decay", t.lr_decay},
                              {"batch_edges", t.batch_edges}, {"fanouts", t.fanouts},
                              {"inference_fanouts", t.eval_fanouts()}, {"lr", t.lr},
                              {"weight_decay", t.weight_decay}, {"dropout", t.dropout},
                              {"dims", dims_to_json(m.dims)}, {"edge_columns", m.edge_columns},
                              {"embed_frozen", m.embed_frozen}, {"variant", m.variant}};
  return hex64(fnv1a64(j.dump()));
}

/// Test-split evaluation at checkpoint (32-bit) precision.
inline MetricsReport evaluate_model(const Dataset& data, const ModelParameters& params,
                                    const std::vector<int>& edge_columns, const std::vector<int>& fanouts,
                                    std::uint64_t model_seed, std::uint64_t eval_seed) {
  const ModelParameters stored = quantize_to_f32(params);
  const auto sets = make_edge_sets(data, data.features.split.test, eval_seed, "test-negatives");
  const auto preds = predict_edge_sets(data, sets, stored, edge_columns, fanouts, model_seed);
  MetricsReport r = evaluate_predictions(sets, preds);
  r.seed = eval_seed;
  return r;
}

inline MetricsReport evaluate_gravity(const Dataset& data, const GravityParams& g, std::uint64_t eval_seed) {
  const auto sets = make_edge_sets(data, data.features.split.test, eval_seed, "test-negatives");
  MetricsReport r = evaluate_predictions(sets, predict_gravity_sets(data, sets, g));
  r.variant = "gravity";
  r.seed = eval_seed;
  return r;
}

inline GravityParams fit_gravity_baseline(const Dataset& data, std::uint64_t seed) {
  const auto samples = gravity_training_samples(data, seed);
  return fit_gravity(samples);
}

struct AblationRun {
  MetricsReport report;
  FitResult fit;
  VariantSetup setup;
};

/// Trains and evaluates one variant; the evaluation seed equals the training seed.
inline AblationRun run_ablation(const std::string& variant, const Dataset& data, const ModelConfig& base,
                                const TrainConfig& train, FitOptions options = {}) {
  AblationRun run;
  run.setup = make_variant(variant, data.features, base, train);
  run.fit = fit(data, run.setup.train, run.setup.model, std::move(options));
  run.report = evaluate_model(data, run.fit.best, run.setup.model.edge_columns, run.setup.train.eval_fanouts(),
                              train.seed, train.seed);
  run.report.variant = variant;
  run.report.config_hash = config_hash(run.setup.train, run.setup.model);
  return run;
}

// ---------------------------------------------------------------------------
// Geographic cross-validation

/// Seeded partition of states into k folds of near-equal size.
inline std::vector<std::vector<std::string>> partition_states(std::vector<std::string> states, int k,
                                                              std::uint64_t seed) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  if (static_cast<int>(states.size()) < k)
    throw ConfigError("cross-validation: " + std::to_string(states.size()) + " states for " + std::to_string(k) +
                      " folds");
  std::sort(states.begin(), states.end());
  Rng r = Rng(seed).split("cv-partition");
  shuffle(std::span<std::string>(states), r);
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < states.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(states[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline Dataset subset_states(const Dataset& data, const std::vector<std::string>& states) {
  Dataset out;
  out.features = data.features;
  for (const auto& s : states) out.graphs.emplace(s, data.graph(s));
  return out;
}

struct CrossValidationResult {
  std::vector<std::vector<std::string>> folds;
  std::vector<MetricsReport> reports;  // one per fold
};

/// Trains on k-1 folds of states and tests on the held-out fold, within the temporal split.
inline CrossValidationResult geographic_cv(const Dataset& data, int k, const std::string& variant,
                                           const ModelConfig& base, const TrainConfig& train) {
  CrossValidationResult cv;
  cv.folds = partition_states(data.states(), k, train.seed);
  const VariantSetup setup = make_variant(variant, data.features, base, train);
  for (int f = 0; f < k; ++f) {
    std::vector<std::string> train_states;
    for (int g = 0; g < k; ++g)
      if (g != f) train_states.insert(train_states.end(), cv.folds[g].begin(), cv.folds[g].end());
    const Dataset train_data = subset_states(data, train_states);
    const Dataset test_data = subset_states(data, cv.folds[f]);
    const FitResult fr = fit(train_data, setup.train, setup.model);
    MetricsReport r = evaluate_model(test_data, fr.best, setup.model.edge_columns, setup.train.eval_fanouts(),
                                     train.seed, train.seed);
    r.variant = variant;
    r.fold = f;
    r.config_hash = config_hash(setup.train, setup.model);
    cv.reports.push_back(r);
  }
  return cv;
}

}  // namespace poigraph
