#pragma once

#include <algorithm>
#include <set>

#include "poigraph/dataset.hpp"
#include "poigraph/synthetic.hpp"
#include "poigraph/train.hpp"

namespace fixture {

namespace pg = poigraph;

inline pg::SplitSpec default_split() {
  return pg::SplitSpec::from_ranges({2018, 1}, {2019, 12}, {2020, 1}, {2020, 2}, {2020, 3}, {2020, 3});
}

inline pg::SyntheticSpec small_spec(std::uint64_t seed, int brands = 40, int states = 2) {
  pg::SyntheticSpec s;
  s.n_brands = brands;
  s.n_states = states;
  s.n_categories = 5;
  s.months = 27;
  s.affinity_seed = seed;
  s.sparsity_target = 0.3;
  s.gravity_k = 200.0;
  return s;
}

inline pg::RawInputs raw_inputs(const pg::SyntheticDataset& ds) { return {ds.covisits, ds.brands, ds.coords, ds.socio}; }

inline pg::Dataset small_dataset(std::uint64_t seed, int brands = 40, int states = 2) {
  pg::BuildOptions bo;
  bo.split = default_split();
  return pg::build_dataset(raw_inputs(pg::generate_synthetic(small_spec(seed, brands, states))), bo);
}

/// A model small enough to train in milliseconds.
inline pg::ModelConfig tiny_model(const pg::Dataset& data, int depth = 2) {
  pg::ModelConfig mc = pg::default_model_config(data.features);
  mc.dims.hidden = 8;
  mc.dims.depth = depth;
  mc.dims.node_proj = 8;
  mc.dims.edge_proj = 4;
  return mc;
}

inline pg::TrainConfig tiny_train(int epochs, std::uint64_t seed = 1, int depth = 2) {
  pg::TrainConfig tc;
  tc.max_epochs = epochs;
  tc.seed = seed;
  tc.fanouts = pg::default_fanouts(static_cast<std::size_t>(depth));
  tc.batch_edges = 32;
  return tc;
}

// Same structure, every validation/test month target replaced by an arbitrary value.
inline pg::Dataset scramble_heldout_targets(pg::Dataset data, std::uint64_t seed) {
  pg::Rng r(seed);
  for (auto& [state, g] : data.graphs) {
    std::vector<pg::NodePair> edges;
    for (pg::EdgeId e = 0; e < g.num_edges(); ++e) edges.push_back(g.endpoints(e));
    std::vector<float> t = g.target_table();
    for (pg::EdgeId e = 0; e < g.num_edges(); ++e)
      for (std::size_t m = 0; m < g.num_months(); ++m)
        if (!data.features.split.is_train(g.months()[m])) t[e * g.num_months() + m] = static_cast<float>(r.below(1000));
    g = pg::StateGraph::from_edges(g.state(), g.nodes(), g.months(), edges, std::move(t));
  }
  return data;
}

// Rewrites every test-month count and adds new test-month pairs.
inline pg::RawInputs perturb_test_month(pg::RawInputs raw, const pg::SplitSpec& split, std::uint64_t seed) {
  pg::Rng r(seed);
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < raw.covisits.size(); ++i) {
    const pg::YearMonth m = pg::month_of(raw.covisits[i].period);
    if (std::find(split.test.begin(), split.test.end(), m) != split.test.end()) test_rows.push_back(i);
  }
  for (std::size_t i : test_rows) raw.covisits[i].device_count = 1 + static_cast<std::int64_t>(r.below(5000));
  auto key = [](const pg::CoVisitRecord& c) {
    return c.state + "|" + std::min(c.brand_a, c.brand_b) + "|" + std::max(c.brand_a, c.brand_b) + "|" +
           c.period.to_string();
  };
  std::set<std::string> seen;
  for (const auto& c : raw.covisits) seen.insert(key(c));
  for (int k = 0; k < 200 && !test_rows.empty(); ++k) {
    const pg::CoVisitRecord a = raw.covisits[test_rows[r.below(test_rows.size())]];
    const pg::CoVisitRecord b = raw.covisits[test_rows[r.below(test_rows.size())]];
    pg::CoVisitRecord c{a.brand_a, b.brand_b, a.state, a.period, 50 + static_cast<std::int64_t>(r.below(500))};
    if (a.state != b.state || c.brand_a == c.brand_b || !seen.insert(key(c)).second) continue;
    raw.covisits.push_back(c);
  }
  return raw;
}

}  // namespace fixture
