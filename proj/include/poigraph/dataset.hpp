#pragma once

// Build pipeline: raw records -> monthly, outlier-filtered records -> state
// graphs -> aligned feature tables. Also the on-disk layout of a build
// directory (graphs/<STATE>.pgg + features.json).

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poigraph/errors.hpp"
#include "poigraph/features.hpp"
#include "poigraph/graph.hpp"
#include "poigraph/ingest.hpp"
#include "poigraph/io.hpp"
#include "poigraph/model.hpp"

namespace poigraph {

// ---------------------------------------------------------------------------
// Temporal split

struct SplitSpec {
  std::vector<YearMonth> train;
  std::vector<YearMonth> validation;
  std::vector<YearMonth> test;

  void validate() const {
    if (train.empty()) throw ConfigError("split: no training months");
    if (validation.empty()) throw ConfigError("split: no validation months");
    if (test.empty()) throw ConfigError("split: no test months");
    for (const auto* part : {&train, &validation, &test})
      if (!std::is_sorted(part->begin(), part->end()) ||
          std::adjacent_find(part->begin(), part->end()) != part->end())
        throw ConfigError("split: months must be strictly increasing within each part");
    if (!(train.back() < validation.front() && validation.back() < test.front()))
      throw ConfigError("split: training < validation < test must hold in calendar order");
  }

  /// Contiguous ranges, inclusive.
  static SplitSpec from_ranges(YearMonth train_from, YearMonth train_to, YearMonth val_from, YearMonth val_to,
                               YearMonth test_from, YearMonth test_to) {
    auto range = [](YearMonth a, YearMonth b) {
      std::vector<YearMonth> out;
      for (int o = a.ordinal(); o <= b.ordinal(); ++o) out.push_back(YearMonth::from_ordinal(o));
      return out;
    };
    SplitSpec s{range(train_from, train_to), range(val_from, val_to), range(test_from, test_to)};
    s.validate();
    return s;
  }

  bool is_train(YearMonth m) const { return std::binary_search(train.begin(), train.end(), m); }

  std::set<int> socio_fit_years() const {
    std::set<int> years;
    for (const auto& m : train) years.insert(m.year - 1);
    return years;
  }
};

// ---------------------------------------------------------------------------
// Feature store

struct StateFeatures {
  std::vector<std::string> naics;  // per node, empty when unknown
  std::vector<int> naics_index;    // per node, into the vocabulary (0 = unknown)
  std::vector<int> popularity;     // per node
  std::vector<LatLon> coords;      // per node
  int identity_offset = 0;         // first global identity index of this state's nodes
};

struct FeatureStore {
  NaicsVocab vocab;
  DistanceStats distance;
  SocioTable socio;  // standardized
  SplitSpec split;
  std::int64_t threshold = kDefaultEdgeThreshold;
  std::int64_t outlier_cap = kDefaultOutlierCap;
  std::map<std::string, StateFeatures> states;
  int identity_width = 0;

  const StateFeatures& state(const std::string& s) const {
    const auto it = states.find(s);
    if (it == states.end()) throw FeatureError("no features for state '" + s + "'");
    return it->second;
  }

  NodeTable node_table(const std::string& s) const {
    const StateFeatures& f = state(s);
    NodeTable t;
    t.naics_index = f.naics_index;
    t.popularity = f.popularity;
    t.identity.resize(f.naics_index.size());
    std::iota(t.identity.begin(), t.identity.end(), f.identity_offset);
    return t;
  }

  /// Full 48-wide vector for one node pair in one month.
  ExtendedEdgeFeatures edge_vector(const std::string& s, NodePair p, YearMonth month) const {
    const StateFeatures& f = state(s);
    const EdgeFeatures base = assemble_edge_features(f.coords.at(p.first), f.coords.at(p.second), month.month_index(),
                                                     distance, f.popularity.at(p.first), f.popularity.at(p.second));
    return extend_with_socio(base, s, month, socio);
  }

  /// Rows of selected edge-vector columns, one per pair.
  Matrix edge_matrix(const std::string& s, std::span<const NodePair> pairs, YearMonth month,
                     std::span<const int> columns) const {
    Matrix x(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(columns.size()));
    if (columns.empty()) return x;
    for (std::size_t r = 0; r < pairs.size(); ++r) {
      const auto v = edge_vector(s, pairs[r], month);
      for (std::size_t c = 0; c < columns.size(); ++c)
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[static_cast<std::size_t>(columns[c])];
    }
    return x;
  }
};

inline std::vector<int> all_edge_columns() {
  std::vector<int> cols(kEdgeExtendedDim);
  std::iota(cols.begin(), cols.end(), 0);
  return cols;
}

// ---------------------------------------------------------------------------
// Pipeline

struct RawInputs {
  std::vector<CoVisitRecord> covisits;
  std::vector<BrandRecord> brands;
  std::map<std::string, LatLon> coords;
  RawSocio socio;
};

struct BuildOptions {
  std::int64_t threshold = kDefaultEdgeThreshold;
  std::int64_t outlier_cap = kDefaultOutlierCap;
  SplitSpec split;
};

struct BuildReport {
  std::size_t input_records = 0;
  std::size_t monthly_records = 0;
  std::size_t outliers_removed = 0;
  std::vector<std::string> brands_without_naics;
  std::map<std::string, GraphStats> graphs;
};

struct Dataset {
  std::map<std::string, StateGraph> graphs;
  FeatureStore features;
  BuildReport report;

  std::vector<std::string> states() const {
    std::vector<std::string> out;
    for (const auto& [s, g] : graphs) out.push_back(s);
    return out;
  }

  const StateGraph& graph(const std::string& s) const {
    const auto it = graphs.find(s);
    if (it == graphs.end()) throw ArgumentError("unknown state '" + s + "'");
    return it->second;
  }
};

/// Runs the whole build in memory.
///
/// Popularity volumes and distance moments use training months only; the
/// socioeconomic table is z-scored over the lag years of the training months.
inline Dataset build_dataset(const RawInputs& raw, const BuildOptions& opt) {
  opt.split.validate();
  Dataset ds;
  ds.report.input_records = raw.covisits.size();
  const auto monthly = aggregate_to_monthly(raw.covisits);
  ds.report.monthly_records = monthly.size();
  FilterResult filtered = filter_outliers(monthly, opt.outlier_cap);
  ds.report.outliers_removed = filtered.removed;

  // Graph month span covers the split and every record.
  YearMonth lo = opt.split.train.front();
  YearMonth hi = opt.split.test.back();
  for (const auto& r : filtered.records) {
    lo = std::min(lo, month_of(r.period));
    hi = std::max(hi, month_of(r.period));
  }
  std::vector<YearMonth> months;
  for (int o = lo.ordinal(); o <= hi.ordinal(); ++o) months.push_back(YearMonth::from_ordinal(o));

  std::map<std::string, std::vector<CoVisitRecord>> by_state;
  for (auto& r : filtered.records) by_state[r.state].push_back(std::move(r));
  for (auto& [state, recs] : by_state) {
    try {
      StateGraph g = build_state_graph(recs, opt.threshold, months);
      if (g.num_nodes() > 0) ds.graphs.emplace(state, std::move(g));
    } catch (const Error& e) {
      throw ConstructionError("state " + state + ": " + e.what());
    }
  }

  const NaicsResolution naics =
      raw.brands.empty() ? NaicsResolution{} : resolve_brand_naics(raw.brands);
  ds.report.brands_without_naics = naics.excluded;

  FeatureStore& fs = ds.features;
  fs.split = opt.split;
  fs.threshold = opt.threshold;
  fs.outlier_cap = opt.outlier_cap;

  std::set<std::string> codes;
  for (const auto& [state, g] : ds.graphs)
    for (const auto& b : g.nodes())
      if (const auto it = naics.naics_of.find(b); it != naics.naics_of.end()) codes.insert(it->second);
  fs.vocab = NaicsVocab(codes);

  std::vector<std::size_t> train_month_idx;
  std::vector<double> train_distances;
  int identity = 0;
  for (const auto& [state, g] : ds.graphs) {
    for (const auto& m : opt.split.train) train_month_idx.push_back(*g.month_index(m));
    // Edges that clear the threshold in a training month. An edge kept alive
    // only by a later month must not shape training-time statistics.
    std::vector<bool> training_edge(g.num_edges(), false);
    for (EdgeId e = 0; e < g.num_edges(); ++e)
      for (const auto& m : opt.split.train)
        if (g.target(e, *g.month_index(m)) >= static_cast<float>(opt.threshold)) training_edge[e] = true;
    StateFeatures sf;
    sf.identity_offset = identity;
    identity += static_cast<int>(g.num_nodes());
    std::vector<PopularityInput> pop;
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
      const std::string& b = g.nodes()[u];
      const auto c = raw.coords.find(b);
      if (c == raw.coords.end()) throw FeatureError("no coordinates for brand '" + b + "' (state " + state + ")");
      sf.coords.push_back(c->second);
      const auto n = naics.naics_of.find(b);
      sf.naics.push_back(n == naics.naics_of.end() ? std::string{} : n->second);
      sf.naics_index.push_back(fs.vocab.index_of(sf.naics.back()));
      double volume = 0.0;
      for (EdgeId e : g.incident_edges(u))
        if (training_edge[e])
          for (const auto& m : opt.split.train) volume += g.target(e, *g.month_index(m));
      pop.push_back({state, b, sf.naics.back(), volume});
    }
    sf.popularity = compute_popularity(pop);
    for (EdgeId e = 0; e < g.num_edges(); ++e) {
      if (!training_edge[e]) continue;
      const auto [u, v] = g.endpoints(e);
      train_distances.push_back(haversine_km(sf.coords[u], sf.coords[v]));
    }
    ds.report.graphs[state] = graph_stats(g);
    fs.states.emplace(state, std::move(sf));
  }
  fs.identity_width = identity;
  if (train_distances.empty()) throw FeatureError("no training edges to fit distance statistics");
  fs.distance = fit_distance_stats(train_distances);

  fs.socio = SocioTable::fit(raw.socio, opt.split.socio_fit_years());
  std::set<int> needed;
  for (const auto* part : {&opt.split.train, &opt.split.validation, &opt.split.test})
    for (const auto& m : *part) needed.insert(m.year - 1);
  for (const auto& [state, g] : ds.graphs)
    for (int y : needed)
      if (!fs.socio.contains(state, y))
        throw FeatureError("missing socioeconomic row for lag-1 lookup (" + state + ", " + std::to_string(y) + ")");
  return ds;
}

/// Reads the four input files of a dataset directory.
inline RawInputs read_inputs(const std::filesystem::path& dir, CovisitFormat format = CovisitFormat::csv) {
  RawInputs in;
  const auto cov = parse_covisit_file(dir / (format == CovisitFormat::csv ? "covisits.csv" : "covisits.jsonl"), format);
  in.covisits = cov.records;
  in.brands = parse_brand_file(dir / "brands.csv").records;
  in.coords = parse_coords_file(dir / "coords.csv");
  in.socio = parse_socio_file(dir / "socio.csv");
  return in;
}

// ---------------------------------------------------------------------------
// Build directory

inline constexpr int kFeatureStoreVersion = 1;

inline nlohmann::ordered_json months_to_json(const std::vector<YearMonth>& months) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (const auto& m : months) a.push_back(m.to_string());
  return a;
}

inline std::vector<YearMonth> months_from_json(const nlohmann::json& j) {
  std::vector<YearMonth> out;
  for (const auto& v : j) {
    const auto m = parse_year_month(v.get<std::string>());
    if (!m) throw FormatError("bad month '" + v.get<std::string>() + "'");
    out.push_back(*m);
  }
  return out;
}

inline std::string feature_store_json(const FeatureStore& fs) {
  nlohmann::ordered_json j;
  j["format"] = "poigraph-features";
  j["version"] = kFeatureStoreVersion;
  j["vocab"] = fs.vocab.codes();
  j["vocab_hash"] = fs.vocab.hash();
  j["distance"] = {{"mu", fs.distance.mu}, {"sigma", fs.distance.sigma}};
  j["split"] = {{"train", months_to_json(fs.split.train)},
                {"validation", months_to_json(fs.split.validation)},
                {"test", months_to_json(fs.split.test)}};
  j["threshold"] = fs.threshold;
  j["outlier_cap"] = fs.outlier_cap;
  j["identity_width"] = fs.identity_width;
  nlohmann::ordered_json states = nlohmann::ordered_json::object();
  for (const auto& [s, f] : fs.states) {
    nlohmann::ordered_json lat = nlohmann::ordered_json::array(), lon = nlohmann::ordered_json::array();
    for (const auto& c : f.coords) {
      lat.push_back(c.lat_deg);
      lon.push_back(c.lon_deg);
    }
    states[s] = {{"graph", "graphs/" + s + ".pgg"}, {"identity_offset", f.identity_offset},
                 {"naics", f.naics},                {"popularity", f.popularity},
                 {"lat", lat},                      {"lon", lon}};
  }
  j["states"] = states;
  nlohmann::ordered_json socio = nlohmann::ordered_json::array();
  for (const auto& [key, row] : fs.socio.rows())
    socio.push_back({{"state", key.first}, {"year", key.second}, {"values", row}});
  j["socio"] = socio;
  return j.dump(1) + "\n";
}

inline FeatureStore feature_store_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "poigraph-features" || j.at("version") != kFeatureStoreVersion)
      throw FormatError("unsupported feature store format");
    FeatureStore fs;
    const auto codes = j.at("vocab").get<std::vector<std::string>>();
    fs.vocab = NaicsVocab(std::set<std::string>(codes.begin(), codes.end()));
    fs.distance = {j.at("distance").at("mu").get<double>(), j.at("distance").at("sigma").get<double>()};
    fs.split = {months_from_json(j.at("split").at("train")), months_from_json(j.at("split").at("validation")),
                months_from_json(j.at("split").at("test"))};
    fs.split.validate();
    j.at("threshold").get_to(fs.threshold);
    j.at("outlier_cap").get_to(fs.outlier_cap);
    j.at("identity_width").get_to(fs.identity_width);
    for (const auto& [s, v] : j.at("states").items()) {
      StateFeatures f;
      v.at("identity_offset").get_to(f.identity_offset);
      v.at("naics").get_to(f.naics);
      v.at("popularity").get_to(f.popularity);
      const auto lat = v.at("lat").get<std::vector<double>>();
      const auto lon = v.at("lon").get<std::vector<double>>();
      if (lat.size() != f.naics.size() || lon.size() != f.naics.size() || f.popularity.size() != f.naics.size())
        throw FormatError("state " + s + ": per-node arrays differ in length");
      for (std::size_t i = 0; i < lat.size(); ++i) f.coords.push_back({lat[i], lon[i]});
      for (const auto& c : f.naics) f.naics_index.push_back(fs.vocab.index_of(c));
      fs.states.emplace(s, std::move(f));
    }
    RawSocio rows;
    for (const auto& r : j.at("socio")) {
      const auto values = r.at("values").get<std::vector<double>>();
      if (values.size() != kSocioDim) throw FormatError("socio row with wrong width");
      SocioRow row{};
      std::copy(values.begin(), values.end(), row.begin());
      rows[{r.at("state").get<std::string>(), r.at("year").get<int>()}] = row;
    }
    fs.socio = SocioTable::from_rows(std::move(rows));
    return fs;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("feature store: ") + e.what());
  }
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  for (const auto& [s, g] : ds.graphs) save_graph(g, dir / "graphs" / (s + ".pgg"));
  io::write_text(dir / "features.json", feature_store_json(ds.features));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.features = feature_store_from_json(io::read_text(dir / "features.json"));
  for (const auto& [s, f] : ds.features.states) {
    StateGraph g = load_graph(dir / "graphs" / (s + ".pgg"));
    if (g.state() != s || g.num_nodes() != f.naics.size())
      throw FormatError("graph file for " + s + " does not match the feature store");
    ds.report.graphs[s] = graph_stats(g);
    ds.graphs.emplace(s, std::move(g));
  }
  for (const auto& [s, g] : ds.graphs)
    for (const auto* part : {&ds.features.split.train, &ds.features.split.validation, &ds.features.split.test})
      for (const auto& m : *part)
        if (!g.month_index(m)) throw FormatError("graph " + s + " lacks split month " + m.to_string());
  return ds;
}

}  // namespace poigraph
