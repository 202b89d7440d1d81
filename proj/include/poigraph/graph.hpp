#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "poigraph/errors.hpp"
#include "poigraph/ingest.hpp"
#include "poigraph/io.hpp"
#include "poigraph/rng.hpp"

namespace poigraph {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;
using NodePair = std::pair<NodeId, NodeId>;

inline constexpr std::int64_t kDefaultEdgeThreshold = 5;

inline NodePair canonical_pair(NodeId a, NodeId b) { return a < b ? NodePair{a, b} : NodePair{b, a}; }

/// Immutable per-state co-visitation graph in CSR form.
///
/// Node ids index `nodes()` (brand names, sorted). Each undirected edge has one
/// id shared by both adjacency entries; edges are numbered in (u, v) order with
/// u < v. `target(e, m)` is the monthly count for edge e in month index m,
/// zero-filled where no record exists.
class StateGraph {
 public:
  StateGraph() = default;

  const std::string& state() const { return state_; }
  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<YearMonth>& months() const { return months_; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_edges() const { return endpoints_.size(); }
  std::size_t num_months() const { return months_.size(); }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {neighbors_.data() + offsets_[u], neighbors_.data() + offsets_[u + 1]};
  }
  std::span<const EdgeId> incident_edges(NodeId u) const {
    return {edge_ids_.data() + offsets_[u], edge_ids_.data() + offsets_[u + 1]};
  }
  std::size_t degree(NodeId u) const { return offsets_[u + 1] - offsets_[u]; }

  NodePair endpoints(EdgeId e) const { return endpoints_[e]; }

  float target(EdgeId e, std::size_t month) const { return targets_[e * months_.size() + month]; }

  /// Edge id of {u, v}, if adjacent.
  std::optional<EdgeId> find_edge(NodeId u, NodeId v) const {
    const auto nb = neighbors(u);
    const auto it = std::lower_bound(nb.begin(), nb.end(), v);
    if (it == nb.end() || *it != v) return std::nullopt;
    return edge_ids_[offsets_[u] + static_cast<std::size_t>(it - nb.begin())];
  }

  bool adjacent(NodeId u, NodeId v) const { return find_edge(u, v).has_value(); }

  std::optional<NodeId> find_node(const std::string& brand) const {
    const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), brand);
    if (it == nodes_.end() || *it != brand) return std::nullopt;
    return static_cast<NodeId>(it - nodes_.begin());
  }

  std::optional<std::size_t> month_index(YearMonth ym) const {
    const auto it = std::lower_bound(months_.begin(), months_.end(), ym);
    if (it == months_.end() || *it != ym) return std::nullopt;
    return static_cast<std::size_t>(it - months_.begin());
  }

  /// Edges with a strictly positive target in month index m, ascending.
  const std::vector<EdgeId>& positive_edges(std::size_t month) const { return positives_.at(month); }

  const std::vector<std::uint32_t>& offsets() const { return offsets_; }
  const std::vector<NodeId>& neighbor_array() const { return neighbors_; }
  const std::vector<EdgeId>& edge_id_array() const { return edge_ids_; }
  const std::vector<float>& target_table() const { return targets_; }

  /// Assembles a graph from an undirected edge list (u < v, sorted, unique).
  static StateGraph from_edges(std::string state, std::vector<std::string> nodes, std::vector<YearMonth> months,
                               const std::vector<NodePair>& edges, std::vector<float> targets) {
    StateGraph g;
    g.state_ = std::move(state);
    g.nodes_ = std::move(nodes);
    g.months_ = std::move(months);
    const std::size_t n = g.nodes_.size();
    if (targets.size() != edges.size() * g.months_.size())
      throw ConstructionError("target table size does not match edges x months");
    std::vector<std::uint32_t> deg(n, 0);
    for (const auto& [u, v] : edges) {
      if (u >= v || v >= n) throw ConstructionError("edge list must hold canonical pairs of valid node ids");
      ++deg[u];
      ++deg[v];
    }
    g.offsets_.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] = g.offsets_[i] + deg[i];
    g.neighbors_.resize(2 * edges.size());
    g.edge_ids_.resize(2 * edges.size());
    std::vector<std::uint32_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
    for (EdgeId e = 0; e < edges.size(); ++e) {
      const auto [u, v] = edges[e];
      g.neighbors_[cursor[u]] = v;
      g.edge_ids_[cursor[u]++] = e;
      g.neighbors_[cursor[v]] = u;
      g.edge_ids_[cursor[v]++] = e;
    }
    // Rows are kept sorted so find_edge can binary-search.
    for (std::size_t u = 0; u < n; ++u) {
      const std::size_t b = g.offsets_[u], e = g.offsets_[u + 1];
      std::vector<std::pair<NodeId, EdgeId>> row;
      row.reserve(e - b);
      for (std::size_t k = b; k < e; ++k) row.emplace_back(g.neighbors_[k], g.edge_ids_[k]);
      std::sort(row.begin(), row.end());
      for (std::size_t k = b; k < e; ++k) {
        if (k > b && row[k - b].first == row[k - b - 1].first) throw ConstructionError("duplicate edge");
        g.neighbors_[k] = row[k - b].first;
        g.edge_ids_[k] = row[k - b].second;
      }
    }
    g.endpoints_ = edges;
    g.targets_ = std::move(targets);
    g.index_positives();
    return g;
  }

  static StateGraph from_csr(std::string state, std::vector<std::string> nodes, std::vector<YearMonth> months,
                             std::vector<std::uint32_t> offsets, std::vector<NodeId> neighbors,
                             std::vector<EdgeId> edge_ids, std::vector<float> targets) {
    const std::size_t n = nodes.size();
    if (offsets.size() != n + 1 || offsets.front() != 0 || offsets.back() != neighbors.size() ||
        neighbors.size() != edge_ids.size() || neighbors.size() % 2 != 0)
      throw FormatError("inconsistent CSR arrays");
    const std::size_t num_edges = neighbors.size() / 2;
    std::vector<NodePair> edges(num_edges, {0, 0});
    std::vector<std::uint8_t> seen(num_edges, 0);
    for (NodeId u = 0; u < n; ++u) {
      if (offsets[u] > offsets[u + 1]) throw FormatError("offsets not monotone");
      for (std::size_t k = offsets[u]; k < offsets[u + 1]; ++k) {
        const NodeId v = neighbors[k];
        const EdgeId e = edge_ids[k];
        if (v >= n || e >= num_edges || v == u) throw FormatError("CSR entry out of range");
        if (u < v) {
          edges[e] = {u, v};
          seen[e] |= 1;
        } else {
          seen[e] |= 2;
        }
      }
    }
    if (std::any_of(seen.begin(), seen.end(), [](std::uint8_t s) { return s != 3; }))
      throw FormatError("CSR adjacency is not symmetric");
    StateGraph g = from_edges(std::move(state), std::move(nodes), std::move(months), edges, std::move(targets));
    if (g.offsets_ != offsets || g.neighbors_ != neighbors || g.edge_ids_ != edge_ids)
      throw FormatError("CSR arrays are not in canonical order");
    return g;
  }

 private:
  void index_positives() {
    positives_.assign(months_.size(), {});
    for (EdgeId e = 0; e < endpoints_.size(); ++e)
      for (std::size_t m = 0; m < months_.size(); ++m)
        if (targets_[e * months_.size() + m] > 0.0f) positives_[m].push_back(e);
  }

  std::string state_;
  std::vector<std::string> nodes_;
  std::vector<YearMonth> months_;
  std::vector<std::uint32_t> offsets_{0};
  std::vector<NodeId> neighbors_;
  std::vector<EdgeId> edge_ids_;
  std::vector<NodePair> endpoints_;
  std::vector<float> targets_;
  std::vector<std::vector<EdgeId>> positives_;
};

/// Builds the graph for one state from monthly, outlier-filtered records.
///
/// An edge exists iff at least one month reaches `threshold`; once present,
/// every month keeps its true count (months without a record get 0). When
/// `months` is empty the span runs from the earliest to the latest record.
inline StateGraph build_state_graph(const std::vector<CoVisitRecord>& records,
                                    std::int64_t threshold = kDefaultEdgeThreshold,
                                    std::vector<YearMonth> months = {}) {
  if (records.empty()) {
    return StateGraph::from_edges("", {}, std::move(months), {}, {});
  }
  const std::string& state = records.front().state;
  std::set<std::string> brand_set;
  for (const auto& r : records) {
    if (r.state != state) throw ConstructionError("records span several states (" + state + ", " + r.state + ")");
    if (r.period.unit != PeriodUnit::month) throw ConstructionError("records must be aggregated to months first");
    brand_set.insert(r.brand_a);
    brand_set.insert(r.brand_b);
  }
  if (months.empty()) {
    auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                        [](const auto& a, const auto& b) { return month_of(a.period) < month_of(b.period); });
    for (int o = month_of(lo->period).ordinal(); o <= month_of(hi->period).ordinal(); ++o)
      months.push_back(YearMonth::from_ordinal(o));
  } else {
    std::sort(months.begin(), months.end());
    months.erase(std::unique(months.begin(), months.end()), months.end());
  }
  std::vector<std::string> nodes(brand_set.begin(), brand_set.end());
  auto node_of = [&](const std::string& b) {
    return static_cast<NodeId>(std::lower_bound(nodes.begin(), nodes.end(), b) - nodes.begin());
  };
  auto month_of_rec = [&](const CoVisitRecord& r) {
    const YearMonth ym = month_of(r.period);
    const auto it = std::lower_bound(months.begin(), months.end(), ym);
    if (it == months.end() || *it != ym)
      throw ConstructionError("record month " + ym.to_string() + " outside the graph's month span");
    return static_cast<std::size_t>(it - months.begin());
  };

  const std::size_t num_months = months.size();
  std::map<NodePair, std::vector<std::int64_t>> series;
  for (const auto& r : records) {
    const NodePair key = canonical_pair(node_of(r.brand_a), node_of(r.brand_b));
    auto& s = series[key];
    if (s.empty()) s.assign(num_months, -1);
    const std::size_t m = month_of_rec(r);
    if (s[m] >= 0)
      throw ConstructionError("duplicate record for (" + r.brand_a + ", " + r.brand_b + ", " + state + ", " +
                              months[m].to_string() + ")");
    s[m] = r.device_count;
  }
  std::vector<NodePair> edges;
  std::vector<float> targets;
  for (const auto& [pair, s] : series) {
    if (*std::max_element(s.begin(), s.end()) < threshold) continue;
    edges.push_back(pair);
    for (std::int64_t c : s) targets.push_back(static_cast<float>(std::max<std::int64_t>(c, 0)));
  }
  return StateGraph::from_edges(state, std::move(nodes), std::move(months), edges, std::move(targets));
}

// ---------------------------------------------------------------------------
// Neighbor sampling

/// Sampled adjacency for one layer: row r (a node of the layer's output
/// frontier) aggregates input-frontier positions
/// `neighbors[offsets[r] .. offsets[r+1])`.
struct BlockLayer {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> neighbors;

  std::size_t rows() const { return offsets.size() - 1; }
  std::span<const std::uint32_t> row(std::size_t r) const {
    return {neighbors.data() + offsets[r], neighbors.data() + offsets[r + 1]};
  }
};

/// Layer-wise computation graph for a set of output nodes.
///
/// frontiers[0] is the input frontier and frontiers.back() the output
/// frontier (the seeds). Each frontier is a prefix of the one before it, so
/// row r of frontier k+1 is also row r of frontier k ("self" rows).
/// layers[k] connects frontiers[k+1] (rows) to frontiers[k] (positions).
struct SampledBlock {
  std::vector<std::vector<NodeId>> frontiers;
  std::vector<BlockLayer> layers;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> seed_edges;  // output-frontier positions

  std::size_t depth() const { return layers.size(); }
  const std::vector<NodeId>& input_nodes() const { return frontiers.front(); }
  const std::vector<NodeId>& output_nodes() const { return frontiers.back(); }
};

/// Default encoder fanouts, listed from the input-most layer to the output layer.
inline std::vector<int> default_fanouts(std::size_t depth = 5) {
  const std::vector<int> base = {15, 10, 5};
  std::vector<int> out;
  for (std::size_t k = 0; k < depth; ++k) out.push_back(k < base.size() ? base[k] : base.back());
  return out;
}

/// Samples min(degree, fanout) distinct neighbors per frontier node, layer by
/// layer from the output inward. `fanouts[k]` applies to layers[k]; a
/// negative fanout means "all neighbors".
inline SampledBlock sample_neighborhood(const StateGraph& graph, std::span<const NodeId> seeds,
                                        std::span<const int> fanouts, Rng& rng) {
  const std::size_t depth = fanouts.size();
  if (depth == 0) throw ArgumentError("sample_neighborhood: no layers");
  for (NodeId s : seeds)
    if (s >= graph.num_nodes()) throw ArgumentError("sample_neighborhood: node id " + std::to_string(s) + " invalid");

  SampledBlock block;
  block.frontiers.resize(depth + 1);
  block.layers.resize(depth);

  std::vector<std::int64_t> position(graph.num_nodes(), -1);
  std::vector<NodeId> frontier;
  for (NodeId s : seeds) {
    if (position[s] >= 0) continue;
    position[s] = static_cast<std::int64_t>(frontier.size());
    frontier.push_back(s);
  }
  block.frontiers[depth] = frontier;

  std::vector<std::uint32_t> scratch;
  for (std::size_t k = depth; k-- > 0;) {
    // `position` indexes the frontier being extended; it starts as the output
    // frontier of layer k and grows into the input frontier.
    BlockLayer& layer = block.layers[k];
    const std::size_t rows = frontier.size();
    const int fanout = fanouts[k];
    for (std::size_t r = 0; r < rows; ++r) {
      const auto nb = graph.neighbors(frontier[r]);
      const std::size_t d = nb.size();
      auto take = [&](NodeId v) {
        if (position[v] < 0) {
          position[v] = static_cast<std::int64_t>(frontier.size());
          frontier.push_back(v);
        }
        layer.neighbors.push_back(static_cast<std::uint32_t>(position[v]));
      };
      if (fanout < 0 || d <= static_cast<std::size_t>(fanout)) {
        for (NodeId v : nb) take(v);
      } else {
        scratch.resize(d);
        std::iota(scratch.begin(), scratch.end(), 0u);
        for (std::size_t i = 0; i < static_cast<std::size_t>(fanout); ++i) {
          const std::size_t j = i + rng.below(d - i);
          std::swap(scratch[i], scratch[j]);
          take(nb[scratch[i]]);
        }
      }
      layer.offsets.push_back(static_cast<std::uint32_t>(layer.neighbors.size()));
    }
    block.frontiers[k] = frontier;
  }
  return block;
}

/// Block whose output frontier is the endpoint set of `pairs`, with seed_edges filled.
inline SampledBlock sample_edge_block(const StateGraph& graph, std::span<const NodePair> pairs,
                                      std::span<const int> fanouts, Rng& rng) {
  std::vector<NodeId> seeds;
  seeds.reserve(2 * pairs.size());
  for (const auto& [u, v] : pairs) {
    seeds.push_back(u);
    seeds.push_back(v);
  }
  SampledBlock block = sample_neighborhood(graph, seeds, fanouts, rng);
  std::vector<std::int64_t> pos(graph.num_nodes(), -1);
  const auto& out = block.output_nodes();
  for (std::size_t i = 0; i < out.size(); ++i) pos[out[i]] = static_cast<std::int64_t>(i);
  block.seed_edges.reserve(pairs.size());
  for (const auto& [u, v] : pairs)
    block.seed_edges.emplace_back(static_cast<std::uint32_t>(pos[u]), static_cast<std::uint32_t>(pos[v]));
  return block;
}

// ---------------------------------------------------------------------------
// Negative sampling

/// Uniform sample of `count` distinct non-adjacent unordered node pairs.
///
/// Rejection sampling is tried first; after 100x `count` attempts the
/// remaining pairs are drawn from an exhaustive enumeration of non-edges, so
/// the call terminates on dense graphs. Pairs come back canonical (u < v).
inline std::vector<NodePair> sample_negative_edges(const StateGraph& graph, std::size_t count, Rng& rng) {
  if (count == 0) return {};
  const std::uint64_t n = graph.num_nodes();
  if (n < 2) throw SamplingError("negative sampling needs at least 2 nodes");
  const std::uint64_t total = n * (n - 1) / 2;
  const std::uint64_t available = total - graph.num_edges();
  if (count > available)
    throw SamplingError("requested " + std::to_string(count) + " negatives but only " + std::to_string(available) +
                        " non-edges exist in " + graph.state());

  std::vector<NodePair> out;
  out.reserve(count);
  std::unordered_set<std::uint64_t> chosen;
  auto key = [n](NodePair p) { return static_cast<std::uint64_t>(p.first) * n + p.second; };

  const std::uint64_t max_attempts = 100 * static_cast<std::uint64_t>(count);
  for (std::uint64_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    const auto a = static_cast<NodeId>(rng.below(n));
    const auto b = static_cast<NodeId>(rng.below(n - 1));
    const NodePair p = canonical_pair(a, b >= a ? b + 1 : b);
    if (graph.adjacent(p.first, p.second) || !chosen.insert(key(p)).second) continue;
    out.push_back(p);
  }
  if (out.size() < count) {
    std::vector<NodePair> pool;
    for (NodeId u = 0; u < n; ++u) {
      const auto nb = graph.neighbors(u);
      auto it = std::upper_bound(nb.begin(), nb.end(), u);
      for (NodeId v = u + 1; v < n; ++v) {
        if (it != nb.end() && *it == v) {
          ++it;
          continue;
        }
        if (!chosen.contains(key({u, v}))) pool.emplace_back(u, v);
      }
    }
    const std::size_t need = count - out.size();
    for (std::size_t i = 0; i < need; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary statistics

struct GraphStats {
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  double density = 0.0;
  std::size_t degree_p50 = 0;
  std::size_t degree_p90 = 0;
  std::size_t degree_p99 = 0;
  std::size_t degree_max = 0;
};

inline GraphStats graph_stats(const StateGraph& g) {
  GraphStats s;
  s.num_nodes = g.num_nodes();
  s.num_edges = g.num_edges();
  if (s.num_nodes >= 2)
    s.density = static_cast<double>(s.num_edges) /
                (static_cast<double>(s.num_nodes) * static_cast<double>(s.num_nodes - 1) / 2.0);
  if (s.num_nodes == 0) return s;
  std::vector<std::size_t> deg(s.num_nodes);
  for (NodeId u = 0; u < s.num_nodes; ++u) deg[u] = g.degree(u);
  std::sort(deg.begin(), deg.end());
  // Nearest-rank percentile.
  auto pct = [&](double p) {
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(deg.size())));
    return deg[std::clamp<std::size_t>(rank, 1, deg.size()) - 1];
  };
  s.degree_p50 = pct(50);
  s.degree_p90 = pct(90);
  s.degree_p99 = pct(99);
  s.degree_max = deg.back();
  return s;
}

// ---------------------------------------------------------------------------
// Binary container (see docs/graph_format.md)

inline constexpr std::string_view kGraphMagic = "PGG1";
inline constexpr std::uint32_t kGraphFormatVersion = 1;

inline std::string serialize_graph(const StateGraph& g) {
  io::BinaryWriter w;
  w.put_bytes(kGraphMagic);
  w.put<std::uint32_t>(kGraphFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.num_nodes()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.num_edges()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.num_months()));
  w.put_string16(g.state());
  for (const auto& name : g.nodes()) w.put_string16(name);
  w.put_array(g.offsets());
  w.put_array(g.neighbor_array());
  w.put_array(g.edge_id_array());
  for (const auto& ym : g.months()) w.put<std::uint32_t>(static_cast<std::uint32_t>(ym.year * 100 + ym.month));
  w.put_array(g.target_table());
  return w.bytes();
}

inline StateGraph deserialize_graph(io::BinaryReader r) {
  if (r.get_bytes(4) != kGraphMagic) throw FormatError("'" + r.origin() + "' is not a PGG1 graph file");
  const auto version = r.get<std::uint32_t>();
  if (version != kGraphFormatVersion)
    throw FormatError("'" + r.origin() + "': unsupported graph format version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  const auto e = r.get<std::uint32_t>();
  const auto m = r.get<std::uint32_t>();
  std::string state = r.get_string16();
  std::vector<std::string> nodes(n);
  for (auto& name : nodes) name = r.get_string16();
  auto offsets = r.get_array<std::uint32_t>(std::size_t{n} + 1);
  auto neighbors = r.get_array<NodeId>(2 * std::size_t{e});
  auto edge_ids = r.get_array<EdgeId>(2 * std::size_t{e});
  std::vector<YearMonth> months(m);
  for (auto& ym : months) {
    const auto packed = r.get<std::uint32_t>();
    ym = {static_cast<int>(packed / 100), static_cast<int>(packed % 100)};
  }
  auto targets = r.get_array<float>(std::size_t{e} * m);
  if (!r.at_end()) throw FormatError("'" + r.origin() + "': trailing bytes after graph payload");
  return StateGraph::from_csr(std::move(state), std::move(nodes), std::move(months), std::move(offsets),
                              std::move(neighbors), std::move(edge_ids), std::move(targets));
}

inline void save_graph(const StateGraph& g, const std::filesystem::path& path) {
  io::write_text(path, serialize_graph(g));
}

inline StateGraph load_graph(const std::filesystem::path& path) { return deserialize_graph(io::BinaryReader::open(path)); }

}  // namespace poigraph
