#pragma once

// Regression and ranking metrics, paired significance tests, the gravity
// baseline, and report serialization.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "poigraph/dataset.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/features.hpp"
#include "poigraph/graph.hpp"
#include "poigraph/io.hpp"
#include "poigraph/train.hpp"

namespace poigraph {

// ---------------------------------------------------------------------------
// Regression metrics

struct RegressionMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mse = 0.0;
  double r2 = 0.0;
};

/// R^2 uses SS_tot about the truth mean; for constant truth it is 1 when the
/// fit is exact and 0 otherwise.
inline RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ShapeError("regression_metrics: lengths " + std::to_string(pred.size()) + " and " +
                     std::to_string(truth.size()));
  const double n = static_cast<double>(pred.size());
  double abs_sum = 0.0, sq_sum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - truth[i];
    abs_sum += std::abs(r);
    sq_sum += r * r;
    mean += truth[i];
  }
  mean /= n;
  double ss_tot = 0.0;
  for (double t : truth) ss_tot += (t - mean) * (t - mean);
  RegressionMetrics m;
  m.mae = abs_sum / n;
  m.mse = sq_sum / n;
  m.rmse = std::sqrt(m.mse);
  m.r2 = ss_tot > 0.0 ? 1.0 - sq_sum / ss_tot : (sq_sum > 0.0 ? 0.0 : 1.0);
  return m;
}

// ---------------------------------------------------------------------------
// Ranking

struct ScoredPair {
  NodeId partner = 0;
  double truth = 0.0;
  double pred = 0.0;
};

/// Partners of one anchor, sorted by prediction (descending, ties by id).
struct RankedQuery {
  std::string state;
  YearMonth month;
  NodeId anchor = 0;
  std::vector<ScoredPair> ranked;

  std::vector<double> relevance() const {
    std::vector<double> r;
    for (const auto& p : ranked) r.push_back(p.truth);
    return r;
  }
};

inline void rank_partners(std::vector<ScoredPair>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredPair& a, const ScoredPair& b) {
    if (a.pred != b.pred) return a.pred > b.pred;
    return a.partner < b.partner;
  });
}

/// One query per (state, month, anchor) with at least `min_partners` labelled partners.
inline std::vector<RankedQuery> ranking_queries(const std::vector<EdgeSet>& sets, const std::vector<Vector>& preds,
                                                std::size_t min_partners = 10) {
  std::vector<RankedQuery> out;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    std::map<NodeId, std::vector<ScoredPair>> by_anchor;
    for (std::size_t k = 0; k < sets[s].pairs.size(); ++k) {
      const auto [u, v] = sets[s].pairs[k];
      const double y = sets[s].targets[k];
      const double p = preds[s][static_cast<Eigen::Index>(k)];
      by_anchor[u].push_back({v, y, p});
      by_anchor[v].push_back({u, y, p});
    }
    for (auto& [anchor, items] : by_anchor) {
      if (items.size() < min_partners) continue;
      rank_partners(items);
      out.push_back({sets[s].state, sets[s].month, anchor, std::move(items)});
    }
  }
  return out;
}

/// NDCG@k with linear gain; a query whose ideal DCG is 0 scores 0.
inline double ndcg_at_k(std::span<const double> ranked_relevance, std::size_t k = 10) {
  auto dcg = [k](std::span<const double> rel) {
    double s = 0.0;
    for (std::size_t r = 0; r < std::min(k, rel.size()); ++r) s += rel[r] / std::log2(static_cast<double>(r) + 2.0);
    return s;
  };
  std::vector<double> ideal(ranked_relevance.begin(), ranked_relevance.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  return idcg > 0.0 ? dcg(ranked_relevance) / idcg : 0.0;
}

inline double ndcg_at_10(const std::vector<RankedQuery>& queries) {
  if (queries.empty()) return 0.0;
  double s = 0.0;
  for (const auto& q : queries) s += ndcg_at_k(q.relevance(), 10);
  return s / static_cast<double>(queries.size());
}

/// Relevant items: positive truth at or above the query's top-decile cut
/// (the ceil(n/10)-th largest truth).
inline std::vector<bool> top_decile_relevant(std::span<const double> truths) {
  std::vector<bool> rel(truths.size(), false);
  if (truths.empty()) return rel;
  std::vector<double> sorted(truths.begin(), truths.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t k = (truths.size() + 9) / 10;
  const double cut = sorted[k - 1];
  for (std::size_t i = 0; i < truths.size(); ++i) rel[i] = truths[i] > 0.0 && truths[i] >= cut;
  return rel;
}

/// Reciprocal rank of the first relevant item; 0 when none is relevant.
inline double reciprocal_rank(std::span<const double> ranked_relevance) {
  const auto rel = top_decile_relevant(ranked_relevance);
  for (std::size_t r = 0; r < rel.size(); ++r)
    if (rel[r]) return 1.0 / static_cast<double>(r + 1);
  return 0.0;
}

inline double mrr(const std::vector<RankedQuery>& queries) {
  if (queries.empty()) return 0.0;
  double s = 0.0;
  for (const auto& q : queries) s += reciprocal_rank(q.relevance());
  return s / static_cast<double>(queries.size());
}

// ---------------------------------------------------------------------------
// Significance

struct SignificanceResult {
  std::string metric;
  std::vector<double> a;
  std::vector<double> b;
  double mean_a = 0.0, sd_a = 0.0, mean_b = 0.0, sd_b = 0.0;
  double t = 0.0;
  double p = 1.0;
  double cohens_d = 0.0;
  bool degenerate = false;
};

inline double sample_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

/// Two-sided paired t-test on a - b with k-1 degrees of freedom. Cohen's d
/// divides the mean difference by the pooled sd sqrt((sd_a^2 + sd_b^2) / 2).
/// Zero-variance differences set `degenerate` and report p = 0.
inline SignificanceResult paired_t_test(std::span<const double> a, std::span<const double> b,
                                        std::string metric = {}) {
  if (a.size() != b.size()) throw ShapeError("paired_t_test: run counts differ");
  if (a.size() < 2) throw ArgumentError("paired_t_test needs at least 2 paired runs");
  SignificanceResult r;
  r.metric = std::move(metric);
  r.a.assign(a.begin(), a.end());
  r.b.assign(b.begin(), b.end());
  r.mean_a = sample_mean(a);
  r.mean_b = sample_mean(b);
  r.sd_a = sample_sd(a);
  r.sd_b = sample_sd(b);
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double md = sample_mean(d);
  const double sd = sample_sd(d);
  const double k = static_cast<double>(a.size());
  const double inf = std::numeric_limits<double>::infinity();
  if (sd == 0.0) {
    r.degenerate = true;
    r.t = md == 0.0 ? 0.0 : std::copysign(inf, md);
    r.p = 0.0;
  } else {
    r.t = md / (sd / std::sqrt(k));
    const boost::math::students_t dist(k - 1.0);
    r.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))), 0.0, 1.0);
  }
  const double pooled = std::sqrt((r.sd_a * r.sd_a + r.sd_b * r.sd_b) / 2.0);
  const double diff = r.mean_a - r.mean_b;
  r.cohens_d = pooled > 0.0 ? diff / pooled : (diff == 0.0 ? 0.0 : std::copysign(inf, diff));
  return r;
}

// ---------------------------------------------------------------------------
// Gravity baseline: y = k * v_i^alpha * v_j^beta / d^gamma

struct GravityParams {
  double k = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double sse = 0.0;
};

struct GravitySample {
  double v_i = 1.0;
  double v_j = 1.0;
  double d = 1.0;
  double y = 0.0;
};

inline const std::vector<double>& default_gravity_grid() {
  static const std::vector<double> grid = {0.5, 1.0, 1.5, 2.0};
  return grid;
}

inline double predict_gravity(const GravityParams& p, double v_i, double v_j, double d) {
  if (!(d > 0.0)) throw ArgumentError("gravity distance must be positive");
  return p.k * std::pow(v_i, p.alpha) * std::pow(v_j, p.beta) / std::pow(d, p.gamma);
}

/// Exhaustive search over grid^3 (alpha outermost) with k by least squares;
/// the first grid point with the lowest SSE wins.
inline GravityParams fit_gravity(std::span<const GravitySample> samples,
                                 const std::vector<double>& grid = default_gravity_grid()) {
  if (samples.empty()) throw FitError("gravity fit: empty training set");
  if (grid.empty()) throw FitError("gravity fit: empty grid");
  std::vector<double> li, lj, ld;
  for (const auto& s : samples) {
    if (!(s.d > 0.0) || !(s.v_i > 0.0) || !(s.v_j > 0.0))
      throw FitError("gravity fit: masses and distances must be positive");
    li.push_back(std::log(s.v_i));
    lj.push_back(std::log(s.v_j));
    ld.push_back(std::log(s.d));
  }
  GravityParams best;
  best.sse = std::numeric_limits<double>::infinity();
  std::vector<double> g(samples.size());
  for (double a : grid)
    for (double b : grid)
      for (double c : grid) {
        double yg = 0.0, gg = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          g[i] = std::exp(a * li[i] + b * lj[i] - c * ld[i]);
          yg += samples[i].y * g[i];
          gg += g[i] * g[i];
        }
        const double k = gg > 0.0 ? yg / gg : 0.0;
        double sse = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          const double r = samples[i].y - k * g[i];
          sse += r * r;
        }
        if (sse < best.sse) best = {k, a, b, c, sse};
      }
  return best;
}

/// Distances below this are clamped before the power law is applied.
inline constexpr double kGravityMinDistanceKm = 1.0;

inline GravitySample gravity_sample(const FeatureStore& fs, const std::string& state, NodePair p, double y) {
  const StateFeatures& f = fs.state(state);
  const double d = std::max(haversine_km(f.coords.at(p.first), f.coords.at(p.second)), kGravityMinDistanceKm);
  return {f.popularity.at(p.first) + 1.0, f.popularity.at(p.second) + 1.0, d, y};
}

/// Training positives of every state and month plus an equal seeded set of non-edges.
inline std::vector<GravitySample> gravity_training_samples(const Dataset& data, std::uint64_t seed) {
  std::vector<GravitySample> out;
  for (const EdgeSet& s : make_edge_sets(data, data.features.split.train, seed, "gravity-negatives"))
    for (std::size_t k = 0; k < s.pairs.size(); ++k)
      out.push_back(gravity_sample(data.features, s.state, s.pairs[k], s.targets[k]));
  return out;
}

inline std::vector<Vector> predict_gravity_sets(const Dataset& data, const std::vector<EdgeSet>& sets,
                                                const GravityParams& p) {
  std::vector<Vector> out;
  for (const EdgeSet& s : sets) {
    Vector v(static_cast<Eigen::Index>(s.pairs.size()));
    for (std::size_t k = 0; k < s.pairs.size(); ++k) {
      const GravitySample g = gravity_sample(data.features, s.state, s.pairs[k], 0.0);
      v[static_cast<Eigen::Index>(k)] = predict_gravity(p, g.v_i, g.v_j, g.d);
    }
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  std::string variant = "full";
  int fold = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  RegressionMetrics regression;
  double ndcg10 = 0.0;
  double mrr = 0.0;
  std::size_t n_edges = 0;
  std::size_t n_queries = 0;
};

inline MetricsReport evaluate_predictions(const std::vector<EdgeSet>& sets, const std::vector<Vector>& preds) {
  std::vector<double> p, t;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (std::size_t k = 0; k < sets[s].targets.size(); ++k) {
      p.push_back(preds[s][static_cast<Eigen::Index>(k)]);
      t.push_back(sets[s].targets[k]);
    }
  MetricsReport r;
  r.regression = regression_metrics(p, t);
  const auto queries = ranking_queries(sets, preds);
  r.ndcg10 = ndcg_at_10(queries);
  r.mrr = mrr(queries);
  r.n_edges = p.size();
  r.n_queries = queries.size();
  return r;
}

inline nlohmann::ordered_json json_number(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  return {{"variant", r.variant},
          {"fold", r.fold},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"mae", r.regression.mae},
          {"rmse", r.regression.rmse},
          {"mse", r.regression.mse},
          {"r2", r.regression.r2},
          {"ndcg10", r.ndcg10},
          {"mrr", r.mrr},
          {"n_edges", r.n_edges},
          {"n_queries", r.n_queries}};
}

inline nlohmann::ordered_json to_json(const SignificanceResult& s) {
  return {{"metric", s.metric}, {"a", s.a},           {"b", s.b},          {"t", json_number(s.t)},
          {"p", s.p},           {"cohens_d", json_number(s.cohens_d)},     {"degenerate", s.degenerate}};
}

inline constexpr std::string_view kMetricsCsvHeader = "variant,fold,seed,mae,rmse,mse,r2,ndcg10,mrr,n_edges,n_queries";
inline constexpr std::string_view kSignificanceCsvHeader =
    "metric,ours_mean,ours_std,baseline_mean,baseline_std,improvement_pct,t,p,cohens_d";

inline std::string metrics_csv_row(const MetricsReport& r) {
  using io::format_double;
  return r.variant + "," + std::to_string(r.fold) + "," + std::to_string(r.seed) + "," +
         format_double(r.regression.mae) + "," + format_double(r.regression.rmse) + "," +
         format_double(r.regression.mse) + "," + format_double(r.regression.r2) + "," + format_double(r.ndcg10) +
         "," + format_double(r.mrr) + "," + std::to_string(r.n_edges) + "," + std::to_string(r.n_queries) + "\n";
}

inline std::string metrics_csv(const std::vector<MetricsReport>& rows) {
  std::string out(kMetricsCsvHeader);
  out += "\n";
  for (const auto& r : rows) out += metrics_csv_row(r);
  return out;
}

/// Improvement is relative to the baseline mean; for error metrics (lower is
/// better) a reduction counts as positive improvement.
inline double improvement_pct(const std::string& metric, double ours, double baseline) {
  if (baseline == 0.0) return 0.0;
  const bool lower_is_better = metric == "mae" || metric == "rmse" || metric == "mse";
  const double delta = lower_is_better ? baseline - ours : ours - baseline;
  return 100.0 * delta / std::abs(baseline);
}

inline std::string significance_csv(const std::vector<SignificanceResult>& rows) {
  using io::format_double;
  std::string out(kSignificanceCsvHeader);
  out += "\n";
  for (const auto& s : rows)
    out += s.metric + "," + format_double(s.mean_a) + "," + format_double(s.sd_a) + "," + format_double(s.mean_b) +
           "," + format_double(s.sd_b) + "," + format_double(improvement_pct(s.metric, s.mean_a, s.mean_b)) + "," +
           format_double(s.t) + "," + format_double(s.p) + "," + format_double(s.cohens_d) + "\n";
  return out;
}

/// Per-metric paired tests of `ours` against `baseline` (aligned runs).
inline std::vector<SignificanceResult> compare_runs(const std::vector<MetricsReport>& ours,
                                                    const std::vector<MetricsReport>& baseline) {
  std::vector<SignificanceResult> out;
  const std::vector<std::pair<std::string, double (*)(const MetricsReport&)>> metrics = {
      {"mae", [](const MetricsReport& r) { return r.regression.mae; }},
      {"rmse", [](const MetricsReport& r) { return r.regression.rmse; }},
      {"r2", [](const MetricsReport& r) { return r.regression.r2; }},
      {"ndcg10", [](const MetricsReport& r) { return r.ndcg10; }},
      {"mrr", [](const MetricsReport& r) { return r.mrr; }},
  };
  for (const auto& [name, get] : metrics) {
    std::vector<double> a, b;
    for (const auto& r : ours) a.push_back(get(r));
    for (const auto& r : baseline) b.push_back(get(r));
    out.push_back(paired_t_test(a, b, name));
  }
  return out;
}

}  // namespace poigraph
