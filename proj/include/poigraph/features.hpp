#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "poigraph/errors.hpp"
#include "poigraph/ingest.hpp"
#include "poigraph/rng.hpp"

namespace poigraph {

inline constexpr std::size_t kEdgeBaseDim = 10;
inline constexpr std::size_t kInteractionDim = 7;
inline constexpr std::size_t kEdgeExtendedDim = kEdgeBaseDim + kSocioDim;  // 48
inline constexpr std::size_t kMaxNaicsCodes = 276;
inline constexpr double kEarthRadiusKm = 6371.0;

// ---------------------------------------------------------------------------
// NAICS vocabulary

/// Sorted distinct 6-digit codes; index 0 is reserved for unknown categories.
class NaicsVocab {
 public:
  NaicsVocab() = default;

  explicit NaicsVocab(const std::set<std::string>& codes) {
    if (codes.size() > kMaxNaicsCodes)
      throw ArgumentError("NAICS vocabulary has " + std::to_string(codes.size()) + " codes; at most " +
                          std::to_string(kMaxNaicsCodes) + " supported");
    for (const auto& c : codes) {
      if (!valid_naics6(c)) throw ArgumentError("invalid NAICS code '" + c + "'");
      index_.emplace(c, static_cast<int>(codes_.size()) + 1);
      codes_.push_back(c);
    }
  }

  /// 1-based index, or 0 for unknown / empty codes.
  int index_of(const std::string& code) const {
    const auto it = index_.find(code);
    return it == index_.end() ? 0 : it->second;
  }

  const std::vector<std::string>& codes() const { return codes_; }
  /// Rows in an embedding table over this vocabulary, reserved slot included.
  int table_rows() const { return static_cast<int>(codes_.size()) + 1; }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a64("naics-vocab");
    for (const auto& c : codes_) h = fnv1a64(c + ";", h);
    return h;
  }

 private:
  std::vector<std::string> codes_;
  std::map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Popularity

struct PopularityInput {
  std::string state;
  std::string brand;
  std::string naics;  // may be empty when unknown
  double volume = 0.0;
};

/// Tercile scores within each (state, 2-digit NAICS sector) stratum.
///
/// Members are ranked by volume ascending; equal volumes keep input order.
/// Rank r of n maps to floor(3r/n), so the bottom third scores 0 and the top
/// third 2. Strata with fewer than three members score 1 throughout.
/// Output is aligned with the input.
inline std::vector<int> compute_popularity(const std::vector<PopularityInput>& entries) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    strata[{e.state, e.naics.size() >= 2 ? e.naics.substr(0, 2) : std::string{}}].push_back(i);
  }
  std::vector<int> scores(entries.size(), 1);
  for (auto& [key, members] : strata) {
    const std::size_t n = members.size();
    if (n < 3) continue;
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return entries[a].volume < entries[b].volume; });
    for (std::size_t r = 0; r < n; ++r) scores[members[r]] = static_cast<int>((3 * r) / n);
  }
  return scores;
}

/// Map-based convenience overload; brands are processed in name order.
inline std::map<std::string, int> compute_popularity(const std::map<std::string, double>& visit_volume,
                                                     const std::map<std::string, std::string>& state_of,
                                                     const std::map<std::string, std::string>& naics_of) {
  std::vector<PopularityInput> entries;
  for (const auto& [brand, volume] : visit_volume) {
    const auto s = state_of.find(brand);
    const auto c = naics_of.find(brand);
    if (s == state_of.end() || c == naics_of.end())
      throw ArgumentError("compute_popularity: brand '" + brand + "' missing state or NAICS");
    entries.push_back({s->second, brand, c->second, volume});
  }
  const auto scores = compute_popularity(entries);
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < entries.size(); ++i) out[entries[i].brand] = scores[i];
  return out;
}

// ---------------------------------------------------------------------------
// Spatial

inline double haversine_km(LatLon a, LatLon b) {
  auto check = [](LatLon p) {
    if (!(p.lat_deg >= -90.0 && p.lat_deg <= 90.0 && p.lon_deg >= -180.0 && p.lon_deg <= 180.0))
      throw ArgumentError("coordinate out of range (" + std::to_string(p.lat_deg) + ", " +
                          std::to_string(p.lon_deg) + ")");
  };
  check(a);
  check(b);
  constexpr double rad = std::numbers::pi / 180.0;
  const double phi1 = a.lat_deg * rad;
  const double phi2 = b.lat_deg * rad;
  const double dphi = (b.lat_deg - a.lat_deg) * rad;
  const double dlambda = (b.lon_deg - a.lon_deg) * rad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = std::clamp(s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::atan2(std::sqrt(h), std::sqrt(1.0 - h));
}

/// Moments of log(d + 1) over training edges (population estimator).
struct DistanceStats {
  double mu = 0.0;
  double sigma = 1.0;

  double normalize(double d_km) const { return (std::log(d_km + 1.0) - mu) / sigma; }
};

inline constexpr double kSigmaFloor = 1e-12;

inline DistanceStats fit_distance_stats(std::span<const double> train_distances_km) {
  if (train_distances_km.empty()) throw ArgumentError("fit_distance_stats: no training distances");
  const double n = static_cast<double>(train_distances_km.size());
  double mean = 0.0;
  for (double d : train_distances_km) mean += std::log(d + 1.0);
  mean /= n;
  double var = 0.0;
  for (double d : train_distances_km) {
    const double z = std::log(d + 1.0) - mean;
    var += z * z;
  }
  var /= n;
  const double sd = std::sqrt(var);
  return {mean, sd < kSigmaFloor ? 1.0 : sd};
}

// ---------------------------------------------------------------------------
// Temporal and interaction features

/// (sin, cos) of 2*pi*m/12 for a 0-based month of year.
inline std::array<double, 2> encode_month(int m) {
  if (m < 0 || m > 11) throw ArgumentError("month index " + std::to_string(m) + " outside 0..11");
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / 12.0;
  return {std::sin(angle), std::cos(angle)};
}

inline std::array<double, kInteractionDim> interaction_features(int p_i, int p_j) {
  const double a = p_i;
  const double b = p_j;
  return {a + b, a * b, std::abs(a - b), std::max(a, b), std::min(a, b), p_i == p_j ? 1.0 : 0.0, std::sqrt(a * b)};
}

using EdgeFeatures = std::array<double, kEdgeBaseDim>;
using ExtendedEdgeFeatures = std::array<double, kEdgeExtendedDim>;

/// [d_norm, sin, cos, 7 interactions].
inline EdgeFeatures assemble_edge_features(LatLon coord_i, LatLon coord_j, int month_index,
                                           const DistanceStats& stats, int p_i, int p_j) {
  EdgeFeatures out{};
  out[0] = stats.normalize(haversine_km(coord_i, coord_j));
  const auto [s, c] = encode_month(month_index);
  out[1] = s;
  out[2] = c;
  const auto inter = interaction_features(p_i, p_j);
  std::copy(inter.begin(), inter.end(), out.begin() + 3);
  return out;
}

/// Name-resolving overload; a brand without coordinates is a feature error.
inline EdgeFeatures assemble_edge_features(const std::string& brand_i, const std::string& brand_j, int month_index,
                                           const DistanceStats& stats, const std::map<std::string, LatLon>& coords,
                                           const std::map<std::string, int>& scores) {
  auto coord = [&](const std::string& b) {
    const auto it = coords.find(b);
    if (it == coords.end()) throw FeatureError("no coordinates for brand '" + b + "'");
    return it->second;
  };
  auto score = [&](const std::string& b) {
    const auto it = scores.find(b);
    if (it == scores.end()) throw FeatureError("no popularity score for brand '" + b + "'");
    return it->second;
  };
  return assemble_edge_features(coord(brand_i), coord(brand_j), month_index, stats, score(brand_i), score(brand_j));
}

// ---------------------------------------------------------------------------
// Socioeconomic context

/// Standardized indicators keyed by (state, year); each column is z-scored
/// with moments from the fitting years only.
class SocioTable {
 public:
  SocioTable() = default;

  static SocioTable fit(const RawSocio& raw, const std::set<int>& fit_years) {
    SocioTable t;
    std::size_t n = 0;
    for (const auto& [key, row] : raw) {
      if (!fit_years.contains(key.second)) continue;
      ++n;
      for (std::size_t k = 0; k < kSocioDim; ++k) t.mean_[k] += row[k];
    }
    if (n == 0) throw FeatureError("socioeconomic table has no rows for the fitting years");
    for (auto& m : t.mean_) m /= static_cast<double>(n);
    for (const auto& [key, row] : raw) {
      if (!fit_years.contains(key.second)) continue;
      for (std::size_t k = 0; k < kSocioDim; ++k) t.scale_[k] += (row[k] - t.mean_[k]) * (row[k] - t.mean_[k]);
    }
    for (auto& s : t.scale_) {
      s = std::sqrt(s / static_cast<double>(n));
      if (s < kSigmaFloor) s = 1.0;
    }
    for (const auto& [key, row] : raw) {
      SocioRow z{};
      for (std::size_t k = 0; k < kSocioDim; ++k) z[k] = (row[k] - t.mean_[k]) / t.scale_[k];
      t.rows_[key] = z;
    }
    return t;
  }

  /// Stores rows as given (already standardized).
  static SocioTable from_rows(RawSocio rows) {
    SocioTable t;
    t.rows_ = std::move(rows);
    return t;
  }

  bool contains(const std::string& state, int year) const { return rows_.contains({state, year}); }

  const SocioRow& at(const std::string& state, int year) const {
    const auto it = rows_.find({state, year});
    if (it == rows_.end())
      throw FeatureError("no socioeconomic row for (" + state + ", " + std::to_string(year) + ")");
    return it->second;
  }

  const RawSocio& rows() const { return rows_; }

 private:
  RawSocio rows_;
  SocioRow mean_{};
  SocioRow scale_{};
};

/// Appends the prior calendar year's state indicators (lag-1).
inline ExtendedEdgeFeatures extend_with_socio(const EdgeFeatures& edge, const std::string& state, YearMonth month,
                                              const SocioTable& socio) {
  const SocioRow& s = socio.at(state, month.year - 1);
  ExtendedEdgeFeatures out{};
  std::copy(edge.begin(), edge.end(), out.begin());
  std::copy(s.begin(), s.end(), out.begin() + kEdgeBaseDim);
  return out;
}

/// Column names of the 48-wide vector, in order.
inline std::vector<std::string> extended_feature_names() {
  std::vector<std::string> names = {"d_norm", "sin_m", "cos_m"};
  char buf[8];
  for (int k = 3; k <= 9; ++k) names.push_back("x" + std::to_string(k));
  for (std::size_t k = 1; k <= kSocioDim; ++k) {
    std::snprintf(buf, sizeof(buf), "s%02zu", k);
    names.emplace_back(buf);
  }
  return names;
}

}  // namespace poigraph
