#pragma once

// Synthetic co-visitation data with a known generative process.
//
//   lambda_ij(m) = k * v_i * v_j / max(d_ij, d_min)^gamma * A[c_i, c_j] * season(m)
//   season(m)    = 1 + amp * cos(2 pi (m - 6) / 12)        (m = 0-based month of year)
//   count        = round(lambda + noise * (Poisson(lambda) - lambda)), floored at 0
//
// Only the top `sparsity_target` fraction of pairs per state (by base
// intensity) are active; inactive pairs never co-visit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "poigraph/errors.hpp"
#include "poigraph/features.hpp"
#include "poigraph/ingest.hpp"
#include "poigraph/io.hpp"
#include "poigraph/rng.hpp"

namespace poigraph {

struct SyntheticSpec {
  int n_brands = 300;
  int n_states = 3;
  int n_categories = 10;
  int months = 27;
  std::uint64_t affinity_seed = 1;
  double sparsity_target = 0.1;
  double noise_scale = 1.0;
  // Shape of the generative process.
  double affinity_contrast = 1.0;  // log-scale sd of A; 0 gives A == 1
  double season_amplitude = 0.3;   // 0 gives season == 1
  double gravity_k = 2000.0;
  double gravity_gamma = 1.0;
  double mass_sigma = 0.5;         // log-scale sd of brand masses
  double min_distance_km = 1.0;
  YearMonth start{2018, 1};

  void validate() const {
    if (n_brands < 2) throw ConfigError("synthetic.n_brands must be at least 2");
    if (n_states < 1) throw ConfigError("synthetic.n_states must be at least 1");
    if (n_categories < 1 || n_categories > static_cast<int>(kMaxNaicsCodes))
      throw ConfigError("synthetic.n_categories must be in 1..276");
    if (months < 1) throw ConfigError("synthetic.months must be at least 1");
    if (!(sparsity_target > 0.0 && sparsity_target < 1.0))
      throw ConfigError("synthetic.sparsity_target must be in (0, 1)");
    if (!(noise_scale >= 0.0)) throw ConfigError("synthetic.noise_scale must be non-negative");
    if (!(affinity_contrast >= 0.0)) throw ConfigError("synthetic.affinity_contrast must be non-negative");
    if (!(season_amplitude >= 0.0 && season_amplitude < 1.0))
      throw ConfigError("synthetic.season_amplitude must be in [0, 1)");
    if (!(gravity_k > 0.0) || !(gravity_gamma >= 0.0) || !(min_distance_km > 0.0) || !(mass_sigma >= 0.0))
      throw ConfigError("synthetic gravity parameters out of range");
  }
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"n_brands", s.n_brands},
       {"n_states", s.n_states},
       {"n_categories", s.n_categories},
       {"months", s.months},
       {"affinity_seed", s.affinity_seed},
       {"sparsity_target", s.sparsity_target},
       {"noise_scale", s.noise_scale},
       {"affinity_contrast", s.affinity_contrast},
       {"season_amplitude", s.season_amplitude},
       {"gravity_k", s.gravity_k},
       {"gravity_gamma", s.gravity_gamma},
       {"mass_sigma", s.mass_sigma},
       {"min_distance_km", s.min_distance_km},
       {"start", s.start.to_string()}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_brands", s.n_brands);
  get("n_states", s.n_states);
  get("n_categories", s.n_categories);
  get("months", s.months);
  get("affinity_seed", s.affinity_seed);
  get("sparsity_target", s.sparsity_target);
  get("noise_scale", s.noise_scale);
  get("affinity_contrast", s.affinity_contrast);
  get("season_amplitude", s.season_amplitude);
  get("gravity_k", s.gravity_k);
  get("gravity_gamma", s.gravity_gamma);
  get("mass_sigma", s.mass_sigma);
  get("min_distance_km", s.min_distance_km);
  if (j.contains("start")) {
    const auto ym = parse_year_month(j.at("start").get<std::string>());
    if (!ym) throw ConfigError("synthetic.start must be YYYY-MM");
    s.start = *ym;
  }
}

// ---------------------------------------------------------------------------
// Poisson sampling

/// Smallest k with P(X <= k) >= u for X ~ Poisson(lambda).
///
/// Starts at floor(lambda) with the exact CDF there (regularized upper
/// incomplete gamma) and walks with the pmf recurrence, so the cost is
/// O(sqrt(lambda)) per draw.
inline std::int64_t poisson_inverse_cdf(double lambda, double u) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("Poisson mean must be finite and >= 0");
  if (lambda == 0.0 || u <= 0.0) return 0;
  auto m = static_cast<std::int64_t>(std::floor(lambda));
  const double md = static_cast<double>(m);
  double pmf = std::exp(md * std::log(lambda) - lambda - std::lgamma(md + 1.0));
  double cdf = boost::math::gamma_q(md + 1.0, lambda);
  if (cdf >= u) {
    while (m > 0 && cdf - pmf >= u) {
      cdf -= pmf;
      pmf *= static_cast<double>(m) / lambda;
      --m;
    }
    return m;
  }
  while (cdf < u) {
    ++m;
    pmf *= lambda / static_cast<double>(m);
    if (pmf == 0.0) break;  // u within rounding of 1
    cdf += pmf;
  }
  return m;
}

inline std::int64_t sample_poisson(double lambda, Rng& rng) { return poisson_inverse_cdf(lambda, rng.uniform()); }

// ---------------------------------------------------------------------------
// Generator

struct StateCenter {
  const char* code;
  double lat;
  double lon;
};

inline constexpr std::array<StateCenter, 25> kStateCenters = {{
    {"TX", 31.0, -99.0}, {"CA", 37.2, -119.5}, {"NY", 42.9, -75.5}, {"FL", 28.6, -82.4}, {"IL", 40.0, -89.2},
    {"PA", 40.9, -77.8}, {"OH", 40.3, -82.8},  {"GA", 32.7, -83.4}, {"NC", 35.5, -79.4}, {"MI", 44.3, -85.4},
    {"NJ", 40.2, -74.7}, {"VA", 37.5, -78.9},  {"WA", 47.4, -120.5}, {"AZ", 34.3, -111.7}, {"MA", 42.3, -71.8},
    {"TN", 35.9, -86.4}, {"IN", 39.9, -86.3},  {"MO", 38.4, -92.5}, {"MD", 39.0, -76.8}, {"WI", 44.6, -89.9},
    {"CO", 39.0, -105.5}, {"MN", 46.3, -94.3}, {"SC", 33.9, -80.9}, {"AL", 32.8, -86.8}, {"LA", 31.1, -92.0},
}};

inline constexpr std::array<const char*, 12> kSectors = {"44", "45", "72", "81", "71", "62",
                                                         "52", "53", "54", "61", "42", "31"};

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<CoVisitRecord> covisits;  // monthly, count > 0 only
  std::vector<BrandRecord> brands;
  std::map<std::string, LatLon> coords;
  RawSocio socio;

  // Ground truth.
  std::vector<std::string> brand_names;
  std::vector<std::string> state_of;     // per brand
  std::vector<int> category_of;          // per brand
  std::vector<double> mass_of;           // per brand
  std::vector<std::string> category_codes;
  std::vector<std::vector<double>> affinity;  // symmetric, n_categories^2
  std::size_t active_pairs = 0;

  std::vector<YearMonth> months() const {
    std::vector<YearMonth> out;
    for (int m = 0; m < spec.months; ++m) out.push_back(YearMonth::from_ordinal(spec.start.ordinal() + m));
    return out;
  }
};

inline double synthetic_season(const SyntheticSpec& spec, int month_index) {
  return 1.0 + spec.season_amplitude * std::cos(2.0 * std::numbers::pi * (month_index - 6) / 12.0);
}

/// Base (season-free) intensity of a brand pair under the generating process.
inline double synthetic_base_intensity(const SyntheticDataset& ds, std::size_t i, std::size_t j) {
  const double d = haversine_km(ds.coords.at(ds.brand_names[i]), ds.coords.at(ds.brand_names[j]));
  const double g = ds.spec.gravity_k * ds.mass_of[i] * ds.mass_of[j] /
                   std::pow(std::max(d, ds.spec.min_distance_km), ds.spec.gravity_gamma);
  return g * ds.affinity[ds.category_of[i]][ds.category_of[j]];
}

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  if (spec.n_states > static_cast<int>(kStateCenters.size()))
    throw ConfigError("synthetic.n_states must be at most " + std::to_string(kStateCenters.size()));

  SyntheticDataset ds;
  ds.spec = spec;
  const Rng root(spec.affinity_seed);

  // Categories and their codes: sector prefix + 4 digits, unique per category.
  for (int c = 0; c < spec.n_categories; ++c) {
    const int suffix = 1100 + 10 * (c / static_cast<int>(kSectors.size())) + c % 7;
    ds.category_codes.push_back(kSectors[c % kSectors.size()] + std::to_string(suffix));
  }

  ds.affinity.assign(spec.n_categories, std::vector<double>(spec.n_categories, 1.0));
  {
    Rng r = root.split("affinity");
    for (int a = 0; a < spec.n_categories; ++a)
      for (int b = a; b < spec.n_categories; ++b) {
        const double z = r.normal();
        ds.affinity[a][b] = ds.affinity[b][a] = std::exp(spec.affinity_contrast * z);
      }
  }

  const int width = std::max(4, static_cast<int>(std::to_string(spec.n_brands - 1).size()));
  Rng r_brand = root.split("brands");
  for (int b = 0; b < spec.n_brands; ++b) {
    std::string digits = std::to_string(b);
    const std::string buf = "B" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, digits.size()), '0') + digits;
    ds.brand_names.push_back(buf);
    const StateCenter& st = kStateCenters[b % spec.n_states];
    ds.state_of.emplace_back(st.code);
    Rng r = r_brand.split(static_cast<std::uint64_t>(b));
    ds.category_of.push_back(static_cast<int>(r.below(spec.n_categories)));
    ds.mass_of.push_back(std::exp(spec.mass_sigma * r.normal()));
    ds.coords[buf] = {st.lat + r.uniform(-1.5, 1.5), st.lon + r.uniform(-1.5, 1.5)};
  }

  const std::vector<YearMonth> months = ds.months();

  // Brand records: the true code twice and one noise code.
  for (int b = 0; b < spec.n_brands; ++b) {
    Rng r = r_brand.split(static_cast<std::uint64_t>(b)).split("noise-code");
    const std::string& truth = ds.category_codes[ds.category_of[b]];
    const std::string& noise = ds.category_codes[r.below(spec.n_categories)];
    ds.brands.push_back({ds.brand_names[b], truth, months[0]});
    ds.brands.push_back({ds.brand_names[b], noise, months[std::min<std::size_t>(1, months.size() - 1)]});
    ds.brands.push_back({ds.brand_names[b], truth, months[std::min<std::size_t>(2, months.size() - 1)]});
  }

  // Socioeconomic indicators for every year a lag-1 lookup can reach.
  {
    Rng r = root.split("socio");
    for (int s = 0; s < spec.n_states; ++s) {
      Rng rs = r.split(static_cast<std::uint64_t>(s));
      SocioRow base{};
      SocioRow drift{};
      for (std::size_t k = 0; k < kSocioDim; ++k) {
        base[k] = rs.normal(50.0, 10.0);
        drift[k] = rs.normal(0.0, 1.0);
      }
      for (int y = months.front().year - 1; y <= months.back().year - 1; ++y) {
        SocioRow row{};
        for (std::size_t k = 0; k < kSocioDim; ++k)
          row[k] = base[k] + drift[k] * (y - months.front().year) + rs.normal(0.0, 0.5);
        ds.socio[{kStateCenters[s].code, y}] = row;
      }
    }
  }

  // Counts, state by state.
  Rng r_counts = root.split("counts");
  for (int s = 0; s < spec.n_states; ++s) {
    std::vector<std::size_t> members;
    for (int b = s; b < spec.n_brands; b += spec.n_states) members.push_back(static_cast<std::size_t>(b));
    struct Pair {
      std::size_t i, j;
      double base;
    };
    std::vector<Pair> pairs;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        pairs.push_back({members[a], members[b], synthetic_base_intensity(ds, members[a], members[b])});
    if (pairs.empty()) continue;
    const auto active =
        static_cast<std::size_t>(std::ceil(spec.sparsity_target * static_cast<double>(pairs.size())));
    if (active == 0 || active >= pairs.size())
      throw GenerationError("sparsity target " + std::to_string(spec.sparsity_target) +
                            " cannot be met in state " + kStateCenters[s].code);
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.base > y.base; });
    pairs.resize(active);
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return std::tie(x.i, x.j) < std::tie(y.i, y.j); });
    ds.active_pairs += active;

    Rng r_state = r_counts.split(kStateCenters[s].code);
    for (const Pair& p : pairs) {
      Rng r = r_state.split(static_cast<std::uint64_t>(p.i) * static_cast<std::uint64_t>(spec.n_brands) + p.j);
      for (std::size_t m = 0; m < months.size(); ++m) {
        const double lambda = p.base * synthetic_season(spec, months[m].month_index());
        double value = lambda;
        if (spec.noise_scale > 0.0) value += spec.noise_scale * (static_cast<double>(sample_poisson(lambda, r)) - lambda);
        const auto count = std::max<std::int64_t>(0, std::llround(value));
        if (count == 0) continue;
        const std::string& a = ds.brand_names[p.i];
        const std::string& b = ds.brand_names[p.j];
        ds.covisits.push_back({a < b ? a : b, a < b ? b : a, kStateCenters[s].code,
                               Period{months[m].year, PeriodUnit::month, months[m].month}, count});
      }
    }
  }
  if (ds.active_pairs == 0) throw GenerationError("synthetic spec produced no active pairs");
  std::sort(ds.covisits.begin(), ds.covisits.end());
  return ds;
}

inline std::string truth_affinity_csv(const SyntheticDataset& ds) {
  std::string out = "naics_a,naics_b,affinity\n";
  for (std::size_t a = 0; a < ds.category_codes.size(); ++a)
    for (std::size_t b = a; b < ds.category_codes.size(); ++b)
      out += ds.category_codes[a] + "," + ds.category_codes[b] + "," + io::format_double(ds.affinity[a][b]) + "\n";
  return out;
}

inline std::string truth_brands_csv(const SyntheticDataset& ds) {
  std::string out = "brand,state,naics6,mass\n";
  for (std::size_t b = 0; b < ds.brand_names.size(); ++b)
    out += ds.brand_names[b] + "," + ds.state_of[b] + "," + ds.category_codes[ds.category_of[b]] + "," +
           io::format_double(ds.mass_of[b]) + "\n";
  return out;
}

/// Writes the dataset files; the manifest's `created_at` is the only
/// non-deterministic byte range.
inline void write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir, std::uint64_t seed,
                            const std::string& created_at) {
  io::write_text(dir / "covisits.csv", covisits_to_csv(ds.covisits));
  io::write_text(dir / "brands.csv", brands_to_csv(ds.brands));
  io::write_text(dir / "coords.csv", coords_to_csv(ds.coords));
  io::write_text(dir / "socio.csv", socio_to_csv(ds.socio));
  io::write_text(dir / "truth_affinity.csv", truth_affinity_csv(ds));
  io::write_text(dir / "truth_brands.csv", truth_brands_csv(ds));
  nlohmann::ordered_json manifest;
  manifest["generator"] = "poigraph synthetic";
  manifest["seed"] = seed;
  manifest["spec"] = nlohmann::json(ds.spec);
  manifest["records"] = ds.covisits.size();
  manifest["active_pairs"] = ds.active_pairs;
  manifest["files"] = {"covisits.csv", "brands.csv", "coords.csv", "socio.csv", "truth_affinity.csv",
                       "truth_brands.csv"};
  manifest["created_at"] = created_at;
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace poigraph
