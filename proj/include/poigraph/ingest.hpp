#pragma once

// Raw record types, file parsers and the monthly cleaning steps that sit
// between the co-visit logs and graph construction.

#include <algorithm>
#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "poigraph/errors.hpp"
#include "poigraph/io.hpp"

namespace poigraph {

inline constexpr std::size_t kSocioDim = 38;

/// Calendar month; `month` is 1..12.
struct YearMonth {
  int year = 0;
  int month = 1;

  int ordinal() const { return year * 12 + (month - 1); }
  /// 0-based month of year, January = 0.
  int month_index() const { return month - 1; }

  static YearMonth from_ordinal(int ordinal) { return {ordinal / 12, ordinal % 12 + 1}; }

  YearMonth next() const { return from_ordinal(ordinal() + 1); }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
    return buf;
  }

  friend auto operator<=>(const YearMonth&, const YearMonth&) = default;
};

enum class PeriodUnit : std::uint8_t { week, month };

/// Either an ISO week (`YYYY-Www`) or a calendar month (`YYYY-MM`).
struct Period {
  int year = 0;
  PeriodUnit unit = PeriodUnit::month;
  int index = 1;  // week 1..53 or month 1..12

  static Period month_of(YearMonth ym) { return {ym.year, PeriodUnit::month, ym.month}; }

  std::string to_string() const {
    char buf[16];
    if (unit == PeriodUnit::week)
      std::snprintf(buf, sizeof(buf), "%04d-W%02d", year, index);
    else
      std::snprintf(buf, sizeof(buf), "%04d-%02d", year, index);
    return buf;
  }

  friend auto operator<=>(const Period&, const Period&) = default;
};

inline int iso_weeks_in_year(int year) {
  using namespace std::chrono;
  // A year has 53 ISO weeks iff Dec 28 falls in week 53, i.e. Jan 1 is a
  // Thursday, or a Wednesday in a leap year.
  const weekday jan1{sys_days{std::chrono::year{year} / January / 1}};
  const bool leap = std::chrono::year{year}.is_leap();
  return (jan1 == Thursday || (leap && jan1 == Wednesday)) ? 53 : 52;
}

/// Month containing the Thursday of ISO week `week` of ISO year `year`.
inline YearMonth iso_week_month(int year, int week) {
  using namespace std::chrono;
  const sys_days jan4{std::chrono::year{year} / January / 4};
  const weekday wd{jan4};
  const sys_days monday1 = jan4 - days{wd.iso_encoding() - 1};
  const sys_days thursday = monday1 + days{7 * (week - 1) + 3};
  const year_month_day ymd{thursday};
  return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month()))};
}

inline std::optional<Period> parse_period(std::string_view text) {
  text = io::trim(text);
  if (text.size() < 7 || text[4] != '-') return std::nullopt;
  const auto year = io::parse_number<int>(text.substr(0, 4));
  if (!year || *year < 1000) return std::nullopt;
  std::string_view rest = text.substr(5);
  if (!rest.empty() && (rest.front() == 'W' || rest.front() == 'w')) {
    rest.remove_prefix(1);
    if (rest.size() != 2) return std::nullopt;
    const auto week = io::parse_number<int>(rest);
    if (!week || *week < 1 || *week > iso_weeks_in_year(*year)) return std::nullopt;
    return Period{*year, PeriodUnit::week, *week};
  }
  if (rest.size() != 2) return std::nullopt;
  const auto month = io::parse_number<int>(rest);
  if (!month || *month < 1 || *month > 12) return std::nullopt;
  return Period{*year, PeriodUnit::month, *month};
}

inline std::optional<YearMonth> parse_year_month(std::string_view text) {
  const auto p = parse_period(text);
  if (!p || p->unit != PeriodUnit::month) return std::nullopt;
  return YearMonth{p->year, p->index};
}

inline YearMonth month_of(const Period& p) {
  return p.unit == PeriodUnit::month ? YearMonth{p.year, p.index} : iso_week_month(p.year, p.index);
}

/// Brand identifiers are compared after trimming and ASCII upper-casing.
inline std::string normalize_brand(std::string_view raw) {
  std::string out(io::trim(raw));
  for (char& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return out;
}

inline bool valid_state_code(std::string_view s) {
  return s.size() == 2 && s[0] >= 'A' && s[0] <= 'Z' && s[1] >= 'A' && s[1] <= 'Z';
}

inline bool valid_naics6(std::string_view s) {
  return s.size() == 6 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

/// One brand-pair co-visitation count; the pair is stored once with brand_a < brand_b.
struct CoVisitRecord {
  std::string brand_a;
  std::string brand_b;
  std::string state;
  Period period;
  std::int64_t device_count = 0;

  friend auto operator<=>(const CoVisitRecord&, const CoVisitRecord&) = default;
};

/// Builds a canonical record, or nullopt if any invariant fails.
inline std::optional<CoVisitRecord> make_covisit(std::string_view a, std::string_view b, std::string_view state,
                                                 Period period, std::int64_t count) {
  std::string na = normalize_brand(a);
  std::string nb = normalize_brand(b);
  std::string st = normalize_brand(state);
  if (na.empty() || nb.empty() || na == nb || count < 0 || !valid_state_code(st)) return std::nullopt;
  if (nb < na) std::swap(na, nb);
  return CoVisitRecord{std::move(na), std::move(nb), std::move(st), period, count};
}

struct BrandRecord {
  std::string brand;
  std::string naics6;
  YearMonth period;
};

struct LatLon {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
};

enum class CovisitFormat { csv, jsonl };

template <typename T>
struct ParseResult {
  std::vector<T> records;
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines;  // 1-based line numbers
};

inline constexpr std::string_view kCovisitHeader = "brand_a,brand_b,state,period,count";
inline constexpr std::string_view kBrandHeader = "brand,naics6,period";
inline constexpr std::string_view kCoordsHeader = "brand,lat_deg,lon_deg";

namespace detail {

template <typename T>
void check_malformed_ratio(const ParseResult<T>& r, const std::string& origin) {
  if (r.rows > 0 && 2 * r.malformed > r.rows)
    throw FormatError("'" + origin + "': " + std::to_string(r.malformed) + " of " + std::to_string(r.rows) +
                      " rows malformed (wrong file or format?)");
}

template <typename T>
void note_malformed(ParseResult<T>& r, std::size_t line) {
  ++r.malformed;
  r.malformed_lines.push_back(line);
}

inline std::optional<CoVisitRecord> parse_covisit_csv_row(std::string_view line) {
  const auto f = io::split_fields(line);
  if (f.size() != 5) return std::nullopt;
  const auto period = parse_period(f[3]);
  const auto count = io::parse_number<std::int64_t>(f[4]);
  if (!period || !count) return std::nullopt;
  return make_covisit(f[0], f[1], f[2], *period, *count);
}

inline std::optional<CoVisitRecord> parse_covisit_json_row(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return std::nullopt;
  for (const char* key : {"brand_a", "brand_b", "state", "period"})
    if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
  if (!j.contains("count") || !j["count"].is_number_integer()) return std::nullopt;
  const auto period = parse_period(j["period"].get<std::string>());
  if (!period) return std::nullopt;
  return make_covisit(j["brand_a"].get<std::string>(), j["brand_b"].get<std::string>(),
                      j["state"].get<std::string>(), *period, j["count"].get<std::int64_t>());
}

}  // namespace detail

/// Parses co-visit text. Malformed rows are counted, never silently dropped;
/// more than half malformed means the input is probably the wrong file.
inline ParseResult<CoVisitRecord> parse_covisit_text(std::string_view text, CovisitFormat format,
                                                     const std::string& origin = "<text>") {
  ParseResult<CoVisitRecord> result;
  const auto lines = io::split_lines(text);
  std::size_t first = 0;
  if (format == CovisitFormat::csv) {
    if (lines.empty()) return result;
    if (io::trim(lines[0]) != kCovisitHeader)
      throw FormatError("'" + origin + "': expected header '" + std::string(kCovisitHeader) + "'");
    first = 1;
  }
  for (std::size_t i = first; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    ++result.rows;
    auto rec = format == CovisitFormat::csv ? detail::parse_covisit_csv_row(lines[i])
                                            : detail::parse_covisit_json_row(lines[i]);
    if (rec)
      result.records.push_back(std::move(*rec));
    else
      detail::note_malformed(result, i + 1);
  }
  detail::check_malformed_ratio(result, origin);
  return result;
}

inline ParseResult<CoVisitRecord> parse_covisit_file(const std::filesystem::path& path, CovisitFormat format) {
  return parse_covisit_text(io::read_text(path), format, path.string());
}

inline std::string covisits_to_csv(const std::vector<CoVisitRecord>& records) {
  std::string out(kCovisitHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.brand_a + ',' + r.brand_b + ',' + r.state + ',' + r.period.to_string() + ',' +
           std::to_string(r.device_count) + '\n';
  }
  return out;
}

inline std::string covisits_to_jsonl(const std::vector<CoVisitRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["brand_a"] = r.brand_a;
    j["brand_b"] = r.brand_b;
    j["state"] = r.state;
    j["period"] = r.period.to_string();
    j["count"] = r.device_count;
    out += j.dump() + '\n';
  }
  return out;
}

/// Sums weekly counts into calendar months; a week belongs to the month of its Thursday.
/// Output is sorted by (state, brand_a, brand_b, month).
inline std::vector<CoVisitRecord> aggregate_to_monthly(const std::vector<CoVisitRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string, YearMonth>, std::int64_t> sums;
  for (const auto& r : records) sums[{r.state, r.brand_a, r.brand_b, month_of(r.period)}] += r.device_count;
  std::vector<CoVisitRecord> out;
  out.reserve(sums.size());
  for (const auto& [key, count] : sums) {
    const auto& [state, a, b, ym] = key;
    out.push_back({a, b, state, Period::month_of(ym), count});
  }
  return out;
}

struct FilterResult {
  std::vector<CoVisitRecord> records;
  std::size_t removed = 0;
};

inline constexpr std::int64_t kDefaultOutlierCap = 40'000;

/// Drops monthly records with device_count strictly above `cap`.
inline FilterResult filter_outliers(const std::vector<CoVisitRecord>& records, std::int64_t cap = kDefaultOutlierCap) {
  if (cap <= 0) throw ArgumentError("outlier cap must be positive");
  FilterResult out;
  for (const auto& r : records) {
    if (r.device_count > cap)
      ++out.removed;
    else
      out.records.push_back(r);
  }
  return out;
}

struct NaicsResolution {
  std::map<std::string, std::string> naics_of;
  std::vector<std::string> excluded;  // brands with no valid code
};

/// Assigns each brand its modal 6-digit code; ties go to the lexicographically smallest code.
inline NaicsResolution resolve_brand_naics(const std::vector<BrandRecord>& brand_records) {
  if (brand_records.empty()) throw ArgumentError("resolve_brand_naics: empty input");
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (const auto& r : brand_records) {
    auto& per_brand = counts[normalize_brand(r.brand)];
    if (valid_naics6(r.naics6)) ++per_brand[r.naics6];
  }
  NaicsResolution out;
  for (const auto& [brand, codes] : counts) {
    if (codes.empty()) {
      out.excluded.push_back(brand);
      continue;
    }
    // std::map iterates codes ascending, so strict '>' keeps the smallest among ties.
    auto best = codes.begin();
    for (auto it = codes.begin(); it != codes.end(); ++it)
      if (it->second > best->second) best = it;
    out.naics_of.emplace(brand, best->first);
  }
  return out;
}

inline ParseResult<BrandRecord> parse_brand_file(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  ParseResult<BrandRecord> result;
  const auto lines = io::split_lines(text);
  if (lines.empty()) return result;
  if (io::trim(lines[0]) != kBrandHeader)
    throw FormatError("'" + path.string() + "': expected header '" + std::string(kBrandHeader) + "'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    ++result.rows;
    const auto f = io::split_fields(lines[i]);
    std::optional<YearMonth> ym;
    if (f.size() == 3) ym = parse_year_month(f[2]);
    const std::string brand = f.empty() ? std::string{} : normalize_brand(f[0]);
    if (f.size() != 3 || !ym || brand.empty()) {
      detail::note_malformed(result, i + 1);
      continue;
    }
    // Code validity is judged by resolve_brand_naics so brands with only bad codes get reported.
    result.records.push_back({brand, std::string(io::trim(f[1])), *ym});
  }
  detail::check_malformed_ratio(result, path.string());
  return result;
}

inline std::string brands_to_csv(const std::vector<BrandRecord>& records) {
  std::string out(kBrandHeader);
  out += '\n';
  for (const auto& r : records) out += r.brand + ',' + r.naics6 + ',' + r.period.to_string() + '\n';
  return out;
}

inline std::map<std::string, LatLon> parse_coords_file(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  const auto lines = io::split_lines(text);
  std::map<std::string, LatLon> out;
  if (lines.empty()) return out;
  if (io::trim(lines[0]) != kCoordsHeader)
    throw FormatError("'" + path.string() + "': expected header '" + std::string(kCoordsHeader) + "'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split_fields(lines[i]);
    std::optional<double> lat, lon;
    if (f.size() == 3) {
      lat = io::parse_number<double>(f[1]);
      lon = io::parse_number<double>(f[2]);
    }
    if (!lat || !lon || *lat < -90 || *lat > 90 || *lon < -180 || *lon > 180)
      throw FormatError("'" + path.string() + "' line " + std::to_string(i + 1) + ": bad coordinate row");
    out[normalize_brand(f[0])] = {*lat, *lon};
  }
  return out;
}

inline std::string coords_to_csv(const std::map<std::string, LatLon>& coords) {
  std::string out(kCoordsHeader);
  out += '\n';
  for (const auto& [brand, c] : coords)
    out += brand + ',' + io::format_double(c.lat_deg) + ',' + io::format_double(c.lon_deg) + '\n';
  return out;
}

using SocioRow = std::array<double, kSocioDim>;
/// Raw (unstandardized) indicators keyed by (state, year).
using RawSocio = std::map<std::pair<std::string, int>, SocioRow>;

inline std::string socio_header() {
  std::string h = "state,year";
  char buf[8];
  for (std::size_t k = 1; k <= kSocioDim; ++k) {
    std::snprintf(buf, sizeof(buf), ",f%02zu", k);
    h += buf;
  }
  return h;
}

inline RawSocio parse_socio_file(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  const auto lines = io::split_lines(text);
  RawSocio out;
  if (lines.empty()) return out;
  if (io::trim(lines[0]) != socio_header())
    throw FormatError("'" + path.string() + "': expected header 'state,year,f01..f38'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split_fields(lines[i]);
    const std::string where = "'" + path.string() + "' line " + std::to_string(i + 1);
    if (f.size() != 2 + kSocioDim) throw FormatError(where + ": expected 40 columns");
    const std::string state = normalize_brand(f[0]);
    const auto year = io::parse_number<int>(f[1]);
    if (!valid_state_code(state) || !year) throw FormatError(where + ": bad state/year");
    SocioRow row{};
    for (std::size_t k = 0; k < kSocioDim; ++k) {
      const auto v = io::parse_number<double>(f[2 + k]);
      if (!v) throw FormatError(where + ": non-finite indicator f" + std::to_string(k + 1));
      row[k] = *v;
    }
    out[{state, *year}] = row;
  }
  return out;
}

inline std::string socio_to_csv(const RawSocio& socio) {
  std::string out = socio_header() + '\n';
  for (const auto& [key, row] : socio) {
    out += key.first + ',' + std::to_string(key.second);
    for (double v : row) out += ',' + io::format_double(v);
    out += '\n';
  }
  return out;
}

}  // namespace poigraph
