#pragma once

// Run configuration: a sectioned INI file (see docs/config_format.md).
// Relative paths resolve against the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "poigraph/dataset.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/experiment.hpp"
#include "poigraph/io.hpp"
#include "poigraph/synthetic.hpp"
#include "poigraph/train.hpp"

namespace poigraph {

struct PathsConfig {
  std::filesystem::path data_dir = "data";        // raw inputs (generate writes here)
  std::filesystem::path build_dir = "build";      // graphs + feature manifest
  std::filesystem::path output_dir = "out";       // checkpoints, logs, reports
  std::filesystem::path checkpoint;               // empty: output_dir/model.ckpt
  CovisitFormat covisit_format = CovisitFormat::csv;

  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? output_dir / "model.ckpt" : checkpoint;
  }
};

struct ModelOverrides {
  std::optional<int> hidden;
  std::optional<int> depth;
};

struct PredictConfig {
  std::filesystem::path pairs;
  std::filesystem::path output;   // empty: output_dir/predictions.csv
  bool clamp = false;
};

struct EvalConfig {
  int runs = 1;
  std::string baseline;  // "" or "gravity"
};

struct RunConfig {
  std::filesystem::path source;  // config file location, for messages
  std::uint64_t seed = 0;
  std::vector<std::string> variants{"full"};
  PathsConfig paths;
  std::optional<SyntheticSpec> synthetic;
  BuildOptions build;
  TrainConfig train;
  ModelOverrides model;
  EvalConfig eval;
  PredictConfig predict;

  const std::string& variant() const { return variants.front(); }
};

namespace detail {

namespace pt = boost::property_tree;

class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  bool present() const { return tree_ != nullptr; }
  const std::string& name() const { return name_; }

  std::optional<std::string> raw(const std::string& key) const {
    if (!tree_) return std::nullopt;
    if (auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'))) {
      used_.insert(key);
      return std::string(io::trim(*v));
    }
    return std::nullopt;
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (const auto v = raw(key)) out = parse<T>(key, *v);
  }

  template <typename T>
  T require(const std::string& key) const {
    const auto v = raw(key);
    if (!v) throw ConfigError("missing required field " + field(key));
    return parse<T>(key, *v);
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [k, v] : *tree_)
      if (!used_.count(k)) throw ConfigError("unknown field " + field(k));
  }

  template <typename T>
  T parse(const std::string& key, const std::string& text) const {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "no") return false;
      throw ConfigError(field(key) + ": expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_arithmetic_v<T>) {
      const auto v = io::parse_number<T>(text);
      if (!v) throw ConfigError(field(key) + ": expected a number, got '" + text + "'");
      return *v;
    } else if constexpr (std::is_same_v<T, YearMonth>) {
      const auto m = parse_year_month(text);
      if (!m) throw ConfigError(field(key) + ": expected YYYY-MM, got '" + text + "'");
      return *m;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      std::vector<int> out;
      for (auto f : io::split_fields(text, ',')) out.push_back(parse<int>(key, std::string(io::trim(f))));
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      std::vector<std::string> out;
      for (auto f : io::split_fields(text, ','))
        if (!io::trim(f).empty()) out.emplace_back(io::trim(f));
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  mutable std::set<std::string> used_;
};

/// "2018-01..2019-12" or a single "2020-03".
inline std::vector<YearMonth> parse_month_range(const Section& s, const std::string& key, const std::string& text) {
  const auto dots = text.find("..");
  const YearMonth a = s.parse<YearMonth>(key, std::string(io::trim(text.substr(0, dots))));
  const YearMonth b =
      dots == std::string::npos ? a : s.parse<YearMonth>(key, std::string(io::trim(text.substr(dots + 2))));
  if (b < a) throw ConfigError(s.field(key) + ": range end precedes start");
  std::vector<YearMonth> out;
  for (int o = a.ordinal(); o <= b.ordinal(); ++o) out.push_back(YearMonth::from_ordinal(o));
  return out;
}

}  // namespace detail

/// Parses INI text. `base_dir` anchors relative paths.
/// `seed_override` (from --seed) replaces run.seed.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {},
                                  const std::filesystem::path& source = "<config>",
                                  std::optional<std::uint64_t> seed_override = {}) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    std::istringstream in(text);
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source.string() + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  static const std::set<std::string> known = {"run",   "paths", "synthetic", "graph", "split",
                                              "train", "model", "eval",      "predict"};
  for (const auto& [name, sub] : root) {
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");
    if (sub.empty() && !sub.data().empty()) throw ConfigError("top-level key '" + name + "' outside any section");
  }
  auto section = [&](const std::string& name) {
    const auto it = root.find(name);
    return detail::Section(it == root.not_found() ? nullptr : &it->second, name);
  };

  RunConfig c;
  c.source = source;
  auto resolve = [&](const std::filesystem::path& p) { return p.empty() || p.is_absolute() ? p : base_dir / p; };

  const auto run = section("run");
  if (!run.present() && !seed_override) throw ConfigError("missing section [run]");
  if (seed_override) {
    run.raw("seed");
    c.seed = *seed_override;
  } else {
    c.seed = run.require<std::uint64_t>("seed");
  }
  run.read("variant", c.variants);
  if (c.variants.empty()) throw ConfigError("run.variant must name at least one variant");
  check_variants(c.variants);
  run.reject_unknown();

  const auto paths = section("paths");
  if (paths.present()) {
    if (auto v = paths.raw("data_dir")) c.paths.data_dir = *v;
    if (auto v = paths.raw("build_dir")) c.paths.build_dir = *v;
    if (auto v = paths.raw("output_dir")) c.paths.output_dir = *v;
    if (auto v = paths.raw("checkpoint")) c.paths.checkpoint = *v;
    if (auto v = paths.raw("covisit_format")) {
      if (*v == "csv") c.paths.covisit_format = CovisitFormat::csv;
      else if (*v == "jsonl") c.paths.covisit_format = CovisitFormat::jsonl;
      else throw ConfigError("paths.covisit_format must be csv or jsonl");
    }
    paths.reject_unknown();
  }
  c.paths.data_dir = resolve(c.paths.data_dir);
  c.paths.build_dir = resolve(c.paths.build_dir);
  c.paths.output_dir = resolve(c.paths.output_dir);
  c.paths.checkpoint = resolve(c.paths.checkpoint);

  if (const auto syn = section("synthetic"); syn.present()) {
    SyntheticSpec s;
    s.affinity_seed = c.seed;
    syn.read("n_brands", s.n_brands);
    syn.read("n_states", s.n_states);
    syn.read("n_categories", s.n_categories);
    syn.read("months", s.months);
    syn.read("affinity_seed", s.affinity_seed);
    syn.read("sparsity_target", s.sparsity_target);
    syn.read("noise_scale", s.noise_scale);
    syn.read("affinity_contrast", s.affinity_contrast);
    syn.read("season_amplitude", s.season_amplitude);
    syn.read("gravity_k", s.gravity_k);
    syn.read("gravity_gamma", s.gravity_gamma);
    syn.read("mass_sigma", s.mass_sigma);
    syn.read("min_distance_km", s.min_distance_km);
    syn.read("start", s.start);
    syn.reject_unknown();
    s.validate();
    c.synthetic = s;
  }

  if (const auto g = section("graph"); g.present()) {
    g.read("threshold", c.build.threshold);
    g.read("outlier_cap", c.build.outlier_cap);
    g.reject_unknown();
    if (c.build.threshold < 1) throw ConfigError("graph.threshold must be >= 1");
    if (c.build.outlier_cap < 1) throw ConfigError("graph.outlier_cap must be >= 1");
  }

  const auto split = section("split");
  if (split.present()) {
    for (auto [key, part] : {std::pair{"train", &c.build.split.train}, std::pair{"validation", &c.build.split.validation},
                             std::pair{"test", &c.build.split.test}})
      *part = detail::parse_month_range(split, key, split.require<std::string>(key));
    split.reject_unknown();
  } else {
    c.build.split = SplitSpec::from_ranges({2018, 1}, {2019, 12}, {2020, 1}, {2020, 2}, {2020, 3}, {2020, 3});
  }
  try {
    c.build.split.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " [split]");
  }

  if (const auto t = section("train"); t.present()) {
    TrainConfig& tc = c.train;
    t.read("max_epochs", tc.max_epochs);
    t.read("patience", tc.patience);
    t.read("plateau_window", tc.plateau_window);
    t.read("lr_decay", tc.lr_decay);
    t.read("batch_edges", tc.batch_edges);
    t.read("fanouts", tc.fanouts);
    t.read("inference_fanouts", tc.inference_fanouts);
    t.read("lr", tc.lr);
    t.read("weight_decay", tc.weight_decay);
    t.read("dropout", tc.dropout);
    t.read("min_improvement", tc.min_improvement);
    t.reject_unknown();
  }
  c.train.seed = c.seed;

  if (const auto m = section("model"); m.present()) {
    if (auto v = m.raw("hidden")) c.model.hidden = m.parse<int>("hidden", *v);
    if (auto v = m.raw("depth")) c.model.depth = m.parse<int>("depth", *v);
    m.reject_unknown();
    if (c.model.hidden && *c.model.hidden < 1) throw ConfigError("model.hidden must be >= 1");
    if (c.model.depth && *c.model.depth < 1) throw ConfigError("model.depth must be >= 1");
    if (c.model.depth && !section("train").raw("fanouts")) c.train.fanouts = default_fanouts(*c.model.depth);
  }
  const int depth = c.model.depth.value_or(ModelDims{}.depth);
  if (static_cast<int>(c.train.fanouts.size()) != depth)
    throw ConfigError("train.fanouts has " + std::to_string(c.train.fanouts.size()) + " entries for depth " +
                      std::to_string(depth));
  if (!c.train.inference_fanouts.empty() && static_cast<int>(c.train.inference_fanouts.size()) != depth)
    throw ConfigError("train.inference_fanouts must have one entry per layer");
  for (int f : c.train.fanouts)
    if (f < 1) throw ConfigError("train.fanouts entries must be >= 1");
  c.train.validate();

  if (const auto e = section("eval"); e.present()) {
    e.read("runs", c.eval.runs);
    e.read("baseline", c.eval.baseline);
    e.reject_unknown();
  }
  if (c.eval.runs < 1) throw ConfigError("eval.runs must be >= 1");
  if (!c.eval.baseline.empty() && c.eval.baseline != "gravity")
    throw ConfigError("eval.baseline must be empty or 'gravity'");

  if (const auto pr = section("predict"); pr.present()) {
    if (auto v = pr.raw("pairs")) c.predict.pairs = resolve(*v);
    if (auto v = pr.raw("output")) c.predict.output = resolve(*v);
    pr.read("clamp", c.predict.clamp);
    pr.reject_unknown();
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {}) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_run_config(io::read_text(path), path.parent_path(), path, seed_override);
}

/// Base model configuration for a built dataset, with [model] overrides applied.
inline ModelConfig model_config_for(const RunConfig& c, const FeatureStore& fs) {
  ModelConfig mc = default_model_config(fs);
  if (c.model.hidden) mc.dims.hidden = *c.model.hidden;
  if (c.model.depth) mc.dims.depth = *c.model.depth;
  mc.dims.dropout = c.train.dropout;
  return mc;
}

}  // namespace poigraph
