#pragma once

// The six CLI commands. Each reads a RunConfig plus flags, writes its
// artifacts, prints a JSON summary on `out` and returns an exit code
// (0 or 4 for partial failure). Errors propagate as poigraph::Error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poigraph/checkpoint.hpp"
#include "poigraph/config.hpp"
#include "poigraph/dataset.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/eval.hpp"
#include "poigraph/experiment.hpp"
#include "poigraph/io.hpp"
#include "poigraph/synthetic.hpp"
#include "poigraph/train.hpp"

namespace poigraph {

struct CommandFlags {
  bool force = false;
  bool dry_run = false;
  bool clamp = false;
  std::optional<std::string> baseline;
  std::optional<int> runs;
  std::vector<std::string> variants;           // overrides run.variant
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> pairs;
  std::optional<std::filesystem::path> output;
};

inline constexpr std::string_view kLockName = ".poigraph.lock";

/// Exclusive per-directory lock held for the lifetime of a command.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / kLockName) {
    std::filesystem::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw IoError("'" + dir.string() + "' is locked by another poigraph process (remove " + path_.string() +
                    " if stale)");
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool non_empty_dir(const std::filesystem::path& dir) {
  return std::filesystem::is_directory(dir) && !std::filesystem::is_empty(dir);
}

inline void require_build(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.paths.build_dir / "features.json"))
    throw IoError("no built dataset in '" + cfg.paths.build_dir.string() + "' (run 'poigraph build' first)");
}

inline nlohmann::ordered_json stats_json(const GraphStats& s) {
  return {{"nodes", s.num_nodes},           {"edges", s.num_edges},           {"density", s.density},
          {"degree_p50", s.degree_p50},     {"degree_p90", s.degree_p90},     {"degree_p99", s.degree_p99},
          {"degree_max", s.degree_max}};
}

inline std::filesystem::path checkpoint_for(const RunConfig& cfg, const CommandFlags& flags) {
  return flags.checkpoint ? *flags.checkpoint : cfg.paths.checkpoint_path();
}

/// Fanouts used at inference: configured inference fanouts when they fit the
/// checkpoint's depth, otherwise the checkpoint's training fanouts.
inline std::vector<int> inference_fanouts(const RunConfig& cfg, const Checkpoint& ck) {
  const auto& f = cfg.train.inference_fanouts;
  if (!f.empty() && static_cast<int>(f.size()) == ck.params.dims.depth) return f;
  return ck.meta.fanouts;
}

inline Checkpoint load_matching_checkpoint(const std::filesystem::path& path, const Dataset& data) {
  Checkpoint ck = load_checkpoint(path, data.features.vocab.hash());
  if (ck.params.dims.identity_width > 0 && ck.params.dims.identity_width != data.features.identity_width)
    throw CheckpointError("checkpoint identity width does not match the built dataset");
  return ck;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_generate(const RunConfig& cfg, const CommandFlags& flags, std::ostream& out) {
  if (!cfg.synthetic) throw ConfigError("missing section [synthetic]");
  const auto& dir = cfg.paths.data_dir;
  if (detail::non_empty_dir(dir) && !flags.force)
    throw IoError("output directory '" + dir.string() + "' is not empty (use --force to overwrite)");
  DirectoryLock lock(dir);
  const SyntheticDataset ds = generate_synthetic(*cfg.synthetic);
  write_synthetic(ds, dir, cfg.seed, detail::utc_timestamp());
  nlohmann::ordered_json j = {{"command", "generate"},
                              {"data_dir", dir.string()},
                              {"records", ds.covisits.size()},
                              {"brands", ds.brand_names.size()},
                              {"states", cfg.synthetic->n_states},
                              {"active_pairs", ds.active_pairs}};
  out << j.dump() << "\n";
  return 0;
}

inline int cmd_build(const RunConfig& cfg, const CommandFlags&, std::ostream& out) {
  const RawInputs raw = read_inputs(cfg.paths.data_dir, cfg.paths.covisit_format);
  const Dataset ds = build_dataset(raw, cfg.build);
  {
    DirectoryLock lock(cfg.paths.build_dir);
    std::filesystem::remove_all(cfg.paths.build_dir / "graphs");
    save_dataset(ds, cfg.paths.build_dir);
  }
  nlohmann::ordered_json graphs = nlohmann::ordered_json::object();
  for (const auto& [s, st] : ds.report.graphs) graphs[s] = detail::stats_json(st);
  nlohmann::ordered_json j = {{"command", "build"},
                              {"build_dir", cfg.paths.build_dir.string()},
                              {"input_records", ds.report.input_records},
                              {"monthly_records", ds.report.monthly_records},
                              {"outliers_removed", ds.report.outliers_removed},
                              {"brands_without_naics", ds.report.brands_without_naics.size()},
                              {"vocab_size", ds.features.vocab.codes().size()},
                              {"graphs", graphs}};
  out << j.dump() << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const CommandFlags& flags, std::ostream& out) {
  detail::require_build(cfg);
  const Dataset data = load_dataset(cfg.paths.build_dir);
  const VariantSetup setup = make_variant(cfg.variant(), data.features, model_config_for(cfg, data.features), cfg.train);

  FitOptions options;
  if (flags.resume) options.resume = detail::load_matching_checkpoint(*flags.resume, data);

  if (flags.dry_run) {
    ModelDims dims = setup.model.dims;
    dims.dropout = setup.train.dropout;
    setup.train.validate();
    for (const auto& s : data.states())
      for (const auto& m : data.features.split.train)
        if (!data.graph(s).month_index(m)) throw ConfigError("training month " + m.to_string() + " missing in " + s);
    nlohmann::ordered_json j = {{"command", "train"},
                                {"dry_run", true},
                                {"variant", setup.model.variant},
                                {"states", data.states()},
                                {"train_months", data.features.split.train.size()},
                                {"parameter_count", expected_parameter_count(dims)},
                                {"config_hash", config_hash(setup.train, setup.model)}};
    out << j.dump() << "\n";
    return 0;
  }

  const auto& odir = cfg.paths.output_dir;
  DirectoryLock lock(odir);
  const auto log_path = odir / "train_log.jsonl";
  std::ofstream log(log_path, flags.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open '" + log_path.string() + "' for writing");
  options.on_epoch = [&](const EpochLog& e) { log << e.to_json().dump() << "\n" << std::flush; };

  const FitResult res = fit(data, setup.train, setup.model, options);

  CheckpointMeta meta;
  meta.vocab_hash = data.features.vocab.hash();
  meta.seed = setup.train.seed;
  meta.variant = setup.model.variant;
  meta.fanouts = setup.train.fanouts;
  meta.edge_columns = setup.model.edge_columns;
  meta.best_val_mae = res.best_val_mae;
  meta.epoch = res.best_epoch;
  const auto ckpt = detail::checkpoint_for(cfg, flags);
  save_checkpoint(ckpt, res.best, meta);
  meta.epoch = res.last_epoch;
  save_checkpoint(odir / "last.ckpt", res.last, meta, &res.optimizer);

  nlohmann::ordered_json halvings = res.lr_halvings;
  nlohmann::ordered_json j = {
      {"command", "train"},
      {"variant", setup.model.variant},
      {"checkpoint", ckpt.string()},
      {"epochs", res.logs.size()},
      {"best_epoch", res.best_epoch},
      {"best_val_mae", json_number(res.best_val_mae)},
      {"early_stopped", res.early_stopped},
      {"lr_halvings", halvings},
      {"batches", res.telemetry.batches},
      {"unbalanced_batches", res.telemetry.unbalanced_batches},
      {"parameter_count", res.best.parameter_count()},
      {"wall_time", res.logs.empty() ? 0.0 : res.logs.back().wall_time}};
  out << j.dump() << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, const CommandFlags& flags, std::ostream& out) {
  detail::require_build(cfg);
  const Dataset data = load_dataset(cfg.paths.build_dir);
  const Checkpoint ck = detail::load_matching_checkpoint(detail::checkpoint_for(cfg, flags), data);
  const auto fanouts = detail::inference_fanouts(cfg, ck);
  const int runs = flags.runs.value_or(cfg.eval.runs);
  if (runs < 1) throw ConfigError("--runs must be >= 1");
  const std::string baseline = flags.baseline.value_or(cfg.eval.baseline);
  if (!baseline.empty() && baseline != "gravity") throw ConfigError("unknown baseline '" + baseline + "'");
  const bool with_gravity = baseline == "gravity" || runs >= 2;

  TrainConfig tc = cfg.train;
  tc.fanouts = ck.meta.fanouts;
  ModelConfig mc;
  mc.dims = ck.params.dims;
  mc.edge_columns = ck.meta.edge_columns;
  mc.embed_frozen = ck.params.embed_frozen;
  mc.variant = ck.meta.variant;
  const std::string hash = config_hash(tc, mc);

  std::optional<GravityParams> gravity;
  if (with_gravity) gravity = fit_gravity_baseline(data, cfg.seed);

  std::vector<MetricsReport> model_rows, gravity_rows;
  for (int i = 0; i < runs; ++i) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
    MetricsReport r = evaluate_model(data, ck.params, ck.meta.edge_columns, fanouts, seed, seed);
    r.variant = ck.meta.variant;
    r.config_hash = hash;
    model_rows.push_back(r);
    if (gravity) gravity_rows.push_back(evaluate_gravity(data, *gravity, seed));
  }

  const auto& odir = cfg.paths.output_dir;
  DirectoryLock lock(odir);
  io::write_text(odir / "report.json", to_json(model_rows.front()).dump(2) + "\n");
  io::write_text(odir / "metrics.csv", metrics_csv(model_rows));
  nlohmann::ordered_json j = {{"command", "eval"}, {"reports", nlohmann::ordered_json::array()}};
  for (const auto& r : model_rows) j["reports"].push_back(to_json(r));
  if (gravity) {
    io::write_text(odir / "gravity_report.json", to_json(gravity_rows.front()).dump(2) + "\n");
    io::write_text(odir / "gravity_metrics.csv", metrics_csv(gravity_rows));
    j["gravity"] = {{"k", gravity->k}, {"alpha", gravity->alpha}, {"beta", gravity->beta}, {"gamma", gravity->gamma}};
    j["gravity_reports"] = nlohmann::ordered_json::array();
    for (const auto& r : gravity_rows) j["gravity_reports"].push_back(to_json(r));
  }
  if (runs >= 2) {
    const auto sig = compare_runs(model_rows, gravity_rows);
    io::write_text(odir / "significance.csv", significance_csv(sig));
    j["significance"] = nlohmann::ordered_json::array();
    for (const auto& s : sig) j["significance"].push_back(to_json(s));
  }
  out << j.dump() << "\n";
  return 0;
}

inline constexpr std::string_view kPredictionsHeader = "brand_a,brand_b,state,month,predicted";
inline constexpr std::string_view kPredictErrorsHeader = "line,brand_a,brand_b,state,month,error";

inline int cmd_predict(const RunConfig& cfg, const CommandFlags& flags, std::ostream& out) {
  detail::require_build(cfg);
  const auto pairs_path = flags.pairs ? *flags.pairs : cfg.predict.pairs;
  if (pairs_path.empty()) throw ConfigError("no pairs file (set predict.pairs or pass --pairs)");
  auto out_path = flags.output ? *flags.output : cfg.predict.output;
  if (out_path.empty()) out_path = cfg.paths.output_dir / "predictions.csv";
  const bool clamp = flags.clamp || cfg.predict.clamp;

  const Dataset data = load_dataset(cfg.paths.build_dir);
  const Checkpoint ck = detail::load_matching_checkpoint(detail::checkpoint_for(cfg, flags), data);
  const auto fanouts = detail::inference_fanouts(cfg, ck);

  struct Row {
    std::size_t line = 0;
    std::string a, b, state, month_text;
    YearMonth month;
    NodePair pair;
    double pred = 0.0;
    std::string error;
  };
  const std::string text = io::read_text(pairs_path);
  const auto lines = io::split_lines(text);
  std::vector<Row> rows;
  std::size_t first = 0;
  if (!lines.empty() && io::trim(lines[0]).starts_with("brand_a")) first = 1;
  for (std::size_t i = first; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    Row row;
    row.line = i + 1;
    const auto f = io::split_fields(lines[i]);
    if (f.size() != 4) {
      row.error = "expected 4 fields";
      rows.push_back(std::move(row));
      continue;
    }
    row.a = std::string(io::trim(f[0]));
    row.b = std::string(io::trim(f[1]));
    row.state = std::string(io::trim(f[2]));
    row.month_text = std::string(io::trim(f[3]));
    rows.push_back(std::move(row));
  }

  std::map<std::string, Matrix> embeddings;
  // (state, month) -> row indices, so each group runs through the head at once.
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Row& r = rows[i];
    if (!r.error.empty()) continue;
    const auto month = parse_year_month(r.month_text);
    const auto git = data.graphs.find(r.state);
    if (!month) {
      r.error = "bad month";
    } else if (git == data.graphs.end()) {
      r.error = "unknown state";
    } else if (!data.features.socio.contains(r.state, month->year - 1)) {
      r.error = "no socioeconomic row for " + std::to_string(month->year - 1);
    } else {
      const auto u = git->second.find_node(normalize_brand(r.a));
      const auto v = git->second.find_node(normalize_brand(r.b));
      if (!u) r.error = "unknown brand '" + r.a + "'";
      else if (!v) r.error = "unknown brand '" + r.b + "'";
      else if (*u == *v) r.error = "self pair";
      else {
        r.month = *month;
        r.pair = {*u, *v};
        groups[{r.state, month->ordinal()}].push_back(i);
      }
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& [key, idx] : groups)
    if (!embeddings.count(key.first))
      embeddings.emplace(key.first, encode_state(data.graph(key.first), data.features.node_table(key.first), ck.params,
                                                 fanouts, ck.meta.seed));
  const auto t1 = std::chrono::steady_clock::now();
  std::size_t predicted = 0;
  for (const auto& [key, idx] : groups) {
    std::vector<NodePair> pairs;
    for (std::size_t i : idx) pairs.push_back(rows[i].pair);
    const Vector p = predict_pairs(embeddings.at(key.first), data.features, key.first, pairs,
                                   YearMonth::from_ordinal(key.second), ck.params, ck.meta.edge_columns);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double v = p[static_cast<Eigen::Index>(k)];
      rows[idx[k]].pred = clamp ? std::max(0.0, v) : v;
    }
    predicted += idx.size();
  }
  const auto t2 = std::chrono::steady_clock::now();

  std::string csv(kPredictionsHeader);
  csv += "\n";
  std::string errors(kPredictErrorsHeader);
  errors += "\n";
  std::size_t failed = 0;
  for (const Row& r : rows) {
    if (r.error.empty()) {
      csv += r.a + "," + r.b + "," + r.state + "," + r.month_text + "," + io::format_double(r.pred) + "\n";
    } else {
      ++failed;
      errors += std::to_string(r.line) + "," + r.a + "," + r.b + "," + r.state + "," + r.month_text + "," + r.error + "\n";
    }
  }
  const auto errors_path = std::filesystem::path(out_path.string() + ".errors.csv");
  {
    DirectoryLock lock(out_path.has_parent_path() ? out_path.parent_path() : std::filesystem::path("."));
    io::write_text(out_path, csv);
    if (failed) io::write_text(errors_path, errors);
    else std::filesystem::remove(errors_path);
  }

  const double head_seconds = std::chrono::duration<double>(t2 - t1).count();
  nlohmann::ordered_json j = {
      {"command", "predict"},
      {"output", out_path.string()},
      {"rows", rows.size()},
      {"predicted", predicted},
      {"failed", failed},
      {"states_encoded", embeddings.size()},
      {"encode_seconds", std::chrono::duration<double>(t1 - t0).count()},
      {"head_seconds", head_seconds},
      {"edges_per_second", head_seconds > 0.0 ? static_cast<double>(predicted) / head_seconds : 0.0}};
  if (failed) j["errors"] = errors_path.string();
  out << j.dump() << "\n";
  return failed ? static_cast<int>(ExitCode::partial) : 0;
}

inline int cmd_ablate(const RunConfig& cfg, const CommandFlags& flags, std::ostream& out) {
  std::vector<std::string> variants = flags.variants.empty() ? cfg.variants : flags.variants;
  if (variants.size() == 1 && variants.front() == "all") variants = known_variants();
  check_variants(variants);
  detail::require_build(cfg);
  const Dataset data = load_dataset(cfg.paths.build_dir);
  const ModelConfig base = model_config_for(cfg, data.features);
  for (const auto& v : variants) make_variant(v, data.features, base, cfg.train);

  const auto& odir = cfg.paths.output_dir;
  DirectoryLock lock(odir);
  std::vector<MetricsReport> rows;
  nlohmann::ordered_json j = {{"command", "ablate"}, {"reports", nlohmann::ordered_json::array()}};
  for (const auto& v : variants) {
    const AblationRun run = run_ablation(v, data, base, cfg.train);
    rows.push_back(run.report);
    j["reports"].push_back(to_json(run.report));
  }
  io::write_text(odir / "ablation.csv", metrics_csv(rows));
  out << j.dump() << "\n";
  return 0;
}

}  // namespace poigraph
