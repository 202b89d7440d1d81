#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "poigraph/commands.hpp"

namespace pg = poigraph;

int main(int argc, char** argv) {
  CLI::App app{"poigraph: NAICS-aware GraphSAGE co-visitation engine"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  pg::CommandFlags flags;
  std::string variants;
  std::string resume, checkpoint, pairs, output, baseline;
  int runs = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (INI)")->required();
    sub->add_option("--seed", seed, "override run.seed");
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  common(gen);
  gen->add_flag("--force", flags.force, "overwrite a non-empty data directory");

  auto* build = app.add_subcommand("build", "ingest raw files into graphs and features");
  common(build);

  auto* train = app.add_subcommand("train", "fit the model and write a checkpoint");
  common(train);
  train->add_flag("--dry-run", flags.dry_run, "validate config and data without training");
  train->add_option("--resume", resume, "continue from a checkpoint (e.g. out/last.ckpt)");
  train->add_option("--variant", variants, "model variant");
  train->add_option("--checkpoint", checkpoint, "checkpoint to write");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(eval);
  eval->add_option("--baseline", baseline, "baseline to evaluate alongside (gravity)");
  eval->add_option("--runs", runs, "number of evaluation seeds")->check(CLI::PositiveNumber);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");

  auto* predict = app.add_subcommand("predict", "score brand pairs with a checkpoint");
  common(predict);
  predict->add_option("--pairs", pairs, "CSV of brand_a,brand_b,state,month");
  predict->add_option("--output", output, "predictions CSV");
  predict->add_option("--checkpoint", checkpoint, "checkpoint to use");
  predict->add_flag("--clamp", flags.clamp, "floor predictions at 0");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate several variants");
  common(ablate);
  ablate->add_option("--variant", variants, "comma-separated variants, or 'all'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(pg::ExitCode::config);
  }

  auto path_opt = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };
  flags.resume = path_opt(resume);
  flags.checkpoint = path_opt(checkpoint);
  flags.pairs = path_opt(pairs);
  flags.output = path_opt(output);
  if (!baseline.empty()) flags.baseline = baseline;
  if (runs > 0) flags.runs = runs;

  try {
    pg::RunConfig cfg = pg::load_run_config(config_path, seed);
    if (!variants.empty()) {
      flags.variants.clear();
      for (auto f : pg::io::split_fields(variants, ','))
        if (!pg::io::trim(f).empty()) flags.variants.emplace_back(pg::io::trim(f));
      if (!(flags.variants.size() == 1 && flags.variants.front() == "all")) pg::check_variants(flags.variants);
    }
    if (train->parsed()) {
      if (flags.variants.size() > 1) throw pg::ConfigError("train takes a single --variant");
      if (!flags.variants.empty()) cfg.variants = flags.variants;
      return pg::cmd_train(cfg, flags, std::cout);
    }
    if (gen->parsed()) return pg::cmd_generate(cfg, flags, std::cout);
    if (build->parsed()) return pg::cmd_build(cfg, flags, std::cout);
    if (eval->parsed()) return pg::cmd_eval(cfg, flags, std::cout);
    if (predict->parsed()) return pg::cmd_predict(cfg, flags, std::cout);
    if (ablate->parsed()) return pg::cmd_ablate(cfg, flags, std::cout);
  } catch (const pg::Error& e) {
    std::cerr << "poigraph: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "poigraph: " << e.what() << "\n";
    return static_cast<int>(pg::ExitCode::data);
  } catch (const std::exception& e) {
    std::cerr << "poigraph: internal error: " << e.what() << "\n";
    return static_cast<int>(pg::ExitCode::numerical);
  }
  return static_cast<int>(pg::ExitCode::config);
}
