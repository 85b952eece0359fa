#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adamix/data_synth.hpp"
#include "adamix/experiment.hpp"

namespace fs = std::filesystem;
using namespace adamix;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> paradigm;
};

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

void apply(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.strategy) cfg.paradigm.strategy = parse_strategy(*o.strategy);
  if (o.paradigm) cfg.paradigm.paradigm = parse_paradigm(*o.paradigm);
  validate(cfg);
}

void print_summary(const DatasetMetrics& m) {
  std::printf("dsc %.4f  jaccard %.4f", m.dsc, m.jaccard);
  if (m.hd95) std::printf("  hd95 %.3f", *m.hd95);
  if (m.asd) std::printf("  asd %.3f", *m.asd);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AdaMix self-paced mix-up for semi-supervised segmentation (desk scale)", "adamix"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  Overrides ov;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset described by a run config");
  gen->add_option("--config", config_path, "Run config JSON (defaults when omitted)");
  gen->add_option("--seed", ov.seed, "Dataset seed override");
  gen->add_option("--out", out_dir, "Dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train one configuration and write a run directory");
  train->add_option("--config", config_path, "Run config JSON (defaults when omitted)");
  train->add_option("--seed", ov.seed, "Run seed override");
  train->add_option("--strategy", ov.strategy, "none|cutmix|umix|iumix|adamix");
  train->add_option("--paradigm", ov.paradigm, "self_training|mean_teacher|co_training");
  train->add_option("--out", out_dir, "Run directory (must not exist or be empty)");

  std::string run_dir;
  std::string split_name = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a run directory's checkpoint");
  eval->add_option("run_dir", run_dir, "Run directory")->required();
  eval->add_option("--split", split_name, "train_labeled|train_unlabeled|val|test");

  std::vector<std::string> config_paths;
  std::vector<std::string> strategies;
  std::vector<std::string> paradigms;
  std::vector<std::uint64_t> seeds;
  auto* compare = app.add_subcommand("compare", "Run configs over shared seeds and summarize");
  compare->add_option("--config", config_paths, "Run config JSON (repeatable)");
  compare->add_option("--strategy", strategies, "Expand every config over these strategies (repeatable)");
  compare->add_option("--paradigm", paradigms, "Expand every config over these paradigms (repeatable)");
  compare->add_option("--seed", seeds, "Seeds (repeatable; default 0 1 2)");
  compare->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> plot_inputs;
  auto* plot = app.add_subcommand("plot", "Render curves.csv files to SVG");
  plot->add_option("inputs", plot_inputs, "Run or compare directories, or curves.csv files")->required();
  plot->add_option("--out", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = config_or_default(config_path);
      if (ov.seed) cfg.dataset.seed = *ov.seed;
      validate(cfg.dataset);
      ensure_fresh_directory(out_dir);
      export_dataset(generate(cfg.dataset), cfg.dataset, out_dir);
      std::printf("wrote %d samples to %s\n", cfg.dataset.n_train + cfg.dataset.n_val + cfg.dataset.n_test,
                  out_dir.c_str());
    } else if (*train) {
      RunConfig cfg = config_or_default(config_path);
      apply(cfg, ov);
      if (out_dir.empty()) out_dir = cfg.output_dir;
      if (out_dir.empty()) throw PreconditionError("train: no output directory (--out or output_dir in config)");
      std::printf("training %s / %s, seed %llu, %lld iterations\n", strategy_name(cfg.paradigm.strategy).c_str(),
                  std::string(to_string(cfg.paradigm.paradigm)).c_str(), static_cast<unsigned long long>(cfg.seed),
                  static_cast<long long>(total_iterations(cfg)));
      const RunArtifacts art = run_training(cfg, out_dir);
      std::printf("test: ");
      print_summary(art.test.summary);
    } else if (*eval) {
      const Evaluation ev = run_evaluation(run_dir, parse_split(split_name));
      std::printf("%s: ", split_name.c_str());
      print_summary(ev.summary);
    } else if (*compare) {
      std::vector<RunConfig> base;
      if (config_paths.empty()) base.push_back(RunConfig{});
      for (const std::string& p : config_paths) base.push_back(load_run_config(p));
      std::vector<RunConfig> configs;
      for (const RunConfig& b : base) {
        const std::vector<std::string> strats = strategies.empty()
                                                    ? std::vector<std::string>{strategy_name(b.paradigm.strategy)}
                                                    : strategies;
        const std::vector<std::string> pars =
            paradigms.empty() ? std::vector<std::string>{std::string(to_string(b.paradigm.paradigm))} : paradigms;
        for (const std::string& s : strats) {
          for (const std::string& p : pars) {
            RunConfig c = b;
            c.paradigm.strategy = parse_strategy(s);
            c.paradigm.paradigm = parse_paradigm(p);
            configs.push_back(c);
          }
        }
      }
      if (seeds.empty()) seeds = {0, 1, 2};
      const CompareResult res = run_compare(configs, seeds, out_dir);
      std::printf("%-8s %-14s %4s  %-17s %-17s %-17s %-17s\n", "strategy", "paradigm", "runs", "dsc", "jaccard",
                  "hd95", "asd");
      for (const CompareSummaryRow& r : res.summary) {
        std::printf("%-8s %-14s %4d  %.4f +- %.4f   %.4f +- %.4f   %7.3f +- %.3f  %7.3f +- %.3f\n",
                    r.strategy.c_str(), r.paradigm.c_str(), r.runs, r.dsc_mean, r.dsc_std, r.jaccard_mean,
                    r.jaccard_std, r.hd95_mean, r.hd95_std, r.asd_mean, r.asd_std);
      }
    } else if (*plot) {
      std::vector<fs::path> inputs(plot_inputs.begin(), plot_inputs.end());
      for (const fs::path& p : render_plots(inputs, out_dir)) std::printf("wrote %s\n", p.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "adamix: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
