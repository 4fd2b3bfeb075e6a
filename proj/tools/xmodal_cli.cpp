#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmodal/harness.hpp"
#include "xmodal/svg_plot.hpp"

namespace fs = std::filesystem;
using namespace xmodal;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// XMODAL_OUT wins over --out and config values.
std::string resolve_out(const std::string& flag_value) {
  if (const char* env = std::getenv("XMODAL_OUT"); env && *env) return env;
  return flag_value;
}

FeatureCloud load_cloud_or_dataset(const std::string& path) {
  try {
    return load_feature_cloud(path);
  } catch (const std::exception&) {
    // Fall back to a labeled dataset archive: flatten raw features.
    LabeledDataset ds = load_dataset(path);
    FeatureCloud c;
    c.n = ds.size;
    c.d = ds.sample_numel();
    c.features = ds.features;
    c.labels = otdd_labels(ds, &c.num_classes);
    c.validate();
    return c;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"xmodal: cross-modal fine-tuning laboratory"};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 0;
  std::string out_dir = "out";
  std::string config_path;
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--config", config_path, "JSON config file");

  auto* gen = app.add_subcommand("gen-data", "write dataset archives");
  std::string family = "point1d";
  gen->add_option("--family", family,
                  "task family (point1d, point2d, dense2d, multilabel1d)");

  auto* pre = app.add_subcommand("pretrain", "pretrain a backbone checkpoint");
  int64_t budget = 0;
  std::string ckpt_path;
  pre->add_option("--budget", budget, "token budget")->required();
  pre->add_option("--checkpoint", ckpt_path, "checkpoint file path");

  auto* run = app.add_subcommand("run", "run one pipeline config");

  auto* sweep = app.add_subcommand("sweep", "run a sweep");
  std::string preset;
  bool verbose = false;
  sweep->add_option("--preset", preset,
                    "proxy-choice | otdd-vs-perf | freeze-grid | pretrain-ladder");
  sweep->add_flag("--verbose", verbose, "log per-run progress");

  auto* otdd_cmd = app.add_subcommand("otdd", "OTDD between two archives");
  std::string path_a, path_b, solver = "exact";
  bool approx = false;
  ApproxConfig acfg;
  otdd_cmd->add_option("a", path_a, "first archive")->required();
  otdd_cmd->add_option("b", path_b, "second archive")->required();
  otdd_cmd->add_option("--solver", solver, "exact | entropic");
  otdd_cmd->add_flag("--approx", approx, "class-wise subsampling approximation");
  otdd_cmd->add_option("--subsample", acfg.subsample_size, "subsample size b");
  otdd_cmd->add_option("--rounds", acfg.rounds, "rounds R");
  otdd_cmd->add_option("--source-sample", acfg.source_sample_size,
                       "source subsample size");

  auto* plot = app.add_subcommand("plot", "render SVG figures from a results CSV");
  std::string csv_path, manifest_path;
  plot->add_option("csv", csv_path, "results.csv path")->required();
  plot->add_option("--manifest", manifest_path, "sweep manifest.json path");

  CLI11_PARSE(app, argc, argv);

  try {
    std::string out = resolve_out(out_dir);

    if (*gen) {
      TaskSpec spec = config_path.empty()
                          ? TaskSpec::family_default(family)
                          : TaskSpec::from_json(read_json_file(config_path));
      if (app.count("--seed")) spec.seed = seed;
      fs::create_directories(out);
      nlohmann::json summary;
      for (const char* split : {"train", "val", "test"}) {
        LabeledDataset ds = gen_target(spec, split);
        std::string path = out + "/" + spec.name + "-" + split + ".xmta";
        save_dataset(path, ds);
        summary[split] = {{"path", path}, {"size", ds.size}};
      }
      summary["spec"] = spec.to_json();
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (*pre) {
      BackboneSpec bspec = ladder_backbone_spec();
      if (!config_path.empty())
        bspec = backbone_spec_from_json(read_json_file(config_path));
      fs::create_directories(out);
      if (ckpt_path.empty())
        ckpt_path = out + "/ckpt-" + std::to_string(budget) + ".xmta";
      double heldout = pretrain_checkpoint(ckpt_path, budget, seed, bspec);
      std::cout << nlohmann::json({{"checkpoint", ckpt_path},
                                   {"token_budget", budget},
                                   {"heldout_loss", heldout}})
                       .dump(2)
                << "\n";
      return 0;
    }

    if (*run) {
      if (config_path.empty())
        throw std::runtime_error("run requires --config <pipeline json>");
      PipelineConfig cfg = PipelineConfig::from_json(read_json_file(config_path));
      if (app.count("--seed")) cfg.seed = seed;
      fs::create_directories(out);
      RunRecord record = run_pipeline(cfg);
      write_text_file(out + "/record.json", record.to_json().dump(2) + "\n");
      ResultsTable table;
      table.append_record(cfg.task.name + "_s" + std::to_string(cfg.seed),
                          record);
      std::ofstream csv(out + "/metrics.csv");
      table.write_csv(csv);
      if (!record.complete) {
        std::cerr << "run failed: " << record.error << "\n";
        return 1;
      }
      std::cout << "wrote " << out << "/record.json and " << out
                << "/metrics.csv\n";
      return 0;
    }

    if (*sweep) {
      SweepSpec spec;
      if (!preset.empty()) {
        spec = SweepSpec::preset(preset);
      } else if (!config_path.empty()) {
        spec = SweepSpec::from_json(read_json_file(config_path));
      } else {
        throw std::runtime_error("sweep requires --preset or --config");
      }
      if (app.count("--out") || std::getenv("XMODAL_OUT")) spec.out_dir = out;
      if (app.count("--seed")) spec.seeds = {seed};
      SweepOutcome outcome = run_sweep(spec, verbose);
      std::cout << nlohmann::json({{"runs", outcome.run_ids.size()},
                                   {"executed", outcome.executed},
                                   {"resumed", outcome.skipped},
                                   {"results", spec.out_dir + "/results.csv"}})
                       .dump(2)
                << "\n";
      return 0;
    }

    if (*otdd_cmd) {
      FeatureCloud a = load_cloud_or_dataset(path_a);
      FeatureCloud b = load_cloud_or_dataset(path_b);
      OtddOptions opts;
      opts.solver = solver_from_name(solver);
      acfg.seed = seed;
      OtddReport report =
          approx ? otdd_classwise_approx(a, b, acfg, opts) : otdd(a, b, opts);
      std::cout << report.to_json().dump(2) << "\n";
      return 0;
    }

    if (*plot) {
      std::ifstream csv(csv_path);
      if (!csv) throw std::runtime_error("cannot open " + csv_path);
      ResultsTable table = ResultsTable::read_csv(csv);
      nlohmann::json manifest = nlohmann::json::object();
      if (manifest_path.empty()) {
        fs::path guess = fs::path(csv_path).parent_path() / "manifest.json";
        if (fs::exists(guess)) manifest_path = guess.string();
      }
      if (!manifest_path.empty()) manifest = read_json_file(manifest_path);
      auto warnings = emit_figures(table, manifest, out);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "figures written to " << out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
