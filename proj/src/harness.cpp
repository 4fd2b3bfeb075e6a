#include "xmodal/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace xmodal {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string budget_name(int64_t b) {
  if (b >= 1000000 && b % 1000000 == 0) return std::to_string(b / 1000000) + "M";
  if (b >= 1000 && b % 1000 == 0) return std::to_string(b / 1000) + "k";
  return std::to_string(b);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

} // namespace

nlohmann::json SweepSpec::to_json() const {
  nlohmann::json jaxes = nlohmann::json::array();
  for (const auto& ax : axes) {
    nlohmann::json jvals = nlohmann::json::array();
    for (const auto& v : ax.values)
      jvals.push_back({{"name", v.name}, {"patch", v.patch}});
    jaxes.push_back({{"name", ax.name}, {"values", jvals}});
  }
  return {{"name", name},
          {"base", base.to_json()},
          {"axes", jaxes},
          {"seeds", seeds},
          {"out_dir", out_dir},
          {"pretrain_budgets", pretrain_budgets}};
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
  SweepSpec s;
  s.name = j.value("name", s.name);
  if (j.contains("base")) s.base = PipelineConfig::from_json(j.at("base"));
  for (const auto& jax : j.value("axes", nlohmann::json::array())) {
    Axis ax;
    ax.name = jax.at("name").get<std::string>();
    for (const auto& jv : jax.at("values"))
      ax.values.push_back({jv.at("name").get<std::string>(), jv.at("patch")});
    s.axes.push_back(std::move(ax));
  }
  s.seeds = j.value("seeds", s.seeds);
  s.out_dir = j.value("out_dir", "out");
  if (j.contains("pretrain_budgets"))
    s.pretrain_budgets = j.at("pretrain_budgets").get<std::vector<int64_t>>();
  return s;
}

BackboneSpec ladder_backbone_spec() {
  BackboneSpec s;
  s.layers = 2;
  s.heads = 2;
  s.hidden = 32;
  s.ffn_mult = 2;
  s.max_seq = 64;
  s.vocab = 64;
  return s;
}

SweepSpec SweepSpec::preset(const std::string& preset_name) {
  SweepSpec s;
  s.name = preset_name;
  s.base.task = TaskSpec::family_default("point1d");
  s.base.backbone = ladder_backbone_spec();
  s.base.backbone.vocab = 128;
  s.base.stage2.epochs = 4;
  s.base.stage3.epochs = 10;

  if (preset_name == "proxy-choice") {
    Axis ax{"proxy", {}};
    for (const char* kind : {"structured", "fake_features", "fake_noise"}) {
      ProxySpec p;
      p.kind = proxy_kind_from_name(kind);
      ax.values.push_back({kind, {{"proxy", p.to_json()}}});
    }
    ax.values.push_back({"none", {{"proxy", nullptr}}});
    s.axes.push_back(std::move(ax));
  } else if (preset_name == "otdd-vs-perf") {
    Axis ax{"s2epochs", {}};
    for (int64_t e : {0, 2, 4, 8})
      ax.values.push_back(
          {std::to_string(e), {{"stage2", {{"epochs", e}}}}});
    s.axes.push_back(std::move(ax));
  } else if (preset_name == "freeze-grid") {
    Axis freeze{"freeze", {}};
    freeze.values.push_back(
        {"both", {{"freeze", {{"embedder", true}, {"backbone", true}}}}});
    freeze.values.push_back(
        {"backbone", {{"freeze", {{"embedder", false}, {"backbone", true}}}}});
    freeze.values.push_back(
        {"embedder", {{"freeze", {{"embedder", true}, {"backbone", false}}}}});
    Axis emb{"emb", {}};
    emb.values.push_back({"trained", nlohmann::json::object()});
    emb.values.push_back({"untrained", {{"proxy", nullptr}}});
    s.axes.push_back(std::move(freeze));
    s.axes.push_back(std::move(emb));
  } else if (preset_name == "pretrain-ladder") {
    s.pretrain_budgets = {0, 10000, 100000, 1000000};
    s.base.backbone = ladder_backbone_spec();
    Axis ax{"budget", {}};
    for (int64_t b : s.pretrain_budgets)
      ax.values.push_back({budget_name(b),
                           {{"checkpoint",
                             "ckpt-" + std::to_string(b) + ".xmta"}}});
    s.axes.push_back(std::move(ax));
  } else {
    throw std::invalid_argument("unknown sweep preset '" + preset_name + "'");
  }
  return s;
}

std::vector<SweepRun> enumerate_runs(const SweepSpec& spec) {
  std::vector<SweepRun> runs;
  std::vector<size_t> idx(spec.axes.size(), 0);
  while (true) {
    nlohmann::json cfg_json = spec.base.to_json();
    std::map<std::string, std::string> axis_values;
    std::string id_prefix;
    for (size_t a = 0; a < spec.axes.size(); ++a) {
      const AxisValue& v = spec.axes[a].values[idx[a]];
      cfg_json.merge_patch(v.patch);
      axis_values[spec.axes[a].name] = v.name;
      id_prefix += spec.axes[a].name + "-" + v.name + "_";
    }
    for (uint64_t seed : spec.seeds) {
      SweepRun run;
      run.run_id = id_prefix + "s" + std::to_string(seed);
      run.axis_values = axis_values;
      run.seed = seed;
      nlohmann::json j = cfg_json;
      j["seed"] = seed;
      run.config = PipelineConfig::from_json(j);
      if (!run.config.checkpoint.empty() &&
          run.config.checkpoint.find('/') == std::string::npos)
        run.config.checkpoint = spec.out_dir + "/" + run.config.checkpoint;
      runs.push_back(std::move(run));
    }
    // odometer increment over the axes
    size_t a = spec.axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < spec.axes[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return runs;
    }
    if (spec.axes.empty()) return runs;
  }
}

void ResultsTable::append_record(const std::string& run_id,
                                 const RunRecord& record) {
  if (record.has_otdd_initial)
    rows.push_back({run_id, 2, 0, "stage2_otdd", record.otdd_initial});
  for (size_t i = 0; i < record.stage2_otdd.size(); ++i)
    rows.push_back({run_id, 2, static_cast<int64_t>(i) + 1, "stage2_otdd",
                    record.stage2_otdd[i]});
  for (size_t i = 0; i < record.stage3_train_loss.size(); ++i)
    rows.push_back({run_id, 3, static_cast<int64_t>(i), "train_loss",
                    record.stage3_train_loss[i]});
  for (size_t i = 0; i < record.stage3_val_metric.size(); ++i)
    rows.push_back({run_id, 3, static_cast<int64_t>(i), "val_metric",
                    record.stage3_val_metric[i]});
  for (size_t i = 0; i < record.stage3_test_metric.size(); ++i)
    rows.push_back({run_id, 3, static_cast<int64_t>(i), "test_metric",
                    record.stage3_test_metric[i]});
}

void ResultsTable::write_csv(std::ostream& os) const {
  os << "run_id,stage,epoch,series,value\n";
  for (const ResultRow& r : rows)
    os << r.run_id << "," << r.stage << "," << r.epoch << "," << r.series
       << "," << fmt_double(r.value) << "\n";
}

ResultsTable ResultsTable::read_csv(std::istream& is) {
  ResultsTable t;
  std::string line;
  if (!std::getline(is, line) || line != "run_id,stage,epoch,series,value")
    throw std::runtime_error("results csv: bad or missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ResultRow r;
    std::string field;
    if (!std::getline(ls, r.run_id, ',')) continue;
    std::getline(ls, field, ',');
    r.stage = std::stoi(field);
    std::getline(ls, field, ',');
    r.epoch = std::stoll(field);
    std::getline(ls, r.series, ',');
    std::getline(ls, field);
    r.value = std::stod(field);
    t.rows.push_back(std::move(r));
  }
  return t;
}

double pretrain_checkpoint(const std::string& path, int64_t token_budget,
                           uint64_t seed, const BackboneSpec& spec) {
  Rng init_rng(Rng::derive_seed(seed, "backbone-init"));
  Backbone backbone(spec, init_rng);
  auto corpus =
      gen_pretrain_corpus(spec.vocab, 1 << 15, Rng::derive_seed(seed, "corpus"));
  auto heldout =
      gen_pretrain_corpus(spec.vocab, 4096, Rng::derive_seed(seed, "corpus-heldout"));
  MlmConfig cfg;
  cfg.seed = Rng::derive_seed(seed, "mlm");
  MlmResult res = pretrain_mlm(backbone, corpus, heldout, token_budget, cfg);
  save_backbone_checkpoint(path, backbone, token_budget);
  return res.heldout_loss;
}

SweepOutcome run_sweep(const SweepSpec& spec, bool verbose) {
  SweepOutcome out;
  fs::create_directories(spec.out_dir + "/runs");

  for (int64_t budget : spec.pretrain_budgets) {
    std::string ckpt = spec.out_dir + "/ckpt-" + std::to_string(budget) + ".xmta";
    if (fs::exists(ckpt)) continue;
    if (verbose)
      std::cerr << "pretraining checkpoint " << ckpt << " (" << budget
                << " tokens)\n";
    pretrain_checkpoint(ckpt, budget, spec.base.seed, spec.base.backbone);
  }

  nlohmann::json manifest_runs = nlohmann::json::object();
  for (const SweepRun& run : enumerate_runs(spec)) {
    out.run_ids.push_back(run.run_id);
    std::string record_path = spec.out_dir + "/runs/" + run.run_id + ".json";
    RunRecord record;
    bool resumed = false;
    if (fs::exists(record_path)) {
      try {
        record = RunRecord::from_json(read_json_file(record_path));
        resumed = record.complete;
      } catch (const std::exception&) {
        resumed = false;
      }
    }
    if (resumed) {
      ++out.skipped;
    } else {
      if (verbose) std::cerr << "running " << run.run_id << "\n";
      record = run_pipeline(run.config);
      write_json_file(record_path, record.to_json());
      ++out.executed;
      if (!record.complete && verbose)
        std::cerr << "  failed: " << record.error << "\n";
    }
    out.table.append_record(run.run_id, record);
    manifest_runs[run.run_id] = {{"axes", run.axis_values},
                                 {"seed", run.seed},
                                 {"metric", record.metric_name},
                                 {"complete", record.complete}};
  }

  {
    std::ofstream csv(spec.out_dir + "/results.csv");
    out.table.write_csv(csv);
  }
  write_json_file(spec.out_dir + "/manifest.json",
                  {{"name", spec.name}, {"runs", manifest_runs}});
  return out;
}

} // namespace xmodal
