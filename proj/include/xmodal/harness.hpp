#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/pipeline.hpp"

namespace xmodal {

// One sweep axis: a named list of JSON merge patches applied to the base
// PipelineConfig. Patch semantics are RFC 7386 (null deletes a key, so
// {"proxy": null} turns stage 2 off).
struct AxisValue {
  std::string name;
  nlohmann::json patch;
};

struct Axis {
  std::string name;
  std::vector<AxisValue> values;
};

struct SweepSpec {
  std::string name = "sweep";
  PipelineConfig base;
  std::vector<Axis> axes;
  std::vector<uint64_t> seeds = {0, 1, 2};
  std::string out_dir = "out";
  // When nonempty, checkpoints ckpt-<budget>.xmta are pretrained into out_dir
  // before any run (axis patches reference them by file name).
  std::vector<int64_t> pretrain_budgets;

  nlohmann::json to_json() const;
  static SweepSpec from_json(const nlohmann::json& j);
  // proxy-choice | otdd-vs-perf | freeze-grid | pretrain-ladder
  static SweepSpec preset(const std::string& name);
};

struct SweepRun {
  std::string run_id;
  std::map<std::string, std::string> axis_values; // axis name -> value name
  uint64_t seed = 0;
  PipelineConfig config;
};

// Deterministic cartesian product of axes x seeds; run_ids are stable.
std::vector<SweepRun> enumerate_runs(const SweepSpec& spec);

struct ResultRow {
  std::string run_id;
  int stage = 0;
  int64_t epoch = 0;
  std::string series;
  double value = 0.0;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  void append_record(const std::string& run_id, const RunRecord& record);
  void write_csv(std::ostream& os) const;
  static ResultsTable read_csv(std::istream& is);
};

struct SweepOutcome {
  ResultsTable table;
  std::vector<std::string> run_ids;
  int64_t executed = 0;
  int64_t skipped = 0; // runs resumed from existing records
};

// Runs every enumerated run, skipping any with a complete record already at
// <out_dir>/runs/<run_id>.json. Writes per-run JSON records, the merged
// results.csv and a manifest.json mapping run_id to axis values and seed.
SweepOutcome run_sweep(const SweepSpec& spec, bool verbose = false);

// Backbone spec used by pretrain-ladder checkpoints and the `pretrain`
// subcommand default (small enough that the 1M-token rung stays desk-scale).
BackboneSpec ladder_backbone_spec();

// Pretrains a fresh backbone on the synthetic corpus and writes a checkpoint.
// Returns the held-out MLM loss.
double pretrain_checkpoint(const std::string& path, int64_t token_budget,
                           uint64_t seed, const BackboneSpec& spec);

} // namespace xmodal
