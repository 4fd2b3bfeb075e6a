#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/data.hpp"
#include "xmodal/nn.hpp"
#include "xmodal/otdd.hpp"

namespace xmodal {

struct Stage2Config {
  int64_t epochs = 8;
  int64_t batch = 32;
  double lr = 1e-3;
  ApproxConfig approx;
  double eps_rel = 0.05; // entropic regularization for the training loss
};

struct Stage3Config {
  int64_t epochs = 30;
  int64_t batch = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
};

struct FreezeMask {
  bool embedder = false;
  bool backbone = false; // the predictor is never frozen
};

struct PipelineConfig {
  TaskSpec task;
  bool has_proxy = true;
  ProxySpec proxy;
  std::string checkpoint;  // backbone checkpoint path; empty = fresh init
  BackboneSpec backbone;   // used when no checkpoint is given
  int64_t target_seq_len_1d = 24;
  Stage2Config stage2;
  Stage3Config stage3;
  FreezeMask freeze;
  uint64_t seed = 0;

  // proxy=none and stage2.epochs=0 are the same run; both collapse to the
  // same canonical form so their records compare bit-identical.
  PipelineConfig normalized() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

struct RunRecord {
  nlohmann::json config_echo;
  double otdd_initial = 0.0; // before the first stage-2 epoch
  bool has_otdd_initial = false;
  std::vector<double> stage2_otdd; // one entry per stage-2 epoch
  std::vector<double> stage3_train_loss;
  std::vector<double> stage3_val_metric;
  std::vector<double> stage3_test_metric;
  std::string metric_name;
  // component -> checkpoint-tag -> checksum, e.g. checksums["backbone"]["after_stage2"]
  std::map<std::string, std::map<std::string, std::string>> checksums;
  double wall_seconds = 0.0;
  bool complete = false;
  std::string error;

  nlohmann::json to_json(bool include_timing = true) const;
  static RunRecord from_json(const nlohmann::json& j);
};

struct ModelBundle {
  std::unique_ptr<Embedder> embedder;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<Predictor> predictor;

  std::vector<Parameter*> all_params();
  uint64_t component_checksum(const std::string& component) const;
};

ModelBundle stage1_build(const PipelineConfig& cfg);
void stage2_train_embedder(ModelBundle& bundle, const PipelineConfig& cfg,
                           RunRecord& record);
void stage3_finetune(ModelBundle& bundle, const PipelineConfig& cfg,
                     RunRecord& record);
RunRecord run_pipeline(const PipelineConfig& cfg);

// Evaluates the task metric of the bundle on a dataset (lower is better).
double evaluate_metric(const ModelBundle& bundle, const LabeledDataset& ds,
                       std::string* metric_name = nullptr);

} // namespace xmodal
