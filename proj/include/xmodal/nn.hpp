#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "xmodal/archive.hpp"
#include "xmodal/optim.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

enum class TaskType { point, point_multilabel, dense };
std::string task_type_name(TaskType t);
TaskType task_type_from_name(const std::string& s);

struct DatasetMeta {
  int64_t in_channels = 1;
  int spatial_rank = 1;
  std::vector<int64_t> input_extents; // [len] or [h, w]
};

struct EmbedderSpec {
  DatasetMeta meta;
  int64_t kernel = 0;
  int64_t stride = 0;
  int64_t pad_after = 0; // 1D right zero-padding
  int64_t embed_dim = 0;
  int64_t target_seq_len = 0;
};

struct BackboneSpec {
  int64_t layers = 4;
  int64_t heads = 4;
  int64_t hidden = 64;
  int64_t ffn_mult = 4;
  int64_t max_seq = 128;
  int64_t vocab = 512;
  double dropout = 0.0;

  void validate() const;
};

struct PredictorSpec {
  TaskType task_type = TaskType::point;
  int64_t num_classes = 0;          // point / multilabel
  std::vector<int64_t> out_shape;   // dense, per-sample extents
  int64_t in_dim = 0;               // backbone hidden
  int64_t seq_len = 0;
  int64_t token_width = 0;          // dense per-token projection width
};

// conv -> flatten spatial to sequence -> layer norm -> learned positions.
class Embedder {
 public:
  Embedder(EmbedderSpec spec, Rng& rng);

  Tensor forward(const Tensor& x) const;
  const EmbedderSpec& spec() const { return spec_; }
  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;

 private:
  EmbedderSpec spec_;
  Parameter conv_w_, conv_b_, ln_gain_, ln_shift_, pos_;
};

// For 2D, kernel = stride = 4. For 1D, kernel = stride = ceil(len / target)
// with right zero-padding so the output length is exactly target_seq_len.
EmbedderSpec build_embedder_spec(const DatasetMeta& meta, int64_t embed_dim,
                                 int64_t target_seq_len_1d = 24);

// Pre-LN transformer encoder; bidirectional attention.
class Backbone {
 public:
  Backbone(BackboneSpec spec, Rng& rng);

  // h: [batch x seq x hidden] -> same shape.
  Tensor forward(const Tensor& h, bool training = false,
                 Rng* dropout_rng = nullptr) const;
  // Attention probabilities of one layer: [batch*heads x seq x seq].
  Tensor attention_probs(const Tensor& h, int64_t layer) const;
  const Tensor& token_embedding() const { return tok_embed_.tensor; }

  const BackboneSpec& spec() const { return spec_; }
  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;

 private:
  struct Layer {
    Parameter ln1_gain, ln1_shift;
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln2_gain, ln2_shift;
    Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  Tensor attend(const Tensor& h, const Layer& l, bool want_probs,
                Tensor* probs_out) const;

  BackboneSpec spec_;
  Parameter tok_embed_;
  std::vector<Layer> layers_;
  Parameter final_gain_, final_shift_;
};

class Predictor {
 public:
  Predictor(PredictorSpec spec, Rng& rng);

  // h: [batch x seq x hidden] -> [batch x K] (point) or [batch x out_shape].
  Tensor forward(const Tensor& h) const;
  const PredictorSpec& spec() const { return spec_; }
  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;

 private:
  PredictorSpec spec_;
  Parameter w_, b_;
};

PredictorSpec build_predictor_spec(TaskType task_type, int64_t num_classes,
                                   const std::vector<int64_t>& out_shape,
                                   int64_t hidden, int64_t seq_len);

// ---- masked-token pretraining ----

struct MlmConfig {
  int64_t seq_len = 32;
  int64_t batch = 16;
  double lr = 1e-3;
  double mask_rate = 0.15;
  uint64_t seed = 0;
};

struct MlmResult {
  double heldout_loss = 0.0;
  int64_t tokens_seen = 0;
  int64_t masked_positions = 0;
  int64_t total_positions = 0;
};

// Trains the backbone (token embedding included) by masked-token prediction
// until cumulative tokens seen >= token_budget. Budget 0 leaves the backbone
// untouched. Returns the cross-entropy on the held-out stream.
MlmResult pretrain_mlm(Backbone& backbone, const std::vector<int32_t>& corpus,
                       const std::vector<int32_t>& heldout, int64_t token_budget,
                       const MlmConfig& cfg);

// ---- checkpoints ----

void save_backbone_checkpoint(const std::string& path, const Backbone& backbone,
                              int64_t token_budget);
// Backbone spec is read from the header; seed only shapes fresh allocation.
std::unique_ptr<Backbone> load_backbone_checkpoint(const std::string& path,
                                                   int64_t* token_budget = nullptr);

nlohmann::json backbone_spec_to_json(const BackboneSpec& s);
BackboneSpec backbone_spec_from_json(const nlohmann::json& j);

} // namespace xmodal
