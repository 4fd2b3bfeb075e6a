#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/nn.hpp"
#include "xmodal/otdd.hpp"

namespace xmodal {

// Synthetic target-task families:
//   point2d      - class-dependent oriented textures (2D point)
//   dense2d      - smooth random field -> blurred/saturated field (2D dense)
//   point1d      - class-dependent sinusoid mixtures (1D point)
//   multilabel1d - planted motifs in a 4-channel one-hot sequence
struct TaskSpec {
  std::string name = "task";
  std::string family = "point1d";
  int spatial_rank = 1;
  int64_t in_channels = 1;
  std::vector<int64_t> input_extents = {96};
  TaskType task_type = TaskType::point;
  int64_t num_classes = 4;           // point classes or multilabel L
  std::vector<int64_t> out_shape;    // dense
  int64_t train_size = 512;
  int64_t val_size = 128;
  int64_t test_size = 256;
  uint64_t seed = 0;
  double noise = 0.1;
  double class_separation = 1.0;

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
  static TaskSpec family_default(const std::string& family);
};

struct LabeledDataset {
  TaskSpec spec;
  std::string split;
  int64_t size = 0;
  Shape sample_shape;                 // [cin, extents...]
  std::vector<double> features;       // size x prod(sample_shape)
  std::vector<int64_t> class_labels;  // point
  std::vector<double> multihot;       // size x L, {0,1}
  std::vector<double> dense_targets;  // size x prod(out_shape)

  int64_t sample_numel() const { return shape_numel(sample_shape); }
  Tensor batch_features(const std::vector<int64_t>& idx) const;
};

// Pure function of (spec, split): identical calls are bit-identical. Splits
// draw from disjoint seed streams.
LabeledDataset gen_target(const TaskSpec& spec, const std::string& split);

// Dense targets bucketed into inferred classes by mean target value
// (equal-frequency buckets over the given dataset).
std::vector<int64_t> infer_dense_classes(const LabeledDataset& ds,
                                         int64_t num_buckets = 10);

// Class labels usable for OTDD regardless of task type.
std::vector<int64_t> otdd_labels(const LabeledDataset& ds, int64_t* num_classes);

// Nearest-centroid classifier on DFT magnitudes; certifies separability of
// the point1d family. Returns 0-1 error on `eval` after fitting on `train`.
double oracle_fourier_error(const LabeledDataset& train,
                            const LabeledDataset& eval);

enum class ProxyKind { structured, fake_noise, fake_features };
std::string proxy_kind_name(ProxyKind k);
ProxyKind proxy_kind_from_name(const std::string& s);

struct ProxySpec {
  ProxyKind kind = ProxyKind::structured;
  int64_t num_classes = 7;
  int64_t sample_count = 200;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ProxySpec from_json(const nlohmann::json& j);
};

// Proxy feature cloud in the backbone embedding space (dim = hidden).
//   structured    - grammar token sequences through the token-embedding table
//   fake_features - iid gaussian vectors, uniform labels
//   fake_noise    - white-noise images pushed through a fresh default embedder
// The backbone is required for the structured kind.
FeatureCloud gen_proxy(const ProxySpec& spec, const Backbone* backbone,
                       int64_t hidden);

// Token stream: Zipfian unigram marginals, repetition-based bigram structure
// and deterministic matched-bracket constraints. Ends at token_budget.
// Content tokens are [3, vocab-2]; 1/2 are bracket open/close; vocab-1 is the
// mask token and never generated.
std::vector<int32_t> gen_pretrain_corpus(int64_t vocab, int64_t token_budget,
                                         uint64_t seed, double zipf_exp = 1.1);

// ---- dataset archives ----

void save_dataset(const std::string& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& path);

void save_feature_cloud(const std::string& path, const FeatureCloud& cloud,
                        const nlohmann::json& header_extra = {});
FeatureCloud load_feature_cloud(const std::string& path);

// Embeds a dataset with the model and averages over the sequence axis.
FeatureCloud embed_dataset(const LabeledDataset& ds, const Embedder& embedder,
                           int64_t batch = 64);

} // namespace xmodal
