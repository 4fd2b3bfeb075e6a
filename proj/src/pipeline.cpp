#include "xmodal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "xmodal/metrics.hpp"
#include "xmodal/otdd_loss.hpp"

namespace xmodal {

namespace {

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

nlohmann::json stage2_to_json(const Stage2Config& s) {
  return {{"epochs", s.epochs},
          {"batch", s.batch},
          {"lr", s.lr},
          {"eps_rel", s.eps_rel},
          {"approx",
           {{"subsample_size", s.approx.subsample_size},
            {"rounds", s.approx.rounds},
            {"source_sample_size", s.approx.source_sample_size},
            {"seed", s.approx.seed}}}};
}

Stage2Config stage2_from_json(const nlohmann::json& j) {
  Stage2Config s;
  s.epochs = j.value("epochs", s.epochs);
  s.batch = j.value("batch", s.batch);
  s.lr = j.value("lr", s.lr);
  s.eps_rel = j.value("eps_rel", s.eps_rel);
  if (j.contains("approx")) {
    const auto& a = j.at("approx");
    s.approx.subsample_size = a.value("subsample_size", s.approx.subsample_size);
    s.approx.rounds = a.value("rounds", s.approx.rounds);
    s.approx.source_sample_size =
        a.value("source_sample_size", s.approx.source_sample_size);
    s.approx.seed = a.value("seed", s.approx.seed);
  }
  return s;
}

} // namespace

PipelineConfig PipelineConfig::normalized() const {
  PipelineConfig out = *this;
  if (!out.has_proxy) out.stage2.epochs = 0;
  if (out.stage2.epochs == 0) {
    out.has_proxy = false;
    out.proxy = ProxySpec{}; // canonical placeholder
  }
  return out;
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j;
  j["task"] = task.to_json();
  j["proxy"] = has_proxy ? proxy.to_json() : nlohmann::json(nullptr);
  j["checkpoint"] = checkpoint;
  j["backbone"] = backbone_spec_to_json(backbone);
  j["target_seq_len_1d"] = target_seq_len_1d;
  j["stage2"] = stage2_to_json(stage2);
  j["stage3"] = {{"epochs", stage3.epochs},
                 {"batch", stage3.batch},
                 {"lr", stage3.lr},
                 {"weight_decay", stage3.weight_decay}};
  j["freeze"] = {{"embedder", freeze.embedder}, {"backbone", freeze.backbone}};
  j["seed"] = seed;
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  cfg.task = TaskSpec::from_json(j.at("task"));
  if (j.contains("proxy") && !j.at("proxy").is_null()) {
    cfg.has_proxy = true;
    cfg.proxy = ProxySpec::from_json(j.at("proxy"));
  } else {
    cfg.has_proxy = false;
  }
  cfg.checkpoint = j.value("checkpoint", "");
  if (j.contains("backbone"))
    cfg.backbone = backbone_spec_from_json(j.at("backbone"));
  cfg.target_seq_len_1d = j.value("target_seq_len_1d", int64_t{24});
  if (j.contains("stage2")) cfg.stage2 = stage2_from_json(j.at("stage2"));
  if (j.contains("stage3")) {
    const auto& s = j.at("stage3");
    cfg.stage3.epochs = s.value("epochs", cfg.stage3.epochs);
    cfg.stage3.batch = s.value("batch", cfg.stage3.batch);
    cfg.stage3.lr = s.value("lr", cfg.stage3.lr);
    cfg.stage3.weight_decay = s.value("weight_decay", cfg.stage3.weight_decay);
  }
  if (j.contains("freeze")) {
    cfg.freeze.embedder = j.at("freeze").value("embedder", false);
    cfg.freeze.backbone = j.at("freeze").value("backbone", false);
  }
  cfg.seed = j.value("seed", uint64_t{0});
  return cfg;
}

nlohmann::json RunRecord::to_json(bool include_timing) const {
  nlohmann::json j;
  j["config"] = config_echo;
  j["otdd_initial"] = has_otdd_initial ? nlohmann::json(otdd_initial)
                                       : nlohmann::json(nullptr);
  j["stage2_otdd"] = stage2_otdd;
  j["stage3_train_loss"] = stage3_train_loss;
  j["stage3_val_metric"] = stage3_val_metric;
  j["stage3_test_metric"] = stage3_test_metric;
  j["metric_name"] = metric_name;
  j["checksums"] = checksums;
  j["complete"] = complete;
  j["error"] = error;
  if (include_timing) j["wall_seconds"] = wall_seconds;
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_echo = j.at("config");
  if (!j.at("otdd_initial").is_null()) {
    r.otdd_initial = j.at("otdd_initial").get<double>();
    r.has_otdd_initial = true;
  }
  r.stage2_otdd = j.at("stage2_otdd").get<std::vector<double>>();
  r.stage3_train_loss = j.at("stage3_train_loss").get<std::vector<double>>();
  r.stage3_val_metric = j.at("stage3_val_metric").get<std::vector<double>>();
  r.stage3_test_metric = j.at("stage3_test_metric").get<std::vector<double>>();
  r.metric_name = j.at("metric_name").get<std::string>();
  r.checksums = j.at("checksums")
                    .get<std::map<std::string, std::map<std::string, std::string>>>();
  r.complete = j.at("complete").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  return r;
}

std::vector<Parameter*> ModelBundle::all_params() {
  std::vector<Parameter*> out;
  for (Parameter* p : embedder->params()) out.push_back(p);
  for (Parameter* p : backbone->params()) out.push_back(p);
  for (Parameter* p : predictor->params()) out.push_back(p);
  return out;
}

uint64_t ModelBundle::component_checksum(const std::string& component) const {
  std::vector<const Parameter*> params;
  if (component == "embedder")
    params = static_cast<const Embedder*>(embedder.get())->params();
  else if (component == "backbone")
    params = static_cast<const Backbone*>(backbone.get())->params();
  else if (component == "predictor")
    params = static_cast<const Predictor*>(predictor.get())->params();
  else
    throw std::invalid_argument("unknown component '" + component + "'");
  return checksum(params);
}

ModelBundle stage1_build(const PipelineConfig& cfg) {
  ModelBundle bundle;
  if (cfg.checkpoint.empty()) {
    Rng brng(Rng::derive_seed(cfg.seed, "backbone-init"));
    bundle.backbone = std::make_unique<Backbone>(cfg.backbone, brng);
  } else {
    bundle.backbone = load_backbone_checkpoint(cfg.checkpoint);
  }
  int64_t hidden = bundle.backbone->spec().hidden;
  DatasetMeta meta{cfg.task.in_channels, cfg.task.spatial_rank,
                   cfg.task.input_extents};
  EmbedderSpec espec =
      build_embedder_spec(meta, hidden, cfg.target_seq_len_1d);
  if (espec.target_seq_len > bundle.backbone->spec().max_seq)
    throw std::invalid_argument("embedder sequence length exceeds backbone max_seq");
  Rng erng(Rng::derive_seed(cfg.seed, "embedder-init"));
  bundle.embedder = std::make_unique<Embedder>(espec, erng);
  PredictorSpec pspec =
      build_predictor_spec(cfg.task.task_type, cfg.task.num_classes,
                           cfg.task.out_shape, hidden, espec.target_seq_len);
  Rng prng(Rng::derive_seed(cfg.seed, "predictor-init"));
  bundle.predictor = std::make_unique<Predictor>(pspec, prng);
  return bundle;
}

namespace {

void snapshot_checksums(const ModelBundle& bundle, const std::string& tag,
                        RunRecord& record) {
  for (const char* comp : {"embedder", "backbone", "predictor"})
    record.checksums[comp][tag] = hex64(bundle.component_checksum(comp));
}

// Stage-2 epoch-boundary reporting: exact-solver Alg. 1 value on a fixed
// held-out subsample of the target.
double report_otdd(const ModelBundle& bundle, const LabeledDataset& train,
                   const std::vector<int64_t>& eval_idx,
                   const FeatureCloud& proxy, const Stage2Config& s2) {
  NoGradGuard ng;
  Tensor h = bundle.embedder->forward(train.batch_features(eval_idx));
  Tensor feats = mean_axis1(h);
  FeatureCloud cloud;
  cloud.n = static_cast<int64_t>(eval_idx.size());
  cloud.d = feats.dim(1);
  cloud.features = feats.data();
  int64_t K = 0;
  auto all_labels = otdd_labels(train, &K);
  for (int64_t i : eval_idx) cloud.labels.push_back(all_labels[i]);
  // compact to the classes present in the subsample; small datasets can
  // miss whole classes and the class-wise distance needs every class occupied
  std::map<int64_t, int64_t> remap;
  for (int64_t y : cloud.labels)
    remap.emplace(y, static_cast<int64_t>(remap.size()));
  for (int64_t& y : cloud.labels) y = remap.at(y);
  cloud.num_classes = static_cast<int64_t>(remap.size());
  OtddOptions opts;
  opts.solver = OtSolver::exact;
  return otdd_classwise_approx(cloud, proxy, s2.approx, opts).total;
}

} // namespace

void stage2_train_embedder(ModelBundle& bundle, const PipelineConfig& cfg,
                           RunRecord& record) {
  if (!cfg.has_proxy)
    throw std::invalid_argument("stage 2 requires a proxy dataset");
  const auto& s2 = cfg.stage2;
  LabeledDataset train = gen_target(cfg.task, "train");
  int64_t K = 0;
  std::vector<int64_t> labels = otdd_labels(train, &K);
  int64_t hidden = bundle.backbone->spec().hidden;
  FeatureCloud proxy = gen_proxy(cfg.proxy, bundle.backbone.get(), hidden);

  // Fixed evaluation subsample for epoch-boundary reporting.
  int64_t eval_n = std::min<int64_t>(256, train.size);
  Rng eval_rng(Rng::derive_seed(cfg.seed, "stage2-eval"));
  auto eval_idx = eval_rng.sample_without_replacement(train.size, eval_n);

  record.otdd_initial = report_otdd(bundle, train, eval_idx, proxy, s2);
  record.has_otdd_initial = true;

  AdamWConfig ocfg;
  ocfg.lr = s2.lr;
  AdamW opt(bundle.embedder->params(), ocfg); // stage 2 trains the embedder only

  SinkhornLossConfig loss_cfg;
  loss_cfg.eps_rel = s2.eps_rel;
  loss_cfg.subsample_size = s2.approx.subsample_size;
  loss_cfg.rounds = 1; // the minibatch is already a subsample
  Rng sub_rng(Rng::derive_seed(cfg.seed, "stage2-subsample"));

  for (int64_t epoch = 0; epoch < s2.epochs; ++epoch) {
    Rng shuffle_rng(
        Rng::derive_seed(cfg.seed, "stage2-shuffle-" + std::to_string(epoch)));
    auto order = shuffle_rng.permutation(train.size);
    for (int64_t start = 0; start < train.size; start += s2.batch) {
      int64_t b = std::min(s2.batch, train.size - start);
      if (b < 2) continue;
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + b);
      std::vector<int64_t> batch_labels;
      for (int64_t i : idx) batch_labels.push_back(labels[i]);
      Tensor h = bundle.embedder->forward(train.batch_features(idx));
      Tensor feats = mean_axis1(h);
      Tensor loss = otdd_entropic_loss(feats, batch_labels, proxy, loss_cfg, sub_rng);
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    record.stage2_otdd.push_back(report_otdd(bundle, train, eval_idx, proxy, s2));
  }
}

double evaluate_metric(const ModelBundle& bundle, const LabeledDataset& ds,
                       std::string* metric_name) {
  NoGradGuard ng;
  const auto& pspec = bundle.predictor->spec();
  constexpr int64_t kBatch = 64;
  std::vector<int64_t> pred_classes;
  std::vector<double> scores;
  std::vector<double> dense_pred;
  for (int64_t start = 0; start < ds.size; start += kBatch) {
    int64_t b = std::min(kBatch, ds.size - start);
    std::vector<int64_t> idx(static_cast<size_t>(b));
    std::iota(idx.begin(), idx.end(), start);
    Tensor h = bundle.backbone->forward(
        bundle.embedder->forward(ds.batch_features(idx)));
    Tensor out = bundle.predictor->forward(h);
    if (pspec.task_type == TaskType::point) {
      int64_t Kc = pspec.num_classes;
      for (int64_t i = 0; i < b; ++i) {
        const double* row = out.data().data() + i * Kc;
        pred_classes.push_back(
            std::max_element(row, row + Kc) - row);
      }
    } else if (pspec.task_type == TaskType::point_multilabel) {
      scores.insert(scores.end(), out.data().begin(), out.data().end());
    } else {
      dense_pred.insert(dense_pred.end(), out.data().begin(), out.data().end());
    }
  }
  MetricResult res;
  switch (pspec.task_type) {
    case TaskType::point:
      res = zero_one_error(pred_classes, ds.class_labels);
      break;
    case TaskType::point_multilabel:
      res = one_minus_auroc(scores, ds.multihot, ds.size, pspec.num_classes);
      break;
    case TaskType::dense:
      res = relative_l2(dense_pred, ds.dense_targets, ds.size);
      break;
  }
  if (metric_name) *metric_name = res.name;
  return res.value;
}

void stage3_finetune(ModelBundle& bundle, const PipelineConfig& cfg,
                     RunRecord& record) {
  const auto& s3 = cfg.stage3;
  for (Parameter* p : bundle.embedder->params()) p->frozen = cfg.freeze.embedder;
  for (Parameter* p : bundle.backbone->params()) p->frozen = cfg.freeze.backbone;
  for (Parameter* p : bundle.predictor->params()) p->frozen = false;

  LabeledDataset train = gen_target(cfg.task, "train");
  LabeledDataset val = gen_target(cfg.task, "val");
  LabeledDataset test = gen_target(cfg.task, "test");

  AdamWConfig ocfg;
  ocfg.lr = s3.lr;
  ocfg.weight_decay = s3.weight_decay;
  AdamW opt(bundle.all_params(), ocfg);

  const auto& pspec = bundle.predictor->spec();
  int64_t out_per = pspec.task_type == TaskType::dense
                        ? shape_numel(pspec.out_shape)
                        : pspec.num_classes;

  for (int64_t epoch = 0; epoch < s3.epochs; ++epoch) {
    Rng shuffle_rng(
        Rng::derive_seed(cfg.seed, "stage3-shuffle-" + std::to_string(epoch)));
    auto order = shuffle_rng.permutation(train.size);
    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < train.size; start += s3.batch) {
      int64_t b = std::min(s3.batch, train.size - start);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + b);
      Tensor h = bundle.backbone->forward(
          bundle.embedder->forward(train.batch_features(idx)), true, nullptr);
      Tensor out = bundle.predictor->forward(h);
      Tensor loss;
      if (pspec.task_type == TaskType::point) {
        std::vector<int64_t> yb;
        for (int64_t i : idx) yb.push_back(train.class_labels[i]);
        loss = softmax_ce(out, yb);
      } else if (pspec.task_type == TaskType::point_multilabel) {
        std::vector<double> tb;
        for (int64_t i : idx)
          tb.insert(tb.end(), train.multihot.begin() + i * out_per,
                    train.multihot.begin() + (i + 1) * out_per);
        loss = bce_multilabel(out, tb);
      } else {
        std::vector<double> tb;
        for (int64_t i : idx)
          tb.insert(tb.end(), train.dense_targets.begin() + i * out_per,
                    train.dense_targets.begin() + (i + 1) * out_per);
        Shape tshape{b};
        for (int64_t e : pspec.out_shape) tshape.push_back(e);
        loss = mse_loss(out, Tensor::from(tshape, std::move(tb)));
      }
      epoch_loss += loss.item();
      ++batches;
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    record.stage3_train_loss.push_back(epoch_loss / std::max<int64_t>(batches, 1));
    record.stage3_val_metric.push_back(
        evaluate_metric(bundle, val, &record.metric_name));
    record.stage3_test_metric.push_back(evaluate_metric(bundle, test, nullptr));
  }
}

RunRecord run_pipeline(const PipelineConfig& raw_cfg) {
  PipelineConfig cfg = raw_cfg.normalized();
  RunRecord record;
  record.config_echo = cfg.to_json();
  auto t0 = std::chrono::steady_clock::now();
  try {
    ModelBundle bundle = stage1_build(cfg);
    snapshot_checksums(bundle, "after_stage1", record);
    if (cfg.has_proxy && cfg.stage2.epochs > 0) {
      stage2_train_embedder(bundle, cfg, record);
    }
    snapshot_checksums(bundle, "after_stage2", record);
    stage3_finetune(bundle, cfg, record);
    snapshot_checksums(bundle, "after_stage3", record);
    record.complete = true;
  } catch (const std::exception& e) {
    record.complete = false;
    record.error = e.what();
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

} // namespace xmodal
