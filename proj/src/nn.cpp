#include "xmodal/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace xmodal {

std::string task_type_name(TaskType t) {
  switch (t) {
    case TaskType::point: return "point";
    case TaskType::point_multilabel: return "point_multilabel";
    case TaskType::dense: return "dense";
  }
  return "?";
}

TaskType task_type_from_name(const std::string& s) {
  if (s == "point") return TaskType::point;
  if (s == "point_multilabel") return TaskType::point_multilabel;
  if (s == "dense") return TaskType::dense;
  throw std::invalid_argument("unknown task type '" + s + "'");
}

void BackboneSpec::validate() const {
  if (hidden % heads != 0)
    throw std::invalid_argument("backbone hidden must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("backbone dropout must be in [0,1)");
}

namespace {

constexpr double kInitStd = 0.02;

Parameter make_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  return Parameter{name, std::move(t), false};
}

Tensor linear(const Tensor& x2d, const Parameter& w, const Parameter& b) {
  return add_broadcast0(matmul(x2d, w.tensor), b.tensor);
}

} // namespace

// ---- embedder ----

EmbedderSpec build_embedder_spec(const DatasetMeta& meta, int64_t embed_dim,
                                 int64_t target_seq_len_1d) {
  EmbedderSpec spec;
  spec.meta = meta;
  spec.embed_dim = embed_dim;
  if (meta.spatial_rank == 2) {
    if (meta.input_extents.size() != 2)
      throw std::invalid_argument("2D embedder needs two input extents");
    spec.kernel = 4;
    spec.stride = 4;
    spec.pad_after = 0;
    int64_t seq = 1;
    for (int64_t e : meta.input_extents) {
      if (e < spec.kernel)
        throw std::invalid_argument("input extent " + std::to_string(e) +
                                    " smaller than one kernel window");
      seq *= (e - spec.kernel) / spec.stride + 1;
    }
    spec.target_seq_len = seq;
  } else if (meta.spatial_rank == 1) {
    if (meta.input_extents.size() != 1)
      throw std::invalid_argument("1D embedder needs one input extent");
    int64_t len = meta.input_extents[0];
    if (len < 1) throw std::invalid_argument("empty 1D input");
    int64_t target = target_seq_len_1d;
    spec.kernel = (len + target - 1) / target; // ceil
    spec.stride = spec.kernel;
    spec.target_seq_len = target;
    spec.pad_after = spec.kernel * target - len;
  } else {
    throw std::invalid_argument("unsupported spatial rank " +
                                std::to_string(meta.spatial_rank));
  }
  // The kernel/stride rule must land exactly on the target length.
  int64_t padded = (meta.spatial_rank == 1)
                       ? meta.input_extents[0] + spec.pad_after
                       : 0;
  if (meta.spatial_rank == 1) {
    int64_t out = (padded - spec.kernel) / spec.stride + 1;
    if (out != spec.target_seq_len)
      throw std::logic_error("embedder kernel rule failed to hit target length");
  }
  return spec;
}

Embedder::Embedder(EmbedderSpec spec, Rng& rng) : spec_(std::move(spec)) {
  int64_t H = spec_.embed_dim;
  Shape wshape;
  if (spec_.meta.spatial_rank == 1)
    wshape = {H, spec_.meta.in_channels, spec_.kernel};
  else
    wshape = {H, spec_.meta.in_channels, spec_.kernel, spec_.kernel};
  conv_w_ = make_param("embedder.conv.weight", Tensor::randn(wshape, rng, kInitStd));
  conv_b_ = make_param("embedder.conv.bias", Tensor::zeros({H}));
  ln_gain_ = make_param("embedder.ln.gain", Tensor::full({H}, 1.0));
  ln_shift_ = make_param("embedder.ln.shift", Tensor::zeros({H}));
  pos_ = make_param("embedder.pos",
                    Tensor::randn({spec_.target_seq_len, H}, rng, kInitStd));
}

Tensor Embedder::forward(const Tensor& x) const {
  int64_t H = spec_.embed_dim;
  int64_t B = x.dim(0);
  Tensor c = conv(x, conv_w_.tensor, conv_b_.tensor, spec_.stride, 0,
                  spec_.pad_after);
  Tensor seq = reshape(c, {B, H, spec_.target_seq_len});
  Tensor bsh = permute(seq, {0, 2, 1}); // [B x S x H]
  Tensor normed = layer_norm(bsh, ln_gain_.tensor, ln_shift_.tensor, 1e-5);
  return add_broadcast0(normed, pos_.tensor);
}

std::vector<Parameter*> Embedder::params() {
  return {&conv_w_, &conv_b_, &ln_gain_, &ln_shift_, &pos_};
}
std::vector<const Parameter*> Embedder::params() const {
  return {&conv_w_, &conv_b_, &ln_gain_, &ln_shift_, &pos_};
}

// ---- backbone ----

Backbone::Backbone(BackboneSpec spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  int64_t H = spec_.hidden;
  tok_embed_ = make_param("backbone.tok_embed",
                          Tensor::randn({spec_.vocab, H}, rng, kInitStd));
  for (int64_t l = 0; l < spec_.layers; ++l) {
    std::string p = "backbone.layer" + std::to_string(l) + ".";
    Layer lay;
    lay.ln1_gain = make_param(p + "ln1.gain", Tensor::full({H}, 1.0));
    lay.ln1_shift = make_param(p + "ln1.shift", Tensor::zeros({H}));
    lay.wq = make_param(p + "attn.wq", Tensor::randn({H, H}, rng, kInitStd));
    lay.bq = make_param(p + "attn.bq", Tensor::zeros({H}));
    lay.wk = make_param(p + "attn.wk", Tensor::randn({H, H}, rng, kInitStd));
    lay.bk = make_param(p + "attn.bk", Tensor::zeros({H}));
    lay.wv = make_param(p + "attn.wv", Tensor::randn({H, H}, rng, kInitStd));
    lay.bv = make_param(p + "attn.bv", Tensor::zeros({H}));
    lay.wo = make_param(p + "attn.wo", Tensor::randn({H, H}, rng, kInitStd));
    lay.bo = make_param(p + "attn.bo", Tensor::zeros({H}));
    lay.ln2_gain = make_param(p + "ln2.gain", Tensor::full({H}, 1.0));
    lay.ln2_shift = make_param(p + "ln2.shift", Tensor::zeros({H}));
    lay.ffn_w1 = make_param(p + "ffn.w1",
                            Tensor::randn({H, H * spec_.ffn_mult}, rng, kInitStd));
    lay.ffn_b1 = make_param(p + "ffn.b1", Tensor::zeros({H * spec_.ffn_mult}));
    lay.ffn_w2 = make_param(p + "ffn.w2",
                            Tensor::randn({H * spec_.ffn_mult, H}, rng, kInitStd));
    lay.ffn_b2 = make_param(p + "ffn.b2", Tensor::zeros({H}));
    layers_.push_back(std::move(lay));
  }
  final_gain_ = make_param("backbone.final_ln.gain", Tensor::full({H}, 1.0));
  final_shift_ = make_param("backbone.final_ln.shift", Tensor::zeros({H}));
}

Tensor Backbone::attend(const Tensor& h, const Layer& l, bool want_probs,
                        Tensor* probs_out) const {
  int64_t B = h.dim(0), S = h.dim(1), H = h.dim(2);
  int64_t nh = spec_.heads, dh = H / nh;
  Tensor x = layer_norm(h, l.ln1_gain.tensor, l.ln1_shift.tensor, 1e-5);
  Tensor x2 = reshape(x, {B * S, H});
  auto split = [&](const Tensor& t) {
    // [B*S x H] -> [B*nh x S x dh]
    return reshape(permute(reshape(t, {B, S, nh, dh}), {0, 2, 1, 3}),
                   {B * nh, S, dh});
  };
  Tensor q = split(linear(x2, l.wq, l.bq));
  Tensor k = split(linear(x2, l.wk, l.bk));
  Tensor v = split(linear(x2, l.wv, l.bv));
  Tensor scores = scale(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
  Tensor probs = softmax_last(scores);
  if (want_probs && probs_out) *probs_out = probs;
  Tensor o = bmm(probs, v); // [B*nh x S x dh]
  Tensor merged = reshape(permute(reshape(o, {B, nh, S, dh}), {0, 2, 1, 3}),
                          {B * S, H});
  return reshape(linear(merged, l.wo, l.bo), {B, S, H});
}

Tensor Backbone::forward(const Tensor& h_in, bool training,
                         Rng* dropout_rng) const {
  if (h_in.rank() != 3 || h_in.dim(2) != spec_.hidden)
    throw std::invalid_argument("backbone expects [batch x seq x hidden=" +
                                std::to_string(spec_.hidden) + "], got " +
                                shape_str(h_in.shape()));
  if (h_in.dim(1) > spec_.max_seq)
    throw std::invalid_argument("sequence length " + std::to_string(h_in.dim(1)) +
                                " exceeds max_seq " + std::to_string(spec_.max_seq));
  bool drop = training && spec_.dropout > 0.0 && dropout_rng;
  Tensor h = h_in;
  for (const auto& l : layers_) {
    Tensor att = attend(h, l, false, nullptr);
    if (drop) att = dropout(att, spec_.dropout, *dropout_rng);
    h = add(h, att);
    int64_t B = h.dim(0), S = h.dim(1), H = h.dim(2);
    Tensor x = layer_norm(h, l.ln2_gain.tensor, l.ln2_shift.tensor, 1e-5);
    Tensor x2 = reshape(x, {B * S, H});
    Tensor f = linear(reshape(gelu(linear(x2, l.ffn_w1, l.ffn_b1)),
                              {B * S, spec_.ffn_mult * H}),
                      l.ffn_w2, l.ffn_b2);
    Tensor ffn = reshape(f, {B, S, H});
    if (drop) ffn = dropout(ffn, spec_.dropout, *dropout_rng);
    h = add(h, ffn);
  }
  return layer_norm(h, final_gain_.tensor, final_shift_.tensor, 1e-5);
}

Tensor Backbone::attention_probs(const Tensor& h_in, int64_t layer) const {
  NoGradGuard ng;
  Tensor h = h_in;
  for (int64_t l = 0; l < static_cast<int64_t>(layers_.size()); ++l) {
    Tensor probs;
    Tensor att = attend(h, layers_[l], l == layer, &probs);
    if (l == layer) return probs;
    h = add(h, att);
    int64_t B = h.dim(0), S = h.dim(1), H = h.dim(2);
    Tensor x = layer_norm(h, layers_[l].ln2_gain.tensor,
                          layers_[l].ln2_shift.tensor, 1e-5);
    Tensor x2 = reshape(x, {B * S, H});
    Tensor f = linear(reshape(gelu(linear(x2, layers_[l].ffn_w1, layers_[l].ffn_b1)),
                              {B * S, spec_.ffn_mult * H}),
                      layers_[l].ffn_w2, layers_[l].ffn_b2);
    h = add(h, reshape(f, {B, S, H}));
  }
  throw std::invalid_argument("attention_probs: layer index out of range");
}

std::vector<Parameter*> Backbone::params() {
  std::vector<Parameter*> out{&tok_embed_};
  for (auto& l : layers_) {
    for (Parameter* p : {&l.ln1_gain, &l.ln1_shift, &l.wq, &l.bq, &l.wk, &l.bk,
                         &l.wv, &l.bv, &l.wo, &l.bo, &l.ln2_gain, &l.ln2_shift,
                         &l.ffn_w1, &l.ffn_b1, &l.ffn_w2, &l.ffn_b2})
      out.push_back(p);
  }
  out.push_back(&final_gain_);
  out.push_back(&final_shift_);
  return out;
}
std::vector<const Parameter*> Backbone::params() const {
  auto mut = const_cast<Backbone*>(this)->params();
  return {mut.begin(), mut.end()};
}

// ---- predictor ----

PredictorSpec build_predictor_spec(TaskType task_type, int64_t num_classes,
                                   const std::vector<int64_t>& out_shape,
                                   int64_t hidden, int64_t seq_len) {
  PredictorSpec spec;
  spec.task_type = task_type;
  spec.in_dim = hidden;
  spec.seq_len = seq_len;
  if (task_type == TaskType::dense) {
    spec.out_shape = out_shape;
    int64_t total = shape_numel(out_shape);
    if (total % seq_len != 0)
      throw std::invalid_argument(
          "dense predictor: output size " + std::to_string(total) +
          " not divisible by sequence length " + std::to_string(seq_len));
    spec.token_width = total / seq_len;
  } else {
    if (num_classes < 1)
      throw std::invalid_argument("point predictor needs num_classes >= 1");
    spec.num_classes = num_classes;
  }
  return spec;
}

Predictor::Predictor(PredictorSpec spec, Rng& rng) : spec_(std::move(spec)) {
  int64_t out = spec_.task_type == TaskType::dense ? spec_.token_width
                                                   : spec_.num_classes;
  w_ = make_param("predictor.w", Tensor::randn({spec_.in_dim, out}, rng, kInitStd));
  b_ = make_param("predictor.b", Tensor::zeros({out}));
}

Tensor Predictor::forward(const Tensor& h) const {
  int64_t B = h.dim(0), S = h.dim(1), H = h.dim(2);
  if (spec_.task_type == TaskType::dense) {
    Tensor t = linear(reshape(h, {B * S, H}), w_, b_);
    Shape out_shape{B};
    for (int64_t e : spec_.out_shape) out_shape.push_back(e);
    return reshape(t, out_shape);
  }
  Tensor pooled = mean_axis1(h); // [B x H]
  return linear(pooled, w_, b_);
}

std::vector<Parameter*> Predictor::params() { return {&w_, &b_}; }
std::vector<const Parameter*> Predictor::params() const { return {&w_, &b_}; }

// ---- masked-token pretraining ----

namespace {

struct MlmBatch {
  std::vector<int64_t> ids;    // masked inputs
  std::vector<int64_t> labels; // -1 except masked positions
  int64_t masked = 0;
};

MlmBatch make_mlm_batch(const std::vector<int32_t>& stream, int64_t& cursor,
                        int64_t batch, int64_t seq_len, int64_t mask_id,
                        double mask_rate, Rng& rng) {
  MlmBatch out;
  int64_t n = batch * seq_len;
  out.ids.resize(static_cast<size_t>(n));
  out.labels.assign(static_cast<size_t>(n), -1);
  for (int64_t i = 0; i < n; ++i) {
    int64_t tok = stream[cursor % static_cast<int64_t>(stream.size())];
    ++cursor;
    if (rng.uniform() < mask_rate) {
      out.ids[i] = mask_id;
      out.labels[i] = tok;
      ++out.masked;
    } else {
      out.ids[i] = tok;
    }
  }
  return out;
}

} // namespace

MlmResult pretrain_mlm(Backbone& backbone, const std::vector<int32_t>& corpus,
                       const std::vector<int32_t>& heldout, int64_t token_budget,
                       const MlmConfig& cfg) {
  if (token_budget < 0)
    throw std::invalid_argument("pretrain_mlm: negative token budget");
  int64_t H = backbone.spec().hidden;
  int64_t V = backbone.spec().vocab;
  int64_t mask_id = V - 1;
  if (cfg.seq_len > backbone.spec().max_seq)
    throw std::invalid_argument("pretrain_mlm: seq_len exceeds max_seq");

  Rng init_rng(Rng::derive_seed(cfg.seed, "mlm-head"));
  Parameter pos = make_param("mlm.pos",
                             Tensor::randn({cfg.seq_len, H}, init_rng, kInitStd));
  Parameter out_w = make_param("mlm.out_w", Tensor::randn({H, V}, init_rng, kInitStd));
  Parameter out_b = make_param("mlm.out_b", Tensor::zeros({V}));

  auto forward = [&](const MlmBatch& batch, bool training, Rng* drop) {
    Tensor emb = embedding(backbone.token_embedding(), batch.ids);
    Tensor h = add_broadcast0(reshape(emb, {cfg.batch, cfg.seq_len, H}),
                              pos.tensor);
    Tensor enc = backbone.forward(h, training, drop);
    Tensor logits = linear(reshape(enc, {cfg.batch * cfg.seq_len, H}), out_w, out_b);
    return softmax_ce(logits, batch.labels);
  };

  MlmResult res;
  if (token_budget > 0) {
    if (corpus.empty())
      throw std::invalid_argument("pretrain_mlm: empty corpus with nonzero budget");
    std::vector<Parameter*> params = backbone.params();
    params.push_back(&pos);
    params.push_back(&out_w);
    params.push_back(&out_b);
    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    AdamW opt(params, ocfg);
    Rng mask_rng(Rng::derive_seed(cfg.seed, "mlm-mask"));
    Rng drop_rng(Rng::derive_seed(cfg.seed, "mlm-drop"));
    int64_t cursor = 0;
    while (res.tokens_seen < token_budget) {
      auto batch = make_mlm_batch(corpus, cursor, cfg.batch, cfg.seq_len,
                                  mask_id, cfg.mask_rate, mask_rng);
      res.tokens_seen += cfg.batch * cfg.seq_len;
      res.masked_positions += batch.masked;
      res.total_positions += cfg.batch * cfg.seq_len;
      if (batch.masked == 0) continue;
      Tensor loss = forward(batch, true, &drop_rng);
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }

  // Held-out evaluation with a fixed masking stream.
  if (!heldout.empty()) {
    NoGradGuard ng;
    Rng eval_rng(Rng::derive_seed(cfg.seed, "mlm-eval"));
    int64_t cursor = 0;
    double acc = 0.0;
    int64_t batches = 0;
    int64_t avail = static_cast<int64_t>(heldout.size()) /
                    (cfg.batch * cfg.seq_len);
    int64_t n_eval = std::min<int64_t>(std::max<int64_t>(avail, 1), 16);
    for (int64_t e = 0; e < n_eval; ++e) {
      auto batch = make_mlm_batch(heldout, cursor, cfg.batch, cfg.seq_len,
                                  mask_id, cfg.mask_rate, eval_rng);
      if (batch.masked == 0) continue;
      acc += forward(batch, false, nullptr).item();
      ++batches;
    }
    res.heldout_loss = batches > 0 ? acc / batches : 0.0;
  }
  return res;
}

// ---- checkpoints ----

nlohmann::json backbone_spec_to_json(const BackboneSpec& s) {
  return {{"layers", s.layers},     {"heads", s.heads},
          {"hidden", s.hidden},     {"ffn_mult", s.ffn_mult},
          {"max_seq", s.max_seq},   {"vocab", s.vocab},
          {"dropout", s.dropout}};
}

BackboneSpec backbone_spec_from_json(const nlohmann::json& j) {
  BackboneSpec s;
  s.layers = j.value("layers", s.layers);
  s.heads = j.value("heads", s.heads);
  s.hidden = j.value("hidden", s.hidden);
  s.ffn_mult = j.value("ffn_mult", s.ffn_mult);
  s.max_seq = j.value("max_seq", s.max_seq);
  s.vocab = j.value("vocab", s.vocab);
  s.dropout = j.value("dropout", s.dropout);
  return s;
}

void save_backbone_checkpoint(const std::string& path, const Backbone& backbone,
                              int64_t token_budget) {
  std::vector<ArchiveEntry> entries;
  for (const Parameter* p : backbone.params())
    entries.push_back(entry_from_tensor(p->name, p->tensor));
  nlohmann::json header;
  header["kind"] = "backbone-checkpoint";
  header["spec"] = backbone_spec_to_json(backbone.spec());
  header["token_budget"] = token_budget;
  write_tensor_archive(path, entries, header);
}

std::unique_ptr<Backbone> load_backbone_checkpoint(const std::string& path,
                                                   int64_t* token_budget) {
  Archive ar = read_tensor_archive(path);
  BackboneSpec spec = backbone_spec_from_json(ar.header.at("spec"));
  if (token_budget) *token_budget = ar.header.at("token_budget").get<int64_t>();
  Rng rng(0);
  auto backbone = std::make_unique<Backbone>(spec, rng);
  for (Parameter* p : backbone->params()) {
    const ArchiveEntry& e = ar.at(p->name);
    if (e.shape != p->tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name +
                               "' (incompatible hidden size?)");
    p->tensor.data() = e.f64;
  }
  return backbone;
}

} // namespace xmodal
