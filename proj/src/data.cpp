#include "xmodal/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xmodal {

nlohmann::json TaskSpec::to_json() const {
  return {{"name", name},
          {"family", family},
          {"spatial_rank", spatial_rank},
          {"in_channels", in_channels},
          {"input_extents", input_extents},
          {"task_type", task_type_name(task_type)},
          {"num_classes", num_classes},
          {"out_shape", out_shape},
          {"train_size", train_size},
          {"val_size", val_size},
          {"test_size", test_size},
          {"seed", seed},
          {"noise", noise},
          {"class_separation", class_separation}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  // missing keys fall back to the family defaults, so hand-written partial
  // configs work
  TaskSpec s = family_default(j.value("family", std::string("point1d")));
  s.name = j.value("name", s.name);
  s.spatial_rank = j.value("spatial_rank", s.spatial_rank);
  s.in_channels = j.value("in_channels", s.in_channels);
  s.input_extents = j.value("input_extents", s.input_extents);
  if (j.contains("task_type"))
    s.task_type = task_type_from_name(j.at("task_type").get<std::string>());
  s.num_classes = j.value("num_classes", s.num_classes);
  s.out_shape = j.value("out_shape", s.out_shape);
  s.train_size = j.value("train_size", s.train_size);
  s.val_size = j.value("val_size", s.val_size);
  s.test_size = j.value("test_size", s.test_size);
  s.seed = j.value("seed", s.seed);
  s.noise = j.value("noise", s.noise);
  s.class_separation = j.value("class_separation", s.class_separation);
  return s;
}

TaskSpec TaskSpec::family_default(const std::string& family) {
  TaskSpec s;
  s.family = family;
  s.name = family;
  if (family == "point1d") {
    s.spatial_rank = 1;
    s.in_channels = 1;
    s.input_extents = {96};
    s.task_type = TaskType::point;
    s.num_classes = 4;
    s.noise = 0.05;
  } else if (family == "point2d") {
    s.spatial_rank = 2;
    s.in_channels = 3;
    s.input_extents = {32, 32};
    s.task_type = TaskType::point;
    s.num_classes = 6;
    s.noise = 0.1;
  } else if (family == "dense2d") {
    s.spatial_rank = 2;
    s.in_channels = 1;
    s.input_extents = {32, 32};
    s.task_type = TaskType::dense;
    s.num_classes = 0;
    s.out_shape = {32, 32};
    s.noise = 0.02;
  } else if (family == "multilabel1d") {
    s.spatial_rank = 1;
    s.in_channels = 4;
    s.input_extents = {96};
    s.task_type = TaskType::point_multilabel;
    s.num_classes = 6;
    s.noise = 0.0;
  } else {
    throw std::invalid_argument("unknown task family '" + family + "'");
  }
  return s;
}

Tensor LabeledDataset::batch_features(const std::vector<int64_t>& idx) const {
  int64_t per = sample_numel();
  Shape shape{static_cast<int64_t>(idx.size())};
  for (int64_t e : sample_shape) shape.push_back(e);
  std::vector<double> buf(idx.size() * static_cast<size_t>(per));
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(features.begin() + idx[i] * per, per, buf.begin() + i * per);
  return Tensor::from(shape, std::move(buf));
}

namespace {

int64_t split_size(const TaskSpec& spec, const std::string& split) {
  if (split == "train") return spec.train_size;
  if (split == "val") return spec.val_size;
  if (split == "test") return spec.test_size;
  throw std::invalid_argument("unknown split '" + split + "'");
}

void gen_point2d(const TaskSpec& spec, Rng& rng, LabeledDataset& ds) {
  int64_t h = spec.input_extents[0], w = spec.input_extents[1];
  int64_t cin = spec.in_channels;
  double sep = spec.class_separation;
  for (int64_t i = 0; i < ds.size; ++i) {
    int64_t k = i % spec.num_classes;
    ds.class_labels.push_back(k);
    double theta = M_PI * static_cast<double>(k) / spec.num_classes;
    double freq = 3.0 + (k % 3);
    double phase = rng.uniform() * 2.0 * M_PI;
    double* img = ds.features.data() + i * cin * h * w;
    for (int64_t c = 0; c < cin; ++c) {
      double cs = 1.0 - 0.2 * c;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          double u = (x * std::cos(theta) + y * std::sin(theta)) / w;
          double env = std::exp(-(std::pow((y - h / 2.0) / (h / 2.0), 2) +
                                  std::pow((x - w / 2.0) / (w / 2.0), 2)));
          double v = sep * cs * env * std::cos(2.0 * M_PI * freq * u + phase);
          img[(c * h + y) * w + x] = v + spec.noise * rng.normal();
        }
      }
    }
  }
}

void gen_dense2d(const TaskSpec& spec, Rng& rng, LabeledDataset& ds) {
  int64_t h = spec.input_extents[0], w = spec.input_extents[1];
  int64_t out_n = shape_numel(spec.out_shape);
  for (int64_t i = 0; i < ds.size; ++i) {
    // Low-frequency fourier mix.
    std::vector<double> field(static_cast<size_t>(h * w), 0.0);
    for (int64_t kx = 0; kx <= 3; ++kx) {
      for (int64_t ky = 0; ky <= 3; ++ky) {
        if (kx == 0 && ky == 0) continue;
        double amp = 1.0 / (1.0 + kx * kx + ky * ky);
        double a = amp * rng.normal();
        double b = amp * rng.normal();
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) {
            double ph = 2.0 * M_PI * (kx * x / double(w) + ky * y / double(h));
            field[y * w + x] += a * std::cos(ph) + b * std::sin(ph);
          }
      }
    }
    double* in = ds.features.data() + i * h * w;
    for (int64_t t = 0; t < h * w; ++t)
      in[t] = field[t] + spec.noise * rng.normal();
    // Target: 3x3 box blur of the clean field, saturated.
    double* tgt = ds.dense_targets.data() + i * out_n;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int64_t yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += field[yy * w + xx];
            ++cnt;
          }
        tgt[y * w + x] = std::tanh(3.0 * acc / cnt);
      }
    }
  }
}

void gen_point1d(const TaskSpec& spec, Rng& rng, LabeledDataset& ds) {
  int64_t len = spec.input_extents[0];
  double sep = spec.class_separation;
  for (int64_t i = 0; i < ds.size; ++i) {
    int64_t k = i % spec.num_classes;
    ds.class_labels.push_back(k);
    double f = 3.0 + 2.0 * k; // distinct base frequency per class
    double p1 = rng.uniform() * 2.0 * M_PI;
    double p2 = rng.uniform() * 2.0 * M_PI;
    double* x = ds.features.data() + i * len;
    for (int64_t t = 0; t < len; ++t) {
      double u = 2.0 * M_PI * t / double(len);
      x[t] = sep * (std::sin(f * u + p1) + 0.5 * std::sin(2.0 * f * u + p2)) +
             spec.noise * rng.normal();
    }
  }
}

void gen_multilabel1d(const TaskSpec& spec, Rng& rng, LabeledDataset& ds) {
  int64_t len = spec.input_extents[0];
  int64_t L = spec.num_classes;
  constexpr int64_t kMotifLen = 5;
  // Motifs are a property of the task, not of the split.
  Rng motif_rng(Rng::derive_seed(spec.seed, spec.name + ":motifs"));
  std::vector<std::vector<int64_t>> motifs(static_cast<size_t>(L));
  for (auto& m : motifs)
    for (int64_t t = 0; t < kMotifLen; ++t) m.push_back(motif_rng.uniform_int(4));

  for (int64_t i = 0; i < ds.size; ++i) {
    std::vector<int64_t> sym(static_cast<size_t>(len));
    for (auto& s : sym) s = rng.uniform_int(4);
    double* hot = ds.multihot.data() + i * L;
    for (int64_t l = 0; l < L; ++l) {
      bool present = rng.uniform() < 0.5;
      hot[l] = present ? 1.0 : 0.0;
      if (present) {
        int64_t pos = rng.uniform_int(len - kMotifLen + 1);
        for (int64_t t = 0; t < kMotifLen; ++t) sym[pos + t] = motifs[l][t];
      }
    }
    double* x = ds.features.data() + i * 4 * len;
    for (int64_t t = 0; t < len; ++t) x[sym[t] * len + t] = 1.0;
  }
}

} // namespace

LabeledDataset gen_target(const TaskSpec& spec, const std::string& split) {
  LabeledDataset ds;
  ds.spec = spec;
  ds.split = split;
  ds.size = split_size(spec, split);
  ds.sample_shape = {spec.in_channels};
  for (int64_t e : spec.input_extents) ds.sample_shape.push_back(e);
  ds.features.assign(static_cast<size_t>(ds.size * ds.sample_numel()), 0.0);
  if (spec.task_type == TaskType::dense)
    ds.dense_targets.assign(
        static_cast<size_t>(ds.size * shape_numel(spec.out_shape)), 0.0);
  if (spec.task_type == TaskType::point_multilabel)
    ds.multihot.assign(static_cast<size_t>(ds.size * spec.num_classes), 0.0);

  Rng rng(Rng::derive_seed(spec.seed, spec.name + ":" + split));
  if (spec.family == "point2d") gen_point2d(spec, rng, ds);
  else if (spec.family == "dense2d") gen_dense2d(spec, rng, ds);
  else if (spec.family == "point1d") gen_point1d(spec, rng, ds);
  else if (spec.family == "multilabel1d") gen_multilabel1d(spec, rng, ds);
  else throw std::invalid_argument("unknown task family '" + spec.family + "'");
  return ds;
}

std::vector<int64_t> infer_dense_classes(const LabeledDataset& ds,
                                         int64_t num_buckets) {
  int64_t per = shape_numel(ds.spec.out_shape);
  std::vector<double> means(static_cast<size_t>(ds.size));
  for (int64_t i = 0; i < ds.size; ++i) {
    double acc = 0.0;
    for (int64_t t = 0; t < per; ++t) acc += ds.dense_targets[i * per + t];
    means[i] = acc / per;
  }
  std::vector<int64_t> order(static_cast<size_t>(ds.size));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return means[a] < means[b]; });
  std::vector<int64_t> labels(static_cast<size_t>(ds.size));
  for (int64_t rank = 0; rank < ds.size; ++rank)
    labels[order[rank]] = rank * num_buckets / ds.size;
  return labels;
}

std::vector<int64_t> otdd_labels(const LabeledDataset& ds, int64_t* num_classes) {
  switch (ds.spec.task_type) {
    case TaskType::point:
      if (num_classes) *num_classes = ds.spec.num_classes;
      return ds.class_labels;
    case TaskType::dense: {
      if (num_classes) *num_classes = std::min<int64_t>(10, ds.size);
      return infer_dense_classes(ds, std::min<int64_t>(10, ds.size));
    }
    case TaskType::point_multilabel: {
      // First present label, or an extra "none" class.
      int64_t L = ds.spec.num_classes;
      if (num_classes) *num_classes = L + 1;
      std::vector<int64_t> labels(static_cast<size_t>(ds.size), L);
      for (int64_t i = 0; i < ds.size; ++i)
        for (int64_t l = 0; l < L; ++l)
          if (ds.multihot[i * L + l] > 0.5) {
            labels[i] = l;
            break;
          }
      return labels;
    }
  }
  throw std::logic_error("unreachable");
}

double oracle_fourier_error(const LabeledDataset& train,
                            const LabeledDataset& eval) {
  int64_t len = train.spec.input_extents[0];
  int64_t nf = len / 2 + 1;
  auto magnitudes = [&](const LabeledDataset& ds, int64_t i) {
    std::vector<double> mag(static_cast<size_t>(nf));
    const double* x = ds.features.data() + i * ds.sample_numel(); // channel 0
    for (int64_t f = 0; f < nf; ++f) {
      double re = 0.0, im = 0.0;
      for (int64_t t = 0; t < len; ++t) {
        double ph = 2.0 * M_PI * f * t / double(len);
        re += x[t] * std::cos(ph);
        im -= x[t] * std::sin(ph);
      }
      mag[f] = std::sqrt(re * re + im * im);
    }
    return mag;
  };
  int64_t K = train.spec.num_classes;
  std::vector<std::vector<double>> centroid(static_cast<size_t>(K),
                                            std::vector<double>(nf, 0.0));
  std::vector<int64_t> count(static_cast<size_t>(K), 0);
  for (int64_t i = 0; i < train.size; ++i) {
    auto mag = magnitudes(train, i);
    int64_t k = train.class_labels[i];
    for (int64_t f = 0; f < nf; ++f) centroid[k][f] += mag[f];
    ++count[k];
  }
  for (int64_t k = 0; k < K; ++k)
    for (int64_t f = 0; f < nf; ++f) centroid[k][f] /= std::max<int64_t>(count[k], 1);
  int64_t wrong = 0;
  for (int64_t i = 0; i < eval.size; ++i) {
    auto mag = magnitudes(eval, i);
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < K; ++k) {
      double d = 0.0;
      for (int64_t f = 0; f < nf; ++f) {
        double diff = mag[f] - centroid[k][f];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best != eval.class_labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / eval.size;
}

// ---- proxies ----

std::string proxy_kind_name(ProxyKind k) {
  switch (k) {
    case ProxyKind::structured: return "structured";
    case ProxyKind::fake_noise: return "fake_noise";
    case ProxyKind::fake_features: return "fake_features";
  }
  return "?";
}

ProxyKind proxy_kind_from_name(const std::string& s) {
  if (s == "structured") return ProxyKind::structured;
  if (s == "fake_noise") return ProxyKind::fake_noise;
  if (s == "fake_features") return ProxyKind::fake_features;
  throw std::invalid_argument("unknown proxy kind '" + s + "'");
}

nlohmann::json ProxySpec::to_json() const {
  return {{"kind", proxy_kind_name(kind)},
          {"num_classes", num_classes},
          {"sample_count", sample_count},
          {"seed", seed}};
}

ProxySpec ProxySpec::from_json(const nlohmann::json& j) {
  ProxySpec s;
  if (j.contains("kind"))
    s.kind = proxy_kind_from_name(j.at("kind").get<std::string>());
  s.num_classes = j.value("num_classes", s.num_classes);
  s.sample_count = j.value("sample_count", s.sample_count);
  s.seed = j.value("seed", s.seed);
  return s;
}

namespace {

// Zipf sampler over content token ids [3, vocab-2].
struct ZipfTable {
  std::vector<double> cdf;
  int64_t base = 3;

  ZipfTable(int64_t vocab, double exp) {
    int64_t n = vocab - 4; // excludes pad, brackets, mask
    if (n < 12) throw std::invalid_argument("corpus vocab must be >= 16");
    cdf.resize(static_cast<size_t>(n));
    double acc = 0.0;
    for (int64_t r = 0; r < n; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -exp);
      cdf[r] = acc;
    }
    for (auto& v : cdf) v /= acc;
  }

  int64_t sample(Rng& rng) const {
    double u = rng.uniform();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return base + static_cast<int64_t>(it - cdf.begin());
  }
};

} // namespace

std::vector<int32_t> gen_pretrain_corpus(int64_t vocab, int64_t token_budget,
                                         uint64_t seed, double zipf_exp) {
  if (vocab < 16) throw std::invalid_argument("corpus vocab must be >= 16");
  std::vector<int32_t> out;
  if (token_budget <= 0) return out;
  out.reserve(static_cast<size_t>(token_budget));
  ZipfTable zipf(vocab, zipf_exp);
  Rng rng(Rng::derive_seed(seed, "corpus"));
  constexpr int32_t kOpen = 1, kClose = 2;
  constexpr int64_t kBracketGap = 4;
  int64_t pending_close = -1;
  int32_t prev = -1;
  for (int64_t t = 0; t < token_budget; ++t) {
    int32_t tok;
    if (t == pending_close) {
      tok = kClose; // matched bracket, fixed distance after the open
      pending_close = -1;
    } else if (pending_close < 0 && rng.uniform() < 0.01) {
      tok = kOpen;
      pending_close = t + kBracketGap;
    } else if (prev >= 3 && rng.uniform() < 0.3) {
      tok = prev; // repetition keeps the zipf marginal, lowers bigram entropy
    } else {
      tok = static_cast<int32_t>(zipf.sample(rng));
    }
    out.push_back(tok);
    prev = tok;
  }
  return out;
}

FeatureCloud gen_proxy(const ProxySpec& spec, const Backbone* backbone,
                       int64_t hidden) {
  FeatureCloud cloud;
  cloud.num_classes = spec.num_classes;
  cloud.n = spec.sample_count;
  cloud.d = hidden;
  if (spec.sample_count < spec.num_classes)
    throw std::invalid_argument("proxy sample_count must be >= num_classes");
  cloud.features.assign(static_cast<size_t>(cloud.n * cloud.d), 0.0);
  cloud.labels.resize(static_cast<size_t>(cloud.n));
  Rng rng(Rng::derive_seed(spec.seed, "proxy:" + proxy_kind_name(spec.kind)));

  switch (spec.kind) {
    case ProxyKind::fake_features: {
      for (auto& v : cloud.features) v = rng.normal();
      for (auto& y : cloud.labels) y = rng.uniform_int(spec.num_classes);
      break;
    }
    case ProxyKind::structured: {
      if (!backbone)
        throw std::invalid_argument("structured proxy needs a backbone");
      int64_t vocab = backbone->spec().vocab;
      if (backbone->spec().hidden != hidden)
        throw std::invalid_argument("structured proxy: hidden size mismatch");
      ZipfTable zipf(vocab, 1.1);
      int64_t band = (vocab - 4) / spec.num_classes;
      const auto& table = backbone->token_embedding().data();
      constexpr int64_t kSeqLen = 16;
      for (int64_t i = 0; i < cloud.n; ++i) {
        int64_t label = i % spec.num_classes;
        cloud.labels[i] = label;
        double* f = cloud.features.data() + i * hidden;
        for (int64_t t = 0; t < kSeqLen; ++t) {
          int64_t tok;
          if (rng.uniform() < 0.5) {
            tok = 3 + label * band + rng.uniform_int(std::max<int64_t>(band, 1));
          } else {
            tok = zipf.sample(rng);
          }
          const double* row = table.data() + tok * hidden;
          for (int64_t j = 0; j < hidden; ++j) f[j] += row[j] / kSeqLen;
        }
      }
      break;
    }
    case ProxyKind::fake_noise: {
      DatasetMeta meta{3, 2, {32, 32}};
      Rng erng(Rng::derive_seed(spec.seed, "proxy:fake_noise:embedder"));
      Embedder embedder(build_embedder_spec(meta, hidden), erng);
      NoGradGuard ng;
      constexpr int64_t kBatch = 32;
      int64_t per = 3 * 32 * 32;
      for (int64_t start = 0; start < cloud.n; start += kBatch) {
        int64_t b = std::min<int64_t>(kBatch, cloud.n - start);
        std::vector<double> buf(static_cast<size_t>(b * per));
        for (auto& v : buf) v = rng.normal();
        Tensor x = Tensor::from({b, 3, 32, 32}, std::move(buf));
        Tensor feats = mean_axis1(embedder.forward(x)); // [b x hidden]
        std::copy(feats.data().begin(), feats.data().end(),
                  cloud.features.begin() + start * hidden);
      }
      for (auto& y : cloud.labels) y = rng.uniform_int(spec.num_classes);
      break;
    }
  }
  cloud.validate();
  return cloud;
}

// ---- archives ----

void save_dataset(const std::string& path, const LabeledDataset& ds) {
  std::vector<ArchiveEntry> entries;
  ArchiveEntry feat;
  feat.name = "features";
  feat.dtype = "f64";
  feat.shape = Shape{ds.size};
  for (int64_t e : ds.sample_shape) feat.shape.push_back(e);
  feat.f64 = ds.features;
  entries.push_back(std::move(feat));
  if (!ds.class_labels.empty()) {
    ArchiveEntry e;
    e.name = "class_labels";
    e.dtype = "f64";
    e.shape = {ds.size};
    for (int64_t y : ds.class_labels) e.f64.push_back(static_cast<double>(y));
    entries.push_back(std::move(e));
  }
  if (!ds.multihot.empty()) {
    ArchiveEntry e;
    e.name = "multihot";
    e.dtype = "f64";
    e.shape = {ds.size, ds.spec.num_classes};
    e.f64 = ds.multihot;
    entries.push_back(std::move(e));
  }
  if (!ds.dense_targets.empty()) {
    ArchiveEntry e;
    e.name = "dense_targets";
    e.dtype = "f64";
    e.shape = Shape{ds.size};
    for (int64_t x : ds.spec.out_shape) e.shape.push_back(x);
    e.f64 = ds.dense_targets;
    entries.push_back(std::move(e));
  }
  nlohmann::json header;
  header["kind"] = "dataset";
  header["task"] = ds.spec.to_json();
  header["split"] = ds.split;
  write_tensor_archive(path, entries, header);
}

LabeledDataset load_dataset(const std::string& path) {
  Archive ar = read_tensor_archive(path);
  if (ar.header.value("kind", "") != "dataset")
    throw std::runtime_error("'" + path + "' is not a dataset archive");
  LabeledDataset ds;
  ds.spec = TaskSpec::from_json(ar.header.at("task"));
  ds.split = ar.header.at("split").get<std::string>();
  const auto& feat = ar.at("features");
  ds.size = feat.shape[0];
  ds.sample_shape.assign(feat.shape.begin() + 1, feat.shape.end());
  ds.features = feat.f64;
  if (const auto* e = ar.find("class_labels")) {
    for (double v : e->f64)
      ds.class_labels.push_back(static_cast<int64_t>(std::llround(v)));
  }
  if (const auto* e = ar.find("multihot")) ds.multihot = e->f64;
  if (const auto* e = ar.find("dense_targets")) ds.dense_targets = e->f64;
  return ds;
}

void save_feature_cloud(const std::string& path, const FeatureCloud& cloud,
                        const nlohmann::json& header_extra) {
  std::vector<ArchiveEntry> entries;
  ArchiveEntry feat;
  feat.name = "features";
  feat.dtype = "f64";
  feat.shape = {cloud.n, cloud.d};
  feat.f64 = cloud.features;
  entries.push_back(std::move(feat));
  ArchiveEntry lab;
  lab.name = "labels";
  lab.dtype = "f64";
  lab.shape = {cloud.n};
  for (int64_t y : cloud.labels) lab.f64.push_back(static_cast<double>(y));
  entries.push_back(std::move(lab));
  nlohmann::json header = header_extra.is_null() ? nlohmann::json::object()
                                                 : header_extra;
  header["kind"] = "feature-cloud";
  header["num_classes"] = cloud.num_classes;
  write_tensor_archive(path, entries, header);
}

FeatureCloud load_feature_cloud(const std::string& path) {
  Archive ar = read_tensor_archive(path);
  if (ar.header.value("kind", "") != "feature-cloud")
    throw std::runtime_error("'" + path + "' is not a feature-cloud archive");
  FeatureCloud cloud;
  const auto& feat = ar.at("features");
  cloud.n = feat.shape[0];
  cloud.d = feat.shape[1];
  cloud.features = feat.f64;
  for (double v : ar.at("labels").f64)
    cloud.labels.push_back(static_cast<int64_t>(std::llround(v)));
  cloud.num_classes = ar.header.at("num_classes").get<int64_t>();
  cloud.validate();
  return cloud;
}

FeatureCloud embed_dataset(const LabeledDataset& ds, const Embedder& embedder,
                           int64_t batch) {
  NoGradGuard ng;
  FeatureCloud cloud;
  cloud.n = ds.size;
  cloud.d = embedder.spec().embed_dim;
  cloud.labels = otdd_labels(ds, &cloud.num_classes);
  cloud.features.resize(static_cast<size_t>(cloud.n * cloud.d));
  for (int64_t start = 0; start < ds.size; start += batch) {
    int64_t b = std::min(batch, ds.size - start);
    std::vector<int64_t> idx(static_cast<size_t>(b));
    std::iota(idx.begin(), idx.end(), start);
    Tensor feats = mean_axis1(embedder.forward(ds.batch_features(idx)));
    std::copy(feats.data().begin(), feats.data().end(),
              cloud.features.begin() + start * cloud.d);
  }
  cloud.validate();
  return cloud;
}

} // namespace xmodal
