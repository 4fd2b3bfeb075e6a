#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "xmodal/data.hpp"

#include "test_util.hpp"

using namespace xmodal;

TEST_CASE("gen_target determinism and split disjointness") {
  TaskSpec spec = TaskSpec::family_default("point1d");
  spec.train_size = 32;
  spec.val_size = 16;
  spec.test_size = 16;
  LabeledDataset a = gen_target(spec, "train");
  LabeledDataset b = gen_target(spec, "train");
  CHECK(a.features == b.features); // bit-identical
  CHECK(a.class_labels == b.class_labels);

  LabeledDataset v = gen_target(spec, "val");
  CHECK(a.features != v.features);
}

TEST_CASE("labels balanced within one sample, ranges respected") {
  for (const char* fam : {"point1d", "point2d"}) {
    TaskSpec spec = TaskSpec::family_default(fam);
    spec.train_size = 50;
    LabeledDataset ds = gen_target(spec, "train");
    std::map<int64_t, int64_t> counts;
    for (int64_t y : ds.class_labels) {
      CHECK(y >= 0);
      CHECK(y < spec.num_classes);
      ++counts[y];
    }
    int64_t lo = ds.size, hi = 0;
    for (auto& [k, c] : counts) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    CHECK(hi - lo <= 1);
  }

  TaskSpec ml = TaskSpec::family_default("multilabel1d");
  ml.train_size = 40;
  LabeledDataset ds = gen_target(ml, "train");
  for (double v : ds.multihot) CHECK((v == 0.0 || v == 1.0));
  CHECK(static_cast<int64_t>(ds.multihot.size()) == 40 * ml.num_classes);
}

TEST_CASE("point1d family is separable by the Fourier oracle at zero noise") {
  TaskSpec spec = TaskSpec::family_default("point1d");
  spec.noise = 0.0;
  spec.train_size = 128;
  spec.val_size = 64;
  LabeledDataset train = gen_target(spec, "train");
  LabeledDataset val = gen_target(spec, "val");
  CHECK(oracle_fourier_error(train, val) == doctest::Approx(0.0));

  // still near-separable at the default noise level used by the pipeline
  TaskSpec noisy = TaskSpec::family_default("point1d");
  noisy.train_size = 128;
  noisy.val_size = 64;
  CHECK(oracle_fourier_error(gen_target(noisy, "train"),
                             gen_target(noisy, "val")) < 0.05);
}

TEST_CASE("dense2d family: copying the input is a bad predictor") {
  TaskSpec spec = TaskSpec::family_default("dense2d");
  spec.train_size = 32;
  LabeledDataset ds = gen_target(spec, "train");
  int64_t per = 32 * 32;
  double acc = 0.0;
  for (int64_t b = 0; b < ds.size; ++b) {
    double num = 0.0, den = 0.0;
    for (int64_t t = 0; t < per; ++t) {
      double pred = ds.features[b * per + t]; // cin = 1
      double tgt = ds.dense_targets[b * per + t];
      num += (pred - tgt) * (pred - tgt);
      den += tgt * tgt;
    }
    acc += std::sqrt(num / den);
  }
  CHECK(acc / ds.size > 0.3);
}

TEST_CASE("otdd_labels covers every task type") {
  TaskSpec p = TaskSpec::family_default("point1d");
  p.train_size = 24;
  LabeledDataset pd = gen_target(p, "train");
  int64_t K = 0;
  auto labels = otdd_labels(pd, &K);
  CHECK(K == p.num_classes);
  CHECK(labels == pd.class_labels);

  TaskSpec d = TaskSpec::family_default("dense2d");
  d.train_size = 30;
  LabeledDataset dd = gen_target(d, "train");
  auto dl = otdd_labels(dd, &K);
  CHECK(K == 10); // inferred buckets
  for (int64_t y : dl) {
    CHECK(y >= 0);
    CHECK(y < 10);
  }

  TaskSpec m = TaskSpec::family_default("multilabel1d");
  m.train_size = 30;
  LabeledDataset md = gen_target(m, "train");
  auto mlab = otdd_labels(md, &K);
  CHECK(K == m.num_classes + 1); // first-present-label plus "none"
  for (int64_t y : mlab) {
    CHECK(y >= 0);
    CHECK(y < K);
  }
}

TEST_CASE("gen_proxy: label uniformity, non-degeneracy, kind independence") {
  ProxySpec fake;
  fake.kind = ProxyKind::fake_features;
  fake.num_classes = 7;
  fake.sample_count = 200;
  FeatureCloud ff = gen_proxy(fake, nullptr, 16);
  ff.validate();
  std::map<int64_t, int64_t> hist;
  for (int64_t y : ff.labels) ++hist[y];
  double expect = 200.0 / 7.0;
  double sigma = std::sqrt(200.0 * (1.0 / 7) * (6.0 / 7));
  for (auto& [k, c] : hist) CHECK(std::fabs(c - expect) <= 3 * sigma);

  BackboneSpec bs;
  bs.layers = 1;
  bs.heads = 2;
  bs.hidden = 16;
  bs.vocab = 32;
  Rng rng(1);
  Backbone bb(bs, rng);
  ProxySpec structured;
  structured.kind = ProxyKind::structured;
  structured.sample_count = 60;
  FeatureCloud sc = gen_proxy(structured, &bb, 16);
  for (int64_t k = 0; k < sc.d; ++k) {
    double mean = 0.0, var = 0.0;
    for (int64_t i = 0; i < sc.n; ++i) mean += sc.features[i * sc.d + k];
    mean /= sc.n;
    for (int64_t i = 0; i < sc.n; ++i) {
      double dv = sc.features[i * sc.d + k] - mean;
      var += dv * dv;
    }
    CHECK(var / sc.n > 0.0);
  }

  ProxySpec noise;
  noise.kind = ProxyKind::fake_noise;
  noise.sample_count = 60;
  FeatureCloud nc = gen_proxy(noise, nullptr, 16);
  CHECK(nc.features != sc.features); // distinct generators under same seed
  CHECK(gen_proxy(noise, nullptr, 16).features == nc.features); // but pure
}

TEST_CASE("pretrain corpus: budget 0, vocab floor, mask token exclusion") {
  CHECK(gen_pretrain_corpus(64, 0, 5).empty());
  CHECK_THROWS(gen_pretrain_corpus(8, 100, 5));
  auto toks = gen_pretrain_corpus(64, 5000, 5);
  CHECK(static_cast<int64_t>(toks.size()) == 5000);
  for (int32_t t : toks) {
    CHECK(t >= 1);
    CHECK(t < 63); // 63 is the mask token, never generated
  }
}

TEST_CASE("pretrain corpus follows the Zipf marginal within 5%") {
  const int64_t vocab = 64, n = 100000;
  auto toks = gen_pretrain_corpus(vocab, n, 7, 1.1);
  std::map<int32_t, int64_t> counts;
  int64_t content_total = 0;
  for (int32_t t : toks)
    if (t >= 3) {
      ++counts[t];
      ++content_total;
    }
  double z = 0.0;
  int64_t ncontent = vocab - 4; // ids 3 .. vocab-2
  for (int64_t k = 1; k <= ncontent; ++k) z += std::pow(k, -1.1);
  for (int64_t rank = 1; rank <= 8; ++rank) {
    double expected = std::pow(rank, -1.1) / z;
    double got = static_cast<double>(counts[static_cast<int32_t>(2 + rank)]) /
                 content_total;
    CHECK(std::fabs(got - expected) / expected < 0.05);
  }
}

TEST_CASE("pretrain corpus bigram entropy is below unigram entropy") {
  auto toks = gen_pretrain_corpus(64, 100000, 9);
  std::map<int32_t, int64_t> uni;
  std::map<int64_t, int64_t> bi;
  for (size_t i = 0; i < toks.size(); ++i) {
    ++uni[toks[i]];
    if (i + 1 < toks.size()) ++bi[int64_t(toks[i]) * 1000 + toks[i + 1]];
  }
  auto entropy = [](auto& m, double total) {
    double h = 0.0;
    for (auto& [k, c] : m) {
      double p = c / total;
      h -= p * std::log2(p);
    }
    return h;
  };
  double hu = entropy(uni, static_cast<double>(toks.size()));
  double hpair = entropy(bi, static_cast<double>(toks.size() - 1));
  double hcond = hpair - hu; // H(next | current)
  CHECK(hcond < hu - 0.1);
}

TEST_CASE("dataset and feature-cloud archives round-trip bit-exactly") {
  namespace fs = std::filesystem;
  TaskSpec spec = TaskSpec::family_default("multilabel1d");
  spec.train_size = 12;
  LabeledDataset ds = gen_target(spec, "train");
  std::string p1 = (fs::temp_directory_path() / "xmodal_ds_test.xmta").string();
  save_dataset(p1, ds);
  LabeledDataset back = load_dataset(p1);
  CHECK(back.features == ds.features);
  CHECK(back.multihot == ds.multihot);
  CHECK(back.split == ds.split);
  CHECK(back.spec.name == ds.spec.name);
  fs::remove(p1);

  ProxySpec fake;
  fake.kind = ProxyKind::fake_features;
  fake.sample_count = 20;
  FeatureCloud cloud = gen_proxy(fake, nullptr, 8);
  std::string p2 = (fs::temp_directory_path() / "xmodal_fc_test.xmta").string();
  save_feature_cloud(p2, cloud);
  FeatureCloud cback = load_feature_cloud(p2);
  CHECK(cback.features == cloud.features);
  CHECK(cback.labels == cloud.labels);
  CHECK(cback.num_classes == cloud.num_classes);
  fs::remove(p2);
}

TEST_CASE("embed_dataset shape contract") {
  Rng rng(2);
  TaskSpec spec = TaskSpec::family_default("point1d");
  spec.train_size = 10;
  LabeledDataset ds = gen_target(spec, "train");
  Embedder emb(build_embedder_spec({1, 1, {96}}, 16, 12), rng);
  FeatureCloud c = embed_dataset(ds, emb, 4);
  CHECK(c.n == 10);
  CHECK(c.d == 16);
  c.validate();
}
