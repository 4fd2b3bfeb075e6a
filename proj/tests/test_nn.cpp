#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "xmodal/data.hpp"
#include "xmodal/nn.hpp"

#include "test_util.hpp"

using namespace xmodal;
using testutil::fd_check;
using testutil::randn_vec;

namespace {

Tensor random_h(Shape shape, Rng& rng) {
  return Tensor::from(shape, randn_vec(shape_numel(shape), rng));
}

} // namespace

TEST_CASE("build_embedder_spec: 2D and 1D kernel/stride rules") {
  EmbedderSpec e2 = build_embedder_spec({3, 2, {32, 32}}, 64);
  CHECK(e2.kernel == 4);
  CHECK(e2.stride == 4);
  CHECK(e2.target_seq_len == 64);

  EmbedderSpec e96 = build_embedder_spec({1, 1, {96}}, 64, 24);
  CHECK(e96.kernel == 4);
  CHECK(e96.stride == 4);
  CHECK(e96.pad_after == 0);
  CHECK(e96.target_seq_len == 24);

  EmbedderSpec e100 = build_embedder_spec({1, 1, {100}}, 64, 24);
  CHECK(e100.kernel == 5);
  CHECK(e100.stride == 5);
  CHECK(e100.pad_after == 20); // padded length 120; floor((120-5)/5)+1 = 24
  CHECK(e100.target_seq_len == 24);

  CHECK_THROWS(build_embedder_spec({3, 2, {3, 3}}, 64)); // smaller than kernel
}

TEST_CASE("embedder forward shape and constant propagation") {
  Rng rng(1);
  Embedder emb(build_embedder_spec({3, 2, {32, 32}}, 64), rng);
  Tensor x = random_h({2, 3, 32, 32}, rng);
  Tensor h = emb.forward(x);
  CHECK(h.shape() == Shape{2, 64, 64});

  // zero conv weights and positional table: output identical across
  // positions and batch (layer_norm of the bias vector)
  for (Parameter* p : emb.params())
    if (p->name == "embedder.conv.weight" || p->name == "embedder.pos")
      std::fill(p->tensor.data().begin(), p->tensor.data().end(), 0.0);
  Tensor hz = emb.forward(x);
  const auto& d = hz.data();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t s = 0; s < 64; ++s)
      for (int64_t k = 0; k < 64; ++k)
        CHECK(d[(b * 64 + s) * 64 + k] == doctest::Approx(d[k]).epsilon(1e-12));
}

TEST_CASE("embedder output length equals target across random 1D lengths") {
  Rng rng(2);
  for (int64_t len : {17, 24, 48, 50, 96, 97, 130}) {
    EmbedderSpec spec = build_embedder_spec({2, 1, {len}}, 16, 12);
    Embedder emb(spec, rng);
    Tensor x = random_h({1, 2, len}, rng);
    CHECK(emb.forward(x).shape() == Shape{1, 12, 16});
  }
}

TEST_CASE("embedder gradient check") {
  Rng rng(3);
  Embedder emb(build_embedder_spec({1, 1, {10}}, 6, 4), rng);
  Tensor x = Tensor::from({2, 1, 10}, randn_vec(20, rng), true);
  std::vector<Tensor> leaves = {x};
  for (Parameter* p : emb.params()) leaves.push_back(p->tensor);
  auto rep = fd_check(
      [&] {
        Tensor h = emb.forward(x);
        return mean_all(mul(h, h));
      },
      leaves);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("backbone: residual identity with zero output projections") {
  BackboneSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.hidden = 8;
  spec.ffn_mult = 2;
  spec.max_seq = 16;
  spec.vocab = 32;
  Rng rng(4);
  Backbone bb(spec, rng);
  for (Parameter* p : bb.params())
    if (p->name.find("attn.wo") != std::string::npos ||
        p->name.find("attn.bo") != std::string::npos ||
        p->name.find("ffn.w2") != std::string::npos ||
        p->name.find("ffn.b2") != std::string::npos)
      std::fill(p->tensor.data().begin(), p->tensor.data().end(), 0.0);
  Tensor h = random_h({2, 5, 8}, rng);
  Tensor out = bb.forward(h);
  // expected: final layer_norm of untouched input (gain 1, shift 0 at init)
  Tensor g = Tensor::full({8}, 1.0), s = Tensor::zeros({8});
  Tensor expected = layer_norm(h, g, s, 1e-5);
  for (size_t i = 0; i < out.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-9));
}

TEST_CASE("backbone shape preservation and seq overflow error") {
  BackboneSpec spec;
  spec.layers = 2;
  spec.heads = 4;
  spec.hidden = 64;
  spec.max_seq = 24;
  Rng rng(5);
  Backbone bb(spec, rng);
  Tensor h = random_h({2, 24, 64}, rng);
  CHECK(bb.forward(h).shape() == Shape{2, 24, 64});
  CHECK_THROWS(bb.forward(random_h({1, 25, 64}, rng)));
}

TEST_CASE("attention rows sum to 1") {
  BackboneSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.hidden = 8;
  spec.max_seq = 16;
  Rng rng(6);
  Backbone bb(spec, rng);
  Tensor h = random_h({2, 6, 8}, rng);
  Tensor probs = bb.attention_probs(h, 0);
  CHECK(probs.shape() == Shape{2 * 2, 6, 6});
  for (int64_t r = 0; r < 2 * 2 * 6; ++r) {
    double row = 0.0;
    for (int64_t c = 0; c < 6; ++c) row += probs.data()[r * 6 + c];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("backbone is permutation-equivariant over positions") {
  BackboneSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.hidden = 8;
  spec.max_seq = 16;
  Rng rng(7);
  Backbone bb(spec, rng);
  Tensor h = random_h({1, 5, 8}, rng);
  std::vector<int64_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> permuted(h.data().size());
  for (int64_t s = 0; s < 5; ++s)
    for (int64_t k = 0; k < 8; ++k)
      permuted[s * 8 + k] = h.data()[perm[s] * 8 + k];
  Tensor out = bb.forward(h);
  Tensor out_p = bb.forward(Tensor::from({1, 5, 8}, permuted));
  for (int64_t s = 0; s < 5; ++s)
    for (int64_t k = 0; k < 8; ++k)
      CHECK(out_p.data()[s * 8 + k] ==
            doctest::Approx(out.data()[perm[s] * 8 + k]).epsilon(1e-10));
}

TEST_CASE("predictor: point pooling, shapes, dense arithmetic") {
  Rng rng(8);
  PredictorSpec ps = build_predictor_spec(TaskType::point, 5, {}, 8, 6);
  Predictor pred(ps, rng);
  // constant-per-item h: logits independent of seq content arrangement
  std::vector<double> hv(2 * 6 * 8);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t s = 0; s < 6; ++s)
      for (int64_t k = 0; k < 8; ++k) hv[(b * 6 + s) * 8 + k] = b + 0.1 * k;
  Tensor out = pred.forward(Tensor::from({2, 6, 8}, hv));
  CHECK(out.shape() == Shape{2, 5});
  std::vector<double> hv1(1 * 6 * 8);
  for (int64_t s = 0; s < 6; ++s)
    for (int64_t k = 0; k < 8; ++k) hv1[s * 8 + k] = 0 + 0.1 * k;
  Tensor out1 = pred.forward(Tensor::from({1, 6, 8}, hv1));
  for (int64_t k = 0; k < 5; ++k)
    CHECK(out.data()[k] == doctest::Approx(out1.data()[k]).epsilon(1e-12));

  PredictorSpec dense = build_predictor_spec(TaskType::dense, 0, {32, 32}, 8, 64);
  CHECK(dense.token_width == 16); // 64 * 16 = 1024 = 32 * 32
  CHECK_THROWS(build_predictor_spec(TaskType::dense, 0, {3, 3}, 8, 5));
}

TEST_CASE("pretrain_mlm: budget 0 untouched, mask rate, negative budget") {
  BackboneSpec spec;
  spec.layers = 1;
  spec.heads = 2;
  spec.hidden = 16;
  spec.ffn_mult = 2;
  spec.max_seq = 32;
  spec.vocab = 32;
  Rng rng(9);
  Backbone bb(spec, rng);
  auto corpus = gen_pretrain_corpus(32, 1 << 14, 11);
  auto heldout = gen_pretrain_corpus(32, 2048, 13);
  MlmConfig cfg;

  std::vector<const Parameter*> cps;
  for (const Parameter* p : static_cast<const Backbone&>(bb).params())
    cps.push_back(p);
  uint64_t before = checksum(cps);
  MlmResult r0 = pretrain_mlm(bb, corpus, heldout, 0, cfg);
  CHECK(checksum(cps) == before);
  CHECK(r0.tokens_seen == 0);

  CHECK_THROWS(pretrain_mlm(bb, corpus, heldout, -1, cfg));

  MlmResult r = pretrain_mlm(bb, corpus, heldout, 20000, cfg);
  CHECK(checksum(cps) != before);
  CHECK(r.tokens_seen >= 20000);
  double rate = static_cast<double>(r.masked_positions) / r.total_positions;
  CHECK(rate == doctest::Approx(0.15).epsilon(0.15)); // within 2% absolute
  CHECK(std::fabs(rate - 0.15) < 0.02);
  CHECK(std::isfinite(r.heldout_loss));
}

TEST_CASE("checkpoint round-trip gives bit-identical forward outputs") {
  BackboneSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.hidden = 16;
  spec.max_seq = 16;
  spec.vocab = 32;
  Rng rng(10);
  Backbone bb(spec, rng);
  std::string path =
      (std::filesystem::temp_directory_path() / "xmodal_ckpt_test.xmta").string();
  save_backbone_checkpoint(path, bb, 1234);
  int64_t budget = 0;
  auto loaded = load_backbone_checkpoint(path, &budget);
  CHECK(budget == 1234);
  Tensor h = random_h({2, 6, 16}, rng);
  CHECK(bb.forward(h).data() == loaded->forward(h).data());
  std::filesystem::remove(path);
}
