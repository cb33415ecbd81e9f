#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "consist/corpus.hpp"
#include "consist/eval.hpp"

using namespace consist;

namespace {

Image test_image(std::uint64_t seed) {
  Rng rng(seed);
  return render_blob(random_blob_spec(rng), random_blob_pose(rng));
}

}  // namespace

TEST_CASE("image similarity: identical singletons score 1") {
  Embedder emb(1, 16 * 16 * 3, 8);
  Image img = test_image(5);
  CHECK(score_image_similarity({img}, {img}, emb) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("image similarity: symmetry and range") {
  Embedder emb(2, 16 * 16 * 3, 8);
  std::vector<Image> a = {test_image(1), test_image(2)};
  std::vector<Image> b = {test_image(3), test_image(4), test_image(5)};
  double ab = score_image_similarity(a, b, emb);
  double ba = score_image_similarity(b, a, emb);
  CHECK(ab == Catch::Approx(ba).margin(1e-15));
  CHECK(ab >= -1.0);
  CHECK(ab <= 1.0);
  CHECK_THROWS(score_image_similarity({}, b, emb));
}

TEST_CASE("image similarity: matches brute force over all pairs") {
  Embedder emb(3, 16 * 16 * 3, 8);
  std::vector<Image> g = {test_image(10), test_image(11)};
  std::vector<Image> r = {test_image(12), test_image(13)};
  double expected = 0.0;
  for (const auto& gi : g)
    for (const auto& ri : r) expected += cosine(emb.embed_image(gi), emb.embed_image(ri));
  expected /= 4.0;
  CHECK(score_image_similarity(g, r, emb) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("image similarity is permutation invariant") {
  Embedder emb(4, 16 * 16 * 3, 8);
  std::vector<Image> g = {test_image(20), test_image(21), test_image(22)};
  std::vector<Image> r = {test_image(23), test_image(24)};
  std::vector<Image> g_perm = {g[2], g[0], g[1]};
  CHECK(score_image_similarity(g, r, emb) == Catch::Approx(score_image_similarity(g_perm, r, emb)).margin(1e-15));
}

TEST_CASE("prompt similarity: identical images collapse to a single cosine") {
  Embedder emb(5, 16 * 16 * 3, 8);
  Image img = test_image(30);
  std::vector<double> tok = {0.3, -0.2, 0.5, 0.1, 0.0, 0.7, -0.4, 0.2};
  double single = cosine(emb.embed_token(tok), emb.embed_image(img));
  double batch = score_prompt_similarity({img, img, img}, tok, emb);
  CHECK(batch == Catch::Approx(single).margin(1e-12));
  CHECK(batch >= -1.0);
  CHECK(batch <= 1.0);

  // brute-force recomputation over a mixed set
  std::vector<Image> imgs = {test_image(31), test_image(32)};
  double expected = 0.5 * (cosine(emb.embed_token(tok), emb.embed_image(imgs[0])) +
                           cosine(emb.embed_token(tok), emb.embed_image(imgs[1])));
  CHECK(score_prompt_similarity(imgs, tok, emb) == Catch::Approx(expected).margin(1e-12));
  CHECK_THROWS(score_prompt_similarity({}, tok, emb));
}

TEST_CASE("embedder is frozen: identical inputs give bit-identical scores") {
  Embedder emb(6, 16 * 16 * 3, 8);
  std::vector<Image> g = {test_image(40)};
  std::vector<Image> r = {test_image(41)};
  CHECK(score_image_similarity(g, r, emb) == score_image_similarity(g, r, emb));
  Embedder emb_again(6, 16 * 16 * 3, 8);
  CHECK(score_image_similarity(g, r, emb) == score_image_similarity(g, r, emb_again));
  for (double v : emb.embed_image(g[0])) CHECK(std::isfinite(v));
  double norm = 0;
  for (double v : emb.embed_image(g[0])) norm += v * v;
  CHECK(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("kl divergence: hand-built 4-bin oracle") {
  // Arithmetic oracle: p = [.25 x4], q = [.4,.2,.2,.2],
  // KL = sum .25*ln(.25/q_i) = .25*(ln(.25/.4) + 3 ln(.25/.2)).
  std::vector<double> p(4, 0.25);
  std::vector<double> q = {0.4, 0.2, 0.2, 0.2};
  double oracle = 0.25 * std::log(0.25 / 0.4) + 3 * 0.25 * std::log(0.25 / 0.2);
  CHECK(oracle == Catch::Approx(0.04985675617422344).margin(1e-12));
  CHECK(kl_divergence(p, q) == Catch::Approx(oracle).margin(1e-9));
  CHECK(kl_divergence(p, p) <= 1e-9);
  CHECK(kl_divergence(p, q) >= 0.0);
}

TEST_CASE("latent_kl: identity, non-negativity, order invariance") {
  Rng rng(50);
  std::vector<Image> corpus = make_class_corpus(64, rng);
  LatentCodec codec(16, 16 * 16 * 3, 9);
  codec.calibrate(corpus);

  std::vector<Image> a(corpus.begin(), corpus.begin() + 24);
  std::vector<Image> b(corpus.begin() + 24, corpus.begin() + 48);

  CHECK(latent_kl(a, a, codec) <= 1e-9);
  CHECK(latent_kl(a, b, codec) >= 0.0);

  std::vector<Image> a_perm(a.rbegin(), a.rend());
  CHECK(latent_kl(a, b, codec) == Catch::Approx(latent_kl(a_perm, b, codec)).margin(1e-15));
  CHECK_THROWS(latent_kl({}, b, codec));
}

TEST_CASE("pooled histogram clamps and normalizes") {
  HistogramSpec spec;
  std::vector<std::vector<double>> latents = {{-100.0, 0.0, 100.0}};
  std::vector<double> h = pooled_histogram(latents, spec);
  REQUIRE(h.size() == 64);
  double total = 0;
  for (double v : h) {
    CHECK(v > 0.0);  // smoothing fills empty bins
    total += v;
  }
  CHECK(total == Catch::Approx(1.0).margin(1e-12));
  CHECK(h.front() > h[1]);  // clamped low outlier landed in the first bin
  CHECK(h.back() > h[62]);
}
