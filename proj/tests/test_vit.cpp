#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "testutil.hpp"
#include "ttv/errors.hpp"
#include "ttv/rng.hpp"
#include "ttv/vit.hpp"

using namespace ttv;

namespace {

ViTConfig tiny_config() {
  ViTConfig c;
  c.image_h = 8;
  c.image_w = 8;
  c.patch_size = 4;
  c.latent_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_hidden_dim = 16;
  c.dropout_p = 0.0;
  return c;
}

}  // namespace

TEST_CASE("config validation rejects bad geometry") {
  ViTConfig c = tiny_config();
  c.patch_size = 3;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_config();
  c.num_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_config();
  c.dropout_p = 0.3;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_config();
  c.num_classes = 3;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("patchify shapes and content") {
  ViTConfig c;
  c.image_h = 32;
  c.image_w = 32;
  c.patch_size = 16;
  c.latent_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_hidden_dim = 8;
  const RasterFrame f = testutil::random_frame(32, 32, 1);
  const Mat p = patchify(f, c);
  CHECK(p.rows() == 4);
  CHECK(p.cols() == 768);

  const RasterFrame constant = testutil::solid_frame(32, 32, 10, 20, 30);
  const Mat pc = patchify(constant, c);
  for (int r = 1; r < 4; ++r) CHECK((pc.row(r) - pc.row(0)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(patchify(testutil::random_frame(16, 32, 2), c), ArgumentError);
}

TEST_CASE("unpatchify inverts patchify for random frames") {
  const ViTConfig c = tiny_config();
  for (int i = 0; i < 5; ++i) {
    const RasterFrame f = testutil::random_frame(8, 8, 100 + i);
    const RasterFrame back = unpatchify(patchify(f, c), c);
    CHECK(back.pixels == f.pixels);
  }
}

TEST_CASE("zero parameters with a classifier bias force softmax(bias)") {
  const ViTConfig c = tiny_config();
  ViTParameters p = ViTParameters::zeros_like(ViTParameters::init(c, 1));
  p.head_b(0, 0) = 1.0;
  p.head_b(1, 0) = -1.0;
  p.head_b(2, 0) = 0.5;
  p.head_b(3, 0) = 0.0;
  Vec expected(4);
  expected << 1.0, -1.0, 0.5, 0.0;
  expected = (expected.array() - expected.maxCoeff()).exp();
  expected /= expected.sum();

  for (int i = 0; i < 3; ++i) {
    const RasterFrame f = testutil::random_frame(8, 8, 50 + i);
    const ForwardResult r = forward(f, p, c);
    CHECK((r.probabilities - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("probabilities are a valid distribution on random inputs") {
  const ViTConfig c = tiny_config();
  const ViTParameters p = ViTParameters::init(c, 3);
  for (int i = 0; i < 100; ++i) {
    const ForwardResult r = forward(testutil::random_frame(8, 8, i), p, c);
    CHECK(r.probabilities.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.probabilities.minCoeff() > 0.0);
  }
}

TEST_CASE("tiny-config logits match the straight-line oracle to 1e-6") {
  const ViTConfig c = tiny_config();
  for (int trial = 0; trial < 8; ++trial) {
    const ViTParameters p = ViTParameters::init(c, 1000 + trial);
    const RasterFrame f = testutil::random_frame(8, 8, 2000 + trial);
    const ForwardResult got = forward(f, p, c);
    const std::vector<double> want = oracles::vit_logits(f, p, c);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(got.logits(k) - want[k]) < 1e-6);
  }
}

TEST_CASE("oracle agreement holds on a deeper multi-head config") {
  ViTConfig c;
  c.image_h = 16;
  c.image_w = 16;
  c.patch_size = 4;
  c.latent_dim = 16;
  c.num_layers = 3;
  c.num_heads = 4;
  c.mlp_hidden_dim = 24;
  const ViTParameters p = ViTParameters::init(c, 5);
  const RasterFrame f = testutil::random_frame(16, 16, 6);
  const ForwardResult got = forward(f, p, c);
  const std::vector<double> want = oracles::vit_logits(f, p, c);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(got.logits(k) - want[k]) < 1e-6);
}

TEST_CASE("attention rows are stochastic across all layers and heads") {
  ViTConfig c = tiny_config();
  c.num_layers = 2;
  const ViTParameters p = ViTParameters::init(c, 7);
  for (int i = 0; i < 20; ++i) {
    const ForwardResult r = forward(testutil::random_frame(8, 8, 300 + i), p, c);
    REQUIRE(r.attention.per_layer_head.size() == 2);
    for (const auto& layer : r.attention.per_layer_head) {
      REQUIRE(layer.size() == 2);
      for (const auto& head : layer) {
        REQUIRE(head.rows() == c.tokens());
        for (Eigen::Index row = 0; row < head.rows(); ++row) {
          CHECK(head.row(row).sum() == doctest::Approx(1.0).epsilon(1e-6));
          CHECK(head.row(row).minCoeff() >= 0.0);
        }
      }
    }
    for (double v : r.attention.averaged_spatial) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("patch order matters unless positional rows move along") {
  const ViTConfig c = tiny_config();
  const ViTParameters p = ViTParameters::init(c, 11);
  const RasterFrame f = testutil::random_frame(8, 8, 12);
  const Mat patches = patchify(f, c);
  const Vec base = forward_patches(patches, p, c).logits;

  // A fixed non-trivial permutation of the 4 patches.
  const std::vector<int> perm = {2, 0, 3, 1};
  Mat shuffled(patches.rows(), patches.cols());
  for (int i = 0; i < 4; ++i) shuffled.row(i) = patches.row(perm[i]);

  const Vec moved = forward_patches(shuffled, p, c).logits;
  CHECK((moved - base).cwiseAbs().maxCoeff() > 1e-9);  // position is used

  ViTParameters adjusted = p;
  for (int i = 0; i < 4; ++i) {
    adjusted.pos_embedding.row(1 + i) = p.pos_embedding.row(1 + perm[i]);
  }
  const Vec aligned = forward_patches(shuffled, adjusted, c).logits;
  CHECK((aligned - base).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("non-finite parameters are rejected") {
  const ViTConfig c = tiny_config();
  ViTParameters p = ViTParameters::init(c, 13);
  p.layers[0].wq(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward(testutil::random_frame(8, 8, 1), p, c), TrainingError);
}

TEST_CASE("uniform probabilities give loss ln(4)") {
  const ViTConfig c = tiny_config();
  ViTParameters p = ViTParameters::init(c, 17);
  p.head_w.setZero();
  p.head_b.setZero();
  const RasterFrame f0 = testutil::random_frame(8, 8, 60);
  const RasterFrame f1 = testutil::random_frame(8, 8, 61);
  const GradResult g = loss_and_gradients({&f0, &f1}, {0, 3}, p, c);
  CHECK(g.loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("duplicating every batch element leaves the loss unchanged") {
  const ViTConfig c = tiny_config();
  const ViTParameters p = ViTParameters::init(c, 19);
  const RasterFrame f0 = testutil::random_frame(8, 8, 70);
  const RasterFrame f1 = testutil::random_frame(8, 8, 71);
  const double once = loss_and_gradients({&f0, &f1}, {1, 2}, p, c).loss;
  const double twice = loss_and_gradients({&f0, &f1, &f0, &f1}, {1, 2, 1, 2}, p, c).loss;
  CHECK(once == doctest::Approx(twice).epsilon(1e-12));
}

TEST_CASE("batch validation") {
  const ViTConfig c = tiny_config();
  const ViTParameters p = ViTParameters::init(c, 23);
  CHECK_THROWS_AS(loss_and_gradients({}, {}, p, c), ArgumentError);
  const RasterFrame f = testutil::random_frame(8, 8, 80);
  CHECK_THROWS_AS(loss_and_gradients({&f}, {4}, p, c), ArgumentError);
}

TEST_CASE("analytic gradients match central finite differences everywhere") {
  const ViTConfig c = tiny_config();
  ViTParameters params = ViTParameters::init(c, 29);
  const RasterFrame f0 = testutil::random_frame(8, 8, 90);
  const RasterFrame f1 = testutil::random_frame(8, 8, 91);
  const std::vector<const RasterFrame*> batch = {&f0, &f1};
  const std::vector<int> labels = {0, 2};

  const GradResult analytic = loss_and_gradients(batch, labels, params, c);

  auto refs = param_refs(params);
  auto grefs = param_refs(const_cast<ViTParameters&>(analytic.grads));
  Rng rng(31);
  const double h = 1e-4;
  int checked = 0;
  for (std::size_t gi = 0; gi < refs.size(); ++gi) {
    Mat& mat = *refs[gi].second;
    const Mat& grad = *grefs[gi].second;
    // Three random coordinates per parameter group.
    for (int pick = 0; pick < 3; ++pick) {
      const Eigen::Index r = rng.uniform_int(0, static_cast<int>(mat.rows()) - 1);
      const Eigen::Index col = rng.uniform_int(0, static_cast<int>(mat.cols()) - 1);
      const double orig = mat(r, col);
      mat(r, col) = orig + h;
      const double up = loss_and_gradients(batch, labels, params, c).loss;
      mat(r, col) = orig - h;
      const double down = loss_and_gradients(batch, labels, params, c).loss;
      mat(r, col) = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({1e-8, std::abs(numeric), std::abs(grad(r, col))});
      CHECK(std::abs(numeric - grad(r, col)) / denom <= 1e-3);
      ++checked;
    }
  }
  CHECK(checked >= 3 * static_cast<int>(refs.size()));
}

TEST_CASE("gradients are deterministic under a fixed dropout seed") {
  ViTConfig c = tiny_config();
  c.dropout_p = 0.2;
  const ViTParameters p = ViTParameters::init(c, 37);
  const RasterFrame f = testutil::random_frame(8, 8, 95);
  const GradResult a = loss_and_gradients({&f}, {1}, p, c, 555);
  const GradResult b = loss_and_gradients({&f}, {1}, p, c, 555);
  CHECK(a.loss == b.loss);
  const GradResult other = loss_and_gradients({&f}, {1}, p, c, 556);
  CHECK(a.loss != other.loss);  // different mask, different loss
}

TEST_CASE("eval-mode forward is pure") {
  const ViTConfig c = tiny_config();
  const ViTParameters p = ViTParameters::init(c, 41);
  const RasterFrame f = testutil::random_frame(8, 8, 42);
  const ForwardResult a = forward(f, p, c, RunMode::Eval, 1);
  const ForwardResult b = forward(f, p, c, RunMode::Eval, 2);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoints round-trip through float32") {
  testutil::TempDir tmp("ckpt");
  ViTConfig c = tiny_config();
  c.dropout_p = 0.10;
  const ViTParameters p = ViTParameters::init(c, 43);
  save_checkpoint(tmp.str("m.ckpt"), p, c);
  const Checkpoint back = load_checkpoint(tmp.str("m.ckpt"));
  CHECK(back.config.latent_dim == c.latent_dim);
  CHECK(back.config.dropout_p == doctest::Approx(0.10));
  auto orig = param_refs(p);
  auto loaded = param_refs(back.params);
  REQUIRE(orig.size() == loaded.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    const Mat& a = *orig[i].second;
    const Mat& b = *loaded[i].second;
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index col = 0; col < a.cols(); ++col) {
        CHECK(b(r, col) == static_cast<double>(static_cast<float>(a(r, col))));
      }
    }
  }
}

TEST_CASE("checkpoint loader rejects foreign files") {
  testutil::TempDir tmp("ckpt_bad");
  {
    std::ofstream out(tmp.str("junk.ckpt"), std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.str("junk.ckpt")), FormatError);
  CHECK_THROWS_AS(load_checkpoint(tmp.str("missing.ckpt")), IoError);
}

TEST_CASE("uniform attention produces a flat overlay") {
  const ViTConfig c = tiny_config();
  const ViTParameters zero = ViTParameters::zeros_like(ViTParameters::init(c, 1));
  const RasterFrame f = testutil::solid_frame(8, 8, 90, 90, 90);
  const RasterFrame overlay = attention_overlay(f, zero, c);
  REQUIRE(overlay.width == 8);
  // All-zero parameters give uniform attention rows; the rescaled map
  // degenerates to a constant, so every overlay pixel matches.
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      CHECK(overlay.at(x, y, 0) == overlay.at(0, 0, 0));
      CHECK(overlay.at(x, y, 1) == overlay.at(0, 0, 1));
    }
  }
}
