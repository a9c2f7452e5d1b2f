#include "deepdiff/model.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace deepdiff;

namespace {

ModelConfig small_config(Variant v, int marks = 2, int bins = 8) {
  ModelConfig c;
  c.variant = v;
  c.marks = marks;
  c.bins = bins;
  c.level1_hidden = 4;
  c.level2_hidden = 3;
  c.mlp_hidden = 5;
  c.seed = 17;
  return c;
}

Batch random_batch(int marks, int bins, Index batch, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(batch);
  std::vector<Matrix> xa(n), xb(n);
  Batch b;
  for (int j = 0; j < marks; ++j) {
    b.xa_rows.emplace_back(oracle::random_matrix(batch, bins, rng, 0.0, 2.0));
    b.xb_rows.emplace_back(oracle::random_matrix(batch, bins, rng, 0.0, 2.0));
  }
  return b;
}

}  // namespace

TEST_CASE("Level I shapes at full size") {
  Rng rng(1);
  LevelIEmbedding f1(5, 32, rng, 1.0);
  std::vector<Tensor> rows;
  for (int j = 0; j < 5; ++j) rows.emplace_back(oracle::random_matrix(1, 200, rng, 0.0, 1.0));
  const auto out = f1.forward(rows);
  REQUIRE(out.summaries.size() == 5);
  for (const auto& s : out.summaries) CHECK(s.shape() == Shape{1, 64});
  for (const auto& a : out.alphas) CHECK(a.shape() == Shape{1, 200});
}

TEST_CASE("Level I: a constant row attends uniformly") {
  Rng rng(2);
  LevelIEmbedding f1(2, 4, rng, 1.0);
  // With an identical value in every bin the forward and backward halves
  // still differ per step, so only a zero context guarantees uniformity.
  f1.pool(0).context().mutable_value().setZero();
  const auto out = f1.forward({Tensor(Matrix::Constant(1, 6, 0.7)),
                               Tensor(oracle::random_matrix(1, 6, rng))});
  for (Index t = 0; t < 6; ++t) CHECK(std::abs(out.alphas[0].value()(0, t) - 1.0 / 6.0) < 1e-15);
}

TEST_CASE("Level I gradient with respect to the input") {
  Rng rng(3);
  LevelIEmbedding f1(2, 3, rng, 1.0);
  std::vector<Tensor> rows{Tensor(oracle::random_matrix(2, 5, rng), true),
                           Tensor(oracle::random_matrix(2, 5, rng), true)};
  const auto loss = [&] {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& s : f1.forward(rows).summaries) acc = add(acc, sum(square(s)));
    return acc;
  };
  backward(loss());
  for (auto& r : rows) {
    const Matrix g = r.grad();
    CHECK(oracle::gradient_error(r, [&] {
            NoGradGuard ng;
            return loss().item();
          }, g, 1e-5, 1e-7) < 1e-4);
  }
}

TEST_CASE("Level II") {
  Rng rng(4);
  LevelIIEmbedding f2(64, 16, rng, 1.0);
  SUBCASE("single summary") {
    const auto out = f2.forward({Tensor(oracle::random_matrix(1, 64, rng))});
    CHECK(out.beta.value()(0, 0) == 1.0);
    CHECK(out.v.shape() == Shape{1, 32});
  }
  SUBCASE("five identical summaries") {
    const Tensor s(oracle::random_matrix(1, 64, rng));
    f2.pool().context().mutable_value().setZero();
    const auto out = f2.forward(std::vector<Tensor>(5, s));
    CHECK(out.beta.shape() == Shape{1, 5});
    for (Index k = 0; k < 5; ++k) CHECK(std::abs(out.beta.value()(0, k) - 0.2) < 1e-15);
  }
}

TEST_CASE("variant wiring") {
  Rng rng(5);
  const Batch batch = random_batch(5, 8, 2, rng);
  const ForwardContext eval{};
  SUBCASE("Raw stacks 3M rows") {
    DeepDiffModel model(small_config(Variant::Raw, 5));
    CHECK(model.level1_raw()->rows() == 15);
    const Prediction p = model.forward(batch, eval);
    CHECK(p.marks.front().beta.cols() == 15);
    CHECK(p.diff.shape() == Shape{2, 1});
    CHECK_FALSE(p.cell_a.has_value());
  }
  SUBCASE("Raw:c stacks 2M rows, Raw:d M rows") {
    CHECK(DeepDiffModel(small_config(Variant::RawC, 5)).level1_raw()->rows() == 10);
    CHECK(DeepDiffModel(small_config(Variant::RawD, 5)).level1_raw()->rows() == 5);
  }
  SUBCASE("Raw+Aux Level II sees difference rows then both cell towers") {
    DeepDiffModel model(small_config(Variant::RawAux, 5));
    const Prediction p = model.forward(batch, eval);
    CHECK(p.marks.front().module == "f2_d");
    CHECK(p.marks.front().beta.cols() == 25);
    CHECK(p.cell_a.has_value());
    CHECK(p.cell_b.has_value());
  }
  SUBCASE("Aux has no raw tower") {
    DeepDiffModel model(small_config(Variant::Aux, 5));
    CHECK(model.level1_raw() == nullptr);
    CHECK(model.diff_head()->input_size() == 12);
    CHECK_FALSE(model.level1_tied());
  }
  SUBCASE("classification heads emit two logits") {
    ModelConfig c = small_config(Variant::Aux, 5);
    c.classification_aux = true;
    const Prediction p = DeepDiffModel(c).forward(batch, eval);
    CHECK(p.cell_a->shape() == Shape{2, 2});
  }
  SUBCASE("wrong input shape") {
    DeepDiffModel model(small_config(Variant::RawD, 5, 9));
    CHECK_THROWS_AS(model.forward(batch, eval), DimensionError);
  }
}

TEST_CASE("Raw:d with identical cells equals the all-zero input") {
  Rng rng(6);
  DeepDiffModel model(small_config(Variant::RawD));
  const Matrix x = oracle::random_matrix(2, 8, rng, 0.0, 3.0);
  const Matrix zero = Matrix::Zero(2, 8);
  const ForwardContext eval{};
  const double same = model.forward(make_batch(x, x), eval).diff.item();
  const double base = model.forward(make_batch(zero, zero), eval).diff.item();
  CHECK(same == base);
}

TEST_CASE("Siamese variants tie the cell Level I towers") {
  for (Variant v : {Variant::AuxSiamese, Variant::RawAuxSiamese}) {
    DeepDiffModel model(small_config(v));
    CHECK(model.level1_tied());
    CHECK(model.level1_a() == model.level1_b());
    Rng rng(7);
    const Matrix x = oracle::random_matrix(2, 8, rng);
    const Prediction p = model.forward(make_batch(x, x), ForwardContext{});
    CHECK(p.siamese_a->value() == p.siamese_b->value());
    CHECK(p.siamese_a->cols() == 2 * 8);
    std::size_t f1_blocks = 0;
    for (const auto& param : model.parameters()) {
      CHECK(param.name.rfind("f1_a.", 0) != 0);
      CHECK(param.name.rfind("f1_b.", 0) != 0);
      if (param.name.rfind("f1_ab.", 0) == 0) ++f1_blocks;
    }
    CHECK(f1_blocks > 0);
  }
}

TEST_CASE("attention records") {
  Rng rng(8);
  for (Variant v : kAllVariants) {
    CAPTURE(variant_tag(v));
    DeepDiffModel model(small_config(v, 3, 6));
    GeneSample g;
    g.gene_id = "g1";
    g.xa = oracle::random_matrix(3, 6, rng, 0, 2);
    g.xb = oracle::random_matrix(3, 6, rng, 0, 2);
    const AttentionRecord r = model.extract_attention(g);
    const AttentionRecord again = model.extract_attention(g);
    CHECK(r.gene_id == "g1");
    REQUIRE(r.bins.size() == again.bins.size());
    for (std::size_t k = 0; k < r.bins.size(); ++k) {
      CHECK(r.bins[k].alpha == again.bins[k].alpha);
      CHECK(r.bins[k].labels.size() == static_cast<std::size_t>(r.bins[k].alpha.rows()));
      for (Index j = 0; j < r.bins[k].alpha.rows(); ++j) {
        CHECK(std::abs(r.bins[k].alpha.row(j).sum() - 1.0) < 1e-9);
      }
    }
    for (const auto& m : r.marks) {
      double total = 0.0;
      for (double b : m.beta) total += b;
      CHECK(std::abs(total - 1.0) < 1e-9);
      CHECK(m.labels.size() == m.beta.size());
    }
  }
}

TEST_CASE("parameter names are unique and construction is seeded") {
  for (Variant v : kAllVariants) {
    DeepDiffModel a(small_config(v));
    DeepDiffModel b(small_config(v));
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    std::set<std::string> names;
    for (std::size_t k = 0; k < pa.size(); ++k) {
      CHECK(names.insert(pa[k].name).second);
      CHECK(pa[k].tensor.value() == pb[k].tensor.value());
    }
  }
}

TEST_CASE("the single-matrix network reproduces Raw:d") {
  DeepDiffModel model(small_config(Variant::RawD, 3, 7));
  SingleMatrixNetwork net(*model.level1_raw(), *model.level2_raw(), *model.diff_head(),
                          model.config().dropout);
  Rng rng(9);
  const Batch batch = random_batch(3, 7, 4, rng);
  std::vector<Tensor> diff;
  for (int j = 0; j < 3; ++j) diff.push_back(sub(batch.xa_rows[j], batch.xb_rows[j]));
  CHECK(model.forward(batch, ForwardContext{}).diff.value() ==
        net.forward(diff, ForwardContext{}).value());
  // Same dropout stream in training mode gives the same draw.
  Rng r1(3), r2(3);
  CHECK(model.forward(batch, ForwardContext{true, &r1}).diff.value() ==
        net.forward(diff, ForwardContext{true, &r2}).value());
}
