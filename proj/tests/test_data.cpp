#include "deepdiff/data.hpp"
#include "support/tempdir.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace deepdiff;

namespace {

const std::filesystem::path kToy = std::filesystem::path(DEEPDIFF_FIXTURES) / "toy";

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kHeader = "gene_id\thm1_bin1\thm1_bin2\n";

}  // namespace

TEST_CASE("toy fixture loads with exact values") {
  const auto paths = dataset_paths(kToy);
  const LoadResult r = load_dataset(paths.signal_a, paths.signal_b, paths.expression);
  CHECK(r.skipped == 0);
  CHECK(r.warnings.empty());
  const Dataset& ds = r.dataset;
  CHECK(ds.marks == 2);
  CHECK(ds.bins == 3);
  CHECK(ds.unit == ExpressionUnit::Counts);
  REQUIRE(ds.size() == 3);
  CHECK(ds.genes[0].gene_id == "gA");
  CHECK(ds.genes[0].xa(0, 1) == 1.5);
  CHECK(ds.genes[0].xa(1, 0) == 0.25);
  CHECK(ds.genes[0].xa(1, 2) == 3.0);
  CHECK(ds.genes[2].xa(0, 0) == 0.125);
  CHECK(ds.genes[2].xb(0, 2) == 0.75);
  CHECK(ds.genes[1].xb(1, 2) == 9.0);
  CHECK(ds.genes[0].expr_a == 10.0);
  CHECK(ds.genes[0].y_a == std::log1p(10.0));
  CHECK(ds.genes[0].y_b == 0.0);
  CHECK(ds.genes[1].y_diff == 0.0);
  CHECK(ds.genes[2].y_diff == -std::log1p(100.0));

  // Declared dimensions are enforced.
  CHECK_NOTHROW(load_dataset(paths.signal_a, paths.signal_b, paths.expression,
                             BinnedSignalSpec{2, 3, 100}));
  CHECK_THROWS(load_dataset(paths.signal_a, paths.signal_b, paths.expression,
                            BinnedSignalSpec{5, 200, 100}));
}

TEST_CASE("round trip is value-identical") {
  const auto src = dataset_paths(kToy);
  const Dataset ds = load_dataset(src.signal_a, src.signal_b, src.expression).dataset;
  testing::TempDir tmp;
  const auto dst = dataset_paths(tmp.path());
  save_dataset(ds, dst);
  const Dataset back = load_dataset(dst.signal_a, dst.signal_b, dst.expression).dataset;
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.genes[i].gene_id == ds.genes[i].gene_id);
    CHECK(back.genes[i].xa == ds.genes[i].xa);
    CHECK(back.genes[i].xb == ds.genes[i].xb);
    CHECK(back.genes[i].y_diff == ds.genes[i].y_diff);
  }

  SyntheticConfig cfg;
  cfg.genes = 30;
  cfg.bins = 12;
  cfg.window_begin = 3;
  cfg.window_end = 6;
  const Dataset syn = generate_synthetic(cfg);
  save_dataset(syn, dst);
  const Dataset syn_back = load_dataset(dst.signal_a, dst.signal_b, dst.expression).dataset;
  for (std::size_t i = 0; i < syn.size(); ++i) {
    CHECK(syn_back.genes[i].xa == syn.genes[i].xa);
    CHECK(syn_back.genes[i].xb == syn.genes[i].xb);
    CHECK(syn_back.genes[i].expr_a == syn.genes[i].expr_a);
    CHECK(syn_back.genes[i].y_diff == syn.genes[i].y_diff);
  }
}

TEST_CASE("malformed input is reported with file and line") {
  testing::TempDir tmp;
  const auto p = dataset_paths(tmp.path());
  write(p.signal_b, std::string(kHeader) + "g1\t1\t2\n");
  write(p.expression, "gene_id\tcount_A\tcount_B\ng1\t1\t2\n");

  SUBCASE("negative value") {
    write(p.signal_a, std::string(kHeader) + "g1\t1\t-2\n");
    try {
      load_dataset(p.signal_a, p.signal_b, p.expression);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("signal_A.tsv:2") != std::string::npos);
      CHECK(msg.find("negative") != std::string::npos);
    }
  }
  SUBCASE("non-numeric value") {
    write(p.signal_a, std::string(kHeader) + "g1\tx\t2\n");
    CHECK_THROWS_AS(load_dataset(p.signal_a, p.signal_b, p.expression), ParseError);
  }
  SUBCASE("wrong field count") {
    write(p.signal_a, std::string(kHeader) + "g1\t1\n");
    CHECK_THROWS_AS(load_dataset(p.signal_a, p.signal_b, p.expression), ParseError);
  }
  SUBCASE("duplicate gene") {
    write(p.signal_a, std::string(kHeader) + "g1\t1\t1\ng1\t2\t2\n");
    CHECK_THROWS_AS(load_dataset(p.signal_a, p.signal_b, p.expression), ParseError);
  }
  SUBCASE("bad header") {
    write(p.signal_a, "gene\tfoo\n");
    CHECK_THROWS_AS(load_dataset(p.signal_a, p.signal_b, p.expression), ParseError);
  }
  SUBCASE("shape mismatch between cells") {
    write(p.signal_a, "gene_id\thm1_bin1\ng1\t1\n");
    CHECK_THROWS_AS(load_dataset(p.signal_a, p.signal_b, p.expression), ParseError);
  }
  SUBCASE("negative expression") {
    write(p.signal_a, std::string(kHeader) + "g1\t1\t1\n");
    write(p.expression, "gene_id\tcount_A\tcount_B\ng1\t-1\t2\n");
    CHECK_THROWS_AS(load_dataset(p.signal_a, p.signal_b, p.expression), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset(tmp / "absent.tsv", p.signal_b, p.expression), ParseError);
  }
}

TEST_CASE("genes missing from a file are skipped and counted") {
  testing::TempDir tmp;
  const auto p = dataset_paths(tmp.path());
  write(p.signal_a, std::string(kHeader) + "g1\t1\t2\nonly_a\t3\t4\n");
  write(p.signal_b, std::string(kHeader) + "g1\t1\t2\n");
  write(p.expression, "gene_id\tcount_A\tcount_B\ng1\t1\t2\n");
  const LoadResult r = load_dataset(p.signal_a, p.signal_b, p.expression);
  CHECK(r.skipped == 1);
  CHECK(r.dataset.size() == 1);
  CHECK_FALSE(r.warnings.empty());

  write(p.expression, "gene_id\tcount_A\tcount_B\n");
  const LoadResult empty = load_dataset(p.signal_a, p.signal_b, p.expression);
  CHECK(empty.dataset.size() == 0);
  CHECK_FALSE(empty.warnings.empty());
}

TEST_CASE("labels") {
  const Labels zero = compute_labels(0, 0);
  CHECK(zero.y_a == 0.0);
  CHECK(zero.y_b == 0.0);
  CHECK(zero.y_diff == 0.0);
  CHECK(compute_labels(17.5, 17.5).y_diff == 0.0);
  const Labels e = compute_labels(std::exp(1.0) - 1.0, 0.0);
  CHECK(std::abs(e.y_a - 1.0) < 1e-15);
  CHECK(std::abs(e.y_diff - 1.0) < 1e-15);
  CHECK_THROWS(compute_labels(-1, 0));

  const std::vector<double> pop{1, 2, 3};
  CHECK(binarize_expression(pop, 3) == 1);
  CHECK(binarize_expression(pop, 1) == -1);
  CHECK(binarize_expression(pop, 2) == -1);
  const std::vector<double> even{1, 2, 3, 4};
  CHECK(binarize_expression(even, 2.5) == -1);
  CHECK(binarize_expression(even, 2.6) == 1);

  const auto paths = dataset_paths(kToy);
  Dataset ds = load_dataset(paths.signal_a, paths.signal_b, paths.expression).dataset;
  const std::vector<std::size_t> all{0, 1, 2};
  assign_class_labels(ds, all);
  CHECK(ds.genes[0].class_a == 1);   // 10 > median 5
  CHECK(ds.genes[1].class_a == -1);  // tie
  CHECK(ds.genes[2].class_b == 1);   // 100 > median 5
}

TEST_CASE("variant input stacking") {
  Matrix xa(5, 200), xb(5, 200);
  for (Index i = 0; i < xa.size(); ++i) {
    xa.data()[i] = 0.5 * static_cast<double>(i % 7);
    xb.data()[i] = 0.25 * static_cast<double>(i % 5);
  }
  CHECK(build_input(Variant::RawD, xa, xa).front().isZero());
  CHECK(build_input(Variant::RawC, xa, xb).front().rows() == 10);
  const Matrix raw = build_input(Variant::Raw, xa, xb).front();
  CHECK(raw.rows() == 15);
  CHECK(raw.bottomRows(5) == raw.topRows(5) - raw.middleRows(5, 5));
  CHECK(build_input(Variant::Aux, xa, xb).size() == 2);
  CHECK(build_input(Variant::RawAuxSiamese, xa, xb).size() == 3);
  CHECK_THROWS_AS(build_input(Variant::Raw, xa, Matrix(5, 199)), DimensionError);
}

TEST_CASE("fold split") {
  const FoldSizes full = proportional_fold_sizes(18460);
  CHECK(full.train == 10000);
  CHECK(full.valid == 2360);
  CHECK(full.test == 6100);
  const FoldSplit s = split_folds(18460, 3, FoldSizes{});
  CHECK(s.train.size() == 10000);
  CHECK(s.valid.size() == 2360);
  CHECK(s.test.size() == 6100);
  CHECK(split_folds(18460, 3, FoldSizes{}).train == s.train);
  CHECK(split_folds(18460, 4, FoldSizes{}).train != s.train);

  const FoldSplit small = split_folds(10, 1, FoldSizes{6, 2, 2});
  std::set<std::size_t> seen;
  for (const auto* f : {&small.train, &small.valid, &small.test})
    for (auto i : *f) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 10);
  CHECK(*seen.rbegin() == 9);
  CHECK_THROWS(split_folds(10, 1, FoldSizes{6, 3, 2}));

  for (std::size_t n : {3u, 50u, 2000u}) {
    const FoldSizes p = proportional_fold_sizes(n);
    CHECK(p.train + p.valid + p.test == n);
  }
}

TEST_CASE("synthetic generator") {
  SyntheticConfig cfg;
  cfg.genes = 200;
  cfg.noise = 0.0;
  const Dataset ds = generate_synthetic(cfg);
  REQUIRE(ds.size() == 200);
  CHECK(ds.genes.front().gene_id == "gene000");
  CHECK(ds.marks == 5);
  CHECK(ds.bins == 200);
  // Brute-force recomputation of every label from the raw matrices.
  double worst = 0.0;
  for (const auto& g : ds.genes) {
    CHECK((g.xa.array() >= 0.0).all());
    long double sa = 0.0L, sb = 0.0L;
    for (int t = 95; t <= 105; ++t) {
      sa += g.xa(1, t);
      sb += g.xb(1, t);
    }
    worst = std::max(worst, std::abs(g.y_diff - static_cast<double>(sa - sb)));
    worst = std::max(worst, std::abs(g.y_a - static_cast<double>(3.0L + sa)));
  }
  CHECK(worst < 1e-12);

  const Dataset again = generate_synthetic(cfg);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(again.genes[i].xa == ds.genes[i].xa);
    CHECK(again.genes[i].expr_b == ds.genes[i].expr_b);
  }

  SyntheticConfig noisy = cfg;
  noisy.noise = 0.1;
  noisy.genes = 3000;
  const Dataset n = generate_synthetic(noisy);
  double acc = 0.0;
  for (const auto& g : n.genes) {
    long double s = 0.0L;
    for (int t = 95; t <= 105; ++t) s += g.xa(1, t) - g.xb(1, t);
    const double r = g.y_diff - static_cast<double>(s);
    acc += r * r;
  }
  const double sd = std::sqrt(acc / 3000.0);
  CHECK(sd > 0.09);
  CHECK(sd < 0.11);

  SyntheticConfig bad = cfg;
  bad.window_end = 200;
  CHECK_THROWS(generate_synthetic(bad));
  bad = cfg;
  bad.planted_mark = 5;
  CHECK_THROWS(generate_synthetic(bad));
}

TEST_CASE("signal normalization") {
  SyntheticConfig cfg;
  cfg.genes = 5;
  cfg.bins = 10;
  cfg.window_begin = 2;
  cfg.window_end = 4;
  const Dataset ds = generate_synthetic(cfg);
  const Dataset same = normalize_signals(ds, Normalization::None);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(same.genes[i].xa == ds.genes[i].xa);
  const Dataset logged = normalize_signals(ds, Normalization::Log1p);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Matrix back = logged.genes[i].xa.array().expm1().matrix();
    CHECK((back - ds.genes[i].xa).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(logged.genes[i].y_diff == ds.genes[i].y_diff);
  }
  Dataset zero = ds;
  zero.genes[0].xa.setZero();
  CHECK(normalize_signals(zero, Normalization::Log1p).genes[0].xa.isZero());
  CHECK(parse_normalization("log1p") == Normalization::Log1p);
  CHECK_THROWS(parse_normalization("zscore"));
}

TEST_CASE("mark names") {
  const auto core = mark_names(5);
  CHECK(core.front() == "H3K4me3");
  CHECK(core.back() == "H3K27me3");
  CHECK(mark_names(2) == std::vector<std::string>{"hm1", "hm2"});
}
