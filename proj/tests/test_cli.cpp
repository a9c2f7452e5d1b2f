#include "deepdiff/cli.hpp"
#include "deepdiff/data.hpp"
#include "support/tempdir.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

using namespace deepdiff;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t data_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("gene_id", 0) != 0) ++n;
  }
  return n;
}

std::vector<std::string> small_synth(const fs::path& dir, const std::string& seed = "3") {
  return {"--seed", seed, "--out-dir", dir.string(), "synth", "--genes", "60", "--marks", "2",
          "--bins", "10", "--window-begin", "2", "--window-end", "5"};
}

std::vector<std::string> small_train(const fs::path& data, const fs::path& out,
                                     const std::string& variant) {
  return {"--seed",    "1",  "--out-dir",  out.string(), "train",    "--data-dir",
          data.string(), "--variant", variant, "--epochs", "2", "--hidden1", "4",
          "--hidden2", "3",  "--mlp-hidden", "4"};
}

}  // namespace

TEST_CASE("synth writes loadable, deterministic files") {
  testing::TempDir a, b;
  REQUIRE(run({"--seed", "7", "--out-dir", a.path().string(), "synth", "--genes", "100"}).code == 0);
  REQUIRE(run({"--seed", "7", "--out-dir", b.path().string(), "synth", "--genes", "100"}).code == 0);
  for (const char* f : {"signal_A.tsv", "signal_B.tsv", "expression.tsv", "manifest.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(data_rows(a / "signal_A.tsv") == 100);
  CHECK(data_rows(a / "expression.tsv") == 100);
  const auto paths = dataset_paths(a.path());
  const LoadResult r = load_dataset(paths.signal_a, paths.signal_b, paths.expression);
  CHECK(r.dataset.size() == 100);
  CHECK(r.dataset.marks == 5);
  CHECK(r.dataset.bins == 200);
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("planted_mark").get<int>() == 1);
  CHECK(manifest.at("window_begin").get<int>() == 95);
}

TEST_CASE("bad arguments fail with a message") {
  testing::TempDir tmp;
  const Result none = run({});
  CHECK(none.code != 0);
  const Result bad = run({"--out-dir", tmp.path().string(), "synth", "--bins", "10"});
  CHECK(bad.code != 0);
  CHECK(bad.err.find("window") != std::string::npos);
  REQUIRE(run(small_synth(tmp.path())).code == 0);
  const Result variant = run(small_train(tmp.path(), tmp / "run", "rawish"));
  CHECK(variant.code != 0);
  CHECK(variant.err.find("raw_aux_siamese") != std::string::npos);
  const Result missing = run({"train", "--variant", "raw_d"});
  CHECK(missing.code != 0);
}

TEST_CASE("train, eval and interpret") {
  testing::TempDir tmp;
  REQUIRE(run(small_synth(tmp.path())).code == 0);
  const fs::path runs = tmp / "runs";

  SUBCASE("raw_d smoke run writes a summary with the test PCC") {
    const Result r = run(small_train(tmp.path(), runs, "raw_d"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("test PCC") != std::string::npos);
    const auto summary = nlohmann::json::parse(slurp(runs / "summary.json"));
    CHECK(summary.at("report").at("test").contains("pcc"));
    CHECK(data_rows(runs / "metrics.jsonl") == 2);

    const std::vector<std::string> eval{"--out-dir", (tmp / "ev1").string(), "eval",
                                        "--checkpoint", (runs / "checkpoint.json").string(),
                                        "--data-dir", tmp.path().string(), "--fold", "test"};
    REQUIRE(run(eval).code == 0);
    auto again = eval;
    again[1] = (tmp / "ev2").string();
    REQUIRE(run(again).code == 0);
    CHECK(slurp(tmp / "ev1" / "eval_test.json") == slurp(tmp / "ev2" / "eval_test.json"));

    // Interpret with a threshold no gene reaches.
    const Result empty = run({"--out-dir", (tmp / "int").string(), "interpret", "--checkpoint",
                              (runs / "checkpoint.json").string(), "--data-dir",
                              tmp.path().string(), "--threshold", "1e9"});
    REQUIRE(empty.code == 0);
    const std::string counts = slurp(tmp / "int" / "attention_counts.tsv");
    CHECK(counts.find("up\t1000000000\t0") != std::string::npos);
    CHECK(counts.find("down\t1000000000\t0") != std::string::npos);

    // Per-gene dump: every α row sums to one.
    REQUIRE(run({"--out-dir", (tmp / "dump").string(), "interpret", "--checkpoint",
                 (runs / "checkpoint.json").string(), "--data-dir", tmp.path().string(),
                 "--threshold", "0.5", "--fold", "all", "--dump-genes"})
                .code == 0);
    std::ifstream in(tmp / "dump" / "attention_genes.tsv");
    std::string line;
    std::getline(in, line);
    std::size_t alpha_rows = 0;
    while (std::getline(in, line)) {
      std::istringstream fields(line);
      std::string gene, module, kind, label, weights;
      std::getline(fields, gene, '\t');
      std::getline(fields, module, '\t');
      std::getline(fields, kind, '\t');
      std::getline(fields, label, '\t');
      std::getline(fields, weights, '\t');
      std::istringstream ws(weights);
      std::string w;
      double total = 0.0;
      while (std::getline(ws, w, ',')) total += std::stod(w);
      CHECK(std::abs(total - 1.0) < 1e-9);
      if (kind == "alpha") ++alpha_rows;
    }
    CHECK(alpha_rows == 60 * 2);
  }

  SUBCASE("zero learning rate keeps validation PCC fixed") {
    auto args = small_train(tmp.path(), runs, "raw");
    args[std::find(args.begin(), args.end(), "--epochs") - args.begin() + 1] = "3";
    args.insert(args.end(), {"--lr", "0"});
    REQUIRE(run(args).code == 0);
    std::ifstream in(runs / "metrics.jsonl");
    std::string line;
    std::vector<double> pcc;
    while (std::getline(in, line)) pcc.push_back(nlohmann::json::parse(line).at("valid_pcc"));
    REQUIRE(pcc.size() == 3);
    CHECK(pcc[0] == pcc[1]);
    CHECK(pcc[1] == pcc[2]);
  }

  SUBCASE("aux_siamese checkpoints hold one shared Level I block") {
    REQUIRE(run(small_train(tmp.path(), runs, "aux_siamese")).code == 0);
    const auto ckpt = nlohmann::json::parse(slurp(runs / "checkpoint.json"));
    std::size_t shared = 0;
    for (const auto& p : ckpt.at("parameters")) {
      const auto name = p.at("name").get<std::string>();
      CHECK(name.rfind("f1_a.", 0) != 0);
      CHECK(name.rfind("f1_b.", 0) != 0);
      if (name.rfind("f1_ab.", 0) == 0) ++shared;
    }
    CHECK(shared == 2 * 7);  // two marks × (2 cells × 3 tensors + context)
  }

  SUBCASE("eval rejects a dataset with a different shape") {
    REQUIRE(run(small_train(tmp.path(), runs, "raw_d")).code == 0);
    testing::TempDir other;
    REQUIRE(run({"--seed", "3", "--out-dir", other.path().string(), "synth", "--genes", "60",
                 "--marks", "2", "--bins", "12", "--window-begin", "2", "--window-end", "5"})
                .code == 0);
    const Result r = run({"--out-dir", (tmp / "ev").string(), "eval", "--checkpoint",
                          (runs / "checkpoint.json").string(), "--data-dir",
                          other.path().string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("2x12") != std::string::npos);
    CHECK(r.err.find("2x10") != std::string::npos);
  }
}

TEST_CASE("the installed executable runs") {
  testing::TempDir tmp;
  const std::string cmd = std::string(DEEPDIFF_CLI_PATH) + " --out-dir " + tmp.path().string() +
                          " synth --genes 5 --bins 12 --window-begin 1 --window-end 2 > " +
                          (tmp / "log.txt").string() + " 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(data_rows(tmp / "signal_B.tsv") == 5);
}
