#include "deepdiff/cli.hpp"

#include "deepdiff/checkpoint.hpp"
#include "deepdiff/data.hpp"
#include "deepdiff/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace deepdiff::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  int threads = 1;
};

struct DataOptions {
  std::string data_dir;
  std::string signal_a;
  std::string signal_b;
  std::string expression;

  DatasetPaths paths() const {
    DatasetPaths p = data_dir.empty() ? DatasetPaths{} : dataset_paths(data_dir);
    if (!signal_a.empty()) p.signal_a = signal_a;
    if (!signal_b.empty()) p.signal_b = signal_b;
    if (!expression.empty()) p.expression = expression;
    if (p.signal_a.empty() || p.signal_b.empty() || p.expression.empty()) {
      throw std::invalid_argument("dataset not specified: pass --data-dir or all of "
                                  "--signal-a, --signal-b, --expression");
    }
    return p;
  }
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data-dir", d.data_dir,
                  "Directory holding signal_A.tsv, signal_B.tsv and expression.tsv");
  cmd->add_option("--signal-a", d.signal_a, "Cell type A signal table (overrides --data-dir)");
  cmd->add_option("--signal-b", d.signal_b, "Cell type B signal table (overrides --data-dir)");
  cmd->add_option("--expression", d.expression, "Expression table (overrides --data-dir)");
}

Dataset load(const DataOptions& opts, std::ostream& err) {
  const DatasetPaths p = opts.paths();
  LoadResult r = load_dataset(p.signal_a, p.signal_b, p.expression);
  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  return std::move(r.dataset);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) {
    throw std::runtime_error("cannot create output directory " + p.string());
  }
  return p;
}

std::string format_pcc(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

// --- synth -----------------------------------------------------------------

struct SynthOptions {
  SyntheticConfig cfg;
};

void cmd_synth(const GlobalOptions& g, SynthOptions opts, std::ostream& out) {
  opts.cfg.seed = g.seed;
  const fs::path dir = prepare_out_dir(g.out_dir);
  const Dataset ds = generate_synthetic(opts.cfg);
  save_dataset(ds, dataset_paths(dir));
  const auto& c = opts.cfg;
  ordered_json manifest{{"seed", c.seed},
                        {"genes", c.genes},
                        {"marks", c.marks},
                        {"bins", c.bins},
                        {"noise", c.noise},
                        {"planted_mark", c.planted_mark},
                        {"planted_mark_name", mark_names(c.marks)[static_cast<std::size_t>(c.planted_mark)]},
                        {"window_begin", c.window_begin},
                        {"window_end", c.window_end},
                        {"coefficient", c.coefficient},
                        {"expression_offset", c.expression_offset},
                        {"files", {"signal_A.tsv", "signal_B.tsv", "expression.tsv"}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << ds.size() << " genes (" << c.marks << "x" << c.bins << ") to "
      << dir.string() << '\n';
}

// --- train -----------------------------------------------------------------

struct TrainOptions {
  DataOptions data;
  std::string variant = "raw_d";
  std::string optimizer = "adam";
  std::string normalize = "none";
  std::optional<std::uint64_t> split_seed;
  std::optional<std::size_t> train_size;
  std::optional<std::size_t> valid_size;
  std::optional<std::size_t> test_size;
  TrainConfig cfg;
};

FoldSizes resolve_fold_sizes(std::size_t n, const TrainOptions& o) {
  FoldSizes s = proportional_fold_sizes(n);
  if (o.train_size) s.train = *o.train_size;
  if (o.valid_size) s.valid = *o.valid_size;
  if (o.test_size) {
    s.test = *o.test_size;
  } else if (o.train_size || o.valid_size) {
    s.test = n >= s.train + s.valid ? n - s.train - s.valid : 0;
  }
  return s;
}

void cmd_train(const GlobalOptions& g, TrainOptions opts, std::ostream& out, std::ostream& err) {
  TrainConfig& cfg = opts.cfg;
  cfg.variant = parse_variant(opts.variant);
  cfg.optimizer = parse_optimizer(opts.optimizer);
  cfg.normalization = parse_normalization(opts.normalize);
  cfg.seed = g.seed;
  cfg.threads = g.threads;

  const Dataset raw = load(opts.data, err);
  if (raw.size() < 3) throw std::invalid_argument("train: dataset has fewer than 3 genes");
  const Dataset ds = normalize_signals(raw, cfg.normalization);
  const std::uint64_t split_seed = opts.split_seed.value_or(g.seed);
  const FoldSizes sizes = resolve_fold_sizes(ds.size(), opts);
  const FoldSplit folds = split_folds(ds.size(), split_seed, sizes);

  const fs::path dir = prepare_out_dir(g.out_dir);
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write metrics.jsonl");

  DeepDiffModel model(model_config(cfg, ds.marks, ds.bins));
  TrainResult result = train(model, ds, folds, cfg, [&](const EpochRecord& rec) {
    metrics << to_json(rec).dump() << '\n';
    metrics.flush();
  });

  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.train = cfg;
  ckpt.dataset_size = ds.size();
  ckpt.split_seed = split_seed;
  ckpt.fold_sizes = sizes;
  ckpt.parameters = export_parameters(model);
  ckpt.optimizer = result.optimizer_state;
  ckpt.report = to_json(result.report);
  save_checkpoint(ckpt, dir / "checkpoint.json");

  ordered_json summary{{"variant", variant_tag(cfg.variant)},
                       {"dataset_size", ds.size()},
                       {"marks", ds.marks},
                       {"bins", ds.bins},
                       {"report", to_json(result.report)}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "variant " << variant_tag(cfg.variant) << ": selected epoch "
      << result.report.selected_epoch << ", valid PCC " << format_pcc(result.report.valid.pcc)
      << ", test PCC " << format_pcc(result.report.test.pcc) << '\n';
}

// --- eval / interpret shared -----------------------------------------------

struct Restored {
  Checkpoint ckpt;
  DeepDiffModel model;
  Dataset dataset;
  FoldSplit folds;
};

Restored restore(const std::string& checkpoint_path, const DataOptions& data, std::ostream& err) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Dataset raw = load(data, err);
  if (raw.marks != ckpt.model.marks || raw.bins != ckpt.model.bins) {
    throw std::invalid_argument("spec mismatch: dataset signals are " + std::to_string(raw.marks) +
                                "x" + std::to_string(raw.bins) + " but checkpoint expects " +
                                std::to_string(ckpt.model.marks) + "x" +
                                std::to_string(ckpt.model.bins));
  }
  if (raw.size() != ckpt.dataset_size) {
    throw std::invalid_argument("spec mismatch: dataset has " + std::to_string(raw.size()) +
                                " genes but checkpoint folds were drawn over " +
                                std::to_string(ckpt.dataset_size));
  }
  Dataset ds = normalize_signals(raw, ckpt.train.normalization);
  FoldSplit folds = split_folds(ds.size(), ckpt.split_seed, ckpt.fold_sizes);
  if (ckpt.model.classification_aux) assign_class_labels(ds, folds.train);
  DeepDiffModel model = restore_model(ckpt);
  return {std::move(ckpt), std::move(model), std::move(ds), std::move(folds)};
}

const std::vector<std::size_t>& fold_by_name(const FoldSplit& f, const std::string& name) {
  if (name == "train") return f.train;
  if (name == "valid") return f.valid;
  if (name == "test") return f.test;
  if (name == "all") throw std::logic_error("fold_by_name: 'all' is resolved by the caller");
  throw std::invalid_argument("unknown fold '" + name + "'; valid: train, valid, test, all");
}

std::vector<std::size_t> resolve_fold(const Restored& r, const std::string& name) {
  if (name == "all") {
    std::vector<std::size_t> all(r.dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  return fold_by_name(r.folds, name);
}

// --- eval ------------------------------------------------------------------

struct EvalOptions {
  DataOptions data;
  std::string checkpoint;
  std::string fold = "test";
};

void cmd_eval(const GlobalOptions& g, const EvalOptions& opts, std::ostream& out,
              std::ostream& err) {
  const Restored r = restore(opts.checkpoint, opts.data, err);
  const auto indices = resolve_fold(r, opts.fold);
  const SplitMetrics m = evaluate(r.model, r.dataset, indices, g.threads);
  const fs::path dir = prepare_out_dir(g.out_dir);
  ordered_json report{{"variant", variant_tag(r.model.variant())},
                      {"fold", opts.fold},
                      {"metrics", to_json(m)}};
  write_text(dir / ("eval_" + opts.fold + ".json"), report.dump(2) + "\n");
  out << "fold " << opts.fold << " (" << m.count << " genes): PCC " << format_pcc(m.pcc) << '\n';
}

// --- interpret -------------------------------------------------------------

struct InterpretOptions {
  DataOptions data;
  std::string checkpoint;
  std::string fold = "test";
  double threshold = 8.0;
  bool dump_genes = false;
};

void write_attention_tables(const fs::path& dir, const AttentionSummary& s) {
  std::ostringstream counts;
  counts << "set\tthreshold\tcount\n";
  std::ostringstream beta;
  beta << "set\tmodule\tposition\tlabel\tmean_beta\n";
  std::ostringstream alpha;
  alpha << "set\tmodule\trow\tlabel";
  const auto fmt = [](double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  };
  bool alpha_header = false;
  for (const AttentionSet* set : {&s.up, &s.down}) {
    counts << set->name << '\t' << fmt(s.threshold) << '\t' << set->count << '\n';
    for (const auto& m : set->beta) {
      for (std::size_t k = 0; k < m.values.size(); ++k) {
        beta << set->name << '\t' << m.module << '\t' << k << '\t' << m.labels[k] << '\t'
             << fmt(m.values[k]) << '\n';
      }
    }
    for (const auto& b : set->alpha) {
      if (!alpha_header) {
        for (Index t = 0; t < b.alpha.cols(); ++t) alpha << "\tbin" << (t + 1);
        alpha << '\n';
        alpha_header = true;
      }
      for (Index j = 0; j < b.alpha.rows(); ++j) {
        alpha << set->name << '\t' << b.module << '\t' << j << '\t'
              << b.labels[static_cast<std::size_t>(j)];
        for (Index t = 0; t < b.alpha.cols(); ++t) alpha << '\t' << fmt(b.alpha(j, t));
        alpha << '\n';
      }
    }
  }
  if (!alpha_header) alpha << '\n';
  write_text(dir / "attention_counts.tsv", counts.str());
  write_text(dir / "attention_beta.tsv", beta.str());
  write_text(dir / "attention_alpha.tsv", alpha.str());
}

void cmd_interpret(const GlobalOptions& g, const InterpretOptions& opts, std::ostream& out,
                   std::ostream& err) {
  const Restored r = restore(opts.checkpoint, opts.data, err);
  const auto indices = resolve_fold(r, opts.fold);
  const AttentionSummary s =
      attention_aggregate(r.model, r.dataset, indices, opts.threshold, g.threads);
  const fs::path dir = prepare_out_dir(g.out_dir);
  write_attention_tables(dir, s);

  if (opts.dump_genes) {
    std::ostringstream dump;
    dump << std::setprecision(17);
    dump << "gene_id\tmodule\tkind\tlabel\tweights\n";
    for (std::size_t i : indices) {
      const AttentionRecord rec = r.model.extract_attention(r.dataset.genes[i]);
      for (const auto& b : rec.bins) {
        for (Index j = 0; j < b.alpha.rows(); ++j) {
          dump << rec.gene_id << '\t' << b.module << "\talpha\t"
               << b.labels[static_cast<std::size_t>(j)] << '\t';
          for (Index t = 0; t < b.alpha.cols(); ++t) dump << (t ? "," : "") << b.alpha(j, t);
          dump << '\n';
        }
      }
      for (const auto& m : rec.marks) {
        dump << rec.gene_id << '\t' << m.module << "\tbeta\t-\t";
        for (std::size_t k = 0; k < m.beta.size(); ++k) dump << (k ? "," : "") << m.beta[k];
        dump << '\n';
      }
    }
    write_text(dir / "attention_genes.tsv", dump.str());
  }

  out << "threshold " << opts.threshold << ": " << s.up.count << " up-regulated, "
      << s.down.count << " down-regulated genes\n";
  for (const AttentionSet* set : {&s.up, &s.down}) {
    for (const auto& m : set->beta) {
      if (m.values.empty()) continue;
      const auto best = static_cast<std::size_t>(
          std::max_element(m.values.begin(), m.values.end()) - m.values.begin());
      out << "  " << set->name << " " << m.module << ": top position " << m.labels[best] << '\n';
    }
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DeepDiff: differential gene expression from histone modification signals"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Optional key=value configuration file; flags override it");

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Seed for data synthesis, initialization and shuffling")
      ->capture_default_str();
  app.add_option("--out-dir", global.out_dir, "Output directory")->capture_default_str();
  app.add_option("--threads", global.threads, "Worker threads for evaluation")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-signal synthetic dataset");
  {
    auto& c = synth.cfg;
    synth_cmd->add_option("--genes", c.genes, "Number of genes")->capture_default_str();
    synth_cmd->add_option("--marks", c.marks, "Histone marks per cell (M)")->capture_default_str();
    synth_cmd->add_option("--bins", c.bins, "Bins per mark (T)")->capture_default_str();
    synth_cmd->add_option("--noise", c.noise, "Target noise std")->capture_default_str();
    synth_cmd->add_option("--planted-mark", c.planted_mark, "0-based index of the informative mark")
        ->capture_default_str();
    synth_cmd->add_option("--window-begin", c.window_begin, "First informative bin (0-based)")
        ->capture_default_str();
    synth_cmd->add_option("--window-end", c.window_end, "Last informative bin (inclusive)")
        ->capture_default_str();
    synth_cmd->add_option("--coef", c.coefficient, "Target coefficient")->capture_default_str();
    synth_cmd->add_option("--offset", c.expression_offset, "Per-cell log-expression offset")
        ->capture_default_str();
  }

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a model and keep the best validation epoch");
  {
    auto& c = train_opts.cfg;
    add_data_options(train_cmd, train_opts.data);
    train_cmd->add_option("--variant", train_opts.variant,
                          "raw_d, raw_c, raw, aux, raw_aux, aux_siamese or raw_aux_siamese")
        ->capture_default_str();
    train_cmd->add_option("--epochs", c.epochs, "Maximum epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str();
    train_cmd->add_option("--lr", c.learning_rate, "Learning rate")->capture_default_str();
    train_cmd->add_option("--optimizer", train_opts.optimizer, "adam or sgd")->capture_default_str();
    train_cmd->add_option("--dropout", c.dropout, "Dropout probability")->capture_default_str();
    train_cmd->add_option("--margin", c.loss.margin, "Contrastive margin m")->capture_default_str();
    train_cmd->add_option("--w-diff", c.loss.diff, "Weight of the differential loss")
        ->capture_default_str();
    train_cmd->add_option("--w-cellaux", c.loss.cell_aux, "Weight of the per-cell loss")
        ->capture_default_str();
    train_cmd->add_option("--w-siamese", c.loss.siamese, "Weight of the contrastive loss")
        ->capture_default_str();
    train_cmd->add_flag("--squared-similar", c.loss.squared_similar_term,
                        "Use ½R² instead of ½R for similar pairs");
    train_cmd->add_option("--hidden1", c.level1_hidden, "Level I LSTM hidden size D")
        ->capture_default_str();
    train_cmd->add_option("--hidden2", c.level2_hidden, "Level II LSTM hidden size")
        ->capture_default_str();
    train_cmd->add_option("--mlp-hidden", c.mlp_hidden, "Hidden units of the differential head")
        ->capture_default_str();
    train_cmd->add_option("--forget-bias", c.forget_bias, "Initial LSTM forget-gate bias")
        ->capture_default_str();
    train_cmd->add_option("--normalize", train_opts.normalize, "Signal scaling: none or log1p")
        ->capture_default_str();
    train_cmd->add_flag("--classification-aux", c.classification_aux,
                        "Per-cell heads classify expression above/below the median");
    train_cmd->add_option("--patience", c.patience, "Early-stopping patience in epochs (0 = off)")
        ->capture_default_str();
    train_cmd->add_option("--clip-norm", c.clip_norm, "Global gradient-norm clip (0 = off)")
        ->capture_default_str();
    train_cmd->add_option("--split-seed", train_opts.split_seed, "Fold split seed (default: --seed)");
    train_cmd->add_option("--train-size", train_opts.train_size, "Training fold size");
    train_cmd->add_option("--valid-size", train_opts.valid_size, "Validation fold size");
    train_cmd->add_option("--test-size", train_opts.test_size, "Test fold size");
  }

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Recompute PCC of a checkpoint on a fold");
  add_data_options(eval_cmd, eval_opts.data);
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--fold", eval_opts.fold, "train, valid, test or all")->capture_default_str();

  InterpretOptions interp_opts;
  auto* interp_cmd = app.add_subcommand("interpret", "Aggregate attention over up/down-regulated genes");
  add_data_options(interp_cmd, interp_opts.data);
  interp_cmd->add_option("--checkpoint", interp_opts.checkpoint, "Checkpoint file")->required();
  interp_cmd->add_option("--fold", interp_opts.fold, "train, valid, test or all")
      ->capture_default_str();
  interp_cmd->add_option("--threshold", interp_opts.threshold, "|log fold change| threshold")
      ->capture_default_str();
  interp_cmd->add_flag("--dump-genes", interp_opts.dump_genes, "Write per-gene alpha/beta weights");

  std::vector<const char*> argv{"deepdiff"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth_cmd) cmd_synth(global, synth, out);
    if (*train_cmd) cmd_train(global, train_opts, out, err);
    if (*eval_cmd) cmd_eval(global, eval_opts, out, err);
    if (*interp_cmd) cmd_interpret(global, interp_opts, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace deepdiff::cli
