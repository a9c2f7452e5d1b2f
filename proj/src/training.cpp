#include "deepdiff/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace deepdiff {

namespace {

constexpr std::size_t kEvalChunk = 64;

// Runs fn(begin, end) over fixed-size chunks of [0, n) on up to `threads` workers.
template <typename Fn>
void for_each_chunk(std::size_t n, int threads, Fn fn) {
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  const auto workers =
      static_cast<std::size_t>(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                                                       1, std::max<std::size_t>(chunks, 1)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    NoGradGuard no_grad;
    for (std::size_t c = next++; c < chunks; c = next++) {
      fn(c * kEvalChunk, std::min(n, (c + 1) * kEvalChunk));
    }
  };
  if (workers <= 1) {
    work();
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        work();
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::optional<double> try_pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2) return std::nullopt;
  try {
    return pearson(a, b);
  } catch (const DegenerateInputError&) {
    return std::nullopt;
  }
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

Rng epoch_rng(std::uint64_t seed, int epoch, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), stream};
  return Rng(seq);
}

Tensor column(std::span<const std::size_t> idx, const Dataset& ds, double GeneSample::*field) {
  Matrix m(static_cast<Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) m(static_cast<Index>(i), 0) = ds.genes[idx[i]].*field;
  return Tensor(std::move(m));
}

std::vector<int> class_labels(std::span<const std::size_t> idx, const Dataset& ds, bool cell_a) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const auto& g = ds.genes[i];
    const auto& label = cell_a ? g.class_a : g.class_b;
    if (!label) throw std::invalid_argument("classification mode: gene " + g.gene_id + " has no class label");
    out.push_back(*label);
  }
  return out;
}

}  // namespace

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'; valid: adam, sgd");
}

ModelConfig model_config(const TrainConfig& cfg, int marks, int bins) {
  ModelConfig m;
  m.variant = cfg.variant;
  m.marks = marks;
  m.bins = bins;
  m.level1_hidden = cfg.level1_hidden;
  m.level2_hidden = cfg.level2_hidden;
  m.mlp_hidden = cfg.mlp_hidden;
  m.dropout = cfg.dropout;
  m.forget_bias = cfg.forget_bias;
  m.classification_aux = cfg.classification_aux;
  m.seed = cfg.seed;
  return m;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"variant", variant_tag(c.variant)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"learning_rate", c.learning_rate},
          {"optimizer", optimizer_name(c.optimizer)},
          {"dropout", c.dropout},
          {"w_diff", c.loss.diff},
          {"w_cellaux", c.loss.cell_aux},
          {"w_siamese", c.loss.siamese},
          {"margin", c.loss.margin},
          {"squared_similar_term", c.loss.squared_similar_term},
          {"level1_hidden", c.level1_hidden},
          {"level2_hidden", c.level2_hidden},
          {"mlp_hidden", c.mlp_hidden},
          {"forget_bias", c.forget_bias},
          {"normalization", normalization_name(c.normalization)},
          {"classification_aux", c.classification_aux},
          {"patience", c.patience},
          {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.loss.diff = j.at("w_diff").get<double>();
  c.loss.cell_aux = j.at("w_cellaux").get<double>();
  c.loss.siamese = j.at("w_siamese").get<double>();
  c.loss.margin = j.at("margin").get<double>();
  c.loss.squared_similar_term = j.at("squared_similar_term").get<bool>();
  c.level1_hidden = j.at("level1_hidden").get<int>();
  c.level2_hidden = j.at("level2_hidden").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.forget_bias = j.at("forget_bias").get<double>();
  c.normalization = parse_normalization(j.at("normalization").get<std::string>());
  c.classification_aux = j.at("classification_aux").get<bool>();
  c.patience = j.at("patience").get<int>();
  c.clip_norm = j.at("clip_norm").get<double>();
  return c;
}

double pearson(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size() || preds.size() < 2) {
    throw std::invalid_argument("pearson: need two equal-length lists of at least 2 values");
  }
  const auto n = static_cast<double>(preds.size());
  const double mx = std::accumulate(preds.begin(), preds.end(), 0.0) / n;
  const double my = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double dx = preds[i] - mx;
    const double dy = targets[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw DegenerateInputError("pearson: zero variance in " +
                               std::string(sxx == 0.0 ? "predictions" : "targets"));
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Predictions predict(const DeepDiffModel& model, const Dataset& dataset,
                    std::span<const std::size_t> indices, int threads) {
  Predictions out;
  const std::size_t n = indices.size();
  out.diff.assign(n, 0.0);
  const bool cells = has_cell_towers(model.variant());
  if (cells) {
    out.cell_a.assign(n, 0.0);
    out.cell_b.assign(n, 0.0);
  }
  const bool classify = model.config().classification_aux;
  const auto cell_value = [classify](const Tensor& t, Index i) {
    if (!classify) return t.value()(i, 0);
    const double a = t.value()(i, 0), b = t.value()(i, 1);
    return 1.0 / (1.0 + std::exp(a - b));
  };
  for_each_chunk(n, threads, [&](std::size_t begin, std::size_t end) {
    const Prediction p =
        model.forward(make_batch(dataset, indices.subspan(begin, end - begin)), ForwardContext{});
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = static_cast<Index>(i - begin);
      out.diff[i] = p.diff.value()(r, 0);
      if (cells) {
        out.cell_a[i] = cell_value(*p.cell_a, r);
        out.cell_b[i] = cell_value(*p.cell_b, r);
      }
    }
  });
  return out;
}

SplitMetrics evaluate(const DeepDiffModel& model, const Dataset& dataset,
                      std::span<const std::size_t> indices, int threads) {
  SplitMetrics m;
  m.count = indices.size();
  if (indices.empty()) return m;
  const Predictions p = predict(model, dataset, indices, threads);
  std::vector<double> y(indices.size()), ya(indices.size()), yb(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& g = dataset.genes[indices[i]];
    y[i] = g.y_diff;
    ya[i] = g.y_a;
    yb[i] = g.y_b;
  }
  m.pcc = try_pearson(p.diff, y);
  m.mse = mse_loss(p.diff, y);
  if (has_cell_towers(model.variant())) {
    if (model.config().classification_aux) {
      std::size_t hits_a = 0, hits_b = 0, labeled = 0;
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& g = dataset.genes[indices[i]];
        if (!g.class_a || !g.class_b) continue;
        ++labeled;
        hits_a += ((p.cell_a[i] > 0.5) == (*g.class_a == 1));
        hits_b += ((p.cell_b[i] > 0.5) == (*g.class_b == 1));
      }
      if (labeled > 0) {
        m.accuracy_a = static_cast<double>(hits_a) / static_cast<double>(labeled);
        m.accuracy_b = static_cast<double>(hits_b) / static_cast<double>(labeled);
      }
    } else {
      m.pcc_a = try_pearson(p.cell_a, ya);
      m.pcc_b = try_pearson(p.cell_b, yb);
    }
  }
  return m;
}

nlohmann::ordered_json to_json(const SplitMetrics& m) {
  nlohmann::ordered_json j{{"count", m.count}, {"pcc", opt(m.pcc)}, {"mse", m.mse}};
  if (m.pcc_a || m.pcc_b) {
    j["pcc_a"] = opt(m.pcc_a);
    j["pcc_b"] = opt(m.pcc_b);
  }
  if (m.accuracy_a || m.accuracy_b) {
    j["accuracy_a"] = opt(m.accuracy_a);
    j["accuracy_b"] = opt(m.accuracy_b);
  }
  return j;
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j{{"epoch", r.epoch}, {"loss", r.loss}, {"diff_loss", r.diff_loss}};
  if (r.cell_aux_loss) j["cell_aux_loss"] = *r.cell_aux_loss;
  if (r.siamese_loss) j["siamese_loss"] = *r.siamese_loss;
  j["valid_pcc"] = opt(r.valid_pcc);
  if (r.valid_pcc_a || r.valid_pcc_b) {
    j["valid_pcc_a"] = opt(r.valid_pcc_a);
    j["valid_pcc_b"] = opt(r.valid_pcc_b);
  }
  return j;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) epochs.push_back(to_json(e));
  return {{"selected_epoch", r.selected_epoch},
          {"train", to_json(r.train)},
          {"valid", to_json(r.valid)},
          {"test", to_json(r.test)},
          {"epochs", std::move(epochs)}};
}

std::vector<Matrix> snapshot(const ParameterList& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.value());
  return out;
}

void restore(const ParameterList& params, const std::vector<Matrix>& values) {
  if (params.size() != values.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    Matrix& dst = t.mutable_value();
    if (dst.rows() != values[i].rows() || dst.cols() != values[i].cols()) {
      throw DimensionError("restore: shape mismatch for " + params[i].name);
    }
    dst = values[i];
  }
}

BatchLoss batch_loss(const DeepDiffModel& model, const Dataset& dataset,
                     std::span<const std::size_t> indices, const TrainConfig& cfg,
                     const ForwardContext& ctx) {
  const Prediction p = model.forward(make_batch(dataset, indices), ctx);
  BatchLoss out;
  out.diff = mse_loss(p.diff, column(indices, dataset, &GeneSample::y_diff));
  LossComponents parts;
  parts.diff = out.diff;
  if (p.cell_a) {
    if (model.config().classification_aux) {
      out.cell_aux = add(nll_classification_loss(*p.cell_a, class_labels(indices, dataset, true)),
                         nll_classification_loss(*p.cell_b, class_labels(indices, dataset, false)));
    } else {
      out.cell_aux = add(mse_loss(*p.cell_a, column(indices, dataset, &GeneSample::y_a)),
                         mse_loss(*p.cell_b, column(indices, dataset, &GeneSample::y_b)));
    }
    parts.cell_aux = out.cell_aux;
  }
  if (p.siamese_a) {
    std::vector<SimilarityLabel> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) labels.push_back(similarity_label(dataset.genes[i].y_diff));
    out.siamese = contrastive_loss(siamese_distance(*p.siamese_a, *p.siamese_b), labels,
                                   cfg.loss.margin, cfg.loss.squared_similar_term);
    parts.siamese = out.siamese;
  }
  out.total = total_loss(model.variant(), parts, cfg.loss);
  return out;
}

namespace {

// Starts each regression head at its training-fold target mean. Per-cell log
// expression sits far from zero, and without this the early steps saturate the
// Level II states while the output bias catches up.
void center_output_biases(DeepDiffModel& model, const Dataset& ds,
                          std::span<const std::size_t> train, bool classification) {
  double a = 0.0, b = 0.0, d = 0.0;
  for (std::size_t i : train) {
    a += ds.genes[i].y_a;
    b += ds.genes[i].y_b;
    d += ds.genes[i].y_diff;
  }
  const auto n = static_cast<double>(train.size());
  const auto set = [](MlpHead* head, double mean) {
    if (head) head->bias(head->depth() - 1).mutable_value().setConstant(mean);
  };
  set(model.diff_head(), d / n);
  if (!classification) {
    set(model.head_a(), a / n);
    set(model.head_b(), b / n);
  }
}

}  // namespace

TrainResult train(DeepDiffModel& model, const Dataset& input, const FoldSplit& folds,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (folds.train.empty()) throw std::invalid_argument("train: empty training fold");
  if (folds.valid.empty()) throw std::invalid_argument("train: empty validation fold");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  if (cfg.variant != model.variant()) throw std::invalid_argument("train: variant mismatch");

  const Dataset* data = &input;
  Dataset labeled;
  if (cfg.classification_aux && has_cell_towers(cfg.variant)) {
    labeled = input;
    assign_class_labels(labeled, folds.train);
    data = &labeled;
  }
  const Dataset& ds = *data;
  center_output_biases(model, ds, folds.train, cfg.classification_aux);

  const ParameterList params = model.parameters();
  std::unique_ptr<Optimizer> optimizer;
  if (cfg.optimizer == OptimizerKind::Adam) {
    AdamConfig ac;
    ac.learning_rate = cfg.learning_rate;
    optimizer = std::make_unique<Adam>(ac);
  } else {
    optimizer = std::make_unique<Sgd>(cfg.learning_rate);
  }

  TrainResult result;
  EvalReport& report = result.report;
  std::vector<Matrix> best = snapshot(params);
  double best_pcc = -std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = folds.train;
    Rng shuffle_rng = epoch_rng(cfg.seed, epoch, 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
    }
    Rng dropout_rng = epoch_rng(cfg.seed, epoch, 1);
    const ForwardContext ctx{true, &dropout_rng};

    double sum_total = 0.0, sum_diff = 0.0, sum_aux = 0.0, sum_siamese = 0.0;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(batch, order.size() - start));
      BatchLoss loss;
      try {
        loss = batch_loss(model, ds, idx, cfg, ctx);
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b) + ": " + e.what());
      }
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      }
      backward(loss.total);
      if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
      optimizer->step(params);
      zero_grad(params);

      const auto w = static_cast<double>(idx.size());
      sum_total += w * total;
      sum_diff += w * loss.diff.item();
      if (loss.cell_aux) sum_aux += w * loss.cell_aux->item();
      if (loss.siamese) sum_siamese += w * loss.siamese->item();
    }

    const auto n = static_cast<double>(order.size());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = sum_total / n;
    rec.diff_loss = sum_diff / n;
    if (has_cell_towers(cfg.variant)) rec.cell_aux_loss = sum_aux / n;
    if (has_siamese(cfg.variant)) rec.siamese_loss = sum_siamese / n;
    const SplitMetrics valid = evaluate(model, ds, folds.valid, cfg.threads);
    rec.valid_pcc = valid.pcc;
    rec.valid_pcc_a = valid.pcc_a;
    rec.valid_pcc_b = valid.pcc_b;
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (valid.pcc && *valid.pcc > best_pcc) {
      best_pcc = *valid.pcc;
      best = snapshot(params);
      report.selected_epoch = epoch;
      result.optimizer_state = optimizer->state();
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      break;
    }
  }

  if (report.selected_epoch >= 0) {
    restore(params, best);
  } else {
    result.optimizer_state = optimizer->state();
  }
  result.best_parameters = snapshot(params);
  report.train = evaluate(model, ds, folds.train, cfg.threads);
  report.valid = evaluate(model, ds, folds.valid, cfg.threads);
  report.test = evaluate(model, ds, folds.test, cfg.threads);
  return result;
}

AttentionSet average_attention(std::string name, std::span<const AttentionRecord> records) {
  AttentionSet set;
  set.name = std::move(name);
  set.count = records.size();
  if (records.empty()) return set;
  const auto& first = records.front();
  for (const auto& m : first.marks) {
    set.beta.push_back({m.module, m.labels, std::vector<double>(m.beta.size(), 0.0)});
  }
  for (const auto& b : first.bins) {
    set.alpha.push_back({b.module, b.labels, Matrix::Zero(b.alpha.rows(), b.alpha.cols())});
  }
  for (const auto& rec : records) {
    for (std::size_t k = 0; k < rec.marks.size(); ++k) {
      for (std::size_t i = 0; i < rec.marks[k].beta.size(); ++i) {
        set.beta[k].values[i] += rec.marks[k].beta[i];
      }
    }
    for (std::size_t k = 0; k < rec.bins.size(); ++k) set.alpha[k].alpha += rec.bins[k].alpha;
  }
  const auto n = static_cast<double>(records.size());
  for (auto& m : set.beta) {
    for (double& v : m.values) v /= n;
  }
  for (auto& b : set.alpha) b.alpha /= n;
  return set;
}

AttentionSummary attention_aggregate(const DeepDiffModel& model, const Dataset& dataset,
                                     std::span<const std::size_t> indices, double threshold,
                                     int threads) {
  std::vector<std::size_t> up, down;
  for (std::size_t i : indices) {
    const double y = dataset.genes.at(i).y_diff;
    if (y > threshold) up.push_back(i);
    if (y < -threshold) down.push_back(i);
  }
  const auto records_for = [&](const std::vector<std::size_t>& set) {
    std::vector<AttentionRecord> records(set.size());
    for_each_chunk(set.size(), threads, [&](std::size_t begin, std::size_t end) {
      const std::span<const std::size_t> idx(set.data() + begin, end - begin);
      const Prediction p = model.forward(make_batch(dataset, idx), ForwardContext{});
      for (std::size_t i = begin; i < end; ++i) {
        records[i] = attention_record(p, static_cast<Index>(i - begin), dataset.genes[set[i]].gene_id);
      }
    });
    return records;
  };
  AttentionSummary summary;
  summary.threshold = threshold;
  summary.up = average_attention("up", records_for(up));
  summary.down = average_attention("down", records_for(down));
  return summary;
}

}  // namespace deepdiff
