#include "deepdiff/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace deepdiff {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

double parse_value(std::string_view field, const fs::path& file, std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty()) {
    throw ParseError(file, line, "non-numeric value '" + std::string(field) + "'");
  }
  if (!std::isfinite(v)) throw ParseError(file, line, "non-finite value");
  if (v < 0.0) throw ParseError(file, line, "negative value '" + std::string(field) + "'");
  return v;
}

void append_number(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

struct SignalTable {
  int marks = 0;
  int bins = 0;
  std::vector<std::string> order;
  std::unordered_map<std::string, Matrix> rows;
};

// Header: gene_id, then hm<k>_bin<t> in HM-major order, 1-based.
std::pair<int, int> parse_signal_header(std::string_view line, const fs::path& file) {
  const auto fields = split_tabs(line);
  if (fields.size() < 2 || fields[0] != "gene_id") {
    throw ParseError(file, 1, "header must start with gene_id followed by hm<k>_bin<t> columns");
  }
  int marks = 0, bins = 0;
  const std::string_view last = fields.back();
  if (std::sscanf(std::string(last).c_str(), "hm%d_bin%d", &marks, &bins) != 2 || marks < 1 ||
      bins < 1) {
    throw ParseError(file, 1, "cannot read signal dimensions from '" + std::string(last) + "'");
  }
  if (fields.size() != static_cast<std::size_t>(marks) * bins + 1) {
    throw ParseError(file, 1, "header has " + std::to_string(fields.size() - 1) +
                                  " signal columns, expected " + std::to_string(marks * bins));
  }
  std::size_t col = 1;
  for (int k = 1; k <= marks; ++k) {
    for (int t = 1; t <= bins; ++t, ++col) {
      const std::string expect = "hm" + std::to_string(k) + "_bin" + std::to_string(t);
      if (fields[col] != expect) {
        throw ParseError(file, 1, "column " + std::to_string(col + 1) + " is '" +
                                      std::string(fields[col]) + "', expected '" + expect + "'");
      }
    }
  }
  return {marks, bins};
}

SignalTable read_signal_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(file, 0, "cannot open file");
  SignalTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(file, 1, "missing header row");
  std::tie(table.marks, table.bins) = parse_signal_header(strip_cr(line), file);
  const std::size_t expected_fields = static_cast<std::size_t>(table.marks) * table.bins + 1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = strip_cr(line);
    if (view.empty()) continue;
    const auto fields = split_tabs(view);
    if (fields.size() != expected_fields) {
      throw ParseError(file, lineno, "expected " + std::to_string(expected_fields) +
                                         " fields, found " + std::to_string(fields.size()));
    }
    std::string id(fields[0]);
    if (id.empty()) throw ParseError(file, lineno, "empty gene_id");
    Matrix m(table.marks, table.bins);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      m.data()[k - 1] = parse_value(fields[k], file, lineno);
    }
    if (!table.rows.emplace(id, std::move(m)).second) {
      throw ParseError(file, lineno, "duplicate gene_id '" + id + "'");
    }
    table.order.push_back(std::move(id));
  }
  return table;
}

struct ExpressionRow {
  std::string gene_id;
  double a = 0.0;
  double b = 0.0;
};

struct ExpressionTable {
  ExpressionUnit unit = ExpressionUnit::Counts;
  std::vector<ExpressionRow> rows;
};

ExpressionTable read_expression_file(const fs::path& file, std::vector<std::string>& warnings) {
  std::ifstream in(file);
  if (!in) throw ParseError(file, 0, "cannot open file");
  ExpressionTable table;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = strip_cr(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      if (view.starts_with("#unit=")) {
        const auto unit = view.substr(6);
        if (unit == "counts") {
          table.unit = ExpressionUnit::Counts;
        } else if (unit == "rpkm") {
          table.unit = ExpressionUnit::Rpkm;
        } else {
          throw ParseError(file, lineno, "unknown unit '" + std::string(unit) + "'");
        }
      }
      continue;
    }
    const auto fields = split_tabs(view);
    if (fields.size() != 3) {
      throw ParseError(file, lineno,
                       "expected 3 fields, found " + std::to_string(fields.size()));
    }
    if (!header_seen && fields[0] == "gene_id") {
      header_seen = true;
      continue;
    }
    ExpressionRow row{std::string(fields[0]), parse_value(fields[1], file, lineno),
                      parse_value(fields[2], file, lineno)};
    if (!seen.insert(row.gene_id).second) {
      throw ParseError(file, lineno, "duplicate gene_id '" + row.gene_id + "'");
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) warnings.push_back(file.string() + ": no expression rows");
  return table;
}

void write_signal_file(const fs::path& file, const Dataset& ds, bool cell_a) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  std::string buf = "gene_id";
  for (int k = 1; k <= ds.marks; ++k) {
    for (int t = 1; t <= ds.bins; ++t) {
      buf += "\thm" + std::to_string(k) + "_bin" + std::to_string(t);
    }
  }
  buf += '\n';
  out << buf;
  for (const auto& g : ds.genes) {
    buf = g.gene_id;
    const Matrix& m = cell_a ? g.xa : g.xb;
    for (Index i = 0; i < m.size(); ++i) {
      buf += '\t';
      append_number(buf, m.data()[i]);
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

}  // namespace

ParseError::ParseError(const fs::path& file, std::size_t line, const std::string& what)
    : std::runtime_error(file.string() + ":" + std::to_string(line) + ": " + what) {}

std::vector<std::string> mark_names(int marks) {
  std::vector<std::string> names;
  for (int k = 0; k < marks; ++k) {
    names.push_back(marks == static_cast<int>(kCoreMarks.size())
                        ? std::string(kCoreMarks[static_cast<std::size_t>(k)])
                        : "hm" + std::to_string(k + 1));
  }
  return names;
}

LoadResult load_dataset(const fs::path& signal_a, const fs::path& signal_b,
                        const fs::path& expression,
                        const std::optional<BinnedSignalSpec>& expected) {
  LoadResult result;
  SignalTable a = read_signal_file(signal_a);
  SignalTable b = read_signal_file(signal_b);
  if (a.marks != b.marks || a.bins != b.bins) {
    throw ParseError(signal_b, 1, "signal shape " + std::to_string(b.marks) + "x" +
                                      std::to_string(b.bins) + " differs from cell A's " +
                                      std::to_string(a.marks) + "x" + std::to_string(a.bins));
  }
  if (expected && (expected->marks != a.marks || expected->bins != a.bins)) {
    throw ParseError(signal_a, 1, "signal shape " + std::to_string(a.marks) + "x" +
                                      std::to_string(a.bins) + " does not match expected " +
                                      std::to_string(expected->marks) + "x" +
                                      std::to_string(expected->bins));
  }
  ExpressionTable expr = read_expression_file(expression, result.warnings);

  Dataset& ds = result.dataset;
  ds.marks = a.marks;
  ds.bins = a.bins;
  ds.unit = expr.unit;

  std::unordered_set<std::string> all_ids;
  for (const auto& id : a.order) all_ids.insert(id);
  for (const auto& id : b.order) all_ids.insert(id);
  for (const auto& row : expr.rows) all_ids.insert(row.gene_id);

  for (auto& row : expr.rows) {
    auto ia = a.rows.find(row.gene_id);
    auto ib = b.rows.find(row.gene_id);
    if (ia == a.rows.end() || ib == b.rows.end()) continue;
    GeneSample g;
    g.gene_id = row.gene_id;
    g.xa = std::move(ia->second);
    g.xb = std::move(ib->second);
    g.expr_a = row.a;
    g.expr_b = row.b;
    const Labels labels = compute_labels(row.a, row.b);
    g.y_a = labels.y_a;
    g.y_b = labels.y_b;
    g.y_diff = labels.y_diff;
    ds.genes.push_back(std::move(g));
  }
  result.skipped = all_ids.size() - ds.genes.size();
  if (result.skipped > 0) {
    result.warnings.push_back("skipped " + std::to_string(result.skipped) +
                              " gene(s) not present in all three files");
  }
  return result;
}

DatasetPaths dataset_paths(const fs::path& dir) {
  return {dir / "signal_A.tsv", dir / "signal_B.tsv", dir / "expression.tsv"};
}

void save_dataset(const Dataset& dataset, const DatasetPaths& paths) {
  write_signal_file(paths.signal_a, dataset, true);
  write_signal_file(paths.signal_b, dataset, false);
  std::ofstream out(paths.expression, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + paths.expression.string());
  const bool counts = dataset.unit == ExpressionUnit::Counts;
  std::string buf = counts ? "#unit=counts\ngene_id\tcount_A\tcount_B\n"
                           : "#unit=rpkm\ngene_id\tvalue_A\tvalue_B\n";
  for (const auto& g : dataset.genes) {
    buf += g.gene_id;
    buf += '\t';
    append_number(buf, g.expr_a);
    buf += '\t';
    append_number(buf, g.expr_b);
    buf += '\n';
  }
  out << buf;
  if (!out) throw std::runtime_error("write failed: " + paths.expression.string());
}

Labels compute_labels(double count_a, double count_b) {
  if (!(count_a >= 0.0) || !(count_b >= 0.0)) {
    throw std::invalid_argument("compute_labels: counts must be nonnegative");
  }
  Labels l;
  l.y_a = std::log1p(count_a);
  l.y_b = std::log1p(count_b);
  l.y_diff = l.y_a - l.y_b;
  return l;
}

int binarize_expression(std::span<const double> population, double value) {
  if (population.empty()) throw std::invalid_argument("binarize_expression: empty population");
  std::vector<double> sorted(population.begin(), population.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return value > median ? 1 : -1;
}

void assign_class_labels(Dataset& dataset, std::span<const std::size_t> reference) {
  std::vector<double> pop_a, pop_b;
  for (std::size_t i : reference) {
    pop_a.push_back(dataset.genes.at(i).expr_a);
    pop_b.push_back(dataset.genes.at(i).expr_b);
  }
  for (auto& g : dataset.genes) {
    g.class_a = binarize_expression(pop_a, g.expr_a);
    g.class_b = binarize_expression(pop_b, g.expr_b);
  }
}

std::vector<Matrix> build_input(Variant variant, const Matrix& xa, const Matrix& xb) {
  if (xa.rows() != xb.rows() || xa.cols() != xb.cols()) {
    throw DimensionError("build_input: XA " + Shape{xa.rows(), xa.cols()}.str() + " vs XB " +
                         Shape{xb.rows(), xb.cols()}.str());
  }
  const Index m = xa.rows();
  const Index t = xa.cols();
  switch (variant) {
    case Variant::RawD:
      return {xa - xb};
    case Variant::RawC: {
      Matrix x(2 * m, t);
      x << xa, xb;
      return {x};
    }
    case Variant::Raw: {
      Matrix x(3 * m, t);
      x << xa, xb, xa - xb;
      return {x};
    }
    case Variant::RawAux:
    case Variant::RawAuxSiamese: {
      Matrix x(3 * m, t);
      x << xa, xb, xa - xb;
      return {x, xa, xb};
    }
    case Variant::Aux:
    case Variant::AuxSiamese:
      return {xa, xb};
  }
  throw std::invalid_argument("build_input: unknown variant");
}

FoldSizes proportional_fold_sizes(std::size_t n) {
  constexpr double total = 10000.0 + 2360.0 + 6100.0;
  FoldSizes s;
  s.train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 10000.0 / total));
  s.valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 2360.0 / total));
  s.train = std::min(s.train, n);
  s.valid = std::min(s.valid, n - s.train);
  s.test = n - s.train - s.valid;
  return s;
}

FoldSplit split_folds(std::size_t n, std::uint64_t seed, const FoldSizes& sizes) {
  if (sizes.train + sizes.valid + sizes.test > n) {
    throw std::invalid_argument("split_folds: sizes " + std::to_string(sizes.train) + "+" +
                                std::to_string(sizes.valid) + "+" + std::to_string(sizes.test) +
                                " exceed " + std::to_string(n) + " genes");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit index draw keeps the order stable across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  FoldSplit split;
  auto it = order.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
  it += static_cast<std::ptrdiff_t>(sizes.train);
  split.valid.assign(it, it + static_cast<std::ptrdiff_t>(sizes.valid));
  it += static_cast<std::ptrdiff_t>(sizes.valid);
  split.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes.test));
  return split;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.marks < 1 || cfg.bins < 1) throw std::invalid_argument("synthetic: empty signal shape");
  if (cfg.planted_mark < 0 || cfg.planted_mark >= cfg.marks) {
    throw std::invalid_argument("synthetic: planted mark out of range");
  }
  if (cfg.window_begin < 0 || cfg.window_end >= cfg.bins || cfg.window_begin > cfg.window_end) {
    throw std::invalid_argument("synthetic: window [" + std::to_string(cfg.window_begin) + ", " +
                                std::to_string(cfg.window_end) + "] not within [0, " +
                                std::to_string(cfg.bins) + ")");
  }
  if (cfg.noise < 0.0) throw std::invalid_argument("synthetic: noise must be nonnegative");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.marks = cfg.marks;
  ds.bins = cfg.bins;
  ds.unit = ExpressionUnit::Counts;
  ds.genes.reserve(cfg.genes);

  const int width = static_cast<int>(std::to_string(cfg.genes).size());
  for (std::size_t n = 0; n < cfg.genes; ++n) {
    GeneSample g;
    std::string id = std::to_string(n);
    g.gene_id = "gene" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    g.xa.resize(cfg.marks, cfg.bins);
    g.xb.resize(cfg.marks, cfg.bins);
    for (Index i = 0; i < g.xa.size(); ++i) g.xa.data()[i] = std::abs(normal(rng));
    for (Index i = 0; i < g.xb.size(); ++i) g.xb.data()[i] = std::abs(normal(rng));
    const double n_diff = cfg.noise * normal(rng);
    const double n_common = cfg.noise * std::sqrt(0.75) * normal(rng);

    const auto window = [&](const Matrix& x) {
      return x.row(cfg.planted_mark)
          .segment(cfg.window_begin, cfg.window_end - cfg.window_begin + 1)
          .sum();
    };
    const double planted_a =
        cfg.expression_offset + cfg.coefficient * window(g.xa) + n_common + 0.5 * n_diff;
    const double planted_b =
        cfg.expression_offset + cfg.coefficient * window(g.xb) + n_common - 0.5 * n_diff;
    if (planted_a < 0.0 || planted_b < 0.0) {
      throw std::invalid_argument("synthetic: negative expression target; raise the offset");
    }
    // Stored as counts so the in-memory dataset equals its reloaded file form.
    g.expr_a = std::expm1(planted_a);
    g.expr_b = std::expm1(planted_b);
    const Labels labels = compute_labels(g.expr_a, g.expr_b);
    g.y_a = labels.y_a;
    g.y_b = labels.y_b;
    g.y_diff = labels.y_diff;
    ds.genes.push_back(std::move(g));
  }
  return ds;
}

std::string_view normalization_name(Normalization n) {
  return n == Normalization::None ? "none" : "log1p";
}

Normalization parse_normalization(std::string_view name) {
  if (name == "none") return Normalization::None;
  if (name == "log1p") return Normalization::Log1p;
  throw std::invalid_argument("unknown normalization '" + std::string(name) +
                              "'; valid: none, log1p");
}

Dataset normalize_signals(const Dataset& dataset, Normalization mode) {
  Dataset out = dataset;
  if (mode == Normalization::None) return out;
  for (auto& g : out.genes) {
    for (Matrix* m : {&g.xa, &g.xb}) {
      if ((m->array() < 0.0).any()) {
        throw std::invalid_argument("normalize_signals: negative signal in " + g.gene_id);
      }
      *m = m->array().log1p().matrix();
    }
  }
  return out;
}

}  // namespace deepdiff
