#pragma once

#include "deepdiff/tensor.hpp"
#include "deepdiff/variant.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepdiff {

/// Core marks in the fixed row order used everywhere.
inline constexpr std::array<std::string_view, 5> kCoreMarks = {
    "H3K4me3", "H3K4me1", "H3K36me3", "H3K9me3", "H3K27me3"};

/// Names for M rows: the core marks when M = 5, otherwise hm1..hmM.
std::vector<std::string> mark_names(int marks);

struct BinnedSignalSpec {
  int marks = 5;
  int bins = 200;
  int bin_width = 100;  // bp; the window spans ±bins*bin_width/2 around the TSS
};

enum class ExpressionUnit { Counts, Rpkm };

struct GeneSample {
  std::string gene_id;
  Matrix xa;  // M×T, cell type A
  Matrix xb;  // M×T, cell type B
  double expr_a = 0.0;  // raw expression values as read
  double expr_b = 0.0;
  double y_a = 0.0;  // ln(expr + 1)
  double y_b = 0.0;
  double y_diff = 0.0;  // y_a - y_b
  // Optional binarized per-cell labels in {-1, +1}.
  std::optional<int> class_a;
  std::optional<int> class_b;
};

struct Dataset {
  int marks = 0;
  int bins = 0;
  ExpressionUnit unit = ExpressionUnit::Counts;
  std::vector<GeneSample> genes;

  std::size_t size() const { return genes.size(); }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::filesystem::path& file, std::size_t line, const std::string& what);
};

struct LoadResult {
  Dataset dataset;
  std::size_t skipped = 0;  // genes absent from at least one file
  std::vector<std::string> warnings;
};

/// Reads two per-cell signal tables and the expression table. Genes missing
/// from any file are skipped and counted.
LoadResult load_dataset(const std::filesystem::path& signal_a,
                        const std::filesystem::path& signal_b,
                        const std::filesystem::path& expression,
                        const std::optional<BinnedSignalSpec>& expected = std::nullopt);

struct DatasetPaths {
  std::filesystem::path signal_a;
  std::filesystem::path signal_b;
  std::filesystem::path expression;
};

/// Conventional file names inside a dataset directory.
DatasetPaths dataset_paths(const std::filesystem::path& dir);

void save_dataset(const Dataset& dataset, const DatasetPaths& paths);

struct Labels {
  double y_a = 0.0;
  double y_b = 0.0;
  double y_diff = 0.0;
};

/// y = ln(count + 1) per cell; y_diff = y_a - y_b.
Labels compute_labels(double count_a, double count_b);

/// +1 when value exceeds the population median, else -1.
int binarize_expression(std::span<const double> population, double value);

/// Assigns class_a/class_b from the per-cell medians of `reference` genes.
void assign_class_labels(Dataset& dataset, std::span<const std::size_t> reference);

/// Variant input stacking. Raw-family variants return the single stacked
/// matrix; Aux-only variants return XA and XB unmodified.
std::vector<Matrix> build_input(Variant variant, const Matrix& xa, const Matrix& xb);

struct FoldSizes {
  std::size_t train = 10000;
  std::size_t valid = 2360;
  std::size_t test = 6100;
};

/// Same proportions as the 10000/2360/6100 split, scaled to n genes.
FoldSizes proportional_fold_sizes(std::size_t n);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1, then contiguous assignment.
FoldSplit split_folds(std::size_t n, std::uint64_t seed, const FoldSizes& sizes);

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t genes = 2000;
  int marks = 5;
  int bins = 200;
  double noise = 0.1;
  int planted_mark = 1;
  int window_begin = 95;  // inclusive
  int window_end = 105;   // inclusive
  double coefficient = 1.0;
  // Added to the per-cell targets so expression counts stay nonnegative.
  double expression_offset = 3.0;
};

/// Signals are |N(0,1)|. The per-cell targets are
/// offset + c * sum over the planted window of the planted mark's row, plus
/// Gaussian noise with marginal std σ split so that y_diff carries N(0, σ²).
Dataset generate_synthetic(const SyntheticConfig& cfg);

enum class Normalization { None, Log1p };

std::string_view normalization_name(Normalization n);
Normalization parse_normalization(std::string_view name);

Dataset normalize_signals(const Dataset& dataset, Normalization mode);

}  // namespace deepdiff
