#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trukan/tensor.hpp"

namespace trukan::data {

// Per-feature z-score followed by an affine squash of the training range of
// z onto [lo, hi]. Fitted on the training split only.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> zmin;
  std::vector<double> zmax;
  double lo = -1.0;
  double hi = 1.0;
  bool squash = true;

  static Standardizer fit(const Tensor& x, double lo = -1.0, double hi = 1.0, bool squash = true);
  Tensor apply(const Tensor& x) const;
};

struct Dataset {
  Tensor features;              // n x d
  Tensor targets;               // n x c (regression); undefined for classification
  std::vector<int> labels;      // class indices (classification)
  std::size_t num_classes = 0;  // 0 for regression
  std::vector<std::string> class_names;
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  std::string split = "train";
  std::optional<Standardizer> stats;

  std::size_t rows() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool is_classification() const { return num_classes > 0; }
  Dataset subset(const std::vector<std::size_t>& rows) const;
  void validate() const;
};

double alignment_target(double x, double y);  // exp(sin(pi x) + y^2)
Dataset gen_alignment_target(std::size_t n, std::uint64_t seed);

// `classes` isotropic Gaussian clusters in R^d with centres drawn from
// N(0, separation^2) and unit within-class spread.
Dataset gen_blobs(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed, double separation = 1.0);

// Shuffled split; the first part has round(frac * n) rows.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double frac, std::uint64_t seed);

// Fits a Standardizer on `train` and applies it to every dataset given.
Standardizer standardize(Dataset& train, std::vector<Dataset*> others = {}, double lo = -1.0, double hi = 1.0);

// ---------------------------------------------------------------------------
// CSV (RFC-4180 quoting: fields with , " CR or LF are quoted, quotes doubled)

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
};

CsvTable parse_csv(std::istream& in);
void write_csv(std::ostream& out, const CsvTable& table);
std::string format_double(double v);  // shortest round-trip form

struct CsvSchema {
  std::vector<std::string> target_columns;   // required
  std::vector<std::string> feature_columns;  // empty: every other column
  bool classification = false;
  // Allowed class labels (classification); empty: sorted distinct labels.
  std::vector<std::string> labels;
  bool standardize = false;
  double lo = -1.0;
  double hi = 1.0;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);
Dataset read_csv_dataset(std::istream& in, const CsvSchema& schema, const std::string& source = "<stream>");
void save_csv(const Dataset& ds, const std::string& path);
void write_csv_dataset(std::ostream& out, const Dataset& ds);

}  // namespace trukan::data
