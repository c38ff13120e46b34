#include "trukan/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "trukan/error.hpp"

namespace trukan::data {

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const Tensor& x, double lo, double hi, bool squash) {
  if (x.rows() == 0) throw ValueError("standardizer: empty data");
  if (!(hi > lo)) throw ValueError("standardizer: target range must satisfy lo < hi");
  const std::size_t n = x.rows(), d = x.cols();
  Standardizer s;
  s.lo = lo;
  s.hi = hi;
  s.squash = squash;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += xd[r * d + c];
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) s.stddev[c] += (xd[r * d + c] - s.mean[c]) * (xd[r * d + c] - s.mean[c]);
  for (double& v : s.stddev) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v == 0.0) v = 1.0;  // constant column
  }
  s.zmin.assign(d, 0.0);
  s.zmax.assign(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double lo_z = INFINITY, hi_z = -INFINITY;
    for (std::size_t r = 0; r < n; ++r) {
      const double z = (xd[r * d + c] - s.mean[c]) / s.stddev[c];
      lo_z = std::min(lo_z, z);
      hi_z = std::max(hi_z, z);
    }
    s.zmin[c] = lo_z;
    s.zmax[c] = hi_z > lo_z ? hi_z : lo_z + 1.0;
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& x) const {
  const std::size_t n = x.rows(), d = x.cols();
  if (d != mean.size()) throw ShapeError("standardizer: fitted on " + std::to_string(mean.size()) + " features, got " +
                                         x.shape().str());
  Buffer out(n * d);
  auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double z = (xd[r * d + c] - mean[c]) / stddev[c];
      if (squash) z = lo + (hi - lo) * (z - zmin[c]) / (zmax[c] - zmin[c]);
      out[r * d + c] = z;
    }
  return Tensor::adopt({n, d}, std::move(out));
}

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out = *this;
  const std::size_t d = dim();
  Buffer f(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                f.begin() + static_cast<std::ptrdiff_t>(i * d));
  out.features = Tensor::adopt({rows.size(), d}, std::move(f));
  if (targets.defined()) {
    const std::size_t c = targets.cols();
    Buffer t(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(targets.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                  t.begin() + static_cast<std::ptrdiff_t>(i * c));
    out.targets = Tensor::adopt({rows.size(), c}, std::move(t));
  }
  if (!labels.empty()) {
    out.labels.clear();
    for (std::size_t r : rows) out.labels.push_back(labels[r]);
  }
  return out;
}

void Dataset::validate() const {
  if (!features.defined()) throw ValueError("dataset: no features");
  if (is_classification()) {
    if (labels.size() != rows()) throw ShapeError("dataset: label count does not match feature rows");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw ValueError("dataset: label out of range");
  } else if (!targets.defined() || targets.rows() != rows()) {
    throw ShapeError("dataset: target rows do not match feature rows");
  }
}

double alignment_target(double x, double y) { return std::exp(std::sin(std::numbers::pi * x) + y * y); }

Dataset gen_alignment_target(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValueError("gen_alignment_target: n must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Buffer f(2 * n), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    f[2 * i] = u(rng);
    f[2 * i + 1] = u(rng);
    t[i] = alignment_target(f[2 * i], f[2 * i + 1]);
  }
  Dataset ds;
  ds.features = Tensor::adopt({n, 2}, std::move(f));
  ds.targets = Tensor::adopt({n, 1}, std::move(t));
  ds.feature_names = {"x", "y"};
  ds.target_names = {"z"};
  return ds;
}

Dataset gen_blobs(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed, double separation) {
  if (n == 0 || d == 0 || classes < 2) throw ValueError("gen_blobs: need n > 0, d > 0 and at least two classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> centres(classes * d);
  for (double& c : centres) c = separation * g(rng);
  Dataset ds;
  Buffer f(n * d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) f[i * d + j] = centres[c * d + j] + g(rng);
  }
  ds.features = Tensor::adopt({n, d}, std::move(f));
  ds.num_classes = classes;
  for (std::size_t j = 0; j < d; ++j) ds.feature_names.push_back("f" + std::to_string(j));
  for (std::size_t c = 0; c < classes; ++c) ds.class_names.push_back(std::to_string(c));
  ds.target_names = {"label"};
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw ValueError("train_test_split: fraction must be in (0, 1)");
  std::vector<std::size_t> idx(ds.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(frac * static_cast<double>(ds.rows())));
  Dataset a = ds.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut)});
  Dataset b = ds.subset({idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end()});
  a.split = "train";
  b.split = "test";
  return {std::move(a), std::move(b)};
}

Standardizer standardize(Dataset& train, std::vector<Dataset*> others, double lo, double hi) {
  Standardizer s = Standardizer::fit(train.features, lo, hi);
  train.features = s.apply(train.features);
  train.stats = s;
  for (Dataset* o : others) {
    o->features = s.apply(o->features);
    o->stats = s;
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV

CsvTable parse_csv(std::istream& in) {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  std::size_t line = 1, record_line = 1;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) {
      if (table.header.empty() && table.rows.empty()) {
        table.header = std::move(record);
      } else {
        table.rows.push_back(std::move(record));
        table.lines.push_back(record_line);
      }
    }
    record.clear();
    any = false;
  };
  char c;
  while (in.get(c)) {
    if (!any) {
      record_line = line;
      any = true;
    }
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      if (in.peek() == '\n') continue;
      ++line;
      end_record();
    } else if (c == '\n') {
      ++line;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field starting on line " + std::to_string(record_line));
  if (any) end_record();
  return table;
}

namespace {

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_record(std::ostream& out, const std::vector<std::string>& rec) {
  for (std::size_t i = 0; i < rec.size(); ++i) out << (i ? "," : "") << quote(rec[i]);
  out << '\n';
}

bool parse_number(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
  if (b < e && *b == '+') ++b;
  if (b == e) return false;
  auto [p, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && p == e;
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table) {
  write_record(out, table.header);
  for (const auto& r : table.rows) write_record(out, r);
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

Dataset read_csv_dataset(std::istream& in, const CsvSchema& schema, const std::string& source) {
  if (schema.target_columns.empty()) throw ValueError("csv schema: at least one target column is required");
  if (schema.classification && schema.target_columns.size() != 1) {
    throw ValueError("csv schema: classification needs exactly one target column");
  }
  CsvTable table = parse_csv(in);
  if (table.header.empty()) throw FormatError(source + ": missing header row");
  auto column = [&](const std::string& name) {
    auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) throw FormatError(source + ": no column named '" + name + "'");
    return static_cast<std::size_t>(it - table.header.begin());
  };
  std::vector<std::size_t> tcols, fcols;
  for (const auto& n : schema.target_columns) tcols.push_back(column(n));
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < table.header.size(); ++c)
      if (std::find(tcols.begin(), tcols.end(), c) == tcols.end()) fcols.push_back(c);
  } else {
    for (const auto& n : schema.feature_columns) fcols.push_back(column(n));
  }
  if (fcols.empty()) throw FormatError(source + ": no feature columns");

  const std::size_t n = table.rows.size(), d = fcols.size();
  Dataset ds;
  for (auto c : fcols) ds.feature_names.push_back(table.header[c]);
  ds.target_names = schema.target_columns;
  Buffer f(n * d);
  Buffer t(schema.classification ? 0 : n * tcols.size());
  std::vector<std::string> raw_labels;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    const std::string where = source + ": line " + std::to_string(table.lines[r]);
    if (row.size() != table.header.size()) {
      throw FormatError(where + ": expected " + std::to_string(table.header.size()) + " fields, found " +
                        std::to_string(row.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (!parse_number(row[fcols[j]], f[r * d + j])) {
        throw FormatError(where + ", column '" + table.header[fcols[j]] + "': non-numeric value '" + row[fcols[j]] +
                          "'");
      }
    }
    if (schema.classification) {
      raw_labels.push_back(row[tcols[0]]);
    } else {
      for (std::size_t j = 0; j < tcols.size(); ++j)
        if (!parse_number(row[tcols[j]], t[r * tcols.size() + j])) {
          throw FormatError(where + ", column '" + table.header[tcols[j]] + "': non-numeric value '" +
                            row[tcols[j]] + "'");
        }
    }
  }
  ds.features = Tensor::adopt({n, d}, std::move(f));
  if (schema.classification) {
    ds.class_names = schema.labels;
    if (ds.class_names.empty()) {
      ds.class_names = raw_labels;
      std::sort(ds.class_names.begin(), ds.class_names.end());
      ds.class_names.erase(std::unique(ds.class_names.begin(), ds.class_names.end()), ds.class_names.end());
    }
    std::map<std::string, int> index;
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) index[ds.class_names[c]] = static_cast<int>(c);
    for (std::size_t r = 0; r < n; ++r) {
      auto it = index.find(raw_labels[r]);
      if (it == index.end()) {
        throw FormatError(source + ": line " + std::to_string(table.lines[r]) + ", column '" +
                          table.header[tcols[0]] + "': unknown label '" + raw_labels[r] + "'");
      }
      ds.labels.push_back(it->second);
    }
    ds.num_classes = ds.class_names.size();
  } else {
    ds.targets = Tensor::adopt({n, tcols.size()}, std::move(t));
  }
  if (schema.standardize) {
    ds.stats = Standardizer::fit(ds.features, schema.lo, schema.hi);
    ds.features = ds.stats->apply(ds.features);
  }
  return ds;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_csv_dataset(in, schema, path);
}

void write_csv_dataset(std::ostream& out, const Dataset& ds) {
  CsvTable table;
  table.header = ds.feature_names;
  if (table.header.size() != ds.dim()) {
    table.header.clear();
    for (std::size_t j = 0; j < ds.dim(); ++j) table.header.push_back("f" + std::to_string(j));
  }
  std::vector<std::string> tnames = ds.target_names;
  const std::size_t tc = ds.is_classification() ? 1 : ds.targets.cols();
  if (tnames.size() != tc) {
    tnames.clear();
    for (std::size_t j = 0; j < tc; ++j) tnames.push_back("target" + std::to_string(j));
  }
  table.header.insert(table.header.end(), tnames.begin(), tnames.end());
  auto fd = ds.features.data();
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < ds.dim(); ++j) row.push_back(format_double(fd[r * ds.dim() + j]));
    if (ds.is_classification()) {
      const int l = ds.labels[r];
      row.push_back(static_cast<std::size_t>(l) < ds.class_names.size() ? ds.class_names[l] : std::to_string(l));
    } else {
      for (std::size_t j = 0; j < tc; ++j) row.push_back(format_double(ds.targets.data()[r * tc + j]));
    }
    table.rows.push_back(std::move(row));
  }
  write_csv(out, table);
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv_dataset(out, ds);
}

}  // namespace trukan::data
