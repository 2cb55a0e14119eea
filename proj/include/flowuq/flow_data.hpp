#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowuq/error.hpp"
#include "flowuq/num_core.hpp"
#include "flowuq/serialize.hpp"

namespace flowuq {

/// Flow records: one row per flow, integer labels indexing `class_names`.
struct FlowDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> feature_names;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }
  bool empty() const noexcept { return labels.empty(); }

  void validate() const {
    if (features.rows() != labels.size())
      throw DimensionMismatch("dataset: feature rows != label count");
    if (!feature_names.empty() && feature_names.size() != features.cols())
      throw DimensionMismatch("dataset: feature name count != columns");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= class_names.size())
        throw InvalidInput("dataset: label outside class table");
    require_finite(features.data(), "dataset");
  }

  FlowDataset subset(std::span<const std::size_t> rows) const {
    FlowDataset out;
    out.features = select_rows(features, rows);
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels[r]);
    out.class_names = class_names;
    out.feature_names = feature_names;
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(class_names.size(), 0);
    for (int y : labels) ++c[static_cast<std::size_t>(y)];
    return c;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

/// Splits one CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV ingestion

inline const std::vector<std::string>& default_drop_columns() {
  static const std::vector<std::string> cols = {"IPV4_SRC_ADDR",         "IPV4_DST_ADDR",
                                                "L7_PROTO_NAME",         "FLOW_START_MILLISECONDS",
                                                "FLOW_END_MILLISECONDS", "Label"};
  return cols;
}

struct CsvLoadResult {
  FlowDataset dataset;
  std::size_t rejected_rows = 0;
};

/// Reads a NetFlow-style CSV. Every retained column must parse as a finite
/// real; rows that do not are dropped and counted. Labels are numbered in
/// order of first appearance. Drop-list entries missing from the header are
/// ignored.
inline CsvLoadResult load_flow_csv(std::istream& in, const std::string& label_column = "Attack",
                                   const std::vector<std::string>& drop_columns =
                                       default_drop_columns()) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("csv: missing header row");
  auto header = detail::split_csv_line(line);
  auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) throw SchemaError("csv: label column '" + label_column + "' not found");
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());

  std::set<std::string> drop(drop_columns.begin(), drop_columns.end());
  std::vector<std::size_t> keep;
  CsvLoadResult result;
  FlowDataset& ds = result.dataset;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == label_idx || drop.count(header[i])) continue;
    keep.push_back(i);
    ds.feature_names.push_back(header[i]);
  }

  std::unordered_map<std::string, int> class_ids;
  std::vector<double> values;
  std::vector<double> row(keep.size());
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    bool ok = fields.size() == header.size() && !fields[label_idx].empty();
    for (std::size_t j = 0; ok && j < keep.size(); ++j) {
      try {
        row[j] = parse_double(fields[keep[j]]);
      } catch (const FormatError&) {
        ok = false;
        break;
      }
      if (!std::isfinite(row[j])) ok = false;
    }
    if (!ok) {
      ++result.rejected_rows;
      continue;
    }
    const auto& name = fields[label_idx];
    auto [it, inserted] = class_ids.try_emplace(name, static_cast<int>(ds.class_names.size()));
    if (inserted) ds.class_names.push_back(name);
    ds.labels.push_back(it->second);
    values.insert(values.end(), row.begin(), row.end());
    ++n;
  }
  if (n == 0) throw EmptyDataset("csv: no valid rows");
  ds.features = Matrix(n, keep.size(), std::move(values));
  return result;
}

inline CsvLoadResult load_flow_csv(const std::string& path, const std::string& label_column = "Attack",
                                   const std::vector<std::string>& drop_columns =
                                       default_drop_columns()) {
  std::ifstream in(path);
  if (!in) throw SchemaError("csv: cannot open " + path);
  return load_flow_csv(in, label_column, drop_columns);
}

// ---------------------------------------------------------------------------
// Dataset dump: CSV with a two-line preamble.
//
//   # flowuq-dataset 1
//   # classes: <name>,<name>,...
//   <feature>,...,<feature>,label
//   <value>,...,<value>,<class name>

inline void write_dataset(std::ostream& os, const FlowDataset& ds) {
  os << "# flowuq-dataset 1\n# classes: ";
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) {
    if (ds.class_names[i].find(',') != std::string::npos)
      throw InvalidInput("dataset dump: class name contains a comma");
    os << (i ? "," : "") << ds.class_names[i];
  }
  os << '\n';
  for (std::size_t j = 0; j < ds.dim(); ++j)
    os << (j < ds.feature_names.size() ? ds.feature_names[j] : "f" + std::to_string(j)) << ',';
  os << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) os << format_double(v) << ',';
    os << ds.class_names[static_cast<std::size_t>(ds.labels[i])] << '\n';
  }
}

inline FlowDataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "# flowuq-dataset 1")
    throw FormatError("dataset dump: bad header");
  if (!std::getline(is, line) || line.rfind("# classes: ", 0) != 0)
    throw FormatError("dataset dump: missing class table");
  FlowDataset ds;
  std::string names = line.substr(11);
  if (!names.empty()) ds.class_names = detail::split_csv_line(names);
  std::unordered_map<std::string, int> ids;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i)
    ids[ds.class_names[i]] = static_cast<int>(i);
  if (!std::getline(is, line)) throw FormatError("dataset dump: missing column header");
  auto header = detail::split_csv_line(line);
  if (header.empty() || header.back() != "label") throw FormatError("dataset dump: bad column header");
  header.pop_back();
  ds.feature_names = header;
  std::vector<double> values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size() + 1) throw FormatError("dataset dump: ragged row");
    for (std::size_t j = 0; j < header.size(); ++j) values.push_back(parse_double(f[j]));
    auto it = ids.find(f.back());
    if (it == ids.end()) throw FormatError("dataset dump: unknown class " + f.back());
    ds.labels.push_back(it->second);
  }
  ds.features = Matrix(ds.labels.size(), header.size(), std::move(values));
  return ds;
}

inline void save_dataset(const std::string& path, const FlowDataset& ds) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_dataset(os, ds);
}

inline FlowDataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Standardization

struct Standardizer {
  std::vector<double> means;
  std::vector<double> stds;

  static constexpr double kStdFloor = 1e-12;

  /// Per-column mean and population standard deviation; columns whose
  /// deviation falls below the floor get std 1.
  static Standardizer fit(const FlowDataset& train) {
    if (train.empty()) throw EmptyDataset("standardizer: empty training set");
    const std::size_t n = train.size(), d = train.dim();
    Standardizer s;
    s.means.assign(d, 0.0);
    s.stds.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s.means[j] += train.features(i, j);
    for (double& m : s.means) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double z = train.features(i, j) - s.means[j];
        s.stds[j] += z * z;
      }
    for (double& v : s.stds) {
      v = std::sqrt(v / static_cast<double>(n));
      if (v < kStdFloor) v = 1.0;
    }
    return s;
  }

  Matrix transform(const Matrix& x) const {
    if (x.cols() != means.size()) throw DimensionMismatch("standardizer: column count differs");
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = (out(i, j) - means[j]) / stds[j];
    return out;
  }

  FlowDataset apply(const FlowDataset& ds) const {
    FlowDataset out = ds;
    out.features = transform(ds.features);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Scenarios

/// Known/unknown partition of one dataset. Labels in train/val/test index
/// `known_class_names`; labels in `ood` index `unknown_class_names`.
struct ScenarioBundle {
  FlowDataset train, val, test, ood;
  std::vector<std::string> known_class_names;
  std::vector<std::string> unknown_class_names;
};

namespace detail {

inline ScenarioBundle partition_impl(const FlowDataset& ds, const std::vector<bool>& is_unknown,
                                     std::uint64_t split_seed) {
  const std::size_t c = ds.num_classes();
  std::vector<std::vector<std::size_t>> by_class(c);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  ScenarioBundle b;
  std::vector<int> known_id(c, -1), unknown_id(c, -1);
  for (std::size_t k = 0; k < c; ++k) {
    if (is_unknown[k]) {
      unknown_id[k] = static_cast<int>(b.unknown_class_names.size());
      b.unknown_class_names.push_back(ds.class_names[k]);
    } else {
      known_id[k] = static_cast<int>(b.known_class_names.size());
      b.known_class_names.push_back(ds.class_names[k]);
    }
  }

  Rng rng(split_seed);
  std::vector<std::size_t> tr, va, te, oo;
  std::size_t min_unknown = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 0; k < c; ++k)
    if (is_unknown[k]) min_unknown = std::min(min_unknown, by_class[k].size());
  if (min_unknown == std::numeric_limits<std::size_t>::max()) min_unknown = 0;
  for (std::size_t k = 0; k < c; ++k) {
    auto& rows = by_class[k];
    rng.shuffle(rows.begin(), rows.end());
    if (is_unknown[k]) {
      oo.insert(oo.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(min_unknown));
      continue;
    }
    const std::size_t n = rows.size();
    const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
    tr.insert(tr.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    va.insert(va.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train),
              rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    te.insert(te.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), rows.end());
  }
  for (auto* part : {&tr, &va, &te, &oo}) rng.shuffle(part->begin(), part->end());

  auto build = [&](const std::vector<std::size_t>& rows, const std::vector<int>& remap,
                   const std::vector<std::string>& names) {
    FlowDataset out = ds.subset(rows);
    for (int& y : out.labels) y = remap[static_cast<std::size_t>(y)];
    out.class_names = names;
    return out;
  };
  b.train = build(tr, known_id, b.known_class_names);
  b.val = build(va, known_id, b.known_class_names);
  b.test = build(te, known_id, b.known_class_names);
  b.ood = build(oo, unknown_id, b.unknown_class_names);
  return b;
}

}  // namespace detail

/// Stratified 60/20/20 split of the known classes and equal-count
/// subsampling of the unknown classes. No standardization happens here.
inline ScenarioBundle partition_scenario(const FlowDataset& ds,
                                         const std::vector<std::string>& unknown_classes,
                                         std::uint64_t split_seed) {
  ds.validate();
  const std::size_t c = ds.num_classes();
  std::vector<bool> is_unknown(c, false);
  for (const auto& name : unknown_classes) {
    auto it = std::find(ds.class_names.begin(), ds.class_names.end(), name);
    if (it == ds.class_names.end()) throw InvalidInput("scenario: unknown class '" + name + "' not in dataset");
    is_unknown[static_cast<std::size_t>(it - ds.class_names.begin())] = true;
  }
  const auto n_unknown = static_cast<std::size_t>(std::count(is_unknown.begin(), is_unknown.end(), true));
  if (n_unknown == 0 || n_unknown == c)
    throw InvalidInput("scenario: unknown classes must be a proper nonempty subset");
  return detail::partition_impl(ds, is_unknown, split_seed);
}

/// Same stratified split with every class known; `ood` stays empty.
inline ScenarioBundle closed_set_split(const FlowDataset& ds, std::uint64_t split_seed) {
  ds.validate();
  if (ds.empty()) throw EmptyDataset("split: empty dataset");
  return detail::partition_impl(ds, std::vector<bool>(ds.num_classes(), false), split_seed);
}

/// The ten classes of the NF-ToN-IoT-v2 sample table.
inline const std::vector<std::string>& nf_ton_iot_classes() {
  static const std::vector<std::string> c = {"Benign",   "Scanning", "XSS",      "DDoS",
                                             "Password", "DoS",      "Injection", "Backdoor",
                                             "MITM",     "Ransomware"};
  return c;
}

/// Unknown classes of the named scenarios "3u", "6u", "8u" resolved against
/// the dataset's own spelling (matching is case-insensitive). Throws
/// ConfigError unless the dataset carries exactly the ten reference classes.
inline std::vector<std::string> named_scenario_unknowns(const std::string& scenario,
                                                        const std::vector<std::string>& class_names) {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"3u", {"backdoor", "mitm", "ransomware"}},
      {"6u", {"password", "dos", "injection", "backdoor", "mitm", "ransomware"}},
      {"8u", {"xss", "ddos", "password", "dos", "injection", "backdoor", "mitm", "ransomware"}}};
  auto it = table.find(detail::lower(scenario));
  if (it == table.end()) throw ConfigError("scenario: unknown named scenario '" + scenario + "'");
  std::map<std::string, std::string> present;
  for (const auto& n : class_names) present[detail::lower(n)] = n;
  if (present.size() != nf_ton_iot_classes().size())
    throw ConfigError("scenario '" + scenario + "' requires the ten NF-ToN-IoT-v2 classes");
  for (const auto& ref : nf_ton_iot_classes())
    if (!present.count(detail::lower(ref)))
      throw ConfigError("scenario '" + scenario + "' requires class " + ref);
  std::vector<std::string> out;
  for (const auto& u : it->second) out.push_back(present.at(u));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

struct SynthConfig {
  /// Samples per known class; its length is the number of known classes.
  std::vector<std::size_t> class_counts;
  std::size_t dim = 2;
  /// Explicit known-class centers; when empty, centers are drawn as
  /// N(0, center_spread^2 I) in units of `scale`.
  std::vector<std::vector<double>> centers;
  double center_spread = 5.0;
  /// Isotropic standard deviation of every blob.
  double scale = 1.0;
  /// Extra classes placed far from the known ones (future unknowns).
  std::size_t num_unknown = 0;
  std::size_t unknown_count = 0;
  /// Minimum distance, in units of `scale`, from each unknown center to
  /// every known center.
  double unknown_distance = 20.0;

  void validate() const {
    if (class_counts.empty()) throw ConfigError("synth: no classes");
    if (dim == 0) throw ConfigError("synth: dimension must be positive");
    if (!(scale > 0.0)) throw ConfigError("synth: scale must be positive");
    for (auto c : class_counts)
      if (c == 0) throw ConfigError("synth: class counts must be positive");
    if (num_unknown > 0 && unknown_count == 0) throw ConfigError("synth: unknown count must be positive");
    if (num_unknown > 0 && !(unknown_distance > 0.0)) throw ConfigError("synth: unknown distance must be positive");
    if (!centers.empty()) {
      if (centers.size() != class_counts.size()) throw ConfigError("synth: one center per known class");
      for (const auto& c : centers)
        if (c.size() != dim) throw ConfigError("synth: center dimension mismatch");
    }
  }
};

/// Gaussian blobs named c0, c1, ...; unknown classes follow the known ones.
/// Each unknown center sits on a random direction from the centroid of the
/// known centers, far enough that every known center is at least
/// `unknown_distance * scale` away.
inline FlowDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Rng center_rng = rng.split(1);
  Rng sample_rng = rng.split(2);
  const std::size_t k = cfg.class_counts.size(), d = cfg.dim;

  std::vector<std::vector<double>> centers = cfg.centers;
  if (centers.empty()) {
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> v(d);
      for (double& x : v) x = center_rng.normal() * cfg.center_spread * cfg.scale;
      centers.push_back(std::move(v));
    }
  }
  std::vector<double> centroid(d, 0.0);
  for (const auto& c : centers)
    for (std::size_t j = 0; j < d; ++j) centroid[j] += c[j] / static_cast<double>(k);
  double radius = 0.0;
  for (const auto& c : centers) {
    double r = 0.0;
    for (std::size_t j = 0; j < d; ++j) r += (c[j] - centroid[j]) * (c[j] - centroid[j]);
    radius = std::max(radius, std::sqrt(r));
  }
  std::vector<std::size_t> counts = cfg.class_counts;
  for (std::size_t u = 0; u < cfg.num_unknown; ++u) {
    std::vector<double> dir(d);
    for (double& x : dir) x = center_rng.normal();
    const double nrm = norm2(dir);
    std::vector<double> c(d);
    for (std::size_t j = 0; j < d; ++j)
      c[j] = centroid[j] + dir[j] / nrm * (radius + cfg.unknown_distance * cfg.scale);
    centers.push_back(std::move(c));
    counts.push_back(cfg.unknown_count);
  }

  FlowDataset ds;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  ds.features = Matrix(total, d);
  ds.labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) ds.features(row, j) = centers[c][j] + cfg.scale * sample_rng.normal();
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  for (std::size_t j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  return ds;
}

}  // namespace flowuq
