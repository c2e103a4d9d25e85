#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tabbench/matrix.hpp"
#include "tabbench/rng.hpp"

namespace tabbench {

enum class ColumnKind { Numeric, Categorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  // Deduplicated and sorted for determinism; empty means "derive from data".
  std::vector<std::string> categories;
};

struct DatasetSchema {
  std::vector<ColumnSpec> columns;  // feature columns, in table order
  ColumnSpec target;                // always categorical
  std::optional<int64_t> openml_id;

  int64_t class_count() const { return static_cast<int64_t>(target.categories.size()); }
  int64_t feature_count() const { return static_cast<int64_t>(columns.size()); }
  int64_t categorical_count() const;
};

struct Provenance {
  std::string source;        // file path or OpenML URL
  std::string retrieved_at;  // ISO-8601, empty for local files
};

// Fully ingested table: numeric columns as doubles, categorical columns and
// the target as vocabulary indices. No missing values survive ingestion.
struct Dataset {
  DatasetSchema schema;
  Provenance provenance;
  std::string id;  // "openml:<id>" or the file path
  int64_t n = 0;

  // column-major storage, parallel to schema.columns
  std::vector<std::vector<double>> numeric;     // empty vector for categorical columns
  std::vector<std::vector<int32_t>> categoric;  // empty vector for numeric columns
  std::vector<int32_t> targets;                 // class indices 0..C-1

  int64_t dropped_rows = 0;  // rows removed at load time for missing cells
};

// Sidecar schema document (JSON): columns[{name, kind, categories?}], target, openml_id?
DatasetSchema read_sidecar(const std::string& path);
void write_sidecar(const std::string& path, const DatasetSchema& schema);

Dataset load_csv(const std::string& csv_path, const std::string& sidecar_path);
// Same loader for already-parsed text tables (used by the OpenML client).
Dataset build_dataset(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows, DatasetSchema schema,
                      Provenance provenance, std::string id);

// Minimal CSV reader: quoted fields, escaped quotes, CRLF tolerant.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// ---- preprocessing ----

struct FeatureStats {
  // Parallel to schema.columns; only numeric entries are meaningful.
  std::vector<double> mean;
  std::vector<double> stddev;  // population (n denominator)
  std::vector<bool> constant;  // stddev == 0
};

FeatureStats compute_stats(const Dataset& ds, const std::vector<std::size_t>& train_rows);

struct Preprocessed {
  Matrix features;               // standardized numerics + one-hot categoricals
  std::vector<int> labels;       // class indices per row
  std::vector<std::size_t> encoded_width_per_column;
  int64_t unseen_categories = 0;
};

// Row subset of the dataset encoded against train-derived stats. Numerics map
// to (x-mean)/stddev with constant columns emitted as 0; categoricals one-hot
// against the schema vocabulary (unseen values become all-zero and are
// counted).
Preprocessed preprocess(const Dataset& ds, const FeatureStats& stats,
                        const std::vector<std::size_t>& rows);

// ---- splits ----

struct SplitTriple {
  std::vector<std::size_t> train, val, test;
  uint64_t seed = 0;
  int split_id = 0;
};

// 70/10/20 with val/test rounded and the remainder to train; regenerable
// bit-exactly from (dataset id, seed, split id).
SplitTriple make_split(const std::string& dataset_id, int64_t n, uint64_t seed, int split_id);
std::vector<SplitTriple> make_splits(const Dataset& ds, uint64_t seed, int count = 30);

// ---- dataset metrics ----

// 100 * d / n on the raw (pre-one-hot) feature count.
double fs_ratio(const Dataset& ds);

// Mean absolute Pearson correlation over all feature pairs of the one-hot
// encoded, unstandardized matrix. Constant columns contribute 0 with their
// pairs. Absent when fewer than two encoded columns exist.
std::optional<double> c_score(const Dataset& ds);
std::optional<double> c_score_matrix(const Matrix& m);

// One-hot encoded but unstandardized feature matrix (the c_score input).
Matrix encode_raw(const Dataset& ds);

}  // namespace tabbench
