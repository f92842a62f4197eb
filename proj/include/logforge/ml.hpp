#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace logforge::ml {

// Rectangular table of text cells; a column is numeric when every non-empty
// cell parses as a number and at least one cell is non-empty.
class DataTable {
 public:
  DataTable() = default;
  explicit DataTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t row_count() const { return rows_.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const;
  // Throws ModelError naming the field when absent.
  std::size_t require(std::string_view name) const;
  bool is_numeric(std::size_t col) const;

  void add_row(std::vector<std::string> row);  // throws when not rectangular
  // Sets (or appends) a column; values.size() must equal row_count().
  void set_column(const std::string& name, std::vector<std::string> values);
  std::vector<std::string> column(std::string_view name) const;

  static DataTable parse_csv(std::string_view text);
  static DataTable read_csv(const std::filesystem::path& path);
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

// Maps selected fields to a dense feature vector. Numeric fields may be
// standardized; categorical fields are one-hot encoded with an optional
// reserved "unseen" column.
struct FeatureEncoder {
  struct Field {
    std::string name;
    bool numeric = false;
    double mean = 0;
    double scale = 1;
    std::vector<std::string> categories;  // sorted
  };
  std::vector<Field> fields;
  bool unseen_column = true;

  static FeatureEncoder fit(const DataTable& t, const std::vector<std::string>& names,
                            const std::vector<std::size_t>& rows, bool standardize,
                            bool unseen_column);
  std::size_t width() const;
  // nullopt when a numeric cell is empty or unparsable.
  std::optional<std::vector<double>> encode(const DataTable& t, std::size_t row) const;
  std::vector<std::string> feature_names() const;
};

struct PcaModel {
  std::vector<std::string> fields;
  FeatureEncoder encoder;
  std::size_t k = 0;
  std::vector<double> means;
  std::vector<std::vector<double>> components;  // k orthonormal rows
  std::vector<double> explained_variance;       // descending
};

struct LogRegModel {
  std::string response;
  std::vector<std::string> predictors;
  FeatureEncoder encoder;
  std::vector<std::string> classes;
  std::vector<std::vector<double>> weights;  // classes x (features + intercept)
  bool fit_intercept = true;
  double train_fraction = 0.5;
  std::uint64_t seed = 42;
};

using Model = std::variant<PcaModel, LogRegModel>;

struct ClassificationStats {
  struct PerClass {
    std::string label;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t support = 0;
  };
  double accuracy = 0;
  double precision = 0;  // macro
  double recall = 0;     // macro
  double f1 = 0;         // mean of per-class F1
  std::vector<std::string> labels;                 // sorted union
  std::vector<std::vector<std::size_t>> confusion;  // actual x predicted
  std::vector<PerClass> per_class;
};

ClassificationStats classification_stats(const std::vector<std::string>& actual,
                                         const std::vector<std::string>& predicted);
ClassificationStats classification_stats(const DataTable& t, std::string_view actual,
                                         std::string_view predicted);

struct LogRegOptions {
  double train_fraction = 0.5;
  std::uint64_t seed = 42;
  bool fit_intercept = true;
  std::size_t max_iterations = 5000;
  double gradient_tolerance = 1e-6;
};

struct FitReport {
  ClassificationStats heldout;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  std::vector<std::string> train_predictions;  // aligned with train_rows
  std::size_t iterations = 0;
  double final_loss = 0;
  double gradient_norm = 0;  // infinity norm at exit
};

std::pair<PcaModel, DataTable> fit_pca(const DataTable& t, const std::vector<std::string>& fields,
                                       std::size_t k);
std::pair<LogRegModel, FitReport> fit_logreg(const DataTable& t, const std::string& response,
                                             const std::vector<std::string>& predictors,
                                             const LogRegOptions& options = {});

// Appends PC_1..PC_k or `predicted(<response>)`.
DataTable apply_model(const Model& model, const DataTable& t);
std::vector<std::string> predict(const LogRegModel& model, const DataTable& t);

struct AnomalyRow {
  std::size_t row = 0;  // index into the input table
  std::vector<std::string> cells;
  double probability = 1;
  std::string probable_cause;
  int is_outlier = 0;
};

inline constexpr double kDefaultOutlierThreshold = 0.5;

// Frequency-based categorical outliers. A row is an outlier when its
// probability (product of per-field value frequencies) is below
// threshold * median row probability. Sorted ascending by probability.
std::vector<AnomalyRow> anomaly_detect(const DataTable& t, const std::vector<std::string>& fields,
                                       double threshold = kDefaultOutlierThreshold);
DataTable anomaly_table(const DataTable& t, const std::vector<AnomalyRow>& rows);

nlohmann::json model_to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);

// Named models, optionally persisted as <dir>/<name>.model.json.
class ModelStore {
 public:
  ModelStore() = default;
  explicit ModelStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void put(const std::string& name, Model m);
  // Throws ModelError when unknown.
  const Model& get(const std::string& name);
  bool contains(const std::string& name);

 private:
  std::optional<std::filesystem::path> dir_;
  std::map<std::string, Model> models_;
};

namespace detail {

// Row-major dense matrix helpers used by the fitters.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Mean softmax cross-entropy and its gradient with respect to `weights`
// (classes x features). labels hold class indices.
double softmax_loss(const Matrix& x, const std::vector<std::size_t>& labels,
                    const Matrix& weights, Matrix* gradient);

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues descending; vectors are the matching rows.
void symmetric_eigen(const Matrix& a, std::vector<double>& values, Matrix& vectors);

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace detail

}  // namespace logforge::ml
