#include "logforge/ml.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::ml {

std::optional<std::size_t> DataTable::index_of(std::string_view name) const {
  auto it = std::find(columns_.begin(), columns_.end(), name);
  if (it == columns_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns_.begin());
}

std::size_t DataTable::require(std::string_view name) const {
  if (auto i = index_of(name)) return *i;
  throw ModelError("field '" + std::string(name) + "' not found");
}

bool DataTable::is_numeric(std::size_t col) const {
  bool any = false;
  for (const auto& r : rows_) {
    if (r[col].empty()) continue;
    if (!parse_number(r[col])) return false;
    any = true;
  }
  return any;
}

void DataTable::add_row(std::vector<std::string> row) {
  if (row.size() != columns_.size())
    throw ModelError("row has " + std::to_string(row.size()) + " cells, expected " +
                     std::to_string(columns_.size()));
  rows_.push_back(std::move(row));
}

void DataTable::set_column(const std::string& name, std::vector<std::string> values) {
  if (values.size() != rows_.size()) throw ModelError("column length mismatch for " + name);
  auto idx = index_of(name);
  if (!idx) {
    columns_.push_back(name);
    for (std::size_t i = 0; i < rows_.size(); ++i) rows_[i].push_back(std::move(values[i]));
    return;
  }
  for (std::size_t i = 0; i < rows_.size(); ++i) rows_[i][*idx] = std::move(values[i]);
}

std::vector<std::string> DataTable::column(std::string_view name) const {
  auto c = require(name);
  std::vector<std::string> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[c]);
  return out;
}

namespace {

std::vector<std::vector<std::string>> parse_csv_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string cell;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      rec.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        rec.push_back(std::move(cell));
        records.push_back(std::move(rec));
      }
      rec.clear();
      cell.clear();
      any = false;
    } else {
      cell.push_back(c);
      any = true;
    }
  }
  if (quoted) throw ModelError("unterminated quoted CSV cell");
  if (any || !cell.empty()) {
    rec.push_back(std::move(cell));
    records.push_back(std::move(rec));
  }
  return records;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace

DataTable DataTable::parse_csv(std::string_view text) {
  auto records = parse_csv_records(text);
  if (records.empty()) return DataTable();
  DataTable t(records.front());
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() != t.columns_.size())
      throw ModelError("CSV line " + std::to_string(i + 1) + " has " +
                       std::to_string(records[i].size()) + " cells, expected " +
                       std::to_string(t.columns_.size()));
    t.rows_.push_back(std::move(records[i]));
  }
  return t;
}

DataTable DataTable::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string DataTable::to_csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_escape(cells[i]);
    }
    out.push_back('\n');
  };
  line(columns_);
  for (const auto& r : rows_) line(r);
  return out;
}

void DataTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write " + path.string());
  out << to_csv();
}

FeatureEncoder FeatureEncoder::fit(const DataTable& t, const std::vector<std::string>& names,
                                   const std::vector<std::size_t>& rows, bool standardize,
                                   bool unseen_column) {
  FeatureEncoder enc;
  enc.unseen_column = unseen_column;
  for (const auto& name : names) {
    const std::size_t c = t.require(name);
    Field f;
    f.name = name;
    f.numeric = t.is_numeric(c);
    if (f.numeric) {
      if (standardize) {
        double sum = 0, sq = 0;
        std::size_t n = 0;
        for (auto r : rows) {
          if (auto v = parse_number(t.rows()[r][c])) {
            sum += *v;
            sq += *v * *v;
            ++n;
          }
        }
        if (n > 0) {
          f.mean = sum / static_cast<double>(n);
          double var = sq / static_cast<double>(n) - f.mean * f.mean;
          f.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
      }
    } else {
      std::set<std::string> cats;
      for (auto r : rows) cats.insert(t.rows()[r][c]);
      f.categories.assign(cats.begin(), cats.end());
    }
    enc.fields.push_back(std::move(f));
  }
  return enc;
}

std::size_t FeatureEncoder::width() const {
  std::size_t w = 0;
  for (const auto& f : fields)
    w += f.numeric ? 1 : f.categories.size() + (unseen_column ? 1 : 0);
  return w;
}

std::vector<std::string> FeatureEncoder::feature_names() const {
  std::vector<std::string> out;
  for (const auto& f : fields) {
    if (f.numeric) {
      out.push_back(f.name);
      continue;
    }
    for (const auto& c : f.categories) out.push_back(f.name + "=" + c);
    if (unseen_column) out.push_back(f.name + "=<unseen>");
  }
  return out;
}

std::optional<std::vector<double>> FeatureEncoder::encode(const DataTable& t, std::size_t row) const {
  std::vector<double> x;
  x.reserve(width());
  for (const auto& f : fields) {
    const std::string& cell = t.rows()[row][t.require(f.name)];
    if (f.numeric) {
      auto v = parse_number(cell);
      if (!v) return std::nullopt;
      x.push_back((*v - f.mean) / f.scale);
      continue;
    }
    auto it = std::lower_bound(f.categories.begin(), f.categories.end(), cell);
    bool seen = it != f.categories.end() && *it == cell;
    for (std::size_t i = 0; i < f.categories.size(); ++i)
      x.push_back(seen && static_cast<std::size_t>(it - f.categories.begin()) == i ? 1.0 : 0.0);
    if (unseen_column) x.push_back(seen ? 0.0 : 1.0);
  }
  return x;
}

namespace detail {

double softmax_loss(const Matrix& x, const std::vector<std::size_t>& labels,
                    const Matrix& weights, Matrix* gradient) {
  const std::size_t n = x.rows, d = x.cols, k = weights.rows;
  if (gradient) *gradient = Matrix(k, d);
  double loss = 0;
  std::vector<double> z(k);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += weights.at(c, j) * x.at(i, j);
      z[c] = s;
      zmax = std::max(zmax, s);
    }
    double denom = 0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(z[c] - zmax);
    const double log_denom = std::log(denom) + zmax;
    loss -= z[labels[i]] - log_denom;
    if (gradient) {
      for (std::size_t c = 0; c < k; ++c) {
        double p = std::exp(z[c] - log_denom) - (c == labels[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) gradient->at(c, j) += p * x.at(i, j);
      }
    }
  }
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  if (gradient)
    for (auto& g : gradient->data) g *= inv;
  return loss * inv;
}

void symmetric_eigen(const Matrix& a, std::vector<double>& values, Matrix& vectors) {
  const std::size_t n = a.rows;
  Matrix m = a;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m.at(k, p), mkq = m.at(k, q);
          m.at(k, p) = c * mkp - s * mkq;
          m.at(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m.at(p, k), mqk = m.at(q, k);
          m.at(p, k) = c * mpk - s * mqk;
          m.at(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return m.at(i, i) > m.at(j, j); });
  values.assign(n, 0.0);
  vectors = Matrix(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    values[r] = m.at(order[r], order[r]);
    for (std::size_t k = 0; k < n; ++k) vectors.at(r, k) = v.at(k, order[r]);
  }
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

using detail::Matrix;

std::pair<PcaModel, DataTable> fit_pca(const DataTable& t, const std::vector<std::string>& fields,
                                       std::size_t k) {
  if (fields.empty()) throw ModelError("PCA needs at least one field");
  if (k == 0) throw ModelError("PCA needs k >= 1");
  std::vector<std::size_t> all(t.row_count());
  std::iota(all.begin(), all.end(), 0);
  PcaModel model;
  model.fields = fields;
  model.encoder = FeatureEncoder::fit(t, fields, all, false, false);
  const std::size_t d = model.encoder.width();
  if (k > d)
    throw ModelError("k=" + std::to_string(k) + " exceeds feature count " + std::to_string(d));

  std::vector<std::vector<double>> xs;
  for (std::size_t r = 0; r < t.row_count(); ++r)
    if (auto x = model.encoder.encode(t, r)) xs.push_back(std::move(*x));
  if (xs.size() < 2) throw ModelError("PCA needs at least two complete rows");

  model.means.assign(d, 0.0);
  for (const auto& x : xs)
    for (std::size_t j = 0; j < d; ++j) model.means[j] += x[j];
  for (auto& m : model.means) m /= static_cast<double>(xs.size());

  Matrix cov(d, d);
  for (const auto& x : xs)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j)
        cov.at(i, j) += (x[i] - model.means[i]) * (x[j] - model.means[j]);
  const double denom = static_cast<double>(xs.size() - 1);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) cov.at(j, i) = cov.at(i, j) = cov.at(i, j) / denom;

  std::vector<double> values;
  Matrix vectors;
  detail::symmetric_eigen(cov, values, vectors);
  model.k = k;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> comp(d);
    std::size_t big = 0;
    for (std::size_t j = 0; j < d; ++j) {
      comp[j] = vectors.at(c, j);
      if (std::fabs(comp[j]) > std::fabs(comp[big])) big = j;
    }
    // Sign convention: largest-magnitude loading is positive.
    if (comp[big] < 0)
      for (auto& v : comp) v = -v;
    model.components.push_back(std::move(comp));
    model.explained_variance.push_back(std::max(0.0, values[c]));
  }
  DataTable out = apply_model(model, t);
  return {std::move(model), std::move(out)};
}

namespace {

Matrix design_matrix(const LogRegModel& m, const DataTable& t, const std::vector<std::size_t>& rows,
                     std::vector<std::size_t>* kept) {
  const std::size_t d = m.encoder.width() + (m.fit_intercept ? 1 : 0);
  std::vector<std::vector<double>> xs;
  for (auto r : rows) {
    auto x = m.encoder.encode(t, r);
    if (!x) continue;
    if (m.fit_intercept) x->push_back(1.0);
    xs.push_back(std::move(*x));
    if (kept) kept->push_back(r);
  }
  Matrix x(xs.size(), d);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x.at(i, j) = xs[i][j];
  return x;
}

std::size_t argmax_class(const std::vector<std::vector<double>>& w, const std::vector<double>& x) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < w.size(); ++c) {
    double s = 0;
    for (std::size_t j = 0; j < x.size(); ++j) s += w[c][j] * x[j];
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

}  // namespace

std::pair<LogRegModel, FitReport> fit_logreg(const DataTable& t, const std::string& response,
                                             const std::vector<std::string>& predictors,
                                             const LogRegOptions& options) {
  if (predictors.empty()) throw ModelError("logistic regression needs at least one predictor");
  if (options.train_fraction <= 0 || options.train_fraction > 1)
    throw ModelError("train_fraction must be in (0, 1]");
  const std::size_t resp = t.require(response);
  for (const auto& p : predictors) t.require(p);

  FitReport report;
  auto perm = detail::seeded_permutation(t.row_count(), options.seed);
  auto n_train = static_cast<std::size_t>(
      std::llround(options.train_fraction * static_cast<double>(t.row_count())));
  n_train = std::min(n_train, t.row_count());
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::erase_if(train, [&](std::size_t r) { return t.rows()[r][resp].empty(); });

  LogRegModel model;
  model.response = response;
  model.predictors = predictors;
  model.fit_intercept = options.fit_intercept;
  model.train_fraction = options.train_fraction;
  model.seed = options.seed;
  model.encoder = FeatureEncoder::fit(t, predictors, train, true, true);

  std::vector<std::size_t> kept;
  Matrix x = design_matrix(model, t, train, &kept);
  std::set<std::string> class_set;
  for (auto r : kept) class_set.insert(t.rows()[r][resp]);
  if (class_set.size() < 2) throw ModelError("training split has fewer than two classes");
  model.classes.assign(class_set.begin(), class_set.end());
  std::vector<std::size_t> labels;
  for (auto r : kept) {
    auto it = std::lower_bound(model.classes.begin(), model.classes.end(), t.rows()[r][resp]);
    labels.push_back(static_cast<std::size_t>(it - model.classes.begin()));
  }

  Matrix w(model.classes.size(), x.cols);
  Matrix grad;
  double loss = detail::softmax_loss(x, labels, w, &grad);
  double step = 1.0;
  std::size_t iter = 0;
  auto inf_norm = [](const Matrix& g) {
    double m = 0;
    for (double v : g.data) m = std::max(m, std::fabs(v));
    return m;
  };
  while (iter < options.max_iterations && inf_norm(grad) >= options.gradient_tolerance) {
    double g2 = 0;
    for (double v : grad.data) g2 += v * v;
    step = std::min(step * 2.0, 1e3);
    Matrix candidate(w.rows, w.cols);
    double cand_loss = 0;
    while (true) {
      for (std::size_t i = 0; i < w.data.size(); ++i)
        candidate.data[i] = w.data[i] - step * grad.data[i];
      cand_loss = detail::softmax_loss(x, labels, candidate, nullptr);
      if (cand_loss <= loss - 1e-4 * step * g2 || step < 1e-12) break;
      step *= 0.5;
    }
    if (step < 1e-12) break;
    w = std::move(candidate);
    loss = detail::softmax_loss(x, labels, w, &grad);
    ++iter;
  }
  for (std::size_t c = 0; c < w.rows; ++c)
    model.weights.emplace_back(w.data.begin() + static_cast<std::ptrdiff_t>(c * w.cols),
                               w.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * w.cols));
  report.iterations = iter;
  report.final_loss = loss;
  report.gradient_norm = inf_norm(grad);
  report.train_rows = kept;
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::vector<double> row(x.data.begin() + static_cast<std::ptrdiff_t>(i * x.cols),
                            x.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * x.cols));
    report.train_predictions.push_back(model.classes[argmax_class(model.weights, row)]);
  }

  report.test_rows = test;
  auto all_predictions = predict(model, t);
  std::vector<std::string> actual, predicted;
  for (auto r : test) {
    if (t.rows()[r][resp].empty() || all_predictions[r].empty()) continue;
    actual.push_back(t.rows()[r][resp]);
    predicted.push_back(all_predictions[r]);
  }
  report.heldout = classification_stats(actual, predicted);
  return {std::move(model), std::move(report)};
}

std::vector<std::string> predict(const LogRegModel& model, const DataTable& t) {
  for (const auto& p : model.predictors)
    if (!t.index_of(p)) throw ModelError("apply: field '" + p + "' missing from input");
  std::vector<std::string> out(t.row_count());
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    auto x = model.encoder.encode(t, r);
    if (!x) continue;
    if (model.fit_intercept) x->push_back(1.0);
    out[r] = model.classes[argmax_class(model.weights, *x)];
  }
  return out;
}

DataTable apply_model(const Model& model, const DataTable& t) {
  DataTable out = t;
  if (const auto* lr = std::get_if<LogRegModel>(&model)) {
    out.set_column("predicted(" + lr->response + ")", predict(*lr, t));
    return out;
  }
  const auto& pca = std::get<PcaModel>(model);
  for (const auto& f : pca.fields)
    if (!t.index_of(f)) throw ModelError("apply: field '" + f + "' missing from input");
  std::vector<std::vector<std::string>> cols(pca.k, std::vector<std::string>(t.row_count()));
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    auto x = pca.encoder.encode(t, r);
    if (!x) continue;
    for (std::size_t c = 0; c < pca.k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < x->size(); ++j) s += ((*x)[j] - pca.means[j]) * pca.components[c][j];
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", s);
      cols[c][r] = buf;
    }
  }
  for (std::size_t c = 0; c < pca.k; ++c)
    out.set_column("PC_" + std::to_string(c + 1), std::move(cols[c]));
  return out;
}

ClassificationStats classification_stats(const std::vector<std::string>& actual,
                                         const std::vector<std::string>& predicted) {
  if (actual.size() != predicted.size())
    throw ModelError("actual and predicted have different lengths");
  ClassificationStats s;
  std::set<std::string> labels(actual.begin(), actual.end());
  labels.insert(predicted.begin(), predicted.end());
  s.labels.assign(labels.begin(), labels.end());
  const std::size_t k = s.labels.size();
  s.confusion.assign(k, std::vector<std::size_t>(k, 0));
  auto index = [&](const std::string& l) {
    return static_cast<std::size_t>(std::lower_bound(s.labels.begin(), s.labels.end(), l) -
                                    s.labels.begin());
  };
  std::size_t correct = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ++s.confusion[index(actual[i])][index(predicted[i])];
    if (actual[i] == predicted[i]) ++correct;
  }
  s.accuracy = actual.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(actual.size());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = s.confusion[c][c], col = 0, row = 0;
    for (std::size_t o = 0; o < k; ++o) {
      col += s.confusion[o][c];
      row += s.confusion[c][o];
    }
    ClassificationStats::PerClass pc;
    pc.label = s.labels[c];
    pc.support = row;
    pc.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    pc.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    pc.f1 = pc.precision + pc.recall > 0
                ? 2 * pc.precision * pc.recall / (pc.precision + pc.recall)
                : 0.0;
    s.per_class.push_back(pc);
  }
  if (k > 0) {
    for (const auto& pc : s.per_class) {
      s.precision += pc.precision;
      s.recall += pc.recall;
      s.f1 += pc.f1;
    }
    s.precision /= static_cast<double>(k);
    s.recall /= static_cast<double>(k);
    s.f1 /= static_cast<double>(k);
  }
  return s;
}

ClassificationStats classification_stats(const DataTable& t, std::string_view actual,
                                         std::string_view predicted) {
  return classification_stats(t.column(actual), t.column(predicted));
}

std::vector<AnomalyRow> anomaly_detect(const DataTable& t, const std::vector<std::string>& fields,
                                       double threshold) {
  if (fields.empty()) throw ModelError("anomaly detection needs at least one field");
  std::vector<std::size_t> cols;
  for (const auto& f : fields) cols.push_back(t.require(f));
  const std::size_t n = t.row_count();
  if (n == 0) return {};

  std::vector<std::map<std::string, std::size_t>> counts(cols.size());
  for (const auto& row : t.rows())
    for (std::size_t f = 0; f < cols.size(); ++f) ++counts[f][row[cols[f]]];

  std::vector<AnomalyRow> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    AnomalyRow a;
    a.row = r;
    a.cells = t.rows()[r];
    double p = 1.0;
    double min_p = 2.0;
    std::size_t min_field = 0;
    for (std::size_t f = 0; f < cols.size(); ++f) {
      double pf = static_cast<double>(counts[f][t.rows()[r][cols[f]]]) / static_cast<double>(n);
      p *= pf;
      if (pf < min_p) {
        min_p = pf;
        min_field = f;
      }
    }
    a.probability = p;
    a.probable_cause = fields[min_field];
    out.push_back(std::move(a));
  }
  std::vector<double> probs;
  for (const auto& a : out) probs.push_back(a.probability);
  std::sort(probs.begin(), probs.end());
  const double median = n % 2 ? probs[n / 2] : 0.5 * (probs[n / 2 - 1] + probs[n / 2]);
  for (auto& a : out) {
    a.is_outlier = a.probability < threshold * median ? 1 : 0;
    if (!a.is_outlier) a.probable_cause.clear();
  }
  std::stable_sort(out.begin(), out.end(), [](const AnomalyRow& x, const AnomalyRow& y) {
    return x.probability < y.probability;
  });
  return out;
}

DataTable anomaly_table(const DataTable& t, const std::vector<AnomalyRow>& rows) {
  auto cols = t.columns();
  for (const char* c : {"probability", "probable_cause", "isOutlier"})
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.emplace_back(c);
  DataTable out(cols);
  for (const auto& a : rows) {
    std::vector<std::string> cells = a.cells;
    cells.resize(cols.size());
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", a.probability);
    cells[out.require("probability")] = buf;
    cells[out.require("probable_cause")] = a.probable_cause;
    cells[out.require("isOutlier")] = std::to_string(a.is_outlier);
    out.add_row(std::move(cells));
  }
  return out;
}

namespace {

nlohmann::json encoder_to_json(const FeatureEncoder& e) {
  nlohmann::json fields = nlohmann::json::array();
  for (const auto& f : e.fields)
    fields.push_back({{"name", f.name},
                      {"numeric", f.numeric},
                      {"mean", f.mean},
                      {"scale", f.scale},
                      {"categories", f.categories}});
  return {{"unseen_column", e.unseen_column}, {"fields", fields}};
}

FeatureEncoder encoder_from_json(const nlohmann::json& j) {
  FeatureEncoder e;
  e.unseen_column = j.at("unseen_column").get<bool>();
  for (const auto& f : j.at("fields")) {
    FeatureEncoder::Field field;
    field.name = f.at("name").get<std::string>();
    field.numeric = f.at("numeric").get<bool>();
    field.mean = f.at("mean").get<double>();
    field.scale = f.at("scale").get<double>();
    field.categories = f.at("categories").get<std::vector<std::string>>();
    e.fields.push_back(std::move(field));
  }
  return e;
}

constexpr int kSchemaVersion = 1;

}  // namespace

nlohmann::json model_to_json(const Model& m) {
  if (const auto* lr = std::get_if<LogRegModel>(&m)) {
    return {{"schema_version", kSchemaVersion},
            {"type", "LogisticRegression"},
            {"response", lr->response},
            {"predictors", lr->predictors},
            {"encoder", encoder_to_json(lr->encoder)},
            {"classes", lr->classes},
            {"weights", lr->weights},
            {"fit_intercept", lr->fit_intercept},
            {"train_fraction", lr->train_fraction},
            {"seed", lr->seed}};
  }
  const auto& p = std::get<PcaModel>(m);
  return {{"schema_version", kSchemaVersion},
          {"type", "PCA"},
          {"fields", p.fields},
          {"encoder", encoder_to_json(p.encoder)},
          {"k", p.k},
          {"means", p.means},
          {"components", p.components},
          {"explained_variance", p.explained_variance}};
}

Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw ModelError("unsupported model schema version");
    const auto type = j.at("type").get<std::string>();
    if (type == "LogisticRegression") {
      LogRegModel m;
      m.response = j.at("response").get<std::string>();
      m.predictors = j.at("predictors").get<std::vector<std::string>>();
      m.encoder = encoder_from_json(j.at("encoder"));
      m.classes = j.at("classes").get<std::vector<std::string>>();
      m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
      m.fit_intercept = j.at("fit_intercept").get<bool>();
      m.train_fraction = j.at("train_fraction").get<double>();
      m.seed = j.at("seed").get<std::uint64_t>();
      return m;
    }
    if (type == "PCA") {
      PcaModel m;
      m.fields = j.at("fields").get<std::vector<std::string>>();
      m.encoder = encoder_from_json(j.at("encoder"));
      m.k = j.at("k").get<std::size_t>();
      m.means = j.at("means").get<std::vector<double>>();
      m.components = j.at("components").get<std::vector<std::vector<double>>>();
      m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
      return m;
    }
    throw ModelError("unknown model type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed model: ") + e.what());
  }
}

void ModelStore::put(const std::string& name, Model m) {
  if (dir_) {
    std::filesystem::create_directories(*dir_);
    std::ofstream out(*dir_ / (name + ".model.json"), std::ios::trunc);
    if (!out) throw ModelError("cannot write model " + name);
    out << model_to_json(m).dump(2);
  }
  models_.insert_or_assign(name, std::move(m));
}

bool ModelStore::contains(const std::string& name) {
  if (models_.contains(name)) return true;
  return dir_ && std::filesystem::exists(*dir_ / (name + ".model.json"));
}

const Model& ModelStore::get(const std::string& name) {
  auto it = models_.find(name);
  if (it != models_.end()) return it->second;
  if (dir_) {
    std::ifstream in(*dir_ / (name + ".model.json"));
    if (in) {
      auto j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw ModelError("model file for '" + name + "' is not valid JSON");
      return models_.emplace(name, model_from_json(j)).first->second;
    }
  }
  throw ModelError("unknown model '" + name + "'");
}

}  // namespace logforge::ml
