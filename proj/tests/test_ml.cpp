#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "logforge/error.hpp"
#include "logforge/ml.hpp"
#include "test_util.hpp"

using namespace logforge;
using namespace logforge::ml;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

DataTable random_table(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cols; ++c) names.push_back("x" + std::to_string(c));
  DataTable t(names);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<std::string> cells;
    double shared = n(rng);
    for (std::size_t c = 0; c < cols; ++c) cells.push_back(num(n(rng) * (c + 1) + shared * c));
    t.add_row(cells);
  }
  return t;
}

DataTable separable(std::size_t n, std::uint64_t seed) {
  DataTable t({"x", "y", "label"});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.5, 3.0), any(-3, 3);
  for (std::size_t i = 0; i < n; ++i) {
    bool pos = i % 2 == 0;
    double x = pos ? mag(rng) : -mag(rng);
    t.add_row({num(x), num(any(rng)), pos ? "pos" : "neg"});
  }
  return t;
}

}  // namespace

TEST_SUITE("ml") {

TEST_CASE("csv round trip with quoting") {
  auto t = DataTable::parse_csv("a,b\n1,\"x,y\"\n2,\"say \"\"hi\"\"\"\n");
  REQUIRE(t.row_count() == 2);
  CHECK(t.rows()[0][1] == "x,y");
  CHECK(t.rows()[1][1] == "say \"hi\"");
  CHECK(DataTable::parse_csv(t.to_csv()).rows() == t.rows());
  CHECK_THROWS_AS(DataTable::parse_csv("a,b\n1\n"), ModelError);
}

TEST_CASE("pca: rank one data") {
  DataTable t({"x", "y"});
  for (int i = 0; i < 20; ++i) t.add_row({num(i * 0.5 - 3), num(2 * (i * 0.5 - 3))});
  auto [m, out] = fit_pca(t, {"x", "y"}, 2);
  CHECK(m.explained_variance[1] < 1e-9 * m.explained_variance[0]);
  for (const auto& v : out.column("PC_2")) CHECK(std::fabs(std::stod(v)) < 1e-9);
}

TEST_CASE("pca: full basis reconstructs") {
  auto t = random_table(30, 3, 5);
  auto [m, out] = fit_pca(t, {"x0", "x1", "x2"}, 3);
  double worst = 0;
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      double rec = m.means[j];
      for (std::size_t c = 0; c < 3; ++c) rec += std::stod(out.rows()[r][3 + c]) * m.components[c][j];
      worst = std::max(worst, std::fabs(rec - std::stod(t.rows()[r][j])));
    }
  }
  CHECK(worst < 1e-9);
  CHECK_THROWS_AS(fit_pca(t, {"x0", "x1", "x2"}, 4), ModelError);
}

TEST_CASE("pca: matches a dense eigensolver") {
  auto t = random_table(50, 4, 9);
  auto [m, out] = fit_pca(t, {"x0", "x1", "x2", "x3"}, 4);
  Eigen::MatrixXd x(50, 4);
  for (int r = 0; r < 50; ++r)
    for (int c = 0; c < 4; ++c) x(r, c) = std::stod(t.rows()[r][c]);
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / 49.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  for (int c = 0; c < 4; ++c) {
    int col = 3 - c;  // Eigen sorts ascending
    CHECK(m.explained_variance[c] == doctest::Approx(es.eigenvalues()(col)).epsilon(1e-9));
    double dot = 0;
    for (int j = 0; j < 4; ++j) dot += m.components[c][j] * es.eigenvectors()(j, col);
    double sign = dot < 0 ? -1 : 1;
    for (int j = 0; j < 4; ++j)
      CHECK(std::fabs(m.components[c][j] - sign * es.eigenvectors()(j, col)) < 1e-6);
  }
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      double dot = 0;
      for (int j = 0; j < 4; ++j) dot += m.components[a][j] * m.components[b][j];
      CHECK(std::fabs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
    }
  for (int c = 1; c < 4; ++c) CHECK(m.explained_variance[c] <= m.explained_variance[c - 1]);
  // Applying to the fit table reproduces the fit-time columns.
  auto again = apply_model(m, t);
  CHECK(again.column("PC_1") == out.column("PC_1"));
}

TEST_CASE("logreg: separable data gives perfect held-out accuracy") {
  auto t = separable(200, 3);
  auto [m, report] = fit_logreg(t, "label", {"x", "y"});
  CHECK(report.heldout.accuracy == 1.0);
  CHECK(report.test_rows.size() == 100);
  // Applying to the training rows reproduces the fit-time predictions.
  auto preds = predict(m, t);
  for (std::size_t i = 0; i < report.train_rows.size(); ++i)
    CHECK(preds[report.train_rows[i]] == report.train_predictions[i]);
}

TEST_CASE("logreg: noise labels stay near chance") {
  DataTable t({"x", "label"});
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 200; ++i) t.add_row({num(n(rng)), i % 2 ? "a" : "b"});
  auto [m, report] = fit_logreg(t, "label", {"x"}, LogRegOptions{.seed = 42});
  CHECK(report.heldout.accuracy >= 0.35);
  CHECK(report.heldout.accuracy <= 0.65);
}

TEST_CASE("logreg: gradient matches finite differences") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 15, d = 4, k = 3;
    detail::Matrix x(rows, d), w(k, d);
    std::vector<std::size_t> labels;
    for (auto& v : x.data) v = n(rng);
    for (auto& v : w.data) v = n(rng);
    for (std::size_t i = 0; i < rows; ++i) labels.push_back(rng() % k);
    detail::Matrix g;
    detail::softmax_loss(x, labels, w, &g);
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double h = 1e-5;
      auto wp = w, wm = w;
      wp.data[i] += h;
      wm.data[i] -= h;
      double fd = (detail::softmax_loss(x, labels, wp, nullptr) - detail::softmax_loss(x, labels, wm, nullptr)) / (2 * h);
      double denom = std::max(std::fabs(fd), 1e-8);
      CHECK(std::fabs(fd - g.data[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("logreg: unseen categories and errors") {
  DataTable t({"svc", "x", "label"});
  for (int i = 0; i < 40; ++i) t.add_row({i % 2 ? "web" : "db", num(i % 2 ? 1.0 : -1.0), i % 2 ? "up" : "down"});
  auto [m, report] = fit_logreg(t, "label", {"svc", "x"});
  DataTable novel({"svc", "x"});
  novel.add_row({"cache", "1"});
  auto out = apply_model(m, novel);
  CHECK(!out.column("predicted(label)")[0].empty());
  CHECK_THROWS_AS(apply_model(m, DataTable({"x"})), ModelError);
  CHECK_THROWS_AS(fit_logreg(t, "label", {}), ModelError);
  DataTable one({"x", "label"});
  for (int i = 0; i < 10; ++i) one.add_row({num(i), "same"});
  CHECK_THROWS_AS(fit_logreg(one, "label", {"x"}), ModelError);
}

TEST_CASE("logreg: seeded determinism") {
  auto t = separable(60, 8);
  auto a = fit_logreg(t, "label", {"x", "y"}, LogRegOptions{.seed = 5});
  auto b = fit_logreg(t, "label", {"x", "y"}, LogRegOptions{.seed = 5});
  CHECK(a.first.weights == b.first.weights);
  CHECK(a.second.test_rows == b.second.test_rows);
}

TEST_CASE("classification statistics: hand example") {
  auto s = classification_stats(std::vector<std::string>{"A", "A", "B"}, std::vector<std::string>{"A", "B", "B"});
  CHECK(s.accuracy == 2.0 / 3.0);
  CHECK(s.per_class[0].precision == 1.0);
  CHECK(s.per_class[0].recall == 0.5);
  CHECK(s.per_class[1].precision == 0.5);
  CHECK(s.per_class[1].recall == 1.0);
  CHECK(s.confusion[0][1] == 1);
  CHECK(s.confusion[1][0] == 0);
  auto p = classification_stats(std::vector<std::string>{"x", "y"}, std::vector<std::string>{"x", "y"});
  CHECK(p.accuracy == 1.0);
  CHECK(p.precision == 1.0);
  CHECK(p.recall == 1.0);
  CHECK(p.f1 == 1.0);
  CHECK_THROWS_AS(classification_stats(std::vector<std::string>{"a"}, std::vector<std::string>{}), ModelError);
}

TEST_CASE("classification statistics: confusion invariants") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> a, p;
    std::size_t n = 1 + rng() % 40;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(std::string(1, static_cast<char>('a' + rng() % 4)));
      p.push_back(std::string(1, static_cast<char>('a' + rng() % 4)));
    }
    auto s = classification_stats(a, p);
    std::size_t trace = 0, total = 0;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      trace += s.confusion[i][i];
      std::size_t row = 0;
      for (auto c : s.confusion[i]) row += c;
      total += row;
      CHECK(row == static_cast<std::size_t>(std::count(a.begin(), a.end(), s.labels[i])));
    }
    CHECK(total == n);
    CHECK(static_cast<double>(trace) / static_cast<double>(total) == s.accuracy);
  }
}

TEST_CASE("anomaly: univariate") {
  DataTable t({"service"});
  for (int i = 0; i < 9; ++i) t.add_row({"A"});
  t.add_row({"B"});
  auto rows = anomaly_detect(t, {"service"});
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].cells[0] == "B");
  CHECK(rows[0].probability == doctest::Approx(0.1));
  CHECK(rows[0].is_outlier == 1);
  CHECK(rows[0].probable_cause == "service");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].probability == doctest::Approx(0.9));
    CHECK(rows[i].is_outlier == 0);
    CHECK(rows[i].probable_cause.empty());
  }
}

TEST_CASE("anomaly: uniform table has no outliers") {
  DataTable t({"a", "b"});
  for (int i = 0; i < 5; ++i) t.add_row({"x", "y"});
  for (const auto& r : anomaly_detect(t, {"a", "b"})) {
    CHECK(r.probability == 1.0);
    CHECK(r.is_outlier == 0);
  }
  CHECK(anomaly_detect(DataTable({"a"}), {"a"}).empty());
  CHECK_THROWS_AS(anomaly_detect(t, {"nope"}), ModelError);
}

TEST_CASE("anomaly: multivariate probabilities") {
  DataTable t({"service", "user"});
  const char* rows[][2] = {{"A", "u1"}, {"A", "u1"}, {"A", "u2"}, {"B", "u1"}, {"A", "u3"}};
  for (auto& r : rows) t.add_row({r[0], r[1]});
  auto out = anomaly_detect(t, {"service", "user"});
  for (const auto& r : out) {
    double ps = r.cells[0] == "A" ? 0.8 : 0.2;
    double pu = r.cells[1] == "u1" ? 0.6 : 0.2;
    CHECK(r.probability == doctest::Approx(ps * pu));
    CHECK(r.probability <= std::min(ps, pu) + 1e-12);
    CHECK((r.is_outlier == 1) == !r.probable_cause.empty());
  }
  for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].probability <= out[i].probability);
}

TEST_CASE("model persistence") {
  test::TempDir dir;
  auto t = separable(40, 2);
  auto [m, report] = fit_logreg(t, "label", {"x", "y"});
  {
    ModelStore store(dir.path());
    store.put("m", m);
  }
  ModelStore store(dir.path());
  CHECK(store.contains("m"));
  const auto& loaded = std::get<LogRegModel>(store.get("m"));
  CHECK(loaded.weights == m.weights);
  CHECK(predict(loaded, t) == predict(m, t));
  CHECK_THROWS_AS(store.get("missing"), ModelError);
  auto [p, out] = fit_pca(random_table(10, 2, 1), {"x0", "x1"}, 1);
  auto back = std::get<PcaModel>(model_from_json(model_to_json(p)));
  CHECK(back.components == p.components);
}

}  // TEST_SUITE
