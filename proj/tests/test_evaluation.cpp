#include "gema/error.hpp"
#include "gema/evaluation.hpp"
#include "gema/rng.hpp"
#include "gema/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace gema;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Internal;
}

// Rank straight from the definition: 1 + #smaller + half the other ties.
std::vector<double> definition_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double smaller = 0.0;
    double ties = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) smaller += 1.0;
      if (j != i && v[j] == v[i]) ties += 1.0;
    }
    r[i] = 1.0 + smaller + 0.5 * ties;
  }
  return r;
}

double textbook_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

// Pair-counting Rand index adjusted by its permutation-model expectation.
double pair_count_ari(const std::vector<int>& a, const std::vector<int>& b) {
  double both = 0, only_a = 0, only_b = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j];
      const bool sb = b[i] == b[j];
      both += sa && sb;
      only_a += sa && !sb;
      only_b += !sa && sb;
      total += 1;
    }
  }
  const double pa = both + only_a;
  const double pb = both + only_b;
  const double expected = pa * pb / total;
  return (both - expected) / (0.5 * (pa + pb) - expected);
}

Matrix blobs(RngStream& rng, int per, std::vector<int>& truth) {
  Matrix x(2 * per, 2);
  truth.assign(static_cast<std::size_t>(2 * per), 0);
  for (int i = 0; i < 2 * per; ++i) {
    const double cx = i < per ? 0.0 : 10.0;
    x(i, 0) = cx + 0.5 * rng.normal();
    x(i, 1) = -cx + 0.5 * rng.normal();
    truth[static_cast<std::size_t>(i)] = i < per ? 0 : 1;
  }
  return x;
}

BenchmarkConfig small_benchmark(Scenario s) {
  BenchmarkConfig c;
  c.scenario = s;
  c.n = 120;
  c.n_reps = 2;
  c.master_seed = 42;
  c.gema.epochs = 5;
  c.gema.hidden_dim = 8;
  c.forest.n_trees = 10;
  return c;
}

}  // namespace

TEST_CASE("spearman hand cases and the definition oracle") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  const std::vector<double> a{1, 2, 2, 3};
  const std::vector<double> b{1, 3, 2, 4};
  CHECK(mid_ranks(a) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(std::abs(spearman(a, b) - 4.5 / std::sqrt(22.5)) < 1e-14);

  RngStream rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 3 + rng.index(30);
    std::vector<double> x(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.index(6));  // heavy ties
      y[i] = rng.normal();
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) x[0] += 1.0;
    CHECK(mid_ranks(x) == definition_ranks(x));
    CHECK(std::abs(spearman(x, y) - textbook_pearson(definition_ranks(x), definition_ranks(y))) < 1e-12);
  }
}

TEST_CASE("spearman is invariant under monotone transforms") {
  RngStream rng(2);
  std::vector<double> a(100);
  std::vector<double> b(100);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = a[i] + rng.normal();
  }
  std::vector<double> ea(a.size());
  std::vector<double> cb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ea[i] = std::exp(a[i]);
    cb[i] = b[i] * b[i] * b[i] + 5.0;
  }
  CHECK(std::abs(spearman(ea, cb) - spearman(a, b)) < 1e-14);
  CHECK(code_of([] { spearman({1, 2, 3}, {1, 2}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { spearman({1, 1, 1}, {1, 2, 3}); }) == ErrorCode::DegenerateRanks);
}

TEST_CASE("pearson matches the textbook formula") {
  RngStream rng(3);
  std::vector<double> a(40);
  std::vector<double> b(40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = 0.5 * a[i] + rng.normal();
  }
  CHECK(std::abs(pearson(a, b) - textbook_pearson(a, b)) < 1e-12);
}

TEST_CASE("adjusted rand index") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index(a, {5, 5, 3, 3, 9, 9}) == doctest::Approx(1.0));
  CHECK(std::abs(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) + 0.5) < 1e-14);
  CHECK(code_of([] { adjusted_rand_index({0, 1}, {0}); }) == ErrorCode::LengthMismatch);

  RngStream rng(4);
  double sum = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<int> x(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<int>(rng.index(3));
      y[i] = static_cast<int>(rng.index(4));
    }
    const double ari = adjusted_rand_index(x, y);
    const double oracle = pair_count_ari(x, y);
    if (std::isfinite(oracle)) CHECK(std::abs(ari - oracle) < 1e-12);
    // Relabeling either side leaves the index unchanged.
    std::vector<int> relabeled = y;
    for (int& v : relabeled) v = 3 - v;
    CHECK(adjusted_rand_index(x, relabeled) == ari);
    if (n >= 20) sum += ari;
  }
  std::vector<int> x(2000);
  std::vector<int> y(2000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<int>(rng.index(2));
    y[i] = static_cast<int>(rng.index(2));
  }
  CHECK(std::abs(adjusted_rand_index(x, y)) < 0.01);
}

TEST_CASE("frontier error oracles") {
  const FrontierGrid grid;
  auto truth = [](double a, double b) { return frontier_a(a, b); };
  CHECK(frontier_error(truth, truth, grid) == 0.0);
  CHECK(std::abs(frontier_error([&](double a, double b) { return truth(a, b) + 0.1; }, truth, grid) - 0.1) < 1e-12);

  double ss = 0.0;
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 30; ++j) {
      const double f = frontier_a((i + 0.5) / 30.0, (j + 0.5) / 30.0);
      ss += f * f;
    }
  }
  const double oracle = std::sqrt(ss / 900.0);
  CHECK(std::abs(frontier_error([](double, double) { return 0.0; }, truth, grid) - oracle) < 1e-14);
  CHECK(std::abs(frontier_error(Vector::Zero(900), truth, grid) - oracle) < 1e-14);
  CHECK(grid.nodes().rows() == 900);
  CHECK(code_of([&] { frontier_error(Vector::Zero(10), truth, grid); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("kmeans on separated blobs and k = 1") {
  RngStream rng(5);
  std::vector<int> truth;
  const Matrix x = blobs(rng, 50, truth);
  const ClusterResult r = kmeans(x, 2, 7);
  CHECK(adjusted_rand_index(r.labels, truth) == doctest::Approx(1.0));
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1] + 1e-12);
  const ClusterResult again = kmeans(x, 2, 7);
  CHECK(again.labels == r.labels);
  CHECK(again.objective == r.objective);

  const ClusterResult one = kmeans(x, 1, 7);
  for (int l : one.labels) CHECK(l == 0);
  CHECK((one.centers.row(0).transpose() - x.colwise().mean().transpose()).norm() < 1e-12);
  CHECK(code_of([&] { kmeans(x.topRows(2), 3, 1); }) == ErrorCode::TooFewPoints);
}

TEST_CASE("gmm on separated blobs and k = 1") {
  RngStream rng(6);
  std::vector<int> truth;
  const Matrix x = blobs(rng, 60, truth);
  const ClusterResult r = gmm_em(x, 2, 3);
  CHECK(adjusted_rand_index(r.labels, truth) == doctest::Approx(1.0));
  for (Eigen::Index i = 0; i < r.responsibilities.rows(); ++i) {
    CHECK(std::abs(r.responsibilities.row(i).sum() - 1.0) < 1e-9);
    CHECK(r.responsibilities.row(i).minCoeff() >= 0.0);
    CHECK(r.responsibilities.row(i).maxCoeff() > 0.99);
  }
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    CHECK(r.history[i] >= r.history[i - 1] - 1e-9 * std::abs(r.history[i - 1]));
  }

  const ClusterResult one = gmm_em(x, 1, 3);
  const Vector mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
  CHECK((one.centers.row(0).transpose() - mean).norm() < 1e-10);
  CHECK((one.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((one.responsibilities.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(code_of([&] { gmm_em(x.topRows(5), 2, 1); }) == ErrorCode::TooFewPoints);
}

TEST_CASE("pca projection") {
  Matrix line(20, 2);
  for (int i = 0; i < 20; ++i) {
    line(i, 0) = i;
    line(i, 1) = -2.0 * i + 3.0;
  }
  const PcaResult p = pca_project(line, 2);
  CHECK(p.variances(0) / p.variances.sum() == doctest::Approx(1.0).epsilon(1e-12));

  RngStream rng(7);
  Matrix basis(2, 5);
  Matrix coef(40, 2);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = rng.normal();
  const Matrix x = (coef * basis).rowwise() + Vector::Constant(5, 3.0).transpose();
  const PcaResult q = pca_project(x, 2);
  const Matrix rebuilt = (q.scores * q.components.transpose()).rowwise() + q.mean.transpose();
  CHECK((rebuilt - x).cwiseAbs().maxCoeff() < 1e-10);

  const PcaResult full = pca_project(x, 5);
  for (Eigen::Index k = 1; k < full.variances.size(); ++k) CHECK(full.variances(k) <= full.variances(k - 1));
  for (Eigen::Index k = 0; k < full.components.cols(); ++k) {
    Eigen::Index arg = 0;
    full.components.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(full.components(arg, k) > 0.0);
  }
}

TEST_CASE("benchmark determinism and single replication") {
  BenchmarkConfig c = small_benchmark(Scenario::A);
  const BenchmarkResult a = run_benchmark(c);
  const BenchmarkResult b = run_benchmark(c);
  CHECK(a.to_json().dump() == b.to_json().dump());
  c.jobs = 3;
  CHECK(run_benchmark(c).to_json().dump() == a.to_json().dump());
  CHECK(BenchmarkResult::from_json(a.to_json()).to_json().dump() == a.to_json().dump());

  const MetricCell* dea_rmse = a.find("dea", "frontier_rmse");
  REQUIRE(dea_rmse != nullptr);
  CHECK(dea_rmse->n_reps == 0);
  CHECK(dea_rmse->missing == 2);
  const MetricCell* gema_rank = a.find("gema", "spearman");
  REQUIRE(gema_rank != nullptr);
  CHECK(gema_rank->n_reps == 2);
  CHECK(gema_rank->std >= 0.0);

  c.n_reps = 1;
  c.jobs = 1;
  for (const MetricCell& cell : run_benchmark(c).cells) CHECK(cell.std == 0.0);
}

TEST_CASE("benchmark records method failures as missing cells") {
  BenchmarkConfig c = small_benchmark(Scenario::A);
  c.n = 10;
  c.methods = {"dea", "sfa"};
  const BenchmarkResult r = run_benchmark(c);
  const MetricCell* sfa = r.find("sfa", "spearman");
  REQUIRE(sfa != nullptr);
  CHECK(sfa->missing == 2);
  REQUIRE(sfa->reasons.size() == 2);
  CHECK(sfa->reasons[0].find("TooFewRows") != std::string::npos);
  CHECK(r.find("dea", "spearman")->n_reps == 2);
}

TEST_CASE("benchmark metrics per scenario") {
  CHECK(scenario_metrics(Scenario::A) == std::vector<std::string>{"frontier_rmse", "spearman"});
  for (Scenario s : {Scenario::B, Scenario::C}) {
    BenchmarkConfig c = small_benchmark(s);
    c.n_reps = 1;
    const BenchmarkResult r = run_benchmark(c);
    for (const std::string& m : c.methods) {
      for (const std::string& metric : scenario_metrics(s)) CHECK(r.find(m, metric) != nullptr);
    }
    CHECK(!r.to_text().empty());
  }
  CHECK(code_of([] { BenchmarkConfig::from_json({{"methods", {"cnls"}}}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { BenchmarkConfig::from_json({{"bogus", 1}}); }) == ErrorCode::InvalidArgument);
}
