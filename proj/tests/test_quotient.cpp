#include "gema/error.hpp"
#include "gema/quotient.hpp"
#include "gema/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace gema;

namespace {

const Schema kXYS{{"x", ColumnRole::Input}, {"y", ColumnRole::Output}, {"s", ColumnRole::Scale}};

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

TrainConfig quick_config() {
  TrainConfig c;
  c.hidden_dim = 8;
  c.epochs = 15;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

double spread(const std::vector<EfficiencyRow>& rows) {
  auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
                                      [](const auto& a, const auto& b) { return a.efficiency < b.efficiency; });
  return hi->efficiency - lo->efficiency;
}

}  // namespace

TEST_CASE("projection divides by the scale") {
  const QuotientFrame q = quotient_project(parse_csv("x,y,s\n2,4,2\n3,9,3\n", kXYS), "s");
  CHECK(q.frame.column("x").values == std::vector<double>{1.0, 1.0});
  CHECK(q.frame.column("y").values == std::vector<double>{2.0, 3.0});
  CHECK(q.frame.column("s").values == std::vector<double>{1.0, 1.0});
  CHECK(q.scale == std::vector<double>{2.0, 3.0});
}

TEST_CASE("projection is invariant to a common rescaling") {
  RngStream rng(1);
  for (int t = 0; t < 100; ++t) {
    const double x = rng.uniform(0.1, 10.0);
    const double y = rng.uniform(0.1, 10.0);
    const double s = rng.uniform(0.1, 10.0);
    // Powers of two keep the products exact in binary floating point.
    const double lambda = std::ldexp(1.0, static_cast<int>(rng.index(21)) - 10);
    std::ostringstream csv;
    csv.precision(17);
    csv << "x,y,s\n" << x << "," << y << "," << s << "\n" << lambda * x << "," << lambda * y << "," << lambda * s << "\n";
    const QuotientFrame q = quotient_project(parse_csv(csv.str(), kXYS), "s");
    CHECK(q.frame.column("x").values[0] == q.frame.column("x").values[1]);
    CHECK(q.frame.column("y").values[0] == q.frame.column("y").values[1]);
  }
  // General lambda: equal up to one rounding of each operand.
  for (int t = 0; t < 100; ++t) {
    const double x = rng.uniform(0.1, 10.0);
    const double s = rng.uniform(0.1, 10.0);
    const double lambda = rng.uniform(0.01, 100.0);
    std::ostringstream csv;
    csv.precision(17);
    csv << "x,y,s\n" << x << ",1," << s << "\n" << lambda * x << ",1," << lambda * s << "\n";
    const QuotientFrame q = quotient_project(parse_csv(csv.str(), kXYS), "s");
    const double a = q.frame.column("x").values[0];
    CHECK(std::abs(a - q.frame.column("x").values[1]) <= 4e-16 * a);
  }
}

TEST_CASE("projection restores the original values") {
  RngStream rng(2);
  std::ostringstream csv;
  csv.precision(17);
  csv << "x,y,s\n";
  for (int i = 0; i < 50; ++i) csv << rng.uniform(0.1, 100) << "," << rng.uniform(0.1, 100) << "," << rng.uniform(0.01, 1000) << "\n";
  const DatasetFrame f = parse_csv(csv.str(), kXYS);
  const DatasetFrame back = quotient_project(f, "s").restore();
  for (const char* name : {"x", "y", "s"}) {
    for (std::size_t i = 0; i < f.n_rows(); ++i) {
      const double v = f.column(name).values[i];
      CHECK(std::abs(back.column(name).values[i] - v) <= 1e-12 * v);
    }
  }
}

TEST_CASE("projection errors") {
  CHECK(code_of([] { quotient_project(parse_csv("x,y,s\n1,1,0\n", kXYS), "s"); }) == ErrorCode::NonPositiveScale);
  CHECK(code_of([] { quotient_project(parse_csv("x,y,s\n1,1,-2\n", kXYS), "s"); }) == ErrorCode::NonPositiveScale);
  CHECK(code_of([] { quotient_project(parse_csv("x,y,s\n1,1,2\n", kXYS), "w"); }) == ErrorCode::MissingColumn);
  const DatasetFrame logged = log1p_columns(parse_csv("x,y,s\n1,1,2\n", kXYS), std::vector<std::string>{"x"});
  CHECK(code_of([&] { quotient_project(logged, "s"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("size bias examples") {
  const std::vector<double> sizes{1.0, 2.0, 5.0, 10.0, 40.0};
  std::vector<double> logs;
  for (double s : sizes) logs.push_back(std::log(s));
  CHECK(std::abs(size_bias(logs, sizes).r - 1.0) < 1e-12);

  const SizeBias flat = size_bias(std::vector<double>(5, 0.7), sizes);
  CHECK(flat.degenerate);
  CHECK(flat.r == 0.0);

  RngStream rng(3);
  std::vector<double> a(10000);
  std::vector<double> b(10000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform();
    b[i] = std::exp(rng.normal());
  }
  CHECK(std::abs(size_bias(a, b).r) < 0.05);

  CHECK(code_of([] { size_bias({1.0, 2.0}, {1.0, 2.0}); }) == ErrorCode::TooFewPoints);
  CHECK(code_of([&] { size_bias(logs, {1.0, 2.0, 3.0}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([&] { size_bias(logs, {1.0, 2.0, 0.0, 4.0, 5.0}); }) == ErrorCode::NonPositiveScale);
}

TEST_CASE("size bias ignores a common size factor") {
  RngStream rng(4);
  std::vector<double> scores(200);
  std::vector<double> sizes(200);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sizes[i] = std::exp(rng.normal());
    scores[i] = 0.2 * std::log(sizes[i]) + rng.normal();
  }
  const double base = size_bias(scores, sizes).r;
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<double> scaled = sizes;
    for (double& s : scaled) s *= c;
    CHECK(std::abs(size_bias(scores, scaled).r - base) < 1e-12);
  }
}

TEST_CASE("quotient pipeline collapses pure rescalings") {
  std::ostringstream csv;
  csv.precision(17);
  csv << "x,y,s\n";
  RngStream rng(6);
  for (int i = 0; i < 60; ++i) {
    const double lambda = std::exp(rng.normal());
    csv << 2.0 * lambda << "," << 1.5 * lambda << "," << lambda << "\n";
  }
  const DatasetFrame f = parse_csv(csv.str(), kXYS);
  const TrainConfig cfg = quick_config();
  const QuotientScores q = quotient_efficiency(f, "s", cfg);
  const TrainResult plain = fit(f, cfg);
  const auto plain_scores = efficiency_scores(plain.model, f);
  REQUIRE(q.scores.size() == f.n_rows());
  CHECK(spread(q.scores) <= spread(plain_scores));
  for (const EfficiencyRow& r : q.scores) {
    CHECK(r.efficiency > 0.0);
    CHECK(r.efficiency <= 1.0);
  }
}

TEST_CASE("quotient pipeline is deterministic and handles one row") {
  const DatasetFrame f = parse_csv("x,y,s\n2,1,1\n4,3,2\n1,1,4\n3,2,1\n5,2,3\n2,2,2\n1,3,1\n6,5,2\n3,3,3\n2,5,1\n", kXYS);
  const TrainConfig cfg = quick_config();
  const QuotientScores a = quotient_efficiency(f, "s", cfg);
  const QuotientScores b = quotient_efficiency(f, "s", cfg);
  for (std::size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i].efficiency == b.scores[i].efficiency);

  const QuotientScores one = quotient_efficiency(parse_csv("x,y,s\n2,1,2\n", kXYS), "s", cfg);
  REQUIRE(one.scores.size() == 1);
  CHECK(one.scores[0].efficiency > 0.0);
  CHECK(one.scores[0].efficiency <= 1.0);
}
