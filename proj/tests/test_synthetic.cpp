#include "gema/evaluation.hpp"
#include "gema/synthetic.hpp"

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <numeric>

using namespace gema;

namespace {

// Asymptotic Kolmogorov-Smirnov p-value for the one-sample statistic.
double ks_pvalue(std::vector<double> v, const std::function<double(double)>& cdf) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = cdf(v[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    p += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  }
  return std::clamp(p, 0.0, 1.0);
}

std::function<double(double)> uniform_cdf(double lo, double hi) {
  return [=](double x) { return std::clamp((x - lo) / (hi - lo), 0.0, 1.0); };
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void check_reconstruction(const SynthSample& s) {
  const auto& y = s.frame.column("y").values;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double rebuilt = s.true_frontier[i] * std::exp(-s.true_u[i]) * std::exp(s.noise[i]);
    CHECK(std::abs(rebuilt - y[i]) <= 1e-12 * y[i]);
    CHECK(s.true_u[i] >= 0.0);
    CHECK(y[i] > 0.0);
  }
}

}  // namespace

TEST_CASE("scenario A frontier values") {
  CHECK(std::abs(frontier_a(0.0, 0.0) - 0.2 * std::exp(-14.5)) < 1e-20);
  const double direct = (1.0 - std::exp(-1.0)) * (1.0 - std::exp(-0.4)) + 0.2;
  CHECK(std::abs(frontier_a(0.5, 0.2) - direct) < 1e-12);
  CHECK(std::abs(frontier_a(0.5, 0.2) - 0.4083975) < 1e-6);
  auto bump = [](double x1, double x2) {
    return frontier_a(x1, x2) - (1.0 - std::exp(-2.0 * x1)) * (1.0 - std::exp(-2.0 * x2));
  };
  for (double d : {0.03, 0.1, 0.17}) {
    CHECK(std::abs(bump(0.5 + d, 0.2 + d / 2) - bump(0.5 - d, 0.2 - d / 2)) < 1e-14);
  }
}

TEST_CASE("scenario B and C frontier values") {
  CHECK(std::abs(frontier_b(1, 1.0, 1.0) - 1.0) < 1e-15);
  CHECK(std::abs(frontier_b(2, 1.0, 1.0) - 1.1) < 1e-14);
  CHECK(std::abs(frontier_b(2, 1.0, 4.0) - 1.1 / (0.65 * 0.65)) < 1e-12);
  CHECK(std::abs(frontier_b(2, 1.0, 4.0) - 2.6036) < 1e-4);
  CHECK(std::abs(frontier_c(1.0, 1.0, 1.0) - 1.0) < 1e-15);
  const double e = std::numbers::e;
  CHECK(std::abs(frontier_c(e, e, e) - e) < 1e-12);
}

TEST_CASE("noiseless scenario A returns the frontier") {
  ScenarioAParams p;
  p.sigma_u = 0.0;
  p.sigma_eps = 0.0;
  const SynthSample s = gen_scenario_a(200, 3, p);
  const auto& x1 = s.frame.column("x1").values;
  const auto& x2 = s.frame.column("x2").values;
  const auto& y = s.frame.column("y").values;
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y[i] == frontier_a(x1[i], x2[i]));
    CHECK(s.true_u[i] == 0.0);
  }
}

TEST_CASE("generated samples reconstruct from their components") {
  for (Scenario sc : {Scenario::A, Scenario::B, Scenario::C}) {
    const SynthSample s = generate(sc, 500, 11);
    CHECK(s.frame.n_rows() == 500);
    CHECK(s.frame.names_with_role(ColumnRole::Input) == std::vector<std::string>{"x1", "x2"});
    CHECK(s.frame.names_with_role(ColumnRole::Output) == std::vector<std::string>{"y"});
    check_reconstruction(s);
    const auto& x1 = s.frame.column("x1").values;
    const auto& x2 = s.frame.column("x2").values;
    for (std::size_t i = 0; i < 500; ++i) {
      double f = 0.0;
      if (sc == Scenario::A) f = frontier_a(x1[i], x2[i]);
      if (sc == Scenario::B) f = frontier_b(s.true_group[i], x1[i], x2[i]);
      if (sc == Scenario::C) f = frontier_c(s.size[i], x1[i], x2[i]);
      CHECK(std::abs(f - s.true_frontier[i]) <= 1e-12 * f);
    }
  }
}

TEST_CASE("scenario B labels are a fair coin and never a feature") {
  const SynthSample s = gen_scenario_b(10000, 4);
  int ones = 0;
  for (int g : s.true_group) {
    CHECK((g == 1 || g == 2));
    ones += g == 1;
  }
  CHECK(std::abs(ones - 5000) < 4 * 50);
  for (const Column& c : s.frame.columns()) CHECK(c.role != ColumnRole::EntityId);
}

TEST_CASE("half-normal inefficiency mean") {
  const SynthSample s = gen_scenario_a(100000, 8);
  const double mean = std::accumulate(s.true_u.begin(), s.true_u.end(), 0.0) / 1e5;
  CHECK(std::abs(mean - 0.3 * std::sqrt(2.0 / std::numbers::pi)) < 0.01);
}

TEST_CASE("scenario C size confounds output") {
  const SynthSample s = gen_scenario_c(100000, 9);
  REQUIRE(s.frame.has_column("s"));
  CHECK(s.frame.column("s").role == ColumnRole::Scale);
  std::vector<double> ly;
  std::vector<double> ls;
  for (std::size_t i = 0; i < s.frame.n_rows(); ++i) {
    ly.push_back(std::log(s.frame.column("y").values[i]));
    ls.push_back(std::log(s.size[i]));
    CHECK(s.frame.column("s").values[i] == s.size[i]);
  }
  CHECK(pearson(ly, ls) > 0.8);
}

TEST_CASE("input distributions pass kolmogorov-smirnov") {
  const std::size_t n = 10000;
  const SynthSample a = gen_scenario_a(n, 21);
  CHECK(ks_pvalue(a.frame.column("x1").values, uniform_cdf(0.0, 1.0)) > 0.01);
  CHECK(ks_pvalue(a.frame.column("x2").values, uniform_cdf(0.0, 1.0)) > 0.01);
  const SynthSample b = gen_scenario_b(n, 22);
  CHECK(ks_pvalue(b.frame.column("x1").values, uniform_cdf(0.1, 2.0)) > 0.01);
  CHECK(ks_pvalue(b.frame.column("x2").values, uniform_cdf(0.1, 2.0)) > 0.01);
  const SynthSample c = gen_scenario_c(n, 23);
  std::vector<double> t1;
  std::vector<double> t2;
  std::vector<double> ls;
  for (std::size_t i = 0; i < n; ++i) {
    t1.push_back(c.frame.column("x1").values[i] / c.size[i]);
    t2.push_back(c.frame.column("x2").values[i] / c.size[i]);
    ls.push_back(std::log(c.size[i]));
  }
  CHECK(ks_pvalue(t1, uniform_cdf(0.5, 1.5)) > 0.01);
  CHECK(ks_pvalue(t2, uniform_cdf(0.5, 1.5)) > 0.01);
  const boost::math::normal_distribution<double> z;
  CHECK(ks_pvalue(ls, [&](double v) { return boost::math::cdf(z, v); }) > 0.01);

  // The test itself rejects a shifted sample.
  std::vector<double> shifted = a.frame.column("x1").values;
  for (double& v : shifted) v = 0.9 * v;
  CHECK(ks_pvalue(shifted, uniform_cdf(0.0, 1.0)) < 0.01);
}

TEST_CASE("generation is deterministic per seed") {
  for (Scenario sc : {Scenario::A, Scenario::B, Scenario::C}) {
    const SynthSample a = generate(sc, 300, 5);
    const SynthSample b = generate(sc, 300, 5);
    const SynthSample c = generate(sc, 300, 6);
    for (const Column& col : a.frame.columns()) CHECK(col.values == b.frame.column(col.name).values);
    CHECK(a.true_u == b.true_u);
    CHECK(a.noise == b.noise);
    CHECK(a.params == b.params);
    CHECK(a.true_u != c.true_u);
    a.write_truth("synth_truth_a.csv");
    b.write_truth("synth_truth_b.csv");
    CHECK(slurp("synth_truth_a.csv") == slurp("synth_truth_b.csv"));
    CHECK(!slurp("synth_truth_a.csv").empty());
  }
}
