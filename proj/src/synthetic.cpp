#include "gema/synthetic.hpp"

#include "gema/error.hpp"
#include "gema/rng.hpp"

#include <cmath>

namespace gema {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::A: return "a";
    case Scenario::B: return "b";
    case Scenario::C: return "c";
  }
  return "?";
}

Scenario scenario_from_string(std::string_view s) {
  if (s == "a" || s == "A") return Scenario::A;
  if (s == "b" || s == "B") return Scenario::B;
  if (s == "c" || s == "C") return Scenario::C;
  throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + std::string(s) + "'");
}

double frontier_a(double x1, double x2, double a, double b) {
  const double smooth = a * (1.0 - std::exp(-b * x1)) * (1.0 - std::exp(-b * x2));
  const double d2 = (x1 - 0.5) * (x1 - 0.5) + (x2 - 0.2) * (x2 - 0.2);
  return smooth + 0.2 * std::exp(-d2 / 0.02);
}

double frontier_b(int group, double x1, double x2, const ScenarioBParams& p) {
  if (group == 1) return p.cd_scale * std::pow(x1, p.alpha1) * std::pow(x2, p.alpha2);
  if (group == 2) {
    return p.ces_scale * std::pow(p.delta * std::pow(x1, p.rho) + (1.0 - p.delta) * std::pow(x2, p.rho), 1.0 / p.rho);
  }
  throw Error(ErrorCode::InvalidArgument, "scenario B group must be 1 or 2");
}

double frontier_c(double s, double x1, double x2, const ScenarioCParams& p) {
  return p.theta * std::pow(s, p.gamma) * std::pow(x1, p.alpha1) * std::pow(x2, p.alpha2);
}

namespace {

Column numeric(std::string name, ColumnRole role, std::vector<double> values) {
  Column c;
  c.name = std::move(name);
  c.role = role;
  c.values = std::move(values);
  return c;
}

// Draw order per row: inputs, then u, then eps (scenario-specific extras first).
struct Draws {
  std::vector<double> x1, x2, u, eps;
};

double half_normal(RngStream& rng, double sigma) { return std::abs(sigma * rng.normal()); }

SynthSample finish(Scenario sc, std::uint64_t seed, const Draws& d, std::vector<double> frontier,
                   std::vector<double> size) {
  const std::size_t n = frontier.size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = frontier[i] * std::exp(-d.u[i]) * std::exp(d.eps[i]);
  std::vector<Column> cols;
  cols.push_back(numeric("x1", ColumnRole::Input, d.x1));
  cols.push_back(numeric("x2", ColumnRole::Input, d.x2));
  cols.push_back(numeric("y", ColumnRole::Output, y));
  if (!size.empty()) cols.push_back(numeric("s", ColumnRole::Scale, size));
  SynthSample out;
  out.scenario = sc;
  out.frame = DatasetFrame(std::move(cols), n);
  out.true_frontier = std::move(frontier);
  out.true_u = d.u;
  out.noise = d.eps;
  out.size = std::move(size);
  out.seed = seed;
  return out;
}

}  // namespace

SynthSample gen_scenario_a(std::size_t n, std::uint64_t seed, const ScenarioAParams& p) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "scenario A needs n >= 1");
  RngStream rng(seed, 0xA);
  Draws d;
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.x1.push_back(rng.uniform());
    d.x2.push_back(rng.uniform());
    d.u.push_back(half_normal(rng, p.sigma_u));
    d.eps.push_back(p.sigma_eps * rng.normal());
    f[i] = frontier_a(d.x1[i], d.x2[i], p.a, p.b);
  }
  SynthSample s = finish(Scenario::A, seed, d, std::move(f), {});
  s.params = {{"scenario", "a"}, {"sigma_u", p.sigma_u}, {"sigma_eps", p.sigma_eps}, {"a", p.a}, {"b", p.b}};
  return s;
}

SynthSample gen_scenario_b(std::size_t n, std::uint64_t seed, const ScenarioBParams& p) {
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "scenario B needs n >= 2");
  RngStream rng(seed, 0xB);
  Draws d;
  std::vector<double> f(n);
  std::vector<int> group(n);
  for (std::size_t i = 0; i < n; ++i) {
    group[i] = rng.uniform() < 0.5 ? 1 : 2;
    d.x1.push_back(rng.uniform(0.1, 2.0));
    d.x2.push_back(rng.uniform(0.1, 2.0));
    d.u.push_back(half_normal(rng, p.sigma_u));
    d.eps.push_back(p.sigma_eps * rng.normal());
    f[i] = frontier_b(group[i], d.x1[i], d.x2[i], p);
  }
  SynthSample s = finish(Scenario::B, seed, d, std::move(f), {});
  s.true_group = std::move(group);
  s.params = {{"scenario", "b"},   {"sigma_u", p.sigma_u}, {"sigma_eps", p.sigma_eps}, {"A", p.cd_scale},
              {"alpha1", p.alpha1}, {"alpha2", p.alpha2},   {"B", p.ces_scale},         {"delta", p.delta},
              {"rho", p.rho}};
  return s;
}

SynthSample gen_scenario_c(std::size_t n, std::uint64_t seed, const ScenarioCParams& p) {
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "scenario C needs n >= 2");
  RngStream rng(seed, 0xC);
  Draws d;
  std::vector<double> f(n);
  std::vector<double> size(n);
  for (std::size_t i = 0; i < n; ++i) {
    size[i] = std::exp(rng.normal());
    d.x1.push_back(size[i] * rng.uniform(0.5, 1.5));
    d.x2.push_back(size[i] * rng.uniform(0.5, 1.5));
    d.u.push_back(half_normal(rng, p.sigma_u));
    d.eps.push_back(p.sigma_eps * rng.normal());
    f[i] = frontier_c(size[i], d.x1[i], d.x2[i], p);
  }
  SynthSample s = finish(Scenario::C, seed, d, std::move(f), std::move(size));
  s.params = {{"scenario", "c"}, {"sigma_u", p.sigma_u}, {"sigma_eps", p.sigma_eps}, {"theta", p.theta},
              {"alpha1", p.alpha1}, {"alpha2", p.alpha2}, {"gamma", p.gamma}};
  return s;
}

SynthSample generate(Scenario s, std::size_t n, std::uint64_t seed) {
  switch (s) {
    case Scenario::A: return gen_scenario_a(n, seed);
    case Scenario::B: return gen_scenario_b(n, seed);
    case Scenario::C: return gen_scenario_c(n, seed);
  }
  throw Error(ErrorCode::Internal, "unreachable scenario");
}

void SynthSample::write_truth(const std::string& path) const {
  const std::size_t n = true_u.size();
  std::vector<std::string> header{"row", "frontier", "u", "eps"};
  std::vector<std::vector<double>> cols(4);
  for (std::size_t i = 0; i < n; ++i) {
    cols[0].push_back(static_cast<double>(i));
    cols[1].push_back(true_frontier[i]);
    cols[2].push_back(true_u[i]);
    cols[3].push_back(noise[i]);
  }
  if (!true_group.empty()) {
    header.push_back("group");
    cols.emplace_back(true_group.begin(), true_group.end());
  }
  if (!size.empty()) {
    header.push_back("size");
    cols.push_back(size);
  }
  write_csv(path, header, cols);
}

}  // namespace gema
