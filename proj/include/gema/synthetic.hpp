#pragma once

#include "gema/data_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace gema {

enum class Scenario { A, B, C };

std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);

struct ScenarioAParams {
  double sigma_u = 0.3;
  double sigma_eps = 0.05;
  double a = 1.0;
  double b = 2.0;
};

struct ScenarioBParams {
  double sigma_u = 0.25;
  double sigma_eps = 0.05;
  double cd_scale = 1.0;  // A
  double alpha1 = 0.4;
  double alpha2 = 0.6;
  double ces_scale = 1.1;  // B
  double delta = 0.3;
  double rho = -0.5;
};

struct ScenarioCParams {
  double sigma_u = 0.3;
  double sigma_eps = 0.06;
  double theta = 1.0;
  double alpha1 = 0.3;
  double alpha2 = 0.4;
  double gamma = 0.3;
};

/// Generated data with its ground truth. Frame columns: x1, x2 (input),
/// y (output) and, for scenario C, s (scale).
struct SynthSample {
  Scenario scenario = Scenario::A;
  DatasetFrame frame;
  std::vector<double> true_frontier;
  std::vector<double> true_u;
  std::vector<double> noise;
  std::vector<int> true_group;  // scenario B: 1 or 2
  std::vector<double> size;     // scenario C
  nlohmann::json params;
  std::uint64_t seed = 0;

  void write_truth(const std::string& path) const;
};

double frontier_a(double x1, double x2, double a = 1.0, double b = 2.0);
double frontier_b(int group, double x1, double x2, const ScenarioBParams& p = {});
double frontier_c(double s, double x1, double x2, const ScenarioCParams& p = {});

SynthSample gen_scenario_a(std::size_t n, std::uint64_t seed, const ScenarioAParams& p = {});
SynthSample gen_scenario_b(std::size_t n, std::uint64_t seed, const ScenarioBParams& p = {});
SynthSample gen_scenario_c(std::size_t n, std::uint64_t seed, const ScenarioCParams& p = {});
SynthSample generate(Scenario s, std::size_t n, std::uint64_t seed);

}  // namespace gema
