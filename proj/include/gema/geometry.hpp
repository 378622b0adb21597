#pragma once

#include "gema/proman_vae.hpp"

#include <vector>

#include <json.hpp>

namespace gema {

struct CertificationRecord {
  std::size_t row = 0;
  double sigma_min = 0.0;
  double l_bound = 0.0;
  double r_cert = 0.0;
};

/// Jacobian (d_y x d_x) of x -> G(W(x - mu), z, e, t) at standardised x.
Matrix decoder_jacobian(const ProManModel& model, const Vector& x, const Vector& z, int entity = 0,
                        int time = 0);

/// Product bound ||W_whiten|| * ||W_1[:, x]|| * prod_{l>1} ||W_l|| * prod L_act,
/// with exact spectral norms of the weights the decoder applies.
double lipschitz_bound(const ProManModel& model);

/// Per-row radius at z = mu_z; rows are split across `jobs` threads.
std::vector<CertificationRecord> certification_radius(const ProManModel& model, const DatasetFrame& frame,
                                                      int jobs = 1);

inline const std::vector<double> kDefaultPercentiles{0, 5, 25, 50, 75, 95, 99};

/// Type-7 percentile (linear interpolation between order statistics); p in [0, 100].
double percentile(std::vector<double> values, double p);
std::vector<double> percentiles(const std::vector<double>& values, const std::vector<double>& levels);

struct PercentileTable {
  std::vector<double> levels;
  std::vector<double> values;
  std::size_t n = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

PercentileTable certification_percentiles(const std::vector<CertificationRecord>& records,
                                          const std::vector<double>& levels = kDefaultPercentiles);

struct FragileResult {
  std::vector<bool> flags;
  double score_threshold = 0.0;
  double radius_threshold = 0.0;
  std::size_t count = 0;
};

/// score >= q_{score_quantile}(scores) and R_cert <= q_{radius_quantile}(R_cert), ties included.
FragileResult fragile_flags(const std::vector<double>& scores, const std::vector<double>& radii,
                            double score_quantile = 0.9, double radius_quantile = 0.25);

}  // namespace gema
