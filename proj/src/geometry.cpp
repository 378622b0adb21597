#include "gema/geometry.hpp"

#include "gema/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>

namespace gema {

Matrix decoder_jacobian(const ProManModel& model, const Vector& x, const Vector& z, int entity, int time) {
  if (x.size() != model.d_x || z.size() != model.latent_dim) {
    throw Error(ErrorCode::DimensionMismatch, "jacobian point dimensions");
  }
  const Eigen::Index dy = model.d_y;
  Matrix in(model.decoder_in_dim(), dy);
  Vector col(model.decoder_in_dim());
  col.head(model.d_x) = model.meta.whitening.apply(x);
  col.segment(model.d_x, model.latent_dim) = z;
  Eigen::Index row = model.d_x + model.latent_dim;
  if (model.entity_dim() > 0) {
    col.segment(row, model.entity_dim()) = model.entity_embedding.lookup(entity);
    row += model.entity_dim();
  }
  if (model.time_dim() > 0) col.segment(row, model.time_dim()) = model.time_embedding.lookup(time);
  in = col.replicate(1, dy);

  // One reverse pass per output, batched as columns.
  MlpTrace trace;
  model.decoder.forward(in, ForwardOptions{}, &trace);
  MlpGrads scratch = model.decoder.make_grads();
  const Matrix gin = model.decoder.backward(trace, Matrix::Identity(dy, dy), scratch);
  return gin.topRows(model.d_x).transpose() * model.meta.whitening.w;
}

double lipschitz_bound(const ProManModel& model) {
  const Mlp& dec = model.decoder;
  if (dec.n_layers() == 0) throw Error(ErrorCode::UnfittedModel, "decoder has no layers");
  double bound = svd_max_singular(model.meta.whitening.w);
  for (std::size_t l = 0; l < dec.n_layers(); ++l) {
    Matrix w = dec.effective_weight(l);
    if (l == 0) w = Matrix(w.leftCols(model.d_x));
    bound *= svd_max_singular(w) * activation_lipschitz(dec.layers()[l].activation);
  }
  if (!(bound > 0.0)) throw Error(ErrorCode::ZeroMatrix, "Lipschitz bound is zero");
  return bound;
}

std::vector<CertificationRecord> certification_radius(const ProManModel& model, const DatasetFrame& frame, int jobs) {
  const ModelData data = prepare(model, frame);
  const PosteriorBatch post = encode_batch(model, data);
  const double l = lipschitz_bound(model);
  std::vector<CertificationRecord> out(data.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < out.size(); i += stride) {
      const auto c = static_cast<Eigen::Index>(i);
      const Matrix j = decoder_jacobian(model, data.x.col(c), post.mu_z.col(c), data.entity.empty() ? 0 : data.entity[i],
                                        data.time.empty() ? 0 : data.time[i]);
      CertificationRecord r;
      r.row = data.row_ids.empty() ? i : data.row_ids[i];
      r.sigma_min = svd_min_singular(j);
      r.l_bound = l;
      r.r_cert = r.sigma_min / l;
      out[i] = r;
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, std::max<std::size_t>(out.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
  work(0, n_threads);
  for (auto& t : pool) t.join();
  return out;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty sample");
  if (p < 0.0 || p > 100.0) throw Error(ErrorCode::InvalidArgument, "percentile level outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<double> percentiles(const std::vector<double>& values, const std::vector<double>& levels) {
  std::vector<double> out;
  out.reserve(levels.size());
  for (double p : levels) out.push_back(percentile(values, p));
  return out;
}

nlohmann::json PercentileTable::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < levels.size(); ++i) rows.push_back({{"percentile", levels[i]}, {"r_cert", values[i]}});
  return {{"n", n}, {"percentiles", rows}};
}

std::string PercentileTable::to_text() const {
  std::string head = "Percentile";
  std::string row = "R_cert    ";
  char buf[64];
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "  p%-5g", levels[i]);
    head += buf;
    std::snprintf(buf, sizeof buf, "  %-6.3f", values[i]);
    row += buf;
  }
  auto trim = [](std::string s) { return s.erase(s.find_last_not_of(' ') + 1); };
  return "Certification radius percentiles (n = " + std::to_string(n) + ")\n" + trim(head) + "\n" + trim(row) + "\n";
}

PercentileTable certification_percentiles(const std::vector<CertificationRecord>& records,
                                          const std::vector<double>& levels) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no certification records");
  std::vector<double> r;
  r.reserve(records.size());
  for (const auto& rec : records) r.push_back(rec.r_cert);
  return PercentileTable{levels, percentiles(r, levels), records.size()};
}

FragileResult fragile_flags(const std::vector<double>& scores, const std::vector<double>& radii, double score_quantile,
                            double radius_quantile) {
  if (scores.size() != radii.size()) throw Error(ErrorCode::LengthMismatch, "scores and radii differ in length");
  if (scores.empty()) throw Error(ErrorCode::EmptyInput, "no rows to flag");
  FragileResult res;
  res.score_threshold = percentile(scores, 100.0 * score_quantile);
  res.radius_threshold = percentile(radii, 100.0 * radius_quantile);
  res.flags.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    res.flags[i] = scores[i] >= res.score_threshold && radii[i] <= res.radius_threshold;
    if (res.flags[i]) ++res.count;
  }
  return res;
}

}  // namespace gema
