#include "gema/quotient.hpp"

#include "gema/error.hpp"
#include "gema/evaluation.hpp"

#include <cmath>

namespace gema {

QuotientFrame quotient_project(const DatasetFrame& frame, const std::string& scale_col) {
  if (!frame.has_column(scale_col)) throw Error(ErrorCode::MissingColumn, scale_col);
  const Column& sc = frame.column(scale_col);
  if (sc.is_categorical()) throw Error(ErrorCode::SchemaMismatch, scale_col + " is categorical");
  for (std::size_t i = 0; i < sc.values.size(); ++i) {
    if (!(sc.values[i] > 0.0)) {
      throw Error(ErrorCode::NonPositiveScale, "row " + std::to_string(i) + " has scale " + std::to_string(sc.values[i]));
    }
  }
  QuotientFrame q;
  q.scale = sc.values;
  q.scale_col = scale_col;
  q.frame = frame;
  for (const auto& c : frame.columns()) {
    if (c.role != ColumnRole::Input && c.role != ColumnRole::Output) continue;
    if (c.transform != LogTransform::None) {
      throw Error(ErrorCode::InvalidArgument, "quotient projection needs raw values in " + c.name);
    }
    Column& out = q.frame.column(c.name);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = c.values[i] / q.scale[i];
  }
  for (double& v : q.frame.column(scale_col).values) v = 1.0;
  return q;
}

DatasetFrame QuotientFrame::restore() const {
  DatasetFrame out = frame;
  for (const auto& c : frame.columns()) {
    if (c.role != ColumnRole::Input && c.role != ColumnRole::Output) continue;
    Column& dst = out.column(c.name);
    for (std::size_t i = 0; i < dst.values.size(); ++i) dst.values[i] = c.values[i] * scale[i];
  }
  out.column(scale_col).values = scale;
  return out;
}

QuotientScores quotient_efficiency(const DatasetFrame& frame, const std::string& scale_col,
                                   const TrainConfig& config) {
  QuotientScores q;
  q.projected = quotient_project(frame, scale_col);
  q.fit = fit(q.projected.frame, config);
  q.scores = efficiency_scores(q.fit.model, q.projected.frame);
  return q;
}

SizeBias size_bias(const std::vector<double>& scores, const std::vector<double>& sizes) {
  if (scores.size() != sizes.size()) throw Error(ErrorCode::LengthMismatch, "scores and sizes differ in length");
  if (scores.size() < 3) throw Error(ErrorCode::TooFewPoints, "size bias needs at least 3 rows");
  std::vector<double> logs(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0)) throw Error(ErrorCode::NonPositiveScale, "row " + std::to_string(i));
    logs[i] = std::log(sizes[i]);
  }
  try {
    return SizeBias{pearson(scores, logs), false};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateVariance) throw;
    return SizeBias{0.0, true};
  }
}

}  // namespace gema
