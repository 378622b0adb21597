#pragma once

#include "gema/proman_vae.hpp"

#include <string>
#include <vector>

namespace gema {

/// Inputs and outputs divided row-wise by the scale column; the scale
/// column itself becomes 1. `scale` keeps the original factors.
struct QuotientFrame {
  DatasetFrame frame;
  std::vector<double> scale;
  std::string scale_col;

  DatasetFrame restore() const;
};

QuotientFrame quotient_project(const DatasetFrame& frame, const std::string& scale_col);

struct QuotientScores {
  QuotientFrame projected;
  TrainResult fit;
  std::vector<EfficiencyRow> scores;
};

/// quotient_project, then the usual transform / standardise / train / score.
QuotientScores quotient_efficiency(const DatasetFrame& frame, const std::string& scale_col,
                                   const TrainConfig& config);

struct SizeBias {
  double r = 0.0;
  bool degenerate = false;  // a side had zero variance; r reported as 0
};

/// Pearson correlation between scores and log(size).
SizeBias size_bias(const std::vector<double>& scores, const std::vector<double>& sizes);

}  // namespace gema
