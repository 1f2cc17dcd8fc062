#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/error.hpp"
#include "wearmil/ingest.hpp"

namespace wearmil {

inline constexpr double kStandardizeEps = 1e-8;

// Per-feature mean and population standard deviation for one modality,
// fitted on training patients only. `fitted_on` records that patient set
// so downstream checks can prove no other rows contributed.
struct FoldStats {
  Modality modality = Modality::phys;
  std::vector<std::string> feature_names;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::set<PatientId> fitted_on;
  std::vector<std::string> warnings;
};

// Fits statistics on rows whose patient is in `train_patients`. Missing
// cells are skipped. A feature with no observed value in the training rows
// gets mean 0 and stddev 0 plus a warning; imputation then yields exactly 0
// after centering and scaling.
inline FoldStats fit_stats(const ModalityTable& table,
                           const std::set<PatientId>& train_patients) {
  if (train_patients.empty())
    throw Error("fit_stats: empty training patient set");
  FoldStats s;
  s.modality = table.modality;
  s.feature_names = table.feature_names;
  s.fitted_on = train_patients;
  const std::size_t F = table.feature_count();
  std::vector<double> sum(F, 0.0), sumsq(F, 0.0);
  std::vector<long long> n(F, 0);
  for (const auto& row : table.rows) {
    if (!train_patients.count(row.patient)) continue;
    if (row.features.size() != F)
      throw Error("fit_stats: row feature count mismatch");
    for (std::size_t f = 0; f < F; ++f) {
      if (!row.features[f]) continue;
      double v = *row.features[f];
      sum[f] += v;
      sumsq[f] += v * v;
      ++n[f];
    }
  }
  s.mean.resize(F);
  s.stddev.resize(F);
  for (std::size_t f = 0; f < F; ++f) {
    if (n[f] == 0) {
      s.mean[f] = 0.0;
      s.stddev[f] = 0.0;
      s.warnings.push_back("feature '" + table.feature_names[f] + "' of " +
                           to_string(table.modality) +
                           " has no observed training value");
      continue;
    }
    double mu = sum[f] / static_cast<double>(n[f]);
    double var = sumsq[f] / static_cast<double>(n[f]) - mu * mu;
    if (var < 0.0) var = 0.0;  // rounding guard
    s.mean[f] = mu;
    s.stddev[f] = std::sqrt(var);
  }
  return s;
}

// Impute missing cells with the training mean, then center and scale.
// Imputed cells therefore come out exactly 0.
inline std::vector<double> transform(const FoldStats& s,
                                     const std::vector<std::optional<double>>&
                                         features) {
  if (features.size() != s.mean.size())
    throw Error("transform: feature count mismatch");
  std::vector<double> out(features.size());
  for (std::size_t f = 0; f < features.size(); ++f) {
    double v = features[f] ? *features[f] : s.mean[f];
    out[f] = (v - s.mean[f]) / (s.stddev[f] + kStandardizeEps);
  }
  return out;
}

inline void write_fold_stats(const std::string& path,
                             const std::vector<FoldStats>& stats) {
  std::vector<std::string> lines;
  lines.push_back("modality,feature,mean,std");
  for (const auto& s : stats)
    for (std::size_t f = 0; f < s.feature_names.size(); ++f)
      lines.push_back(std::string(to_string(s.modality)) + "," +
                      s.feature_names[f] + "," + format_double(s.mean[f]) +
                      "," + format_double(s.stddev[f]));
  write_lines(path, lines);
}

}  // namespace wearmil
