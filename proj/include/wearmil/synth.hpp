#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/error.hpp"
#include "wearmil/ingest.hpp"
#include "wearmil/rng.hpp"

namespace wearmil {

// Class-conditional Gaussian cohort: masked features of a class-c patient
// are N(s·(c−1), 1) per cell, so the Bayes rule reduces to a likelihood
// ratio on the sum of observed masked cells.
struct SynthConfig {
  int patients = 30;
  std::array<int, 3> feature_counts = {12, 8, 10};  // phys, sleep, hrv
  int min_instances = 5;   // per modality per horizon
  int max_instances = 25;
  std::array<double, 3> missing_prob = {0.10, 0.10, 0.10};
  std::array<double, 3> class_prior = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double signal = 1.0;
  // empty mask = every feature of the modality carries signal
  std::array<std::vector<std::uint8_t>, 3> signal_mask;
  HorizonWindows windows;
  Margins margins;
  std::uint64_t seed = 0;

  bool masked(int modality, int feature) const {
    const auto& m = signal_mask[modality];
    if (m.empty()) return true;
    return m[feature] != 0;
  }

  long long masked_count(int modality) const {
    if (signal_mask[modality].empty()) return feature_counts[modality];
    long long n = 0;
    for (auto b : signal_mask[modality]) n += b ? 1 : 0;
    return n;
  }

  void validate() const {
    if (patients < 1) throw Error("synth config: patients must be >= 1");
    for (int f : feature_counts)
      if (f < 1) throw Error("synth config: feature counts must be >= 1");
    if (min_instances < 0 || max_instances < min_instances)
      throw Error("synth config: bad instance range");
    double prior_sum = 0;
    for (double p : class_prior) {
      if (p < 0 || p > 1) throw Error("synth config: prior out of [0,1]");
      prior_sum += p;
    }
    if (std::abs(prior_sum - 1.0) > 1e-9)
      throw Error("synth config: class prior must sum to 1");
    for (double p : missing_prob)
      if (p < 0 || p > 1)
        throw Error("synth config: missing probability out of [0,1]");
    if (signal < 0) throw Error("synth config: signal must be >= 0");
    for (int m = 0; m < 3; ++m)
      if (!signal_mask[m].empty() &&
          signal_mask[m].size() != static_cast<std::size_t>(feature_counts[m]))
        throw Error("synth config: mask length must match feature count");
    windows.validate();
    long long cap = std::min(windows.m3_hi - windows.m3_lo + 1,
                             windows.m6_hi - windows.m6_lo + 1);
    if (max_instances > cap)
      throw Error("synth config: max_instances exceeds window capacity");
  }
};

struct SynthLedgerRow {
  PatientId patient;
  Horizon horizon = Horizon::M3;
  DeltaClass cls = DeltaClass::stable;
  std::array<long long, 3> instances = {0, 0, 0};
  std::array<long long, 3> missing_cells = {0, 0, 0};
};

struct SynthCohort {
  std::array<ModalityTable, 3> tables;  // phys, sleep, hrv
  ClinicalRecords clinical;
  std::vector<SynthLedgerRow> ledger;
};

namespace detail {

inline std::string synth_patient_id(int idx, int total) {
  int width = 3;
  for (int n = total; n >= 1000; n /= 10) ++width;
  std::string digits = std::to_string(idx + 1);
  return "P" + std::string(width - digits.size(), '0') + digits;
}

inline DeltaClass draw_class(const std::array<double, 3>& prior, Philox& rng) {
  double u = rng.uniform01();
  double acc = 0.0;
  for (int c = 0; c < 2; ++c) {
    acc += prior[c];
    if (u < acc) return static_cast<DeltaClass>(c);
  }
  return DeltaClass::improved;
}

// n distinct day offsets inside [lo, hi], ascending.
inline std::vector<long long> draw_days(long long lo, long long hi, int n,
                                        Philox& rng) {
  std::vector<long long> days;
  for (long long d = lo; d <= hi; ++d) days.push_back(d);
  rng.shuffle(days);
  days.resize(n);
  std::sort(days.begin(), days.end());
  return days;
}

// A delta that discretizes back to exactly the requested class.
inline double draw_delta(DeltaClass cls, double r, Philox& rng) {
  double u = rng.uniform01();
  switch (cls) {
    case DeltaClass::worsened: return -(r + u * r);
    case DeltaClass::stable: return (2.0 * u - 1.0) * 0.8 * r;
    case DeltaClass::improved: return r + u * r;
  }
  return 0.0;
}

}  // namespace detail

inline SynthCohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  SynthCohort out;
  for (int m = 0; m < 3; ++m) {
    out.tables[m].modality = kAllModalities[m];
    for (int f = 0; f < cfg.feature_counts[m]; ++f) {
      std::string idx = std::to_string(f + 1);
      out.tables[m].feature_names.push_back(
          std::string(to_string(kAllModalities[m])) + "_f" +
          std::string(idx.size() < 2 ? 2 - idx.size() : 0, '0') + idx);
    }
  }

  const Date epoch = Date::parse("2024-01-01");
  for (int i = 0; i < cfg.patients; ++i) {
    PatientId pid = detail::synth_patient_id(i, cfg.patients);

    Philox bl_rng(cfg.seed, "synth/" + pid + "/baseline");
    Date baseline = epoch.plus_days(static_cast<long long>(bl_rng.below(90)));
    out.clinical.baselines[pid] = baseline;

    Philox cls_rng(cfg.seed, "synth/" + pid + "/class");
    std::array<DeltaClass, 2> cls;
    for (int h = 0; h < 2; ++h)
      cls[h] = detail::draw_class(cfg.class_prior, cls_rng);

    std::array<SynthLedgerRow, 2> rows;
    for (int h = 0; h < 2; ++h) {
      rows[h].patient = pid;
      rows[h].horizon = kAllHorizons[h];
      rows[h].cls = cls[h];
    }

    for (int m = 0; m < 3; ++m) {
      std::string mod = to_string(kAllModalities[m]);
      for (int h = 0; h < 2; ++h) {
        long long lo = h == 0 ? cfg.windows.m3_lo : cfg.windows.m6_lo;
        long long hi = h == 0 ? cfg.windows.m3_hi : cfg.windows.m6_hi;
        std::string base =
            "synth/" + pid + "/" + mod + "/" + to_string(kAllHorizons[h]);
        Philox date_rng(cfg.seed, base + "/dates");
        int count = cfg.min_instances +
                    static_cast<int>(date_rng.below(
                        cfg.max_instances - cfg.min_instances + 1));
        auto days = detail::draw_days(lo, hi, count, date_rng);
        rows[h].instances[m] = count;

        Philox feat_rng(cfg.seed, base + "/features");
        Philox miss_rng(cfg.seed, base + "/missing");
        double shift = cfg.signal * (static_cast<int>(cls[h]) - 1);
        for (long long day : days) {
          InstanceRow row;
          row.patient = pid;
          row.modality = kAllModalities[m];
          row.date = baseline.plus_days(day);
          for (int f = 0; f < cfg.feature_counts[m]; ++f) {
            double v = feat_rng.normal() + (cfg.masked(m, f) ? shift : 0.0);
            if (miss_rng.uniform01() < cfg.missing_prob[m]) {
              row.features.push_back(std::nullopt);
              ++rows[h].missing_cells[m];
            } else {
              row.features.push_back(v);
            }
          }
          out.tables[m].rows.push_back(std::move(row));
        }
      }
    }
    for (int h = 0; h < 2; ++h) out.ledger.push_back(rows[h]);

    for (Task task : kAllTasks) {
      Philox clin_rng(cfg.seed,
                      "synth/" + pid + "/clinical/" +
                          std::string(to_string(task)));
      double r = cfg.margins.for_task(task);
      double bl_value = task == Task::facit ? clin_rng.uniform(25.0, 45.0)
                                            : clin_rng.uniform(20.0, 40.0);
      out.clinical.values[{pid, task, Timepoint::BL}] = bl_value;
      for (int h = 0; h < 2; ++h) {
        double delta = detail::draw_delta(cls[h], r, clin_rng);
        Timepoint tp = h == 0 ? Timepoint::M3 : Timepoint::M6;
        out.clinical.values[{pid, task, tp}] = bl_value + delta;
      }
    }
  }

  for (auto& table : out.tables)
    std::sort(table.rows.begin(), table.rows.end(),
              [](const InstanceRow& a, const InstanceRow& b) {
                if (a.patient != b.patient) return a.patient < b.patient;
                return a.date < b.date;
              });
  return out;
}

inline void write_ledger(const std::string& path,
                         const std::vector<SynthLedgerRow>& ledger) {
  std::vector<std::string> lines;
  lines.push_back(
      "patient_id,horizon,class,n_phys,n_sleep,n_hrv,missing_phys,"
      "missing_sleep,missing_hrv");
  for (const auto& r : ledger)
    lines.push_back(r.patient + "," + to_string(r.horizon) + "," +
                    std::to_string(static_cast<int>(r.cls)) + "," +
                    std::to_string(r.instances[0]) + "," +
                    std::to_string(r.instances[1]) + "," +
                    std::to_string(r.instances[2]) + "," +
                    std::to_string(r.missing_cells[0]) + "," +
                    std::to_string(r.missing_cells[1]) + "," +
                    std::to_string(r.missing_cells[2]));
  write_lines(path, lines);
}

// Writes phys.csv, sleep.csv, hrv.csv, clinical.csv and ledger.csv.
inline void write_synth_cohort(const std::string& dir,
                               const SynthCohort& cohort) {
  for (int m = 0; m < 3; ++m)
    write_modality_table(
        dir + "/" + to_string(kAllModalities[m]) + ".csv", cohort.tables[m]);
  write_clinical(dir + "/clinical.csv", cohort.clinical);
  write_ledger(dir + "/ledger.csv", cohort.ledger);
}

struct OracleEstimate {
  double balanced_accuracy = 0.0;
  double std_error = 0.0;
  long long trials_per_class = 0;
};

// Monte-Carlo estimate of the Bayes-optimal balanced accuracy. Given a
// class, the observed masked cells are i.i.d. N(s·(c−1), 1), so their sum T
// over k observed cells is sufficient; the Bayes rule maximizes
// log prior_c + μ_c·T − k·μ_c²/2 with μ_c = s·(c−1). Draws share streams
// across signal strengths, so estimates are common-random-number smooth.
inline OracleEstimate oracle_accuracy(const SynthConfig& cfg,
                                      long long trials_per_class = 4000) {
  cfg.validate();
  std::array<double, 3> mu;
  for (int c = 0; c < 3; ++c) mu[c] = cfg.signal * (c - 1);

  std::vector<int> classes;
  for (int c = 0; c < 3; ++c)
    if (cfg.class_prior[c] > 0) classes.push_back(c);

  double recall_sum = 0.0;
  double var_sum = 0.0;
  for (int c : classes) {
    Philox rng(cfg.seed, "oracle/class/" + std::to_string(c));
    long long hits = 0;
    for (long long trial = 0; trial < trials_per_class; ++trial) {
      long long k = 0;
      for (int m = 0; m < 3; ++m) {
        long long n = cfg.min_instances +
                      static_cast<long long>(rng.below(
                          cfg.max_instances - cfg.min_instances + 1));
        long long masked = cfg.masked_count(m);
        for (long long cell = 0; cell < n * masked; ++cell)
          if (!(rng.uniform01() < cfg.missing_prob[m])) ++k;
      }
      double kd = static_cast<double>(k);
      double T = kd * mu[c] + std::sqrt(kd) * rng.normal();
      int best = -1;
      double best_score = 0.0;
      for (int cand : classes) {
        double score =
            std::log(cfg.class_prior[cand]) + mu[cand] * T -
            kd * mu[cand] * mu[cand] / 2.0;
        if (best < 0 || score > best_score) {
          best = cand;
          best_score = score;
        }
      }
      if (best == c) ++hits;
    }
    double recall =
        static_cast<double>(hits) / static_cast<double>(trials_per_class);
    recall_sum += recall;
    var_sum += recall * (1.0 - recall) / static_cast<double>(trials_per_class);
  }
  OracleEstimate est;
  est.balanced_accuracy = recall_sum / static_cast<double>(classes.size());
  est.std_error =
      std::sqrt(var_sum) / static_cast<double>(classes.size());
  est.trials_per_class = trials_per_class;
  return est;
}

}  // namespace wearmil
