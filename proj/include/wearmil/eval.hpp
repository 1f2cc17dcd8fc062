#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/error.hpp"
#include "wearmil/ingest.hpp"
#include "wearmil/model.hpp"
#include "wearmil/preprocess.hpp"
#include "wearmil/rng.hpp"

namespace wearmil {

// Mean per-class recall over the classes present in `labels`.
inline double balanced_accuracy(const std::vector<int>& preds,
                                const std::vector<int>& labels) {
  if (labels.empty() || preds.size() != labels.size())
    throw Error("balanced_accuracy: empty or mismatched inputs");
  std::array<long long, kNumClasses> total = {0, 0, 0}, hit = {0, 0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses)
      throw Error("balanced_accuracy: label out of range");
    ++total[labels[i]];
    if (preds[i] == labels[i]) ++hit[labels[i]];
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (total[c] == 0) continue;
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return sum / present;
}

namespace detail {

struct F1Parts {
  std::array<double, kNumClasses> f1 = {0, 0, 0};
  std::array<long long, kNumClasses> support = {0, 0, 0};
};

inline F1Parts per_class_f1(const std::vector<int>& preds,
                            const std::vector<int>& labels) {
  if (labels.empty() || preds.size() != labels.size())
    throw Error("f1: empty or mismatched inputs");
  std::array<long long, kNumClasses> tp = {0, 0, 0}, fp = {0, 0, 0},
                                     fn = {0, 0, 0};
  F1Parts out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses)
      throw Error("f1: label out of range");
    ++out.support[labels[i]];
    if (preds[i] == labels[i]) {
      ++tp[labels[i]];
    } else {
      if (preds[i] >= 0 && preds[i] < kNumClasses) ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  for (int c = 0; c < kNumClasses; ++c) {
    double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    out.f1[c] = denom > 0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return out;
}

}  // namespace detail

// Unweighted mean of per-class F1 over classes present in the labels; a
// class with no true and no predicted positives contributes 0.
inline double macro_f1(const std::vector<int>& preds,
                       const std::vector<int>& labels) {
  auto parts = detail::per_class_f1(preds, labels);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (parts.support[c] == 0) continue;
    sum += parts.f1[c];
    ++present;
  }
  return sum / present;
}

// Support-weighted mean of per-class F1, selectable as an alternative.
inline double weighted_f1(const std::vector<int>& preds,
                          const std::vector<int>& labels) {
  auto parts = detail::per_class_f1(preds, labels);
  double sum = 0.0;
  long long n = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    sum += parts.f1[c] * static_cast<double>(parts.support[c]);
    n += parts.support[c];
  }
  return sum / static_cast<double>(n);
}

struct ClassWeights {
  std::array<double, kNumClasses> w = {1.0, 1.0, 1.0};
  std::array<long long, kNumClasses> counts = {0, 0, 0};
  std::vector<int> zero_classes;
};

// w_c = N / (K · n_c); classes absent from training get weight 0 and are
// flagged so reports can surface them.
inline ClassWeights class_weights(const std::vector<DeltaClass>& labels) {
  ClassWeights cw;
  for (DeltaClass c : labels) ++cw.counts[static_cast<int>(c)];
  long long n = static_cast<long long>(labels.size());
  for (int c = 0; c < kNumClasses; ++c) {
    if (cw.counts[c] == 0) {
      cw.w[c] = 0.0;
      cw.zero_classes.push_back(c);
    } else {
      cw.w[c] = static_cast<double>(n) /
                (static_cast<double>(kNumClasses) * cw.counts[c]);
    }
  }
  return cw;
}

// One fold per patient; the pool is everyone else.
inline std::vector<std::pair<PatientId, std::vector<PatientId>>> loso_folds(
    const std::vector<PatientId>& patients) {
  if (patients.size() < 3) throw Error("loso_folds: need at least 3 patients");
  std::vector<std::pair<PatientId, std::vector<PatientId>>> folds;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    std::vector<PatientId> pool;
    pool.reserve(patients.size() - 1);
    for (std::size_t j = 0; j < patients.size(); ++j)
      if (j != i) pool.push_back(patients[j]);
    folds.emplace_back(patients[i], std::move(pool));
  }
  return folds;
}

struct InnerSplit {
  std::set<PatientId> train;
  std::set<PatientId> val;
  bool stratified = false;
  std::vector<std::string> warnings;
};

// Patient-wise 80/20 split, stratified by class with largest-remainder
// quotas when all three classes appear in the pool. Validation size is
// max(1, round(0.2·|pool|)).
inline InnerSplit inner_split(const std::vector<PatientId>& pool,
                              const std::map<PatientId, int>& classes,
                              std::uint64_t seed) {
  if (pool.size() < 2) throw Error("inner_split: pool must have >= 2 patients");
  InnerSplit out;
  auto val_n = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(0.2 * static_cast<double>(pool.size()))));

  std::array<std::vector<PatientId>, kNumClasses> by_class;
  for (const auto& p : pool) {
    auto it = classes.find(p);
    if (it == classes.end())
      throw Error("inner_split: no class for patient '" + p + "'");
    by_class[it->second].push_back(p);
  }
  bool all_present = true;
  for (int c = 0; c < kNumClasses; ++c)
    if (by_class[c].empty()) all_present = false;

  if (all_present) {
    out.stratified = true;
    std::array<std::size_t, kNumClasses> quota{};
    std::array<double, kNumClasses> frac{};
    std::size_t assigned = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      double exact = static_cast<double>(val_n) * by_class[c].size() /
                     static_cast<double>(pool.size());
      quota[c] = static_cast<std::size_t>(exact);
      frac[c] = exact - static_cast<double>(quota[c]);
      assigned += quota[c];
    }
    std::array<int, kNumClasses> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (frac[a] != frac[b]) return frac[a] > frac[b];
      if (by_class[a].size() != by_class[b].size())
        return by_class[a].size() > by_class[b].size();
      return a < b;
    });
    for (int k = 0; assigned < val_n; ++assigned, ++k)
      quota[order[k % kNumClasses]] += 1;
    for (int c = 0; c < kNumClasses; ++c) {
      auto& members = by_class[c];
      std::sort(members.begin(), members.end());
      Philox rng(seed, "inner_split/class/" + std::to_string(c));
      rng.shuffle(members);
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (i < quota[c])
          out.val.insert(members[i]);
        else
          out.train.insert(members[i]);
      }
    }
  } else {
    out.warnings.push_back(
        "inner split unstratified: not every class has a pool patient");
    std::vector<PatientId> shuffled = pool;
    std::sort(shuffled.begin(), shuffled.end());
    Philox rng(seed, "inner_split/unstratified");
    rng.shuffle(shuffled);
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
      if (i < val_n)
        out.val.insert(shuffled[i]);
      else
        out.train.insert(shuffled[i]);
    }
  }
  if (out.train.empty())
    throw Error("inner_split: training side is empty");
  return out;
}

struct FoldOutcome {
  PatientId patient;
  bool skipped = false;
  std::string skip_reason;
  std::vector<int> labels;
  std::vector<int> preds;
  std::vector<std::array<double, 3>> probs;
  struct AttnRow {
    Modality modality;
    Date date;
    double alpha;
  };
  std::vector<AttnRow> attention;
  double balanced_acc = 0.0;
  double f1 = 0.0;
  ClassWeights weights;
  std::vector<FoldStats> stats;
  std::set<PatientId> train_patients;
  std::set<PatientId> val_patients;
  std::uint64_t model_digest = 0;
  int epochs = 0;
  int best_epoch = 0;
};

struct RunReport {
  Task task = Task::facit;
  Horizon horizon = Horizon::M3;
  std::string subset;
  std::vector<FoldOutcome> folds;  // sorted by held-out patient
  long long skipped = 0;
  long long adherence_dropped = 0;
  double balacc_mean = 0.0, balacc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
};

struct EvalConfig {
  HorizonWindows windows;
  Margins margins;
  int embed_dim = 128;
  int hidden_dim = 128;
  int attn_dim = 64;
  TrainConfig train;
  bool class_weighted = true;
  bool use_weighted_f1 = false;
  double min_days_per_week = 0.0;  // adherence filter, off by default
  int jobs = 1;
};

struct AdherenceFilterResult {
  std::vector<EndpointLabel> kept;
  long long dropped = 0;
};

// Optional availability filter: a labeled pair must have instance dates on
// at least rate·weeks distinct days inside its horizon window.
inline AdherenceFilterResult apply_adherence_filter(
    const std::vector<EndpointLabel>& labels,
    const std::vector<const ModalityTable*>& tables,
    const ClinicalRecords& clinical, const HorizonWindows& windows,
    double min_days_per_week) {
  AdherenceFilterResult out;
  if (min_days_per_week <= 0) {
    out.kept = labels;
    return out;
  }
  for (const auto& lab : labels) {
    const Date& bl = clinical.baseline(lab.patient);
    std::set<std::string> days;
    for (const ModalityTable* t : tables)
      for (const auto& row : t->rows) {
        if (row.patient != lab.patient) continue;
        auto h = assign_horizon(days_from_baseline(row.date, bl), windows);
        if (h && *h == lab.horizon) days.insert(row.date.to_string());
      }
    long long lo = lab.horizon == Horizon::M3 ? windows.m3_lo : windows.m6_lo;
    long long hi = lab.horizon == Horizon::M3 ? windows.m3_hi : windows.m6_hi;
    double weeks = static_cast<double>(hi - lo + 1) / 7.0;
    if (static_cast<double>(days.size()) >= min_days_per_week * weeks)
      out.kept.push_back(lab);
    else
      ++out.dropped;
  }
  return out;
}

namespace detail {

inline ModelConfig model_config_for(const std::vector<const ModalityTable*>&
                                        tables,
                                    const EvalConfig& ecfg) {
  ModelConfig cfg;
  for (const ModalityTable* t : tables) {
    cfg.modalities.push_back(t->modality);
    cfg.feature_dims.push_back(static_cast<int>(t->feature_count()));
    cfg.hidden_dims.push_back(ecfg.hidden_dim);
  }
  cfg.embed_dim = ecfg.embed_dim;
  cfg.attn_dim = ecfg.attn_dim;
  return cfg;
}

}  // namespace detail

// One LOSO fold: fit statistics on the inner-train patients only, build all
// bags with them, train with early stopping on the inner-val split, then
// predict the held-out patient's bag.
inline FoldOutcome run_fold(const std::vector<const ModalityTable*>& tables,
                            const ClinicalRecords& clinical,
                            const std::vector<EndpointLabel>& run_labels,
                            const std::map<PatientId, int>& patient_classes,
                            const PatientId& test_patient,
                            const std::vector<PatientId>& pool,
                            std::size_t fold_idx, Task task, Horizon horizon,
                            const EvalConfig& ecfg) {
  FoldOutcome out;
  out.patient = test_patient;
  std::uint64_t fold_seed =
      ecfg.train.seed ^ static_cast<std::uint64_t>(fold_idx);

  InnerSplit split = inner_split(pool, patient_classes, fold_seed);
  out.train_patients = split.train;
  out.val_patients = split.val;

  std::vector<FoldStats> stats;
  stats.reserve(tables.size());
  for (const ModalityTable* t : tables)
    stats.push_back(fit_stats(*t, split.train));
  out.stats = stats;

  std::vector<const FoldStats*> stat_ptrs;
  for (const auto& s : stats) stat_ptrs.push_back(&s);
  BagBuildResult built = build_bags(tables, stat_ptrs, clinical, run_labels,
                                    task, horizon, ecfg.windows);

  std::vector<const Bag*> train_bags, val_bags, test_bags;
  std::vector<DeltaClass> train_labels;
  for (const Bag& b : built.bags) {
    if (b.patient == test_patient) {
      test_bags.push_back(&b);
    } else if (split.val.count(b.patient)) {
      val_bags.push_back(&b);
    } else if (split.train.count(b.patient)) {
      train_bags.push_back(&b);
      train_labels.push_back(b.label);
    }
  }
  if (train_bags.empty()) {
    out.skipped = true;
    out.skip_reason = "no training bags";
    return out;
  }
  if (val_bags.empty()) {
    out.skipped = true;
    out.skip_reason = "no validation bags";
    return out;
  }
  if (test_bags.empty()) {
    out.skipped = true;
    out.skip_reason = "held-out patient has no windowed instances";
    return out;
  }

  out.weights = class_weights(train_labels);
  std::array<double, 3> w =
      ecfg.class_weighted ? out.weights.w : std::array<double, 3>{1, 1, 1};

  ModelConfig mcfg = detail::model_config_for(tables, ecfg);
  TrainConfig tcfg = ecfg.train;
  tcfg.seed = fold_seed;
  MilModel model = init_model(mcfg, fold_seed);
  TrainResult tr = train(std::move(model), train_bags, val_bags, w, tcfg);
  out.epochs = static_cast<int>(tr.history.size());
  out.best_epoch = tr.best_epoch;
  out.model_digest = param_digest(tr.model);

  for (const Bag* b : test_bags) {
    ForwardTrace trace = forward(tr.model, *b);
    auto p = softmax3(trace.logits);
    int pred = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (p[c] > p[pred]) pred = c;
    out.labels.push_back(static_cast<int>(b->label));
    out.preds.push_back(pred);
    out.probs.push_back(p);
    for (std::size_t j = 0; j < b->instances.size(); ++j)
      out.attention.push_back({b->instances[j].modality, b->instances[j].date,
                               trace.alpha[j]});
  }
  out.balanced_acc = balanced_accuracy(out.preds, out.labels);
  out.f1 = ecfg.use_weighted_f1 ? weighted_f1(out.preds, out.labels)
                                : macro_f1(out.preds, out.labels);
  return out;
}

namespace detail {

inline void aggregate_report(RunReport& rep) {
  std::vector<double> ba, f1;
  for (const auto& f : rep.folds) {
    if (f.skipped) {
      ++rep.skipped;
      continue;
    }
    ba.push_back(f.balanced_acc);
    f1.push_back(f.f1);
  }
  auto mean_std = [](const std::vector<double>& xs, double& mean,
                     double& sd) {
    if (xs.empty()) {
      mean = 0;
      sd = 0;
      return;
    }
    double s = 0;
    for (double x : xs) s += x;
    mean = s / static_cast<double>(xs.size());
    if (xs.size() < 2) {
      sd = 0;
      return;
    }
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  };
  mean_std(ba, rep.balacc_mean, rep.balacc_std);
  mean_std(f1, rep.f1_mean, rep.f1_std);
}

}  // namespace detail

inline std::string subset_label(const std::vector<Modality>& mods) {
  std::string out;
  for (Modality m : kAllModalities) {
    if (std::find(mods.begin(), mods.end(), m) == mods.end()) continue;
    if (!out.empty()) out += '+';
    switch (m) {
      case Modality::phys: out += 'P'; break;
      case Modality::sleep: out += 'S'; break;
      case Modality::hrv: out += 'E'; break;
    }
  }
  return out;
}

// Full LOSO pass for one task and horizon over the given modality subset.
// Folds are independent; `jobs` caps how many run concurrently, and the
// result is identical for any job count.
inline RunReport run_loso(const std::vector<const ModalityTable*>& tables,
                          const ClinicalRecords& clinical,
                          const std::vector<EndpointLabel>& labels, Task task,
                          Horizon horizon, const EvalConfig& ecfg) {
  ecfg.windows.validate();
  ecfg.train.validate();
  if (tables.empty()) throw Error("run_loso: no modality tables");

  std::vector<Modality> mods;
  for (const ModalityTable* t : tables) mods.push_back(t->modality);

  RunReport rep;
  rep.task = task;
  rep.horizon = horizon;
  rep.subset = subset_label(mods);

  auto filtered = apply_adherence_filter(labels, tables, clinical,
                                         ecfg.windows, ecfg.min_days_per_week);
  rep.adherence_dropped = filtered.dropped;

  std::vector<EndpointLabel> run_labels;
  std::map<PatientId, int> patient_classes;
  for (const auto& lab : filtered.kept) {
    if (lab.task != task || lab.horizon != horizon) continue;
    run_labels.push_back(lab);
    patient_classes[lab.patient] = static_cast<int>(lab.cls);
  }
  std::vector<PatientId> patients;
  for (const auto& [p, c] : patient_classes) patients.push_back(p);
  auto folds = loso_folds(patients);

  rep.folds.resize(folds.size());
  int jobs = ecfg.jobs;
  if (jobs < 1)
    jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<int>(jobs, static_cast<int>(folds.size()));

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(folds.size());
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= folds.size()) return;
      try {
        rep.folds[i] =
            run_fold(tables, clinical, run_labels, patient_classes,
                     folds[i].first, folds[i].second, i, task, horizon, ecfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  detail::aggregate_report(rep);
  return rep;
}

// The three pairwise modality ablations, sharing one config and seed.
inline std::vector<RunReport> run_ablation(
    const std::vector<const ModalityTable*>& tables,
    const ClinicalRecords& clinical, const std::vector<EndpointLabel>& labels,
    Task task, Horizon horizon, const EvalConfig& ecfg) {
  if (tables.size() != 3) throw Error("run_ablation: need all three modalities");
  std::vector<RunReport> out;
  const std::array<std::pair<Modality, Modality>, 3> pairs = {
      std::make_pair(Modality::phys, Modality::sleep),
      std::make_pair(Modality::phys, Modality::hrv),
      std::make_pair(Modality::sleep, Modality::hrv)};
  for (const auto& [a, b] : pairs) {
    std::vector<const ModalityTable*> subset;
    for (const ModalityTable* t : tables)
      if (t->modality == a || t->modality == b) subset.push_back(t);
    out.push_back(run_loso(subset, clinical, labels, task, horizon, ecfg));
  }
  return out;
}

inline void write_report(const std::string& path,
                         const std::vector<RunReport>& reports) {
  std::vector<std::string> lines;
  lines.push_back("task,horizon,subset,fold_patient,balanced_accuracy,macro_f1");
  for (const auto& rep : reports)
    for (const auto& f : rep.folds) {
      if (f.skipped) continue;
      lines.push_back(std::string(to_string(rep.task)) + "," +
                      to_string(rep.horizon) + "," + rep.subset + "," +
                      f.patient + "," + format_double(f.balanced_acc) + "," +
                      format_double(f.f1));
    }
  write_lines(path, lines);
}

inline void write_summary(const std::string& path,
                          const std::vector<RunReport>& reports) {
  std::vector<std::string> lines;
  lines.push_back("task,horizon,subset,balacc_mean,balacc_std,f1_mean,f1_std");
  for (const auto& rep : reports)
    lines.push_back(std::string(to_string(rep.task)) + "," +
                    to_string(rep.horizon) + "," + rep.subset + "," +
                    format_double(rep.balacc_mean) + "," +
                    format_double(rep.balacc_std) + "," +
                    format_double(rep.f1_mean) + "," +
                    format_double(rep.f1_std));
  write_lines(path, lines);
}

inline void write_attention(const std::string& path,
                            const std::vector<RunReport>& reports) {
  std::vector<std::string> lines;
  lines.push_back("patient,horizon,modality,date,alpha");
  for (const auto& rep : reports)
    for (const auto& f : rep.folds)
      for (const auto& row : f.attention)
        lines.push_back(f.patient + "," + to_string(rep.horizon) + "," +
                        to_string(row.modality) + "," + row.date.to_string() +
                        "," + format_double(row.alpha));
  write_lines(path, lines);
}

inline void write_skipped(const std::string& path,
                          const std::vector<RunReport>& reports) {
  std::vector<std::string> lines;
  lines.push_back("task,horizon,subset,fold_patient,reason");
  for (const auto& rep : reports)
    for (const auto& f : rep.folds)
      if (f.skipped)
        lines.push_back(std::string(to_string(rep.task)) + "," +
                        to_string(rep.horizon) + "," + rep.subset + "," +
                        f.patient + "," + f.skip_reason);
  write_lines(path, lines);
}

}  // namespace wearmil
