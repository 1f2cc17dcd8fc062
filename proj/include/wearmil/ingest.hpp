#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/ecg.hpp"
#include "wearmil/error.hpp"

namespace wearmil {

// Full longitudinal table of one modality, prior to windowing. Feature
// names (and so the feature count) come from the file header.
struct ModalityTable {
  Modality modality = Modality::phys;
  std::vector<std::string> feature_names;
  std::vector<InstanceRow> rows;

  std::size_t feature_count() const { return feature_names.size(); }
};

enum class Timepoint { BL = 0, M3 = 1, M6 = 2 };

inline const char* to_string(Timepoint t) {
  switch (t) {
    case Timepoint::BL: return "BL";
    case Timepoint::M3: return "M3";
    case Timepoint::M6: return "M6";
  }
  return "?";
}

inline Timepoint parse_timepoint(const std::string& s) {
  if (s == "BL") return Timepoint::BL;
  if (s == "M3") return Timepoint::M3;
  if (s == "M6") return Timepoint::M6;
  throw Error("unknown timepoint '" + s + "' (expected BL, M3 or M6)");
}

inline Timepoint timepoint_of(Horizon h) {
  return h == Horizon::M3 ? Timepoint::M3 : Timepoint::M6;
}

// Baseline dates plus endpoint values per (patient, task, timepoint).
struct ClinicalRecords {
  std::map<PatientId, Date> baselines;
  std::map<std::tuple<PatientId, Task, Timepoint>, double> values;

  const Date& baseline(const PatientId& p) const {
    auto it = baselines.find(p);
    if (it == baselines.end())
      throw Error("no baseline date for patient '" + p + "'");
    return it->second;
  }

  std::optional<double> value(const PatientId& p, Task t,
                              Timepoint tp) const {
    auto it = values.find({p, t, tp});
    if (it == values.end()) return std::nullopt;
    return it->second;
  }
};

// Patient counts per class and windowed instance counts per modality,
// keyed by task and horizon.
struct CohortSummary {
  using Counts = std::array<long long, kNumClasses>;
  std::map<std::pair<Task, Horizon>, Counts> patients;
  std::map<std::tuple<Modality, Task, Horizon>, Counts> instances;

  static long long total(const Counts& c) { return c[0] + c[1] + c[2]; }
};

inline ModalityTable load_modality_table(const std::string& path,
                                         Modality modality) {
  CsvFile f = read_csv(path);
  if (f.header.size() < 3 || f.header[0] != "patient_id" ||
      f.header[1] != "date")
    throw Error(path + ": header must be patient_id,date,<features...>");

  ModalityTable t;
  t.modality = modality;
  t.feature_names.assign(f.header.begin() + 2, f.header.end());

  std::map<std::pair<PatientId, std::string>, std::size_t> seen;
  for (std::size_t i = 0; i < f.rows.size(); ++i) {
    const auto& cells = f.rows[i];
    std::string where =
        "at " + path + " row " + std::to_string(f.row_number(i));
    if (cells.size() != f.header.size())
      throw Error("wrong column count " + where);
    InstanceRow row;
    row.patient = cells[0];
    if (row.patient.empty()) throw Error("empty patient_id " + where);
    row.modality = modality;
    try {
      row.date = Date::parse(cells[1]);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " " + where);
    }
    auto key = std::make_pair(row.patient, cells[1]);
    auto [it, inserted] = seen.emplace(key, i);
    if (!inserted)
      throw Error("duplicate (patient,date) key (" + row.patient + "," +
                  cells[1] + ") at " + path + " rows " +
                  std::to_string(f.row_number(it->second)) + " and " +
                  std::to_string(f.row_number(i)));
    row.features.reserve(cells.size() - 2);
    for (std::size_t c = 2; c < cells.size(); ++c) {
      if (cells[c].empty())
        row.features.push_back(std::nullopt);
      else
        row.features.push_back(parse_double(cells[c], where));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void write_modality_table(const std::string& path,
                                 const ModalityTable& t) {
  std::vector<std::string> lines;
  std::string header = "patient_id,date";
  for (const auto& n : t.feature_names) header += "," + n;
  lines.push_back(header);
  for (const auto& row : t.rows) {
    std::string l = row.patient + "," + row.date.to_string();
    for (const auto& v : row.features) {
      l += ",";
      if (v) l += format_double(*v);
    }
    lines.push_back(std::move(l));
  }
  write_lines(path, lines);
}

inline ClinicalRecords load_clinical(const std::string& path) {
  CsvFile f = read_csv(path);
  const std::vector<std::string> want = {"patient_id", "baseline_date",
                                         "task", "timepoint", "value"};
  if (f.header != want)
    throw Error(path +
                ": header must be patient_id,baseline_date,task,timepoint,"
                "value");

  ClinicalRecords rec;
  std::map<std::tuple<PatientId, Task, Timepoint>, std::size_t> seen;
  for (std::size_t i = 0; i < f.rows.size(); ++i) {
    const auto& cells = f.rows[i];
    std::string where =
        "at " + path + " row " + std::to_string(f.row_number(i));
    if (cells.size() != 5) throw Error("wrong column count " + where);
    const PatientId& p = cells[0];
    if (p.empty()) throw Error("empty patient_id " + where);
    if (cells[1].empty())
      throw Error("missing baseline date for patient '" + p + "' " + where);
    Date bl;
    try {
      bl = Date::parse(cells[1]);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " " + where);
    }
    auto [it, inserted] = rec.baselines.emplace(p, bl);
    if (!inserted && !(it->second == bl))
      throw Error("conflicting baseline dates for patient '" + p + "' " +
                  where);

    bool has_task = !cells[2].empty() || !cells[3].empty() || !cells[4].empty();
    if (!has_task) continue;  // baseline-only row
    Task task = parse_task(cells[2]);
    Timepoint tp = parse_timepoint(cells[3]);
    if (cells[4].empty()) continue;  // visit recorded, value absent
    double v = parse_double(cells[4], where);
    auto key = std::make_tuple(p, task, tp);
    auto [vit, vinserted] = seen.emplace(key, i);
    if (!vinserted)
      throw Error("duplicate clinical value for (" + p + "," + cells[2] +
                  "," + cells[3] + ") at " + path + " rows " +
                  std::to_string(f.row_number(vit->second)) + " and " +
                  std::to_string(f.row_number(i)));
    rec.values[key] = v;
  }
  return rec;
}

// One row per present (patient, task, timepoint) value; patients without
// any value get a baseline-only row. Loading the result reproduces the
// records exactly.
inline void write_clinical(const std::string& path,
                           const ClinicalRecords& rec) {
  std::vector<std::string> lines;
  lines.push_back("patient_id,baseline_date,task,timepoint,value");
  for (const auto& [patient, bl] : rec.baselines) {
    bool any = false;
    for (Task task : kAllTasks)
      for (Timepoint tp : {Timepoint::BL, Timepoint::M3, Timepoint::M6}) {
        auto v = rec.value(patient, task, tp);
        if (!v) continue;
        any = true;
        lines.push_back(patient + "," + bl.to_string() + "," +
                        to_string(task) + "," + to_string(tp) + "," +
                        format_double(*v));
      }
    if (!any) lines.push_back(patient + "," + bl.to_string() + ",,,");
  }
  write_lines(path, lines);
}

// Patients appearing in a modality table must have a baseline date.
inline void check_baseline_coverage(const ClinicalRecords& clinical,
                                    const std::vector<const ModalityTable*>&
                                        tables) {
  for (const ModalityTable* t : tables)
    for (const auto& row : t->rows)
      if (!clinical.baselines.count(row.patient))
        throw Error("missing baseline date for patient '" + row.patient +
                    "' present in " + std::string(to_string(t->modality)) +
                    " table");
}

// One label per (patient, task, horizon) where both the baseline and the
// follow-up value exist.
inline std::vector<EndpointLabel> build_labels(const ClinicalRecords& clinical,
                                               const Margins& margins) {
  if (!(margins.facit > 0) || !(margins.handgrip > 0))
    throw Error("build_labels: margins must be positive");
  std::vector<EndpointLabel> labels;
  for (const auto& [patient, bl_date] : clinical.baselines) {
    for (Task task : kAllTasks) {
      auto y_bl = clinical.value(patient, task, Timepoint::BL);
      if (!y_bl) continue;
      for (Horizon h : kAllHorizons) {
        auto y_h = clinical.value(patient, task, timepoint_of(h));
        if (!y_h) continue;
        EndpointLabel lab;
        lab.patient = patient;
        lab.task = task;
        lab.horizon = h;
        lab.delta = compute_delta(*y_h, *y_bl);
        lab.cls = discretize_delta(lab.delta, margins.for_task(task));
        labels.push_back(lab);
      }
    }
  }
  return labels;
}

inline CohortSummary summarize_cohort(
    const std::vector<const ModalityTable*>& tables,
    const std::vector<EndpointLabel>& labels, const HorizonWindows& windows,
    const ClinicalRecords& clinical) {
  windows.validate();
  CohortSummary s;
  for (Task t : kAllTasks)
    for (Horizon h : kAllHorizons) {
      s.patients[{t, h}] = {0, 0, 0};
      for (Modality m : kAllModalities)
        s.instances[{m, t, h}] = {0, 0, 0};
    }

  // windowed instance counts per (patient, modality, horizon)
  std::map<std::tuple<PatientId, Modality, Horizon>, long long> windowed;
  for (const ModalityTable* t : tables) {
    for (const auto& row : t->rows) {
      auto bit = clinical.baselines.find(row.patient);
      if (bit == clinical.baselines.end()) continue;
      long long tau = days_from_baseline(row.date, bit->second);
      auto h = assign_horizon(tau, windows);
      if (!h) continue;
      ++windowed[{row.patient, t->modality, *h}];
    }
  }

  for (const auto& lab : labels) {
    s.patients[{lab.task, lab.horizon}][static_cast<int>(lab.cls)] += 1;
    for (Modality m : kAllModalities) {
      auto it = windowed.find({lab.patient, m, lab.horizon});
      if (it == windowed.end()) continue;
      s.instances[{m, lab.task, lab.horizon}][static_cast<int>(lab.cls)] +=
          it->second;
    }
  }
  return s;
}

// Patient-count table: one row per task and horizon with per-class counts.
inline void write_patient_summary(const std::string& path,
                                  const CohortSummary& s) {
  std::vector<std::string> lines;
  lines.push_back("task,horizon,worsened,stable,improved,total");
  for (const auto& [key, c] : s.patients) {
    lines.push_back(std::string(to_string(key.first)) + "," +
                    to_string(key.second) + "," + std::to_string(c[0]) + "," +
                    std::to_string(c[1]) + "," + std::to_string(c[2]) + "," +
                    std::to_string(CohortSummary::total(c)));
  }
  write_lines(path, lines);
}

// Instance-count table: one row per modality and task, class-by-horizon
// columns.
inline void write_instance_summary(const std::string& path,
                                   const CohortSummary& s) {
  std::vector<std::string> lines;
  lines.push_back(
      "modality,task,stable_m3,stable_m6,worsened_m3,worsened_m6,improved_m3,"
      "improved_m6");
  for (Modality m : kAllModalities) {
    for (Task t : kAllTasks) {
      const auto& m3 = s.instances.at({m, t, Horizon::M3});
      const auto& m6 = s.instances.at({m, t, Horizon::M6});
      int st = static_cast<int>(DeltaClass::stable);
      int wo = static_cast<int>(DeltaClass::worsened);
      int im = static_cast<int>(DeltaClass::improved);
      lines.push_back(std::string(to_string(m)) + "," + to_string(t) + "," +
                      std::to_string(m3[st]) + "," + std::to_string(m6[st]) +
                      "," + std::to_string(m3[wo]) + "," +
                      std::to_string(m6[wo]) + "," + std::to_string(m3[im]) +
                      "," + std::to_string(m6[im]));
    }
  }
  write_lines(path, lines);
}

// ECG recording files: either the full schema patient_id,date,fs,sample
// (metadata constant across rows, one sample per row) or a bare "sample"
// column with a <stem>.meta sidecar holding patient_id=, date=, fs= lines.
inline EcgRecording load_ecg_file(const std::string& path) {
  CsvFile f = read_csv(path);
  EcgRecording rec;
  if (f.header == std::vector<std::string>{"sample"}) {
    std::string stem = path;
    auto dot = stem.rfind('.');
    if (dot != std::string::npos) stem.resize(dot);
    std::string meta_path = stem + ".meta";
    std::string meta = read_file(meta_path);
    std::map<std::string, std::string> kv;
    std::size_t pos = 0;
    while (pos < meta.size()) {
      std::size_t eol = meta.find('\n', pos);
      std::string line = meta.substr(
          pos, eol == std::string::npos ? std::string::npos : eol - pos);
      pos = eol == std::string::npos ? meta.size() : eol + 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(meta_path + ": expected key=value lines");
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"patient_id", "date", "fs"})
      if (!kv.count(key))
        throw Error(meta_path + ": missing key '" + key + "'");
    rec.patient = kv["patient_id"];
    rec.date = Date::parse(kv["date"]);
    rec.fs = parse_double(kv["fs"], "in " + meta_path);
    for (std::size_t i = 0; i < f.rows.size(); ++i) {
      if (f.rows[i].size() != 1 || f.rows[i][0].empty())
        throw Error("bad sample at " + path + " row " +
                    std::to_string(f.row_number(i)));
      rec.samples.push_back(parse_double(
          f.rows[i][0], "at " + path + " row " + std::to_string(f.row_number(i))));
    }
  } else if (f.header ==
             std::vector<std::string>{"patient_id", "date", "fs", "sample"}) {
    for (std::size_t i = 0; i < f.rows.size(); ++i) {
      const auto& cells = f.rows[i];
      std::string where =
          "at " + path + " row " + std::to_string(f.row_number(i));
      if (cells.size() != 4) throw Error("wrong column count " + where);
      if (i == 0) {
        rec.patient = cells[0];
        rec.date = Date::parse(cells[1]);
        rec.fs = parse_double(cells[2], where);
      } else if (cells[0] != rec.patient || cells[1] != rec.date.to_string() ||
                 parse_double(cells[2], where) != rec.fs) {
        throw Error("inconsistent recording metadata " + where);
      }
      rec.samples.push_back(parse_double(cells[3], where));
    }
  } else {
    throw Error(path +
                ": header must be patient_id,date,fs,sample or a bare "
                "sample column with a .meta sidecar");
  }
  if (rec.samples.empty()) throw Error(path + ": no samples");
  if (!(rec.fs > 0)) throw Error(path + ": fs must be positive");
  return rec;
}

}  // namespace wearmil
