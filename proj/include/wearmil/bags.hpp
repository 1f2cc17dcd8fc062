#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/error.hpp"
#include "wearmil/ingest.hpp"
#include "wearmil/preprocess.hpp"

namespace wearmil {

// One standardized instance inside a bag.
struct BagInstance {
  Modality modality = Modality::phys;
  Date date;
  std::vector<double> x;
};

// All windowed instances of one (patient, horizon) pair, with its label.
// Instances are ordered by modality then date; this is the canonical order
// used by attention dumps and checkpointed forward passes.
struct Bag {
  PatientId patient;
  Task task = Task::facit;
  Horizon horizon = Horizon::M3;
  DeltaClass label = DeltaClass::stable;
  double delta = 0.0;
  std::vector<BagInstance> instances;
  std::array<long long, 3> modality_counts = {0, 0, 0};

  std::size_t size() const { return instances.size(); }
};

struct BagBuildResult {
  std::vector<Bag> bags;
  long long dropped_empty = 0;  // labeled pairs with no windowed instance
};

// Builds bags for one task and horizon. `tables` and `stats` run parallel,
// one entry per modality; standardization uses the supplied fold statistics
// so the caller controls which patients informed them.
inline BagBuildResult build_bags(
    const std::vector<const ModalityTable*>& tables,
    const std::vector<const FoldStats*>& stats, const ClinicalRecords& clinical,
    const std::vector<EndpointLabel>& labels, Task task, Horizon horizon,
    const HorizonWindows& windows) {
  windows.validate();
  if (tables.size() != stats.size())
    throw Error("build_bags: tables and stats must align");
  for (std::size_t i = 0; i < tables.size(); ++i)
    if (tables[i]->modality != stats[i]->modality)
      throw Error("build_bags: stats modality mismatch");

  BagBuildResult out;
  for (const auto& lab : labels) {
    if (lab.task != task || lab.horizon != horizon) continue;
    Bag bag;
    bag.patient = lab.patient;
    bag.task = task;
    bag.horizon = horizon;
    bag.label = lab.cls;
    bag.delta = lab.delta;
    const Date& bl = clinical.baseline(lab.patient);
    for (std::size_t i = 0; i < tables.size(); ++i) {
      for (const auto& row : tables[i]->rows) {
        if (row.patient != lab.patient) continue;
        long long tau = days_from_baseline(row.date, bl);
        auto h = assign_horizon(tau, windows);
        if (!h || *h != horizon) continue;
        BagInstance inst;
        inst.modality = tables[i]->modality;
        inst.date = row.date;
        inst.x = transform(*stats[i], row.features);
        bag.instances.push_back(std::move(inst));
        ++bag.modality_counts[static_cast<int>(tables[i]->modality)];
      }
    }
    if (bag.instances.empty()) {
      ++out.dropped_empty;
      continue;
    }
    std::sort(bag.instances.begin(), bag.instances.end(),
              [](const BagInstance& a, const BagInstance& b) {
                if (a.modality != b.modality) return a.modality < b.modality;
                return a.date < b.date;
              });
    out.bags.push_back(std::move(bag));
  }
  std::sort(out.bags.begin(), out.bags.end(),
            [](const Bag& a, const Bag& b) { return a.patient < b.patient; });
  return out;
}

struct BagStats {
  long long n_bags = 0;
  std::array<long long, kNumClasses> class_counts = {0, 0, 0};
  long long min_instances = 0;
  long long max_instances = 0;
  double mean_instances = 0.0;
};

inline BagStats bag_statistics(const std::vector<Bag>& bags) {
  BagStats s;
  s.n_bags = static_cast<long long>(bags.size());
  if (bags.empty()) return s;
  s.min_instances = static_cast<long long>(bags[0].size());
  long long total = 0;
  for (const auto& b : bags) {
    s.class_counts[static_cast<int>(b.label)] += 1;
    auto n = static_cast<long long>(b.size());
    total += n;
    s.min_instances = std::min(s.min_instances, n);
    s.max_instances = std::max(s.max_instances, n);
  }
  s.mean_instances = static_cast<double>(total) / static_cast<double>(s.n_bags);
  return s;
}

inline void write_bag_manifest(const std::string& path,
                               const std::vector<Bag>& bags) {
  std::vector<std::string> lines;
  lines.push_back("patient_id,horizon,task,label,n_phys,n_sleep,n_hrv");
  for (const auto& b : bags)
    lines.push_back(b.patient + "," + to_string(b.horizon) + "," +
                    to_string(b.task) + "," + to_string(b.label) + "," +
                    std::to_string(b.modality_counts[0]) + "," +
                    std::to_string(b.modality_counts[1]) + "," +
                    std::to_string(b.modality_counts[2]));
  write_lines(path, lines);
}

}  // namespace wearmil
