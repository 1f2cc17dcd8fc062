#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "wearmil/date.hpp"
#include "wearmil/error.hpp"

namespace wearmil {

using PatientId = std::string;

enum class Modality { phys = 0, sleep = 1, hrv = 2 };
inline constexpr std::array<Modality, 3> kAllModalities = {
    Modality::phys, Modality::sleep, Modality::hrv};

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::phys: return "phys";
    case Modality::sleep: return "sleep";
    case Modality::hrv: return "hrv";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "phys") return Modality::phys;
  if (s == "sleep") return Modality::sleep;
  if (s == "hrv") return Modality::hrv;
  throw Error("unknown modality '" + s + "'");
}

enum class Horizon { M3 = 0, M6 = 1 };
inline constexpr std::array<Horizon, 2> kAllHorizons = {Horizon::M3,
                                                        Horizon::M6};

inline const char* to_string(Horizon h) {
  return h == Horizon::M3 ? "M3" : "M6";
}

inline Horizon parse_horizon(const std::string& s) {
  if (s == "M3" || s == "m3") return Horizon::M3;
  if (s == "M6" || s == "m6") return Horizon::M6;
  throw Error("unknown horizon '" + s + "'");
}

enum class Task { facit = 0, handgrip = 1 };
inline constexpr std::array<Task, 2> kAllTasks = {Task::facit, Task::handgrip};

inline const char* to_string(Task t) {
  return t == Task::facit ? "facit" : "handgrip";
}

inline Task parse_task(const std::string& s) {
  if (s == "facit") return Task::facit;
  if (s == "handgrip") return Task::handgrip;
  throw Error("unknown task '" + s + "' (expected facit or handgrip)");
}

// worsened <= -r, stable strictly inside (-r, r), improved >= r.
enum class DeltaClass { worsened = 0, stable = 1, improved = 2 };
inline constexpr int kNumClasses = 3;

inline const char* to_string(DeltaClass c) {
  switch (c) {
    case DeltaClass::worsened: return "worsened";
    case DeltaClass::stable: return "stable";
    case DeltaClass::improved: return "improved";
  }
  return "?";
}

// Inclusive day intervals (days from baseline) assigning instances to a
// follow-up horizon. The two windows must not overlap so assignment is
// unambiguous.
struct HorizonWindows {
  long long m3_lo = 46, m3_hi = 135;
  long long m6_lo = 136, m6_hi = 225;

  HorizonWindows() = default;
  HorizonWindows(long long m3_lo_, long long m3_hi_, long long m6_lo_,
                 long long m6_hi_)
      : m3_lo(m3_lo_), m3_hi(m3_hi_), m6_lo(m6_lo_), m6_hi(m6_hi_) {
    validate();
  }

  void validate() const {
    if (m3_lo > m3_hi || m6_lo > m6_hi)
      throw Error("horizon window has lo > hi");
    bool overlap = m3_lo <= m6_hi && m6_lo <= m3_hi;
    if (overlap) throw Error("horizon windows overlap");
  }
};

// One dated observation from one modality. Feature slots may be missing.
struct InstanceRow {
  PatientId patient;
  Modality modality = Modality::phys;
  Date date;
  std::vector<std::optional<double>> features;
};

struct EndpointLabel {
  PatientId patient;
  Task task = Task::facit;
  Horizon horizon = Horizon::M3;
  double delta = 0.0;
  DeltaClass cls = DeltaClass::stable;
};

// Per-task discretization margins.
struct Margins {
  double facit = 5.0;
  double handgrip = 2.0;

  double for_task(Task t) const {
    return t == Task::facit ? facit : handgrip;
  }
};

inline long long days_from_baseline(const Date& d, const Date& baseline) {
  return d.days_since(baseline);
}

inline double compute_delta(double y_h, double y_bl) {
  if (!std::isfinite(y_h) || !std::isfinite(y_bl))
    throw Error("non-finite endpoint value");
  return y_h - y_bl;
}

inline DeltaClass discretize_delta(double delta, double r) {
  if (!(r > 0)) throw Error("discretization margin must be positive");
  if (delta <= -r) return DeltaClass::worsened;
  if (delta >= r) return DeltaClass::improved;
  return DeltaClass::stable;
}

inline std::optional<Horizon> assign_horizon(long long tau,
                                             const HorizonWindows& w) {
  if (tau >= w.m3_lo && tau <= w.m3_hi) return Horizon::M3;
  if (tau >= w.m6_lo && tau <= w.m6_hi) return Horizon::M6;
  return std::nullopt;
}

}  // namespace wearmil
