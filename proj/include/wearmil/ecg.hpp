#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "wearmil/cohort.hpp"
#include "wearmil/error.hpp"
#include "wearmil/hrv.hpp"

namespace wearmil {

// Raw single-lead ECG recording. Amplitudes are arbitrary units; the
// detector is invariant to positive rescaling.
struct EcgRecording {
  PatientId patient;
  Date date;
  double fs = 130.0;  // Hz
  std::vector<double> samples;
};

namespace detail {

// Zero-phase moving average; windows truncate at the edges and are
// renormalized by the actual sample count.
inline std::vector<double> centered_ma(const std::vector<double>& x, int w) {
  std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size());
  if (w <= 1) {
    out = x;
    return out;
  }
  std::ptrdiff_t lo = (w - 1) / 2, hi = w / 2;
  std::vector<double> prefix(n + 1, 0.0);
  for (std::ptrdiff_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, i - lo);
    std::ptrdiff_t b = std::min<std::ptrdiff_t>(n - 1, i + hi);
    out[i] = (prefix[b + 1] - prefix[a]) / static_cast<double>(b - a + 1);
  }
  return out;
}

}  // namespace detail

// R-peak detection: a Pan-Tompkins style chain. Band-pass ~5-15 Hz as a
// difference of two zero-phase moving averages, central-difference
// derivative, squaring, 150 ms moving-window integration, then adaptive
// dual thresholds with a 200 ms refractory period and RR-driven search
// back. Detections are refined to the band-passed amplitude maximum so
// indices land on the R wave itself.
inline std::vector<std::size_t> detect_r_peaks(const EcgRecording& ecg) {
  const double fs = ecg.fs;
  if (!(fs > 0)) throw Error("detect_r_peaks: non-positive sampling rate");
  const auto& x = ecg.samples;
  std::size_t n = x.size();
  if (static_cast<double>(n) < 5.0 * fs)
    throw Error("detect_r_peaks: recording shorter than 5 s");

  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  if (var == 0) throw Error("detect_r_peaks: flat-line signal, no peaks");

  // Moving-average widths chosen so the pass band is roughly 5-15 Hz
  // (first-null design, cutoff ~ 0.443 * fs / width).
  int w_lp = std::max(1, static_cast<int>(std::lround(0.443 * fs / 15.0)));
  int w_hp = std::max(w_lp + 2,
                      static_cast<int>(std::lround(0.443 * fs / 5.0)));
  std::vector<double> bp_lo = detail::centered_ma(x, w_lp);
  std::vector<double> bp_hi = detail::centered_ma(x, w_hp);
  std::vector<double> bp(n);
  for (std::size_t i = 0; i < n; ++i) bp[i] = bp_lo[i] - bp_hi[i];

  std::vector<double> sq(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double d = (bp[i + 1] - bp[i - 1]) * 0.5;
    sq[i] = d * d;
  }

  int w_int = std::max(2, static_cast<int>(std::lround(0.150 * fs)));
  std::vector<double> integ = detail::centered_ma(sq, w_int);

  // Candidate peaks: local maxima of the integrated signal (plateaus
  // contribute their first sample).
  struct Cand {
    std::size_t idx;
    double v;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (integ[i] > integ[i - 1] && integ[i] >= integ[i + 1] && integ[i] > 0)
      cands.push_back({i, integ[i]});
  }
  if (cands.empty()) return {};

  const std::size_t refractory =
      static_cast<std::size_t>(std::lround(0.200 * fs));

  // Threshold learning phase over the first 2 seconds.
  std::size_t init_end = std::min(n, static_cast<std::size_t>(2.0 * fs));
  double init_max = 0, init_mean = 0;
  for (std::size_t i = 0; i < init_end; ++i) {
    init_max = std::max(init_max, integ[i]);
    init_mean += integ[i];
  }
  init_mean /= static_cast<double>(init_end);
  double spk = init_max;
  double npk = init_mean * 0.5;
  double thr1 = npk + 0.25 * (spk - npk);

  std::vector<std::size_t> det;  // candidate indices (integ domain)
  std::vector<double> rr_buf;
  double rr_avg = 0;
  auto push_rr = [&](double rr) {
    rr_buf.push_back(rr);
    if (rr_buf.size() > 8) rr_buf.erase(rr_buf.begin());
    double s = 0;
    for (double v : rr_buf) s += v;
    rr_avg = s / static_cast<double>(rr_buf.size());
  };

  std::size_t last_scanned = 0;  // candidate cursor for search-back
  for (std::size_t ci = 0; ci < cands.size(); ++ci) {
    const Cand& c = cands[ci];
    bool in_refractory =
        !det.empty() && c.idx < det.back() + refractory;
    if (c.v > thr1 && !in_refractory) {
      if (!det.empty()) push_rr(static_cast<double>(c.idx - det.back()));
      det.push_back(c.idx);
      spk = 0.125 * c.v + 0.875 * spk;
      last_scanned = ci;
    } else {
      npk = 0.125 * c.v + 0.875 * npk;
    }
    thr1 = npk + 0.25 * (spk - npk);

    // Search back with the lower threshold when a beat seems missed.
    if (!det.empty() && rr_avg > 0 &&
        static_cast<double>(c.idx - det.back()) > 1.66 * rr_avg) {
      double thr2 = 0.5 * thr1;
      std::size_t best = 0;
      double best_v = 0;
      for (std::size_t cj = last_scanned + 1; cj <= ci; ++cj) {
        const Cand& cc = cands[cj];
        if (cc.idx <= det.back() + refractory) continue;
        if (cc.idx + refractory > c.idx && cc.idx != c.idx) continue;
        if (cc.v > thr2 && cc.v > best_v) {
          best_v = cc.v;
          best = cc.idx;
        }
      }
      if (best_v > 0) {
        push_rr(static_cast<double>(best - det.back()));
        det.push_back(best);
        spk = 0.25 * best_v + 0.75 * spk;
        thr1 = npk + 0.25 * (spk - npk);
        std::sort(det.begin(), det.end());
        last_scanned = ci;
      }
    }
  }

  // Refine each detection to the strongest band-passed amplitude nearby.
  std::ptrdiff_t half = w_int / 2 + 1;
  std::vector<std::size_t> peaks;
  for (std::size_t d : det) {
    std::ptrdiff_t a =
        std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(d) - half);
    std::ptrdiff_t b = std::min<std::ptrdiff_t>(
        static_cast<std::ptrdiff_t>(n) - 1,
        static_cast<std::ptrdiff_t>(d) + half);
    std::ptrdiff_t best = a;
    for (std::ptrdiff_t i = a; i <= b; ++i)
      if (std::abs(bp[i]) > std::abs(bp[best])) best = i;
    peaks.push_back(static_cast<std::size_t>(best));
  }
  std::sort(peaks.begin(), peaks.end());
  peaks.erase(std::unique(peaks.begin(), peaks.end()), peaks.end());

  // Enforce a 220 bpm ceiling on implied instantaneous heart rate: of two
  // detections closer than that, keep the stronger one.
  std::size_t min_gap =
      static_cast<std::size_t>(std::lround(fs * 60.0 / 220.0));
  std::vector<std::size_t> out;
  for (std::size_t p : peaks) {
    if (!out.empty() && p - out.back() < min_gap) {
      if (std::abs(bp[p]) > std::abs(bp[out.back()])) out.back() = p;
    } else {
      out.push_back(p);
    }
  }
  return out;
}

// NN intervals in milliseconds from successive peak indices.
inline NnSeries peaks_to_nn(const std::vector<std::size_t>& peaks, double fs) {
  if (peaks.size() < 2)
    throw Error("peaks_to_nn: need at least 2 peaks");
  if (!(fs > 0)) throw Error("peaks_to_nn: non-positive sampling rate");
  NnSeries nn;
  nn.intervals_ms.reserve(peaks.size() - 1);
  for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
    double dt = static_cast<double>(peaks[i + 1] - peaks[i]) / fs * 1000.0;
    nn.intervals_ms.push_back(dt);
  }
  return nn;
}

// Full extraction for one recording: peaks -> NN -> artifact rejection ->
// feature block.
inline HrvFeatures extract_hrv_features(const EcgRecording& ecg) {
  auto peaks = detect_r_peaks(ecg);
  NnSeries nn = peaks_to_nn(peaks, ecg.fs);
  NnSeries cleaned = clean_nn(nn);
  return hrv_all_features(cleaned);
}

}  // namespace wearmil
