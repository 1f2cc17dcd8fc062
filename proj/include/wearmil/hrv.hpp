#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "wearmil/error.hpp"

namespace wearmil {

// Normal-to-normal inter-beat intervals, milliseconds.
struct NnSeries {
  std::vector<double> intervals_ms;

  double span_seconds() const {
    double s = 0;
    for (double v : intervals_ms) s += v;
    return s / 1000.0;
  }
};

// The fixed feature set emitted by the extraction path. Any feature can
// be missing (e.g. spectral features on short recordings, ratios with a
// zero denominator).
struct HrvFeatures {
  static constexpr int kCount = 10;

  std::array<std::optional<double>, kCount> values;

  enum Index {
    kMeanNn = 0,
    kSdnn,
    kRmssd,
    kPnn50,
    kLfPower,
    kHfPower,
    kLfHfRatio,
    kSd1,
    kSd2,
    kSd1Sd2Ratio,
  };

  static const std::array<std::string, kCount>& names() {
    static const std::array<std::string, kCount> n = {
        "mean_nn",  "sdnn", "rmssd", "pnn50", "lf_power",
        "hf_power", "lf_hf_ratio", "sd1", "sd2", "sd1_sd2_ratio"};
    return n;
  }

  std::optional<double>& operator[](Index i) { return values[i]; }
  const std::optional<double>& operator[](Index i) const { return values[i]; }

  void merge_from(const HrvFeatures& other) {
    for (int i = 0; i < kCount; ++i)
      if (other.values[i]) values[i] = other.values[i];
  }
};

// Artifact rejection: drops intervals outside [300, 2000] ms and
// intervals deviating more than 20% from the previous retained one.
inline NnSeries clean_nn(const NnSeries& nn) {
  if (nn.intervals_ms.empty()) throw Error("clean_nn: empty NN series");
  NnSeries out;
  out.intervals_ms.reserve(nn.intervals_ms.size());
  double prev = -1;
  for (double v : nn.intervals_ms) {
    if (v < 300.0 || v > 2000.0) continue;
    if (prev > 0 && std::abs(v - prev) > 0.20 * prev) continue;
    out.intervals_ms.push_back(v);
    prev = v;
  }
  if (out.intervals_ms.empty())
    throw Error("clean_nn: all intervals rejected as artifacts");
  return out;
}

inline HrvFeatures hrv_time_domain(const NnSeries& nn) {
  const auto& x = nn.intervals_ms;
  std::size_t n = x.size();
  if (n < 2) throw Error("hrv_time_domain: need at least 2 intervals");

  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);

  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  double sdnn = std::sqrt(ss / static_cast<double>(n - 1));

  double sd_ss = 0;
  std::size_t over50 = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double d = x[i + 1] - x[i];
    sd_ss += d * d;
    if (std::abs(d) > 50.0) ++over50;
  }
  double rmssd = std::sqrt(sd_ss / static_cast<double>(n - 1));
  double pnn50 = 100.0 * static_cast<double>(over50) /
                 static_cast<double>(n - 1);

  HrvFeatures f;
  f[HrvFeatures::kMeanNn] = mean;
  f[HrvFeatures::kSdnn] = sdnn;
  f[HrvFeatures::kRmssd] = rmssd;
  f[HrvFeatures::kPnn50] = pnn50;
  return f;
}

namespace detail {

// Natural cubic spline through (t, y), evaluated at query points.
// Tridiagonal solve for the second derivatives.
inline std::vector<double> cubic_interpolate(const std::vector<double>& t,
                                             const std::vector<double>& y,
                                             const std::vector<double>& q) {
  std::size_t n = t.size();
  if (n < 2) throw Error("cubic_interpolate: need at least 2 knots");
  if (n == 2) {
    std::vector<double> out(q.size());
    double slope = (y[1] - y[0]) / (t[1] - t[0]);
    for (std::size_t i = 0; i < q.size(); ++i)
      out[i] = y[0] + slope * (q[i] - t[0]);
    return out;
  }

  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = t[i + 1] - t[i];

  std::vector<double> diag(n, 2.0), sub(n, 0.0), rhs(n, 0.0);
  std::vector<double> m(n, 0.0);  // second derivatives
  // interior equations; natural boundary m[0] = m[n-1] = 0
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double a = h[i - 1] / (h[i - 1] + h[i]);
    double b = h[i] / (h[i - 1] + h[i]);
    double d = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]) /
               (h[i - 1] + h[i]);
    sub[i] = a;
    c[i] = b;
    rhs[i] = d;
  }
  // Thomas algorithm over indices 1..n-2
  for (std::size_t i = 2; i + 1 < n; ++i) {
    double w = sub[i] / diag[i - 1];
    diag[i] -= w * c[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    double upper = (i + 2 < n) ? c[i] * m[i + 1] : 0.0;
    m[i] = (rhs[i] - upper) / diag[i];
    if (i == 1) break;
  }

  std::vector<double> out(q.size());
  std::size_t seg = 0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    double x = std::clamp(q[k], t.front(), t.back());
    while (seg + 2 < n && t[seg + 1] < x) ++seg;
    double dt = h[seg];
    double a = (t[seg + 1] - x) / dt;
    double b = (x - t[seg]) / dt;
    out[k] = a * y[seg] + b * y[seg + 1] +
             ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) *
                 (dt * dt) / 6.0;
  }
  return out;
}

struct BandPower {
  double lf = 0, hf = 0;
};

// Welch periodogram over the uniformly resampled, mean-removed tachogram.
// Hann-windowed 256-sample segments with 50% overlap; a shorter signal
// falls back to a single full-length segment.
inline BandPower welch_band_power(const std::vector<double>& x, double fs) {
  std::size_t n = x.size();
  std::size_t win = std::min<std::size_t>(256, n);
  if (win < 8) throw Error("welch: resampled signal too short");
  std::size_t step = std::max<std::size_t>(1, win / 2);

  std::vector<double> hann(win);
  double wss = 0;
  for (std::size_t i = 0; i < win; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                   static_cast<double>(i) /
                                   static_cast<double>(win - 1));
    wss += hann[i] * hann[i];
  }

  std::size_t nfreq = win / 2 + 1;
  std::vector<double> psd(nfreq, 0.0);
  std::size_t nseg = 0;
  for (std::size_t start = 0; start + win <= n; start += step) {
    std::vector<double> seg(win);
    for (std::size_t i = 0; i < win; ++i) seg[i] = x[start + i] * hann[i];
    for (std::size_t k = 0; k < nfreq; ++k) {
      double re = 0, im = 0;
      double w = 2.0 * std::numbers::pi * static_cast<double>(k) /
                 static_cast<double>(win);
      for (std::size_t i = 0; i < win; ++i) {
        double ang = w * static_cast<double>(i);
        re += seg[i] * std::cos(ang);
        im -= seg[i] * std::sin(ang);
      }
      double scale = (k == 0 || k == win / 2) ? 1.0 : 2.0;
      psd[k] += scale * (re * re + im * im) / (fs * wss);
    }
    ++nseg;
    if (start + win == n) break;
  }
  if (nseg == 0) throw Error("welch: no segments");
  for (double& v : psd) v /= static_cast<double>(nseg);

  double df = fs / static_cast<double>(win);
  BandPower bp;
  for (std::size_t k = 0; k < nfreq; ++k) {
    double f = df * static_cast<double>(k);
    if (f >= 0.04 && f < 0.15) bp.lf += psd[k] * df;
    else if (f >= 0.15 && f < 0.40) bp.hf += psd[k] * df;
  }
  return bp;
}

}  // namespace detail

// Spectral indices of the NN tachogram: cubic interpolation to a uniform
// 4 Hz grid, mean removal, Welch periodogram. LF = [0.04, 0.15) Hz,
// HF = [0.15, 0.40) Hz. The ratio stays missing when HF power is zero.
inline HrvFeatures hrv_frequency_domain(const NnSeries& nn) {
  constexpr double kResampleHz = 4.0;
  constexpr double kMinSpanSec = 120.0;

  const auto& x = nn.intervals_ms;
  if (x.size() < 4) throw Error("hrv_frequency_domain: too few intervals");
  double span = nn.span_seconds();
  if (span < kMinSpanSec)
    throw Error("hrv_frequency_domain: series spans less than 120 s");

  std::vector<double> t(x.size()), y(x.size());
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i] / 1000.0;
    t[i] = acc;
    y[i] = x[i];
  }

  std::size_t nsamp =
      static_cast<std::size_t>(std::floor((t.back() - t.front()) * kResampleHz)) +
      1;
  std::vector<double> q(nsamp);
  for (std::size_t i = 0; i < nsamp; ++i)
    q[i] = t.front() + static_cast<double>(i) / kResampleHz;

  std::vector<double> u = detail::cubic_interpolate(t, y, q);
  double mean = 0;
  for (double v : u) mean += v;
  mean /= static_cast<double>(u.size());
  for (double& v : u) v -= mean;

  auto bp = detail::welch_band_power(u, kResampleHz);

  HrvFeatures f;
  f[HrvFeatures::kLfPower] = bp.lf;
  f[HrvFeatures::kHfPower] = bp.hf;
  if (bp.hf > 0) f[HrvFeatures::kLfHfRatio] = bp.lf / bp.hf;
  return f;
}

// Poincare descriptors. SD1 is tied to RMSSD analytically; SD2's radicand
// is clamped at zero.
inline HrvFeatures hrv_nonlinear(const NnSeries& nn) {
  HrvFeatures td = hrv_time_domain(nn);
  double rmssd = *td[HrvFeatures::kRmssd];
  double sdnn = *td[HrvFeatures::kSdnn];

  double sd1 = rmssd / std::numbers::sqrt2;
  double sd2 = std::sqrt(std::max(0.0, 2.0 * sdnn * sdnn - sd1 * sd1));

  HrvFeatures f;
  f[HrvFeatures::kSd1] = sd1;
  f[HrvFeatures::kSd2] = sd2;
  if (sd2 > 0) f[HrvFeatures::kSd1Sd2Ratio] = sd1 / sd2;
  return f;
}

// All indices for one recording segment. Spectral features are attempted
// only when the cleaned series spans >= 120 s; shorter segments keep them
// missing.
inline HrvFeatures hrv_all_features(const NnSeries& cleaned) {
  HrvFeatures f = hrv_time_domain(cleaned);
  f.merge_from(hrv_nonlinear(cleaned));
  if (cleaned.span_seconds() >= 120.0 && cleaned.intervals_ms.size() >= 4)
    f.merge_from(hrv_frequency_domain(cleaned));
  return f;
}

// Median across segments of one patient-date, feature by feature over the
// present values. A feature missing everywhere stays missing.
inline HrvFeatures aggregate_daily(const std::vector<HrvFeatures>& segments) {
  if (segments.empty()) throw Error("aggregate_daily: no segments");
  HrvFeatures out;
  for (int i = 0; i < HrvFeatures::kCount; ++i) {
    std::vector<double> present;
    for (const auto& s : segments)
      if (s.values[i]) present.push_back(*s.values[i]);
    if (present.empty()) continue;
    std::sort(present.begin(), present.end());
    std::size_t n = present.size();
    double med = (n % 2 == 1)
                     ? present[n / 2]
                     : 0.5 * (present[n / 2 - 1] + present[n / 2]);
    out.values[i] = med;
  }
  return out;
}

}  // namespace wearmil
