#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "wearmil/ecg.hpp"
#include "wearmil/rng.hpp"

using namespace wearmil;

namespace {

EcgRecording make_recording(std::vector<double> samples, double fs = 130.0) {
  EcgRecording ecg;
  ecg.patient = "P001";
  ecg.date = Date::parse("2024-01-10");
  ecg.fs = fs;
  ecg.samples = std::move(samples);
  return ecg;
}

// Unit impulses at the given sample indices, zeros elsewhere.
std::vector<double> impulse_train(std::size_t n,
                                  const std::vector<std::size_t>& at,
                                  double amp = 1.0) {
  std::vector<double> x(n, 0.0);
  for (std::size_t p : at)
    if (p < n) x[p] = amp;
  return x;
}

std::vector<std::size_t> periodic_peaks(std::size_t first, double period,
                                        std::size_t n) {
  std::vector<std::size_t> at;
  for (double p = static_cast<double>(first); p < static_cast<double>(n) - 3;
       p += period)
    at.push_back(static_cast<std::size_t>(std::llround(p)));
  return at;
}

// Fraction of truth peaks with a detection within +-tol samples.
double match_fraction(const std::vector<std::size_t>& truth,
                      const std::vector<std::size_t>& got, long long tol) {
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t t : truth) {
    for (std::size_t g : got) {
      long long d = static_cast<long long>(g) - static_cast<long long>(t);
      if (std::llabs(d) <= tol) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace

TEST_CASE("60 bpm impulse train yields one peak per beat") {
  const double fs = 130.0;
  auto truth = periodic_peaks(65, 130.0, 1300);
  REQUIRE(truth.size() == 10);
  auto peaks = detect_r_peaks(make_recording(impulse_train(1300, truth), fs));

  CHECK(peaks.size() == 10);
  REQUIRE(peaks.size() >= 2);
  for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
    long long gap =
        static_cast<long long>(peaks[i + 1]) - static_cast<long long>(peaks[i]);
    CHECK(gap >= 129);
    CHECK(gap <= 131);
  }
  CHECK(match_fraction(truth, peaks, 3) == 1.0);

  NnSeries nn = peaks_to_nn(peaks, fs);
  for (double v : nn.intervals_ms)
    CHECK(v == Catch::Approx(1000.0).margin(1000.0 / fs + 1e-9));
}

TEST_CASE("100 bpm impulse train") {
  auto truth = periodic_peaks(80, 78.0, 2600);  // RR = 0.6 s at 130 Hz
  auto peaks = detect_r_peaks(make_recording(impulse_train(2600, truth)));
  CHECK(match_fraction(truth, peaks, 3) >= 0.95);
  CHECK(peaks.size() == truth.size());
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(detect_r_peaks(make_recording(std::vector<double>(1300, 0.0))),
                  Error);
  CHECK_THROWS_AS(detect_r_peaks(make_recording(std::vector<double>(1300, 2.5))),
                  Error);
  CHECK_THROWS_AS(detect_r_peaks(make_recording(std::vector<double>(100, 0.0))),
                  Error);
  EcgRecording bad = make_recording(std::vector<double>(1300, 0.0), 0.0);
  CHECK_THROWS_AS(detect_r_peaks(bad), Error);
}

TEST_CASE("noisy 80 bpm train recovers at least 95% of peaks within 3 samples") {
  const std::size_t n = 3900;  // 30 s
  auto truth = periodic_peaks(70, 97.5, n);
  std::vector<double> x = impulse_train(n, truth);

  // Additive white noise at 20 dB SNR relative to the impulse power.
  double sig_power = 0;
  for (double v : x) sig_power += v * v;
  sig_power /= static_cast<double>(n);
  double sigma = std::sqrt(sig_power / 100.0);
  Philox rng(17, "ecg/noise");
  for (double& v : x) v += sigma * rng.normal();

  auto peaks = detect_r_peaks(make_recording(x));
  CHECK(match_fraction(truth, peaks, 3) >= 0.95);
  // No gross over-detection either.
  CHECK(peaks.size() <= truth.size() + 2);
}

TEST_CASE("detections shift with the signal") {
  const std::size_t n = 1800;
  auto truth = periodic_peaks(300, 130.0, n - 400);
  std::vector<double> base = impulse_train(n, truth);
  std::vector<std::size_t> shifted_truth;
  for (std::size_t p : truth) shifted_truth.push_back(p + 50);
  std::vector<double> shifted = impulse_train(n, shifted_truth);

  auto p0 = detect_r_peaks(make_recording(base));
  auto p1 = detect_r_peaks(make_recording(shifted));
  REQUIRE(p0.size() == p1.size());
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p1[i] == p0[i] + 50);
}

TEST_CASE("detections are invariant to positive amplitude scaling") {
  const std::size_t n = 2600;
  auto truth = periodic_peaks(100, 110.0, n);
  std::vector<double> x = impulse_train(n, truth);
  Philox rng(23, "ecg/scale");
  for (double& v : x) v += 0.02 * rng.normal();

  auto p1 = detect_r_peaks(make_recording(x));
  for (double a : {2.7, 1e-3, 400.0}) {
    std::vector<double> y = x;
    for (double& v : y) v *= a;
    auto p2 = detect_r_peaks(make_recording(y));
    INFO("scale " << a);
    CHECK(p2 == p1);
  }
}

TEST_CASE("interval conversion") {
  NnSeries nn = peaks_to_nn({0, 130, 260}, 130.0);
  REQUIRE(nn.intervals_ms.size() == 2);
  CHECK(nn.intervals_ms[0] == Catch::Approx(1000.0));
  CHECK(nn.intervals_ms[1] == Catch::Approx(1000.0));

  nn = peaks_to_nn({10, 75}, 130.0);
  CHECK(nn.intervals_ms[0] == Catch::Approx(500.0));

  CHECK_THROWS_AS(peaks_to_nn({5}, 130.0), Error);
  CHECK_THROWS_AS(peaks_to_nn({}, 130.0), Error);
  CHECK_THROWS_AS(peaks_to_nn({0, 130}, 0.0), Error);
}

TEST_CASE("end-to-end feature extraction from a raw recording") {
  // 150 s with RR alternating 120 and 140 samples; both intervals pass the
  // artifact filters, so mean NN is their average.
  const double fs = 130.0;
  std::vector<std::size_t> truth;
  std::size_t p = 80;
  bool flip = false;
  const std::size_t n = static_cast<std::size_t>(150 * fs);
  while (p < n - 200) {
    truth.push_back(p);
    p += flip ? 140 : 120;
    flip = !flip;
  }
  HrvFeatures f = extract_hrv_features(make_recording(impulse_train(n, truth), fs));
  double want_mean = 0.5 * (120.0 + 140.0) / fs * 1000.0;
  CHECK(*f[HrvFeatures::kMeanNn] == Catch::Approx(want_mean).epsilon(0.02));
  CHECK(f[HrvFeatures::kSdnn].has_value());
  CHECK(f[HrvFeatures::kLfPower].has_value());  // span exceeds 120 s
  CHECK(*f[HrvFeatures::kSdnn] > 0.0);
}
