// Acceptance gate: one pass/fail line per shipping criterion, exit status
// reflects the aggregate. Runs standalone (no test framework) so the
// output reads as a checklist.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/cohort.hpp"
#include "wearmil/ecg.hpp"
#include "wearmil/eval.hpp"
#include "wearmil/hrv.hpp"
#include "wearmil/ingest.hpp"
#include "wearmil/model.hpp"
#include "wearmil/preprocess.hpp"
#include "wearmil/rng.hpp"
#include "wearmil/synth.hpp"

#include "data/nn_reference_cases.hpp"

namespace fs = std::filesystem;
using namespace wearmil;

namespace {

int g_failures = 0;

void report(int id, const char* text, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, text,
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

Bag random_bag(const ModelConfig& mc, Philox& rng, int min_per_mod,
               int max_per_mod) {
  Bag bag;
  bag.patient = "PX";
  bag.label = static_cast<DeltaClass>(rng.below(3));
  Date d(2024, 1, 1);
  for (std::size_t mi = 0; mi < mc.modalities.size(); ++mi) {
    int n = min_per_mod +
            static_cast<int>(rng.below(
                static_cast<std::uint64_t>(max_per_mod - min_per_mod + 1)));
    for (int k = 0; k < n; ++k) {
      BagInstance inst;
      inst.modality = mc.modalities[mi];
      inst.date = d.plus_days(k);
      for (int f = 0; f < mc.feature_dims[mi]; ++f)
        inst.x.push_back(rng.normal());
      bag.instances.push_back(std::move(inst));
      ++bag.modality_counts[mi];
    }
  }
  return bag;
}

double bag_loss(const MilModel& m, const Bag& bag,
                const std::array<double, 3>& w) {
  ForwardTrace tr = forward(m, bag);
  std::array<double, 3> p = softmax3(tr.logits);
  return -w[static_cast<int>(bag.label)] * std::log(p[static_cast<int>(bag.label)]);
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.modalities = {Modality::phys};
  mc.feature_dims = {2};
  mc.hidden_dims = {3};
  mc.embed_dim = 4;
  mc.attn_dim = 3;
  MilModel model = init_model(mc, 2024);

  Philox rng(9, "acceptance/gradcheck");
  Bag bag = random_bag(mc, rng, 3, 3);
  bag.label = DeltaClass::stable;
  const std::array<double, 3> w = {1.3, 0.7, 1.1};

  MilModel grads = zeros_like(model);
  loss_and_grad(model, bag, w, grads);

  const double h = 1e-5;
  double max_rel = 0.0;
  long long n_params = 0;
  auto refs = param_refs(model);
  auto gref = param_refs(grads);
  for (std::size_t t = 0; t < refs.size(); ++t) {
    for (std::size_t i = 0; i < refs[t].t->v.size(); ++i) {
      double saved = refs[t].t->v[i];
      refs[t].t->v[i] = saved + h;
      double lp = bag_loss(model, bag, w);
      refs[t].t->v[i] = saved - h;
      double lm = bag_loss(model, bag, w);
      refs[t].t->v[i] = saved;
      double numeric = (lp - lm) / (2 * h);
      double analytic = gref[t].t->v[i];
      double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
      ++n_params;
    }
  }
  double dt = elapsed_s(t0);
  report(1,
         "analytic gradients match central differences on every parameter",
         max_rel < 1e-4 && dt < 5.0,
         std::to_string(n_params) + " params, max rel err " + fmt(max_rel) +
             ", " + fmt(dt) + " s");
}

void criterion_permutation() {
  ModelConfig mc;
  mc.modalities = {Modality::phys, Modality::sleep, Modality::hrv};
  mc.feature_dims = {5, 4, 3};
  mc.hidden_dims = {6, 6, 6};
  mc.embed_dim = 8;
  mc.attn_dim = 4;
  MilModel model = init_model(mc, 31);

  Philox rng(32, "acceptance/permutation");
  double max_dev = 0.0;
  for (int b = 0; b < 100; ++b) {
    Bag bag = random_bag(mc, rng, 1, 8);
    ForwardTrace base = forward(model, bag);
    for (int p = 0; p < 10; ++p) {
      Bag shuffled = bag;
      for (std::size_t i = shuffled.instances.size(); i > 1; --i)
        std::swap(shuffled.instances[i - 1],
                  shuffled.instances[rng.below(i)]);
      ForwardTrace got = forward(model, shuffled);
      for (int c = 0; c < 3; ++c)
        max_dev = std::max(max_dev,
                           std::abs(got.logits[c] - base.logits[c]));
    }
  }
  report(2, "logits are invariant under instance permutation",
         max_dev <= 1e-6,
         "100 bags x 10 permutations, max logit deviation " + fmt(max_dev));
}

void criterion_attention_simplex() {
  Philox rng(33, "acceptance/simplex");
  double worst_sum_dev = 0.0;
  double min_alpha = 1.0;
  for (int m = 0; m < 10; ++m) {
    ModelConfig mc;
    mc.modalities = {Modality::phys, Modality::sleep};
    mc.feature_dims = {3 + static_cast<int>(rng.below(4)),
                       2 + static_cast<int>(rng.below(4))};
    mc.hidden_dims = {5, 5};
    mc.embed_dim = 6;
    mc.attn_dim = 4;
    MilModel model = init_model(mc, 100 + m);
    for (int b = 0; b < 100; ++b) {
      Bag bag = random_bag(mc, rng, 1, 6);
      ForwardTrace tr = forward(model, bag);
      double sum = 0.0;
      for (double a : tr.alpha) {
        sum += a;
        min_alpha = std::min(min_alpha, a);
      }
      worst_sum_dev = std::max(worst_sum_dev, std::abs(sum - 1.0));
    }
  }
  report(3, "attention weights stay on the probability simplex",
         worst_sum_dev <= 1e-6 && min_alpha >= 0.0,
         "1000 forwards, max |sum-1| " + fmt(worst_sum_dev) + ", min alpha " +
             fmt(min_alpha));
}

void criterion_no_leakage() {
  SynthConfig cfg;
  cfg.patients = 5;
  cfg.feature_counts = {4, 3, 3};
  cfg.min_instances = 3;
  cfg.max_instances = 6;
  cfg.signal = 1.0;
  cfg.seed = 77;
  SynthCohort cohort = generate_cohort(cfg);
  std::vector<EndpointLabel> labels =
      build_labels(cohort.clinical, cfg.margins);

  EvalConfig ecfg;
  ecfg.embed_dim = 8;
  ecfg.hidden_dim = 8;
  ecfg.attn_dim = 4;
  ecfg.train.max_epochs = 4;
  ecfg.train.patience = 2;
  ecfg.train.grad_accum = 2;
  ecfg.train.seed = 5;

  std::map<PatientId, int> patient_classes;
  for (const auto& lab : labels)
    if (lab.task == Task::facit && lab.horizon == Horizon::M3)
      patient_classes[lab.patient] = static_cast<int>(lab.cls);
  std::vector<PatientId> patients;
  for (const auto& [p, c] : patient_classes) patients.push_back(p);
  auto folds = loso_folds(patients);

  std::vector<const ModalityTable*> clean;
  for (const auto& t : cohort.tables) clean.push_back(&t);

  bool ok = true;
  std::string why = "5 folds, stats/weights/params bit-identical";
  for (std::size_t i = 0; i < folds.size() && ok; ++i) {
    const PatientId& test = folds[i].first;
    FoldOutcome a = run_fold(clean, cohort.clinical, labels, patient_classes,
                             test, folds[i].second, i, Task::facit,
                             Horizon::M3, ecfg);

    std::array<ModalityTable, 3> bumped = cohort.tables;
    for (auto& table : bumped)
      for (auto& row : table.rows)
        if (row.patient == test)
          for (auto& cell : row.features)
            if (cell) cell = *cell + 1000.0;
    std::vector<const ModalityTable*> dirty;
    for (const auto& t : bumped) dirty.push_back(&t);
    FoldOutcome b = run_fold(dirty, cohort.clinical, labels, patient_classes,
                             test, folds[i].second, i, Task::facit,
                             Horizon::M3, ecfg);

    if (a.skipped || b.skipped) {
      ok = false;
      why = "fold " + test + " unexpectedly skipped";
      break;
    }
    if (a.stats.size() != b.stats.size()) ok = false;
    for (std::size_t s = 0; ok && s < a.stats.size(); ++s)
      ok = bits_equal(a.stats[s].mean, b.stats[s].mean) &&
           bits_equal(a.stats[s].stddev, b.stats[s].stddev) &&
           a.stats[s].fitted_on == b.stats[s].fitted_on;
    if (ok)
      ok = std::memcmp(a.weights.w.data(), b.weights.w.data(),
                       sizeof(a.weights.w)) == 0 &&
           a.weights.counts == b.weights.counts;
    if (ok) ok = a.model_digest == b.model_digest;
    if (ok) ok = a.train_patients == b.train_patients &&
                 a.val_patients == b.val_patients &&
                 a.epochs == b.epochs && a.best_epoch == b.best_epoch;
    if (!ok && why.rfind("fold", 0) != 0)
      why = "fold " + test + ": +1000 on held-out rows leaked into training";
  }
  report(4, "held-out patients never influence training-time quantities", ok,
         why);
}

void criterion_discretization() {
  const double eps = 1e-9;
  bool ok = true;
  std::string detail;
  for (double r : {2.0, 5.0}) {
    const std::array<double, 7> deltas = {-r - 1, -r,      -r + eps, 0.0,
                                          r - eps, r,       r + 1};
    const std::array<DeltaClass, 7> expected = {
        DeltaClass::worsened, DeltaClass::worsened, DeltaClass::stable,
        DeltaClass::stable,   DeltaClass::stable,   DeltaClass::improved,
        DeltaClass::improved};
    for (int i = 0; i < 7; ++i) {
      DeltaClass got = discretize_delta(deltas[i], r);
      if (got != expected[i]) {
        ok = false;
        detail = "r=" + fmt(r) + " delta=" + fmt(deltas[i]) + " -> " +
                 to_string(got) + " expected " + to_string(expected[i]);
      }
    }
  }
  if (ok) detail = "14 boundary cases across r in {2, 5}, inclusive edges";
  report(5, "change-score discretization honors inclusive margins", ok,
         detail);
}

std::vector<std::size_t> impulse_positions(double first, double period,
                                           std::size_t n) {
  std::vector<std::size_t> pos;
  for (double p = first; p < static_cast<double>(n) - 3; p += period)
    pos.push_back(static_cast<std::size_t>(std::llround(p)));
  return pos;
}

double matched_fraction(const std::vector<std::size_t>& truth,
                        const std::vector<std::size_t>& got, long long tol) {
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t t : truth)
    for (std::size_t g : got)
      if (std::llabs(static_cast<long long>(t) - static_cast<long long>(g)) <=
          tol) {
        ++hit;
        break;
      }
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

void criterion_hrv() {
  bool ok = true;
  std::ostringstream detail;

  double max_rel = 0.0;
  for (const auto& c : nn_reference_cases()) {
    NnSeries nn;
    nn.intervals_ms = c.nn;
    HrvFeatures td = hrv_time_domain(nn);
    HrvFeatures nl = hrv_nonlinear(nn);
    auto rel = [&](std::optional<double> got, double want) {
      if (!got) {
        ok = false;
        return 1.0;
      }
      double denom = std::max(std::abs(want), 1e-30);
      return std::abs(*got - want) / denom;
    };
    max_rel = std::max({max_rel, rel(td[HrvFeatures::kSdnn], c.sdnn),
                        rel(td[HrvFeatures::kRmssd], c.rmssd),
                        rel(td[HrvFeatures::kPnn50], c.pnn50),
                        rel(nl[HrvFeatures::kSd1], c.sd1)});
  }
  if (max_rel >= 1e-9) ok = false;
  detail << "20 frozen series max rel err " << fmt(max_rel);

  auto tone = [](double freq) {
    NnSeries nn;
    double t = 0.0;
    while (t < 300.0) {
      double interval =
          900.0 + 100.0 * std::sin(2.0 * std::numbers::pi * freq * t);
      nn.intervals_ms.push_back(interval);
      t += interval / 1000.0;
    }
    return hrv_frequency_domain(nn);
  };
  HrvFeatures lf = tone(0.10);
  HrvFeatures hf = tone(0.25);
  double lf_frac = 0.0, hf_frac = 0.0;
  if (lf[HrvFeatures::kLfPower] && lf[HrvFeatures::kHfPower])
    lf_frac = *lf[HrvFeatures::kLfPower] /
              (*lf[HrvFeatures::kLfPower] + *lf[HrvFeatures::kHfPower]);
  if (hf[HrvFeatures::kLfPower] && hf[HrvFeatures::kHfPower])
    hf_frac = *hf[HrvFeatures::kHfPower] /
              (*hf[HrvFeatures::kLfPower] + *hf[HrvFeatures::kHfPower]);
  if (lf_frac < 0.90 || hf_frac < 0.90) ok = false;
  detail << "; 0.10 Hz tone LF frac " << fmt(lf_frac) << ", 0.25 Hz tone HF frac "
         << fmt(hf_frac);

  double worst_recovery = 1.0;
  for (int bpm : {60, 80, 100}) {
    EcgRecording rec;
    rec.patient = "PACC";
    rec.date = Date(2024, 1, 1);
    rec.fs = 130.0;
    rec.samples.assign(7800, 0.0);
    double period = 60.0 / bpm * rec.fs;
    auto truth = impulse_positions(period / 2, period, rec.samples.size());
    for (std::size_t p : truth) rec.samples[p] = 1.0;
    auto got = detect_r_peaks(rec);
    worst_recovery = std::min(worst_recovery, matched_fraction(truth, got, 3));
  }
  if (worst_recovery < 0.95) ok = false;
  detail << "; impulse trains 60/80/100 bpm worst recovery "
         << fmt(worst_recovery);

  report(6, "heart-rate variability features match independent references",
         ok, detail.str());
}

struct LosoRun {
  RunReport report;
  double seconds = 0.0;
};

LosoRun run_synth_loso(const SynthConfig& cfg, const EvalConfig& ecfg) {
  SynthCohort cohort = generate_cohort(cfg);
  std::vector<EndpointLabel> labels =
      build_labels(cohort.clinical, cfg.margins);
  std::vector<const ModalityTable*> tables;
  for (const auto& t : cohort.tables) tables.push_back(&t);
  auto t0 = std::chrono::steady_clock::now();
  LosoRun out;
  out.report = run_loso(tables, cohort.clinical, labels, Task::facit,
                        Horizon::M3, ecfg);
  out.seconds = elapsed_s(t0);
  return out;
}

void criterion_synthetic_recovery() {
  SynthConfig cfg;
  cfg.patients = 30;
  cfg.signal = 2.0;
  cfg.seed = 1;
  EvalConfig ecfg;
  ecfg.train.seed = 1;

  LosoRun run = run_synth_loso(cfg, ecfg);
  OracleEstimate oracle = oracle_accuracy(cfg);
  bool ok = run.report.balacc_mean >= 0.80 &&
            run.report.balacc_mean >= oracle.balanced_accuracy - 0.15 &&
            run.seconds <= 600.0;
  report(7, "strong planted signal is recovered close to the oracle", ok,
         "balanced accuracy " + fmt(run.report.balacc_mean) + " +/- " +
             fmt(run.report.balacc_std) + ", oracle " +
             fmt(oracle.balanced_accuracy) + ", " + fmt(run.seconds) + " s");
}

void criterion_null_control() {
  SynthConfig cfg;
  cfg.patients = 30;
  cfg.signal = 0.0;
  cfg.seed = 1;
  EvalConfig ecfg;
  ecfg.train.seed = 1;

  LosoRun run = run_synth_loso(cfg, ecfg);
  bool ok =
      run.report.balacc_mean >= 0.20 && run.report.balacc_mean <= 0.47;
  report(8, "signal-free cohort scores inside the chance band", ok,
         "balanced accuracy " + fmt(run.report.balacc_mean) + " +/- " +
             fmt(run.report.balacc_std) + ", band [0.20, 0.47], " +
             fmt(run.seconds) + " s");
}

void criterion_ablation() {
  SynthConfig cfg;
  cfg.patients = 15;
  cfg.signal = 2.5;
  cfg.seed = 4;
  cfg.min_instances = 5;
  cfg.max_instances = 15;
  cfg.signal_mask[1].assign(cfg.feature_counts[1], 0);  // sleep carries none
  cfg.signal_mask[2].assign(cfg.feature_counts[2], 0);  // hrv carries none

  SynthCohort cohort = generate_cohort(cfg);
  std::vector<EndpointLabel> labels =
      build_labels(cohort.clinical, cfg.margins);
  std::vector<const ModalityTable*> tables;
  for (const auto& t : cohort.tables) tables.push_back(&t);

  EvalConfig ecfg;
  ecfg.embed_dim = 64;
  ecfg.hidden_dim = 64;
  ecfg.attn_dim = 32;
  ecfg.train.max_epochs = 60;
  ecfg.train.seed = 4;

  auto t0 = std::chrono::steady_clock::now();
  auto reports = run_ablation(tables, cohort.clinical, labels, Task::facit,
                              Horizon::M3, ecfg);
  double dt = elapsed_s(t0);

  std::map<std::string, double> by_subset;
  for (const auto& r : reports) by_subset[r.subset] = r.balacc_mean;
  double ps = by_subset["P+S"], pe = by_subset["P+E"], se = by_subset["S+E"];
  bool ok = reports.size() == 3 && std::min(ps, pe) >= se + 0.10;
  report(9, "removing the signal-bearing modality costs accuracy", ok,
         "P+S " + fmt(ps) + ", P+E " + fmt(pe) + ", S+E " + fmt(se) + ", " +
             fmt(dt) + " s");
}

int run_cmd(const std::string& cmd) {
  int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_cli_determinism() {
  const char* cli = std::getenv("WEARMIL_CLI");
  if (!cli) {
    report(10, "repeated command-line runs are byte-identical", false,
           "WEARMIL_CLI not set");
    return;
  }
  fs::path root = fs::temp_directory_path() /
                  ("wearmil_acceptance_" + std::to_string(getpid()));
  fs::create_directories(root);
  fs::path data = root / "data";
  fs::path cfg = root / "run.cfg";
  {
    std::ofstream out(cfg);
    out << "embed_dim=16\nhidden_dim=16\nattn_dim=8\nepochs=8\npatience=3\n"
           "grad_accum=4\nlr=0.005\nseed=11\n";
  }
  std::string quiet = " >/dev/null 2>&1";
  bool ok = run_cmd(std::string(cli) + " synth --out-dir " + data.string() +
                    " --seed 12 --patients 10 --signal 1.5 --min-instances 4"
                    " --max-instances 8" + quiet) == 0;
  std::string base = std::string(cli) + " loso --data-dir " + data.string() +
                     " --config " + cfg.string() + " --horizon m3";
  if (ok)
    ok = run_cmd(base + " --out-dir " + (root / "r1").string() + quiet) == 0 &&
         run_cmd(base + " --out-dir " + (root / "r2").string() + quiet) == 0;
  std::string detail = "synth + two loso runs, report and summary compared";
  if (ok) {
    std::string rep1 = slurp(root / "r1/report.csv");
    std::string rep2 = slurp(root / "r2/report.csv");
    std::string sum1 = slurp(root / "r1/summary.csv");
    std::string sum2 = slurp(root / "r2/summary.csv");
    ok = !rep1.empty() && rep1 == rep2 && !sum1.empty() && sum1 == sum2;
    if (!ok) detail = "report or summary bytes differ between runs";
  } else {
    detail = "command-line runs failed";
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  report(10, "repeated command-line runs are byte-identical", ok, detail);
}

void criterion_accounting() {
  ModelConfig mc;
  mc.modalities = {Modality::phys, Modality::sleep, Modality::hrv};
  mc.feature_dims = {12, 8, 10};
  mc.hidden_dims = {128, 128, 128};
  mc.embed_dim = 128;
  mc.attn_dim = 64;
  MilModel model = init_model(mc, 1);
  ParamFlopCount c = count_params_flops(model, {15, 15, 15});
  bool ok = c.params == 79363 && c.flops == 3819648;
  report(11, "parameter and flop accounting matches the frozen counts", ok,
         std::to_string(c.params) + " params, " + std::to_string(c.flops) +
             " flops at 15 instances per modality; reported reference"
             " 0.307M params / 0.479G flops, widths unpublished so no"
             " equality asserted");
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_permutation();
  criterion_attention_simplex();
  criterion_no_leakage();
  criterion_discretization();
  criterion_hrv();
  criterion_synthetic_recovery();
  criterion_null_control();
  criterion_ablation();
  criterion_cli_determinism();
  criterion_accounting();
  if (g_failures == 0) {
    std::printf("all 11 criteria passed\n");
    return 0;
  }
  std::printf("%d criteria failed\n", g_failures);
  return 1;
}
