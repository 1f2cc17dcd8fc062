// Command-line front end: synthetic cohort generation, ECG feature
// extraction, cohort summaries, LOSO evaluation and modality ablations.
// Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wearmil/bags.hpp"
#include "wearmil/cohort.hpp"
#include "wearmil/config.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/ecg.hpp"
#include "wearmil/error.hpp"
#include "wearmil/eval.hpp"
#include "wearmil/hrv.hpp"
#include "wearmil/ingest.hpp"
#include "wearmil/model.hpp"
#include "wearmil/preprocess.hpp"
#include "wearmil/synth.hpp"

namespace fs = std::filesystem;
using namespace wearmil;

namespace {

// Bad flag combinations detected after CLI parsing still count as usage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<Modality> parse_modality_list(const std::string& csv) {
  std::vector<Modality> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto pos = csv.find(',', start);
    std::string tok = csv.substr(
        start, pos == std::string::npos ? std::string::npos : pos - start);
    if (tok.empty()) throw UsageError("empty modality name in '" + csv + "'");
    try {
      Modality m = parse_modality(tok);
      if (std::find(out.begin(), out.end(), m) != out.end())
        throw UsageError("duplicate modality '" + tok + "'");
      out.push_back(m);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (out.empty()) throw UsageError("no modalities given");
  // canonical order regardless of flag order
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Horizon> parse_horizon_flag(const std::string& s) {
  if (s == "m3") return {Horizon::M3};
  if (s == "m6") return {Horizon::M6};
  if (s == "both") return {Horizon::M3, Horizon::M6};
  throw UsageError("horizon must be m3, m6 or both");
}

struct SynthFlags {
  std::uint64_t seed = 1;
  std::string out_dir;
  int patients = 30;
  double signal = 1.0;
  double missing = 0.10;
  std::string signal_modalities = "phys,sleep,hrv";
  int min_instances = 5;
  int max_instances = 25;
};

int cmd_synth(const SynthFlags& flags) {
  SynthConfig cfg;
  try {
    cfg.seed = flags.seed;
    cfg.patients = flags.patients;
    cfg.signal = flags.signal;
    cfg.missing_prob = {flags.missing, flags.missing, flags.missing};
    cfg.min_instances = flags.min_instances;
    cfg.max_instances = flags.max_instances;
    auto signal_mods = parse_modality_list(flags.signal_modalities);
    for (int m = 0; m < 3; ++m) {
      bool carries = std::find(signal_mods.begin(), signal_mods.end(),
                               kAllModalities[m]) != signal_mods.end();
      cfg.signal_mask[m].assign(
          static_cast<std::size_t>(cfg.feature_counts[m]), carries ? 1 : 0);
    }
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  fs::create_directories(flags.out_dir);
  SynthCohort cohort = generate_cohort(cfg);
  write_synth_cohort(flags.out_dir, cohort);

  OracleEstimate oracle = oracle_accuracy(cfg);
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("seed", std::to_string(cfg.seed));
  kv.emplace_back("patients", std::to_string(cfg.patients));
  kv.emplace_back("signal", format_double(cfg.signal));
  kv.emplace_back("missing_prob", format_double(flags.missing));
  kv.emplace_back("signal_modalities", flags.signal_modalities);
  kv.emplace_back("min_instances", std::to_string(cfg.min_instances));
  kv.emplace_back("max_instances", std::to_string(cfg.max_instances));
  kv.emplace_back("oracle_balanced_accuracy",
                  format_double(oracle.balanced_accuracy));
  kv.emplace_back("oracle_std_error", format_double(oracle.std_error));
  write_custom_manifest(flags.out_dir + "/manifest.txt", "synth", kv, {});

  std::cout << "wrote cohort to " << flags.out_dir << " (oracle balanced accuracy "
            << format_double(oracle.balanced_accuracy) << " +/- "
            << format_double(oracle.std_error) << ")\n";
  return 0;
}

struct ExtractFlags {
  std::string in_dir;
  std::string out_dir;
};

int cmd_extract_hrv(const ExtractFlags& flags) {
  std::vector<std::string> files;
  {
    std::error_code ec;
    fs::directory_iterator it(flags.in_dir, ec);
    if (ec) throw Error("cannot read directory " + flags.in_dir);
    for (const auto& entry : fs::directory_iterator(flags.in_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".csv")
        files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw Error("no .csv recordings in " + flags.in_dir);

  std::map<std::pair<PatientId, std::string>, std::vector<HrvFeatures>>
      by_day;
  std::size_t failures = 0;
  for (const auto& path : files) {
    try {
      EcgRecording rec = load_ecg_file(path);
      HrvFeatures feats = extract_hrv_features(rec);
      by_day[{rec.patient, rec.date.to_string()}].push_back(feats);
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
      ++failures;
    }
  }
  if (by_day.empty())
    throw Error("all " + std::to_string(failures) + " recordings failed");

  fs::create_directories(flags.out_dir);
  ModalityTable table;
  table.modality = Modality::hrv;
  for (const auto& n : HrvFeatures::names()) table.feature_names.push_back(n);
  for (const auto& [key, segments] : by_day) {
    HrvFeatures agg = aggregate_daily(segments);
    InstanceRow row;
    row.patient = key.first;
    row.modality = Modality::hrv;
    row.date = Date::parse(key.second);
    for (int i = 0; i < HrvFeatures::kCount; ++i)
      row.features.push_back(agg.values[i]);
    table.rows.push_back(std::move(row));
  }
  std::string out_csv = flags.out_dir + "/hrv.csv";
  write_modality_table(out_csv, table);

  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("recordings", std::to_string(files.size()));
  kv.emplace_back("failed", std::to_string(failures));
  kv.emplace_back("rows", std::to_string(table.rows.size()));
  std::vector<std::pair<std::string, std::string>> inputs;
  for (const auto& f : files)
    inputs.emplace_back(fs::path(f).filename().string(), f);
  write_custom_manifest(flags.out_dir + "/manifest.txt", "extract-hrv", kv,
                        inputs);
  std::cout << "wrote " << out_csv << " (" << table.rows.size() << " rows, "
            << failures << " recordings skipped)\n";
  return 0;
}

struct DataFlags {
  std::string data_dir;
  std::string out_dir;
  std::string config_path;
  std::string task = "facit";
  std::string horizon = "both";
  std::string modalities = "phys,sleep,hrv";
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 0;
  bool jobs_given = false;
  bool dump_attention = false;
  bool dump_bags = false;
  bool dump_stats = false;
};

struct LoadedData {
  std::vector<ModalityTable> tables;
  ClinicalRecords clinical;
  std::vector<EndpointLabel> labels;
  std::vector<std::pair<std::string, std::string>> inputs;
};

LoadedData load_data(const std::string& data_dir,
                     const std::vector<Modality>& mods,
                     const Margins& margins) {
  LoadedData d;
  for (Modality m : mods) {
    std::string path = data_dir + "/" + to_string(m) + ".csv";
    d.tables.push_back(load_modality_table(path, m));
    d.inputs.emplace_back(std::string(to_string(m)) + ".csv", path);
  }
  std::string clin_path = data_dir + "/clinical.csv";
  d.clinical = load_clinical(clin_path);
  d.inputs.emplace_back("clinical.csv", clin_path);
  std::vector<const ModalityTable*> ptrs;
  for (const auto& t : d.tables) ptrs.push_back(&t);
  check_baseline_coverage(d.clinical, ptrs);
  d.labels = build_labels(d.clinical, margins);
  return d;
}

RunSettings resolve_settings(const DataFlags& flags) {
  RunSettings settings;
  if (!flags.config_path.empty()) settings.apply_file(flags.config_path);
  if (flags.seed_given) settings.seed = flags.seed;
  if (flags.jobs_given) settings.jobs = flags.jobs;
  return settings;
}

void dump_bag_manifest(const std::string& path, const LoadedData& data,
                       const std::vector<const ModalityTable*>& tables,
                       Task task, const std::vector<Horizon>& horizons,
                       const EvalConfig& ecfg) {
  // Descriptive dump: statistics fitted on the full cohort, counts and
  // dates are unaffected by standardization.
  std::set<PatientId> all;
  for (const auto& [p, d] : data.clinical.baselines) all.insert(p);
  std::vector<FoldStats> stats;
  for (const ModalityTable* t : tables) stats.push_back(fit_stats(*t, all));
  std::vector<const FoldStats*> stat_ptrs;
  for (const auto& s : stats) stat_ptrs.push_back(&s);
  std::vector<Bag> bags;
  for (Horizon h : horizons) {
    auto built = build_bags(tables, stat_ptrs, data.clinical, data.labels,
                            task, h, ecfg.windows);
    for (auto& b : built.bags) bags.push_back(std::move(b));
  }
  write_bag_manifest(path, bags);
}

int run_reports(const DataFlags& flags, bool ablation) {
  std::vector<Modality> mods = ablation
                                   ? std::vector<Modality>{Modality::phys,
                                                           Modality::sleep,
                                                           Modality::hrv}
                                   : parse_modality_list(flags.modalities);
  std::vector<Horizon> horizons = parse_horizon_flag(flags.horizon);
  Task task;
  try {
    task = parse_task(flags.task);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  RunSettings settings = resolve_settings(flags);
  EvalConfig ecfg = settings.to_eval_config();

  LoadedData data = load_data(flags.data_dir, mods, settings.margins);
  std::vector<const ModalityTable*> tables;
  for (const auto& t : data.tables) tables.push_back(&t);

  std::vector<RunReport> reports;
  for (Horizon h : horizons) {
    if (ablation) {
      auto three = run_ablation(tables, data.clinical, data.labels, task, h,
                                ecfg);
      for (auto& r : three) reports.push_back(std::move(r));
    } else {
      reports.push_back(
          run_loso(tables, data.clinical, data.labels, task, h, ecfg));
    }
  }

  fs::create_directories(flags.out_dir);
  write_report(flags.out_dir + "/report.csv", reports);
  write_summary(flags.out_dir + "/summary.csv", reports);
  long long skipped = 0;
  for (const auto& r : reports) skipped += r.skipped;
  if (skipped > 0) write_skipped(flags.out_dir + "/skipped.csv", reports);
  if (flags.dump_attention)
    write_attention(flags.out_dir + "/attention.csv", reports);
  if (flags.dump_bags)
    dump_bag_manifest(flags.out_dir + "/bags.csv", data, tables, task,
                      horizons, ecfg);
  if (flags.dump_stats) {
    for (const auto& rep : reports)
      for (const auto& f : rep.folds) {
        if (f.skipped) continue;
        write_fold_stats(flags.out_dir + "/stats_" + rep.subset + "_" +
                             to_string(rep.horizon) + "_" + f.patient + ".csv",
                         f.stats);
      }
  }

  std::vector<std::pair<std::string, std::string>> extras;
  extras.emplace_back("task", flags.task);
  extras.emplace_back("horizon", flags.horizon);
  extras.emplace_back("modalities",
                      ablation ? "ablation:P+S,P+E,S+E" : flags.modalities);
  extras.emplace_back("skipped_folds", std::to_string(skipped));
  long long adherence = 0;
  for (const auto& r : reports) adherence += r.adherence_dropped;
  extras.emplace_back("adherence_dropped", std::to_string(adherence));
  write_manifest(flags.out_dir + "/manifest.txt",
                 ablation ? "ablate" : "loso", settings, data.inputs, extras);

  for (const auto& r : reports)
    std::cout << to_string(r.task) << " " << to_string(r.horizon) << " "
              << r.subset << ": balanced accuracy "
              << format_double(r.balacc_mean) << " +/- "
              << format_double(r.balacc_std) << ", f1 "
              << format_double(r.f1_mean) << " +/- "
              << format_double(r.f1_std) << "\n";
  std::cout << "wrote " << flags.out_dir << "/summary.csv\n";
  return 0;
}

struct SummarizeFlags {
  std::string data_dir;
  std::string out_dir;
  std::string config_path;
};

int cmd_summarize(const SummarizeFlags& flags) {
  RunSettings settings;
  if (!flags.config_path.empty()) settings.apply_file(flags.config_path);
  std::vector<Modality> mods = {Modality::phys, Modality::sleep,
                                Modality::hrv};
  LoadedData data = load_data(flags.data_dir, mods, settings.margins);
  std::vector<const ModalityTable*> tables;
  for (const auto& t : data.tables) tables.push_back(&t);
  CohortSummary summary =
      summarize_cohort(tables, data.labels, settings.windows, data.clinical);
  fs::create_directories(flags.out_dir);
  write_patient_summary(flags.out_dir + "/patients.csv", summary);
  write_instance_summary(flags.out_dir + "/instances.csv", summary);
  write_manifest(flags.out_dir + "/manifest.txt", "summarize", settings,
                 data.inputs);
  std::cout << "wrote " << flags.out_dir << "/patients.csv and instances.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-MIL pipeline for wearable change prediction"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* cmd_s = app.add_subcommand("synth",
                                   "generate a synthetic cohort with planted "
                                   "class signal");
  cmd_s->add_option("--seed", synth.seed, "master seed");
  cmd_s->add_option("--out-dir", synth.out_dir, "output directory")
      ->required();
  cmd_s->add_option("--patients", synth.patients, "cohort size")
      ->check(CLI::PositiveNumber);
  cmd_s->add_option("--signal", synth.signal,
                    "class mean shift in std units");
  cmd_s->add_option("--missing", synth.missing, "missing-cell probability");
  cmd_s->add_option("--signal-modalities", synth.signal_modalities,
                    "comma list of modalities carrying signal");
  cmd_s->add_option("--min-instances", synth.min_instances,
                    "per modality per horizon");
  cmd_s->add_option("--max-instances", synth.max_instances,
                    "per modality per horizon");

  ExtractFlags extract;
  auto* cmd_e = app.add_subcommand(
      "extract-hrv", "convert ECG recordings to daily feature rows");
  cmd_e->add_option("--in-dir", extract.in_dir, "directory of ECG .csv files")
      ->required();
  cmd_e->add_option("--out-dir", extract.out_dir, "output directory")
      ->required();

  DataFlags loso;
  auto* cmd_l = app.add_subcommand("loso",
                                   "leave-one-subject-out evaluation");
  DataFlags ablate;
  auto* cmd_a = app.add_subcommand("ablate",
                                   "pairwise modality ablations");
  for (auto [cmd, flags] : {std::pair{cmd_l, &loso}, std::pair{cmd_a, &ablate}}) {
    cmd->add_option("--data-dir", flags->data_dir,
                    "directory with phys.csv, sleep.csv, hrv.csv, clinical.csv")
        ->required();
    cmd->add_option("--out-dir", flags->out_dir, "output directory")
        ->required();
    cmd->add_option("--config", flags->config_path, "key=value config file");
    cmd->add_option("--task", flags->task, "facit or handgrip")
        ->check(CLI::IsMember({"facit", "handgrip"}));
    cmd->add_option("--horizon", flags->horizon, "m3, m6 or both")
        ->check(CLI::IsMember({"m3", "m6", "both"}));
    cmd->add_option("--seed", flags->seed, "master seed");
    cmd->add_option("--jobs", flags->jobs, "max concurrent folds");
    cmd->add_flag("--dump-attention", flags->dump_attention,
                  "write per-instance attention weights");
    cmd->add_flag("--dump-bags", flags->dump_bags,
                  "write the bag manifest");
    cmd->add_flag("--dump-stats", flags->dump_stats,
                  "write per-fold standardization statistics");
  }
  cmd_l->add_option("--modalities", loso.modalities,
                    "comma list of modalities to include");

  SummarizeFlags summarize;
  auto* cmd_sum = app.add_subcommand(
      "summarize", "patient and instance count tables for a cohort");
  cmd_sum->add_option("--data-dir", summarize.data_dir, "input directory")
      ->required();
  cmd_sum->add_option("--out-dir", summarize.out_dir, "output directory")
      ->required();
  cmd_sum->add_option("--config", summarize.config_path,
                      "key=value config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  loso.seed_given = cmd_l->count("--seed") > 0;
  loso.jobs_given = cmd_l->count("--jobs") > 0;
  ablate.seed_given = cmd_a->count("--seed") > 0;
  ablate.jobs_given = cmd_a->count("--jobs") > 0;

  try {
    if (cmd_s->parsed()) return cmd_synth(synth);
    if (cmd_e->parsed()) return cmd_extract_hrv(extract);
    if (cmd_l->parsed()) return run_reports(loso, false);
    if (cmd_a->parsed()) return run_reports(ablate, true);
    if (cmd_sum->parsed()) return cmd_summarize(summarize);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
