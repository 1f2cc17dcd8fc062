#pragma once

#include <cstdint>
#include <ctime>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/error.hpp"
#include "wearmil/eval.hpp"
#include "wearmil/rng.hpp"

namespace wearmil {

inline constexpr const char* kToolName = "wearmil";
inline constexpr const char* kToolVersion = "1.0.0";

// Flat key=value file, # starts a comment, blank lines ignored.
inline std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::string text = read_file(path);
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  long long line_no = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    std::string line = text.substr(
        pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::size_t a = line.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t");
    line = line.substr(a, b - a + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(path + ":" + std::to_string(line_no) +
                  ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      std::size_t x = s.find_first_not_of(" \t");
      if (x == std::string::npos) {
        s.clear();
        return;
      }
      std::size_t y = s.find_last_not_of(" \t");
      s = s.substr(x, y - x + 1);
    };
    trim(key);
    trim(value);
    if (key.empty())
      throw Error(path + ":" + std::to_string(line_no) + ": empty key");
    if (out.count(key))
      throw Error(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                  key + "'");
    out[key] = value;
  }
  return out;
}

// Fully resolved run settings; file values apply first, flags override.
struct RunSettings {
  std::uint64_t seed = 1;
  HorizonWindows windows;
  Margins margins;
  int embed_dim = 128;
  int hidden_dim = 128;
  int attn_dim = 64;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int epochs = 100;
  int patience = 10;
  int grad_accum = 8;
  bool class_weighted = true;
  std::string f1_variant = "macro";  // or "weighted"
  double min_days_per_week = 0.0;
  int jobs = 1;

  void apply_file(const std::string& path) {
    auto kv = parse_config_file(path);
    for (const auto& [key, value] : kv) {
      std::string where = "in " + path + " key " + key;
      if (key == "seed") {
        long long s = parse_int(value, where);
        if (s < 0) throw Error("seed must be non-negative " + where);
        seed = static_cast<std::uint64_t>(s);
      } else if (key == "m3_lo") {
        windows.m3_lo = parse_int(value, where);
      } else if (key == "m3_hi") {
        windows.m3_hi = parse_int(value, where);
      } else if (key == "m6_lo") {
        windows.m6_lo = parse_int(value, where);
      } else if (key == "m6_hi") {
        windows.m6_hi = parse_int(value, where);
      } else if (key == "facit_margin") {
        margins.facit = parse_double(value, where);
      } else if (key == "handgrip_margin") {
        margins.handgrip = parse_double(value, where);
      } else if (key == "embed_dim") {
        embed_dim = static_cast<int>(parse_int(value, where));
      } else if (key == "hidden_dim") {
        hidden_dim = static_cast<int>(parse_int(value, where));
      } else if (key == "attn_dim") {
        attn_dim = static_cast<int>(parse_int(value, where));
      } else if (key == "lr") {
        lr = parse_double(value, where);
      } else if (key == "weight_decay") {
        weight_decay = parse_double(value, where);
      } else if (key == "epochs") {
        epochs = static_cast<int>(parse_int(value, where));
      } else if (key == "patience") {
        patience = static_cast<int>(parse_int(value, where));
      } else if (key == "grad_accum") {
        grad_accum = static_cast<int>(parse_int(value, where));
      } else if (key == "class_weighted") {
        class_weighted = parse_int(value, where) != 0;
      } else if (key == "f1") {
        if (value != "macro" && value != "weighted")
          throw Error("f1 must be macro or weighted " + where);
        f1_variant = value;
      } else if (key == "min_days_per_week") {
        min_days_per_week = parse_double(value, where);
      } else if (key == "jobs") {
        jobs = static_cast<int>(parse_int(value, where));
      } else {
        throw Error("unknown config key '" + key + "' in " + path);
      }
    }
  }

  EvalConfig to_eval_config() const {
    EvalConfig e;
    e.windows = windows;
    e.margins = margins;
    e.embed_dim = embed_dim;
    e.hidden_dim = hidden_dim;
    e.attn_dim = attn_dim;
    e.train.lr = lr;
    e.train.weight_decay = weight_decay;
    e.train.max_epochs = epochs;
    e.train.patience = patience;
    e.train.grad_accum = grad_accum;
    e.train.seed = seed;
    e.class_weighted = class_weighted;
    e.use_weighted_f1 = f1_variant == "weighted";
    e.min_days_per_week = min_days_per_week;
    e.jobs = jobs;
    return e;
  }

  // Every tunable, materialized, in a fixed order.
  std::vector<std::pair<std::string, std::string>> resolved() const {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("seed", std::to_string(seed));
    kv.emplace_back("m3_lo", std::to_string(windows.m3_lo));
    kv.emplace_back("m3_hi", std::to_string(windows.m3_hi));
    kv.emplace_back("m6_lo", std::to_string(windows.m6_lo));
    kv.emplace_back("m6_hi", std::to_string(windows.m6_hi));
    kv.emplace_back("facit_margin", format_double(margins.facit));
    kv.emplace_back("handgrip_margin", format_double(margins.handgrip));
    kv.emplace_back("embed_dim", std::to_string(embed_dim));
    kv.emplace_back("hidden_dim", std::to_string(hidden_dim));
    kv.emplace_back("attn_dim", std::to_string(attn_dim));
    kv.emplace_back("lr", format_double(lr));
    kv.emplace_back("weight_decay", format_double(weight_decay));
    kv.emplace_back("epochs", std::to_string(epochs));
    kv.emplace_back("patience", std::to_string(patience));
    kv.emplace_back("grad_accum", std::to_string(grad_accum));
    kv.emplace_back("class_weighted", class_weighted ? "1" : "0");
    kv.emplace_back("f1", f1_variant);
    kv.emplace_back("min_days_per_week", format_double(min_days_per_week));
    kv.emplace_back("jobs", std::to_string(jobs));
    return kv;
  }
};

inline std::string hex_digest64(std::uint64_t h) {
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[h & 0xF];
    h >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf, 16);
}

inline std::string file_digest(const std::string& path) {
  std::string content = read_file(path);
  return hex_digest64(fnv1a64(content.data(), content.size()));
}

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

// Written next to every output set: the resolved settings, input digests
// and seed needed to reproduce the run bit-exactly (the timestamp line is
// informational).
inline void write_custom_manifest(
    const std::string& path, const std::string& command,
    const std::vector<std::pair<std::string, std::string>>& kv,
    const std::vector<std::pair<std::string, std::string>>& inputs) {
  std::vector<std::string> lines;
  lines.push_back(std::string("tool=") + kToolName + " " + kToolVersion);
  lines.push_back("command=" + command);
  lines.push_back("timestamp=" + utc_timestamp());
  for (const auto& [k, v] : kv) lines.push_back(k + "=" + v);
  for (const auto& [name, path_] : inputs)
    lines.push_back("input." + name + "=" + path_ + " fnv1a64:" +
                    file_digest(path_));
  write_lines(path, lines);
}

inline void write_manifest(
    const std::string& path, const std::string& command,
    const RunSettings& settings,
    const std::vector<std::pair<std::string, std::string>>& inputs,
    const std::vector<std::pair<std::string, std::string>>& extras = {}) {
  auto kv = settings.resolved();
  for (const auto& e : extras) kv.push_back(e);
  write_custom_manifest(path, command, kv, inputs);
}

}  // namespace wearmil
