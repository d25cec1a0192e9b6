#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fisherlab/experiments.hpp"
#include "fisherlab/results.hpp"

#ifndef FISHERLAB_VERSION
#define FISHERLAB_VERSION "unknown"
#endif

namespace fisherlab::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kPass = 0, kAcceptanceFailure = 1, kUsageError = 2, kRuntimeError = 3 };

inline constexpr const char* kVersion = FISHERLAB_VERSION;

/// Flat key=value text, one per line; '#' starts a comment.
inline std::map<std::string, std::string> parse_config(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    const std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    const std::string key = detail::trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (out.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    out[key] = detail::trim(body.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_config(in, path);
}

/// "key=value" from a --set flag.
inline std::pair<std::string, std::string> parse_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || detail::trim(s.substr(0, eq)).empty()) {
    throw ConfigError("--set expects key=value, got '" + s + "'");
  }
  return {detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1))};
}

inline Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw ConfigError("scale: expected desk or paper, got '" + s + "'");
}

struct RunConfig {
  std::vector<std::string> ids;
  Scale scale = Scale::desk;
  std::uint64_t seed = 7;
  unsigned threads = 0;  // 0: all hardware threads
  fs::path out_dir = "results";
  std::map<std::string, std::string> settings;  // config file entries overlaid by --set
};

inline std::vector<std::string> resolve_ids(const std::string& which) {
  if (which == "all") {
    std::vector<std::string> ids;
    for (const auto& e : experiments()) ids.push_back(e.id);
    return ids;
  }
  return {find_experiment(which).id};
}

/// Validated parameters for every selected experiment. Keys are
/// "<id>.<param>"; a bare "<param>" is accepted when one experiment is
/// selected. Keys addressed to other experiments are validated too.
inline std::map<std::string, Params> resolve_params(const RunConfig& cfg) {
  std::map<std::string, std::map<std::string, std::string>> routed;
  for (const auto& [key, value] : cfg.settings) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      if (cfg.ids.size() != 1) {
        throw ConfigError("key '" + key + "' is ambiguous with several experiments; use <id>." + key);
      }
      routed[cfg.ids.front()][key] = value;
    } else {
      routed[find_experiment(key.substr(0, dot)).id][key.substr(dot + 1)] = value;
    }
  }
  std::map<std::string, Params> out;
  for (const auto& [id, values] : routed) make_params(find_experiment(id), cfg.scale, values);
  for (const auto& id : cfg.ids) {
    const auto it = routed.find(id);
    out.emplace(id, make_params(find_experiment(id), cfg.scale, it == routed.end() ? decltype(it->second){} : it->second));
  }
  return out;
}

inline std::string csv_text(const ResultTable& t) {
  std::ostringstream os;
  write_results_csv(os, t);
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

/// Writes path.partial and renames it into place; the partial file stays
/// behind if anything fails.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path partial = path;
  partial += ".partial";
  write_file(partial, content);
  fs::rename(partial, path);
}

/// Creates the output directory of each experiment and probes that it is
/// writable, before any simulation starts.
inline void prepare_out_dirs(const RunConfig& cfg) {
  for (const auto& id : cfg.ids) {
    const fs::path dir = cfg.out_dir / id;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path probe = dir / ".write_probe";
    std::ofstream test(probe);
    if (ec || !test) throw ConfigError("output directory " + dir.string() + " is not writable");
    test.close();
    fs::remove(probe, ec);
  }
}

inline nlohmann::ordered_json meta_json(const Experiment& e, const Params& p, const RunConfig& cfg,
                                        const std::vector<Check>& checks) {
  nlohmann::ordered_json j;
  j["experiment_id"] = e.id;
  j["title"] = e.title;
  j["version"] = kVersion;
  j["seed"] = cfg.seed;
  j["scale"] = to_string(cfg.scale);
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& s : p.specs()) params[s.name] = p.raw(s.name);
  j["params"] = params;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& c : checks) list.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  j["checks"] = list;
  j["passed"] = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  return j;
}

/// Largest |ratio - 1| per quantity, in table order.
inline void print_summary(std::ostream& os, const ResultTable& t) {
  std::vector<std::string> names;
  std::map<std::string, std::pair<double, std::size_t>> worst;
  for (const auto& r : t.rows()) {
    if (r.series != Series::ratio) continue;
    auto [it, fresh] = worst.try_emplace(r.sweep_name, 0.0, 0);
    if (fresh) names.push_back(r.sweep_name);
    it->second.first = std::max(it->second.first, std::abs(r.value - 1.0));
    ++it->second.second;
  }
  if (names.empty()) {
    os << "  analytic only: " << t.rows().size() << " rows\n";
    return;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "  %-34s %6s %22s\n", "quantity", "points", "max |emp/analytic-1|");
  os << buf;
  for (const auto& n : names) {
    std::snprintf(buf, sizeof buf, "  %-34s %6zu %22.4g\n", n.c_str(), worst[n].second, worst[n].first);
    os << buf;
  }
}

inline void print_checks(std::ostream& os, const std::vector<Check>& checks) {
  for (const auto& c : checks) os << (c.passed ? "  PASS " : "  FAIL ") << c.name << " [" << c.detail << "]\n";
}

/// Runs the selected experiments and writes results.csv and meta.json for
/// each. Returns kPass iff every acceptance check passed. ConfigError
/// signals a usage error; anything else a runtime error.
inline int execute(const RunConfig& cfg, std::ostream& out, std::ostream* log) {
  const auto params = resolve_params(cfg);
  prepare_out_dirs(cfg);
  RunContext ctx;
  ctx.seed = cfg.seed;
  ctx.threads = resolve_threads(cfg.threads);
  ctx.log = log;
  bool all_passed = true;
  for (const auto& id : cfg.ids) {
    const Experiment& e = find_experiment(id);
    const Params& p = params.at(id);
    const fs::path dir = cfg.out_dir / id;
    ResultTable table(id);
    Stopwatch sw;
    try {
      e.run(p, ctx, table);
    } catch (...) {
      write_file(dir / "results.csv.partial", csv_text(table));
      throw;
    }
    const std::vector<Check> checks = e.checks(p, table);
    write_file_atomic(dir / "results.csv", csv_text(table));
    write_file_atomic(dir / "meta.json", meta_json(e, p, cfg, checks).dump(2) + "\n");
    const bool passed = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    all_passed = all_passed && passed;
    out << e.id << ": " << e.title << " (" << fmt(sw.seconds(), "%.1f") << " s) "
        << (passed ? "PASS" : "FAIL") << "\n";
    print_summary(out, table);
    print_checks(out, checks);
  }
  return all_passed ? kPass : kAcceptanceFailure;
}

inline nlohmann::json read_meta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline constexpr double kAnalyticRecheckTolerance = 1e-12;

/// Re-validates existing outputs: analytic rows must match a fresh
/// analytic-only run with the recorded parameters, and the acceptance
/// checks are re-evaluated on the stored table.
inline int check(const std::vector<std::string>& ids, const fs::path& out_dir, std::ostream& out) {
  bool all_passed = true;
  for (const auto& id : ids) {
    const Experiment& e = find_experiment(id);
    const fs::path dir = out_dir / id;
    const nlohmann::json meta = read_meta(dir / "meta.json");
    if (meta.value("experiment_id", "") != id) throw std::runtime_error((dir / "meta.json").string() + ": wrong experiment id");
    std::map<std::string, std::string> values;
    for (const auto& [k, v] : meta.at("params").items()) values[k] = v.get<std::string>();
    const Params p = make_params(e, parse_scale(meta.at("scale").get<std::string>()), values);
    const ResultTable stored = read_results_csv_file((dir / "results.csv").string());
    if (stored.id() != id) throw std::runtime_error((dir / "results.csv").string() + ": wrong experiment id");

    RunContext dry;
    dry.simulate = false;
    ResultTable fresh(id);
    e.run(p, dry, fresh);
    std::vector<const ResultRow*> have;
    for (const auto& r : stored.rows())
      if (r.series == Series::analytic) have.push_back(&r);
    std::vector<Check> checks;
    std::size_t mismatches = 0;
    double worst = 0.0;
    if (have.size() != fresh.rows().size()) {
      mismatches = std::max(have.size(), fresh.rows().size());
    } else {
      for (std::size_t i = 0; i < have.size(); ++i) {
        const ResultRow& a = *have[i];
        const ResultRow& b = fresh.rows()[i];
        const double dev = std::abs(a.value - b.value) / std::max(std::abs(b.value), 1e-300);
        worst = std::max(worst, a.value == b.value ? 0.0 : dev);
        if (a.sweep_name != b.sweep_name || a.sweep_value != b.sweep_value || dev > kAnalyticRecheckTolerance) {
          ++mismatches;
        }
      }
    }
    checks.push_back({id + ": stored analytic columns match fresh solver output", mismatches == 0,
                      std::to_string(fresh.rows().size()) + " rows, " + std::to_string(mismatches) +
                          " mismatched, max relative deviation " + fmt(worst)});
    for (auto& c : e.checks(p, stored)) checks.push_back(std::move(c));
    const bool passed = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    all_passed = all_passed && passed;
    out << id << ": " << (passed ? "PASS" : "FAIL") << "\n";
    print_checks(out, checks);
  }
  return all_passed ? kPass : kAcceptanceFailure;
}

inline void print_list(std::ostream& os) {
  for (const auto& e : experiments()) {
    os << e.id << "  " << e.title << "\n";
    for (const auto& s : e.params) {
      os << "    " << e.id << "." << s.name << " = " << s.desk;
      if (s.paper != s.desk) os << " (paper: " << s.paper << ")";
      os << "    " << s.help << "\n";
    }
  }
}

}  // namespace fisherlab::cli
