// Command-line front end over the C API.
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ldreg/ldreg.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

int exit_code(ldreg_status s) {
  if (s == LDREG_OK) return 0;
  return (s == LDREG_ERR_CONFIG || s == LDREG_ERR_ARGUMENT) ? kExitConfig : kExitFailure;
}

int report_status(ldreg_status s, const std::string& what) {
  if (s != LDREG_OK) std::cerr << "ldreg " << what << ": " << ldreg_status_name(s) << ": " << ldreg_last_error() << '\n';
  return exit_code(s);
}

struct ConfigError {
  std::string message;
};

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError{"cannot read config file '" + path + "'"};
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError{"config '" + path + "' must be a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError{"config '" + path + "' is not valid JSON: " + e.what()};
  }
}

// LDREG_SEED replaces the config seed unless seeds are given on the command line.
std::vector<std::uint64_t> resolve_seeds(const json& cfg, const std::vector<std::uint64_t>& cli_seeds) {
  if (!cli_seeds.empty()) return cli_seeds;
  if (const char* env = std::getenv("LDREG_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return {v};
    } catch (const std::exception&) {
      throw ConfigError{std::string("LDREG_SEED must be a non-negative integer, got '") + env + "'"};
    }
  }
  return {cfg.value("seed", std::uint64_t{0})};
}

using Workflow = ldreg_status (*)(const char*, const char*);

// Runs one workflow per seed, at most `jobs` processes at a time. With a
// single seed the run directory is `out` itself, else out/seed_<s>.
int fan_out(Workflow fn, const std::string& name, const json& cfg, const std::vector<std::uint64_t>& seeds,
            const std::string& out, int jobs) {
  auto run_one = [&](std::uint64_t seed, const std::string& dir) {
    json c = cfg;
    c["seed"] = seed;
    return report_status(fn(c.dump().c_str(), dir.c_str()), name + " (seed " + std::to_string(seed) + ")");
  };
  if (seeds.size() == 1) return run_one(seeds[0], out);

  int worst = 0;
  auto merge = [&worst](int code) {
    if (code == kExitConfig || (code != 0 && worst == 0)) worst = code;
  };
  std::size_t running = 0;
  auto reap = [&] {
    int status = 0;
    if (::wait(&status) > 0) {
      --running;
      merge(WIFEXITED(status) ? WEXITSTATUS(status) : kExitFailure);
    }
  };
  for (std::uint64_t seed : seeds) {
    const std::string dir = (fs::path(out) / ("seed_" + std::to_string(seed))).string();
    if (jobs <= 1) {
      merge(run_one(seed, dir));
      continue;
    }
    while (running >= static_cast<std::size_t>(jobs)) reap();
    std::cout.flush();
    std::cerr.flush();
    const pid_t pid = ::fork();
    if (pid < 0) {
      std::perror("fork");
      merge(run_one(seed, dir));
    } else if (pid == 0) {
      std::_Exit(run_one(seed, dir));
    } else {
      ++running;
    }
  }
  while (running > 0) reap();
  return worst;
}

std::vector<std::string> collect_runs(const std::vector<std::string>& paths) {
  std::vector<std::string> dirs;
  for (const auto& p : paths) {
    if (fs::exists(fs::path(p) / "manifest.json")) {
      dirs.push_back(p);
      continue;
    }
    if (!fs::is_directory(p)) continue;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file() && e.path().filename() == "manifest.json") dirs.push_back(e.path().parent_path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalizing-flow training with log-dispersion regularization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ldreg_version()));

  std::string config_path, out_path, checkpoint;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
  std::vector<std::string> report_inputs;

  auto* dataset = app.add_subcommand("dataset", "Sample a labelled dataset to CSV");
  dataset->add_option("-c,--config", config_path, "JSON config")->required();
  dataset->add_option("-o,--out", out_path, "Output CSV path")->required();
  dataset->add_option("--seed", seeds, "Dataset seed override")->expected(0, 1);

  struct RunCommand {
    const char* name;
    const char* help;
    Workflow fn;
  };
  const RunCommand run_commands[] = {
      {"train", "Train a flow on a labelled dataset", ldreg_run_train},
      {"anneal", "Annealed buffer training without data", ldreg_run_anneal},
      {"refine", "Two-stage refinement from biased data", ldreg_run_refine},
      {"demo-ldr-only", "LD-only training on a partial-support reference", ldreg_run_demo_ldr_only},
  };
  std::vector<std::pair<CLI::App*, Workflow>> runners;
  for (const auto& rc : run_commands) {
    auto* sub = app.add_subcommand(rc.name, rc.help);
    sub->add_option("-c,--config", config_path, "JSON config")->required();
    sub->add_option("-o,--out", out_path, "Run directory")->required();
    sub->add_option("--seeds", seeds, "Seeds to run (one run directory each)")->delimiter(',');
    sub->add_option("-j,--jobs", jobs, "Parallel processes across seeds")->check(CLI::PositiveNumber);
    runners.emplace_back(sub, rc.fn);
  }

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("-c,--config", config_path, "JSON config (target and eval settings)")->required();
  eval->add_option("-o,--out", out_path, "Run directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (overrides the config)");

  auto* report = app.add_subcommand("report", "Markdown table over run directories");
  report->add_option("runs", report_inputs, "Run directories or roots to scan")->required();
  report->add_option("-o,--out", out_path, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (dataset->parsed()) {
      json cfg = load_config(config_path);
      const auto s = resolve_seeds(cfg, seeds);
      cfg["seed"] = s.front();
      return report_status(ldreg_run_dataset(cfg.dump().c_str(), out_path.c_str()), "dataset");
    }
    for (auto& [sub, fn] : runners) {
      if (!sub->parsed()) continue;
      const json cfg = load_config(config_path);
      return fan_out(fn, sub->get_name(), cfg, resolve_seeds(cfg, seeds), out_path, jobs);
    }
    if (eval->parsed()) {
      json cfg = load_config(config_path);
      cfg["seed"] = resolve_seeds(cfg, {}).front();
      if (!checkpoint.empty()) cfg["checkpoint"] = checkpoint;
      return report_status(ldreg_run_eval(cfg.dump().c_str(), out_path.c_str()), "eval");
    }
    if (report->parsed()) {
      const auto dirs = collect_runs(report_inputs);
      std::vector<const char*> ptrs;
      for (const auto& d : dirs) ptrs.push_back(d.c_str());
      char* md = nullptr;
      const ldreg_status s = ldreg_report(ptrs.data(), ptrs.size(), &md);
      if (s != LDREG_OK) return report_status(s, "report");
      if (out_path.empty()) {
        std::cout << md;
      } else {
        std::ofstream out(out_path, std::ios::trunc);
        out << md;
        if (!out) {
          ldreg_string_free(md);
          std::cerr << "ldreg report: cannot write '" << out_path << "'\n";
          return kExitFailure;
        }
      }
      ldreg_string_free(md);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "ldreg: " << e.message << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
