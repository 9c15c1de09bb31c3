#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ldreg/error.hpp"
#include "runs.hpp"

using namespace ldreg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ldreg_runs_tests" / name;
  fs::remove_all(dir);
  return dir;
}

json read(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

json small_train() {
  return runs::parse_config(R"({
    "target": "gmm2", "seed": 4,
    "flow": {"layers": 3, "hidden": 8},
    "dataset": {"n": 200},
    "loss": {"lambda_data": 0.5, "lambda_ld": 1.0, "p": 1},
    "train": {"steps": 20, "batch_size": 64, "lr0": 0.003},
    "eval": {"n_eval": 2000, "n_test": 2000, "history_n": 500}
  })");
}

}  // namespace

TEST_CASE("config parsing") {
  CHECK_THROWS_AS(runs::parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(runs::parse_config("[1, 2]"), ConfigError);
  const json a = runs::parse_config(R"({"b": 1, "a": 2})");
  const json b = runs::parse_config(R"({"a": 2,   "b": 1})");
  CHECK(runs::config_hash(a) == runs::config_hash(b));
  CHECK(runs::config_hash(a).size() == 16);
  CHECK(runs::config_hash(a) != runs::config_hash(small_train()));
}

TEST_CASE("unknown and mistyped keys are rejected") {
  json cfg = small_train();
  cfg["train"]["stpes"] = 10;
  const fs::path typo = fresh_dir("typo");
  CHECK_THROWS_WITH_AS(runs::train(cfg, typo.string()), doctest::Contains("train.stpes"), ConfigError);
  const json manifest = read(typo / "manifest.json");
  CHECK(manifest["status"] == "failed");

  cfg = small_train();
  cfg["loss"]["p"] = "two";
  CHECK_THROWS_AS(runs::train(cfg, fresh_dir("type").string()), ConfigError);
  cfg = small_train();
  cfg["target"] = "banana";
  CHECK_THROWS_AS(runs::train(cfg, fresh_dir("target").string()), ConfigError);
  cfg = small_train();
  cfg["dataset"] = json::object();
  CHECK_THROWS_AS(runs::train(cfg, fresh_dir("nodata").string()), ConfigError);
}

TEST_CASE("a training run records its manifest and artifacts") {
  const fs::path dir = fresh_dir("train");
  runs::train(small_train(), dir.string());
  const json m = read(dir / "manifest.json");
  CHECK(m["workflow"] == "train");
  CHECK(m["status"] == "ok");
  CHECK(m["seed"] == 4);
  CHECK(m["config_hash"] == runs::config_hash(small_train()));
  CHECK(m["target_evals"] == 200);
  CHECK(m["target_evals_breakdown"]["training"] == 0);
  CHECK(m["n_data"] == 200);
  for (const char* a : {"config.json", "data.csv", "model.ckpt", "history.csv", "metrics.json"}) {
    CHECK(fs::exists(dir / a));
    CHECK(std::find(m["artifacts"].begin(), m["artifacts"].end(), a) != m["artifacts"].end());
  }
  const json metrics = read(dir / "metrics.json");
  for (const char* k : {"nll", "nll_stderr", "ess", "hist_kl", "hist_kl_rw", "energy_w2", "n_eval", "seed"})
    CHECK(metrics.contains(k));

  json ev = small_train();
  ev.erase("dataset");
  ev.erase("loss");
  ev.erase("train");
  ev["checkpoint"] = (dir / "model.ckpt").string();
  const fs::path edir = fresh_dir("eval");
  runs::eval(ev, edir.string());
  CHECK(read(edir / "metrics.json") == metrics);
  CHECK(read(edir / "manifest.json")["target_evals"] == 0);

  const std::string table = runs::report({dir.string(), edir.string(), "/nonexistent"});
  CHECK(table.find("fwd KL + LDR-L1") != std::string::npos);
  CHECK(table.find("| 200 |") != std::string::npos);
}

TEST_CASE("dataset command writes a labelled CSV") {
  const fs::path dir = fresh_dir("data");
  json cfg = runs::parse_config(R"({"target": "gmm2", "dataset": {"n": 50, "sampler": "gmm2-biased", "seed": 3}})");
  runs::dataset(cfg, (dir / "d.csv").string());
  CHECK(fs::exists(dir / "d.csv"));
  const json side = read(dir / "d.csv.json");
  CHECK(side["n"] == 50);
  CHECK(side["bias_weights"].size() == 4);
  cfg["dataset"]["path"] = "elsewhere.csv";
  CHECK_THROWS_AS(runs::dataset(cfg, (dir / "e.csv").string()), ConfigError);
}
