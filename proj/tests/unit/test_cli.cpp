#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>


namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ldreg_cli_tests";

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(LDREG_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path write_config(const std::string& name, const json& cfg) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  std::ofstream(p) << cfg.dump(2);
  return p;
}

json small_train() {
  return {{"target", "gmm2"},
          {"seed", 2},
          {"flow", {{"layers", 3}, {"hidden", 8}}},
          {"dataset", {{"n", 200}}},
          {"loss", {{"lambda_data", 0.5}, {"lambda_ld", 1.0}, {"p", 1}}},
          {"train", {{"steps", 15}, {"batch_size", 64}, {"lr0", 0.003}}},
          {"eval", {{"n_eval", 2000}, {"n_test", 2000}, {"history_n", 500}}}};
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

// Four-mode mixture at (+-1, +-1), sigma 0.5, equal weights.
double gmm2_log_density(double x1, double x2) {
  const double var = 0.25;
  double sum = 0.0;
  for (double m1 : {-1.0, 1.0})
    for (double m2 : {-1.0, 1.0})
      sum += 0.25 * std::exp(-((x1 - m1) * (x1 - m1) + (x2 - m2) * (x2 - m2)) / (2 * var)) / (2 * M_PI * var);
  return std::log(sum);
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run("").code == 2);
  CHECK(run("bogus").code == 2);
  CHECK(run("--help").code == 0);
  CHECK(run("train -c /nonexistent.json -o " + (kRoot / "x").string()).code == 2);

  json cfg = small_train();
  cfg["target"] = "banana";
  const Result r = run("train -c " + write_config("banana.json", cfg).string() + " -o " + (kRoot / "banana").string());
  CHECK(r.code == 2);
  CHECK(r.out.find("banana") != std::string::npos);

  fs::create_directories(kRoot);
  std::ofstream(kRoot / "broken.json") << "{\"seed\": ";
  CHECK(run("train -c " + (kRoot / "broken.json").string() + " -o " + (kRoot / "broken").string()).code == 2);
  CHECK(run("train -c " + write_config("ok.json", small_train()).string() + " -o " + (kRoot / "env").string(),
            "LDREG_SEED=abc")
            .code == 2);

  json ckpt = small_train();
  ckpt["checkpoint"] = "/nonexistent.ckpt";
  CHECK(run("eval -c " + write_config("nockpt.json", ckpt).string() + " -o " + (kRoot / "nockpt").string()).code ==
        1);
}

TEST_CASE("dataset command is reproducible and labelled by the target") {
  const fs::path cfg = write_config("data.json", {{"target", "gmm2"}, {"seed", 5}, {"dataset", {{"n", 300}}}});
  REQUIRE(run("dataset -c " + cfg.string() + " -o " + (kRoot / "a.csv").string()).code == 0);
  REQUIRE(run("dataset -c " + cfg.string() + " -o " + (kRoot / "b.csv").string()).code == 0);
  CHECK(slurp(kRoot / "a.csv") == slurp(kRoot / "b.csv"));
  REQUIRE(run("dataset -c " + cfg.string() + " -o " + (kRoot / "c.csv").string(), "LDREG_SEED=9").code == 0);
  CHECK(slurp(kRoot / "a.csv") != slurp(kRoot / "c.csv"));

  std::ifstream in(kRoot / "a.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "x1,x2,energy");
  int rows = 0;
  while (std::getline(in, line)) {
    double x1 = 0, x2 = 0, e = 0;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf", &x1, &x2, &e) == 3);
    CHECK(std::abs(e + gmm2_log_density(x1, x2)) < 1e-10);
    ++rows;
  }
  CHECK(rows == 300);
}

TEST_CASE("train, eval and report") {
  const fs::path cfg = write_config("train.json", small_train());
  const fs::path dir = kRoot / "train";
  fs::remove_all(dir);
  REQUIRE(run("train -c " + cfg.string() + " -o " + dir.string()).code == 0);
  const json m = read(dir / "metrics.json");
  for (const char* k : {"nll", "ess", "hist_kl", "energy_w2"}) CHECK(m.contains(k));
  CHECK(read(dir / "manifest.json")["status"] == "ok");

  const fs::path edir = kRoot / "eval";
  REQUIRE(run("eval -c " + cfg.string() + " -o " + edir.string() + " --checkpoint " + (dir / "model.ckpt").string())
              .code == 0);
  CHECK(read(edir / "metrics.json") == m);

  const fs::path seeded = kRoot / "seeded";
  fs::remove_all(seeded);
  REQUIRE(run("train -c " + cfg.string() + " -o " + seeded.string() + " --seeds 3,4,5 --jobs 2").code == 0);
  for (int s : {3, 4, 5}) CHECK(read(seeded / ("seed_" + std::to_string(s)) / "manifest.json")["seed"] == s);

  const fs::path env_dir = kRoot / "env_seed";
  REQUIRE(run("train -c " + cfg.string() + " -o " + env_dir.string(), "LDREG_SEED=4").code == 0);
  CHECK(read(env_dir / "metrics.json") == read(seeded / "seed_4" / "metrics.json"));

  const Result r = run("report " + seeded.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("| gmm2 | 200 | fwd KL + LDR-L1") != std::string::npos);
  CHECK(r.out.find("| 3 |") != std::string::npos);
}

TEST_CASE("LD-only demonstration") {
  json cfg = small_train();
  cfg.erase("loss");
  cfg["dataset"] = {{"n", 200}, {"modes", {0, 3}}};
  cfg["demo"] = {{"n_test", 2000}, {"box_grid", 40}};
  const fs::path dir = kRoot / "demo";
  REQUIRE(run("demo-ldr-only -c " + write_config("demo.json", cfg).string() + " -o " + dir.string()).code == 0);
  const json rep = read(dir / "report.json");
  for (const char* k : {"ld_loss", "nll_full", "hist_kl", "box_mass"}) {
    CHECK(rep.contains(k));
    CHECK(rep["combined"].contains(k));
  }
}
