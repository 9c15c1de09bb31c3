#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ldreg/ldreg.h"

namespace fs = std::filesystem;

TEST_CASE("flow handles") {
  ldreg_flow* flow = nullptr;
  REQUIRE(ldreg_flow_create(2, 4, 16, 3, &flow) == LDREG_OK);
  CHECK(ldreg_flow_dim(flow) == 2);
  CHECK(ldreg_flow_num_params(flow) > 0);

  std::vector<double> x(2 * 50), log_q(50), again(50);
  REQUIRE(ldreg_flow_sample(flow, 50, 9, x.data(), log_q.data()) == LDREG_OK);
  REQUIRE(ldreg_flow_log_density(flow, x.data(), 50, again.data()) == LDREG_OK);
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(again[i] - log_q[i]) < 1e-9);
  CHECK(ldreg_flow_sample(flow, 5, 9, x.data(), nullptr) == LDREG_OK);

  const std::string path = (fs::temp_directory_path() / "ldreg_capi.ckpt").string();
  REQUIRE(ldreg_flow_save(flow, path.c_str()) == LDREG_OK);
  ldreg_flow* loaded = nullptr;
  REQUIRE(ldreg_flow_load(path.c_str(), &loaded) == LDREG_OK);
  std::vector<double> lq2(50);
  ldreg_flow_log_density(loaded, x.data(), 50, lq2.data());
  ldreg_flow_log_density(flow, x.data(), 50, again.data());
  CHECK(lq2 == again);
  ldreg_flow_free(loaded);
  ldreg_flow_free(flow);
  ldreg_flow_free(nullptr);
  fs::remove(path);
}

TEST_CASE("errors come back as codes with a message") {
  ldreg_flow* flow = nullptr;
  CHECK(ldreg_flow_create(2, 4, 16, 3, nullptr) == LDREG_ERR_ARGUMENT);
  CHECK(std::strlen(ldreg_last_error()) > 0);
  CHECK(ldreg_flow_create(2, 0, 16, 3, &flow) == LDREG_ERR_CONFIG);
  CHECK(flow == nullptr);
  CHECK(ldreg_flow_load("/nonexistent/x.ckpt", &flow) == LDREG_ERR_IO);
  CHECK(ldreg_flow_log_density(nullptr, nullptr, 0, nullptr) == LDREG_ERR_ARGUMENT);

  ldreg_target* t = nullptr;
  CHECK(ldreg_target_create("banana", &t) == LDREG_ERR_CONFIG);
  CHECK(std::string(ldreg_last_error()).find("banana") != std::string::npos);
  CHECK(ldreg_run_train("{oops", "/tmp/ldreg_never") == LDREG_ERR_CONFIG);
  CHECK(ldreg_run_train(nullptr, "/tmp/ldreg_never") == LDREG_ERR_ARGUMENT);
  CHECK(std::string(ldreg_status_name(LDREG_ERR_DEGENERATE)) == "degenerate input");

  const double lw[3] = {-INFINITY, -INFINITY, -INFINITY};
  double out = 0.0;
  CHECK(ldreg_ess(lw, 3, 0.0, &out) == LDREG_ERR_DEGENERATE);
}

TEST_CASE("targets and ESS") {
  ldreg_target* t = nullptr;
  REQUIRE(ldreg_target_create("gmm2", &t) == LDREG_OK);
  CHECK(ldreg_target_dim(t) == 2);
  const double x[2] = {0.0, 0.0};
  double lp = 0.0;
  REQUIRE(ldreg_target_log_density(t, x, 1, &lp) == LDREG_OK);
  CHECK(lp == doctest::Approx(-4.451582705289454).epsilon(1e-12));
  CHECK(ldreg_target_evaluations(t) == 1);
  ldreg_target_free(t);

  const double lw[3] = {std::log(2.0), 0.0, 0.0};
  double e = 0.0;
  REQUIRE(ldreg_ess(lw, 3, 0.0, &e) == LDREG_OK);
  CHECK(e == doctest::Approx(8.0 / 9.0).epsilon(1e-14));
}

TEST_CASE("report strings") {
  char* md = nullptr;
  REQUIRE(ldreg_report(nullptr, 0, &md) == LDREG_OK);
  CHECK(std::string(md).find("| Target |") == 0);
  ldreg_string_free(md);
  CHECK(std::string(ldreg_version()).size() > 0);
}
