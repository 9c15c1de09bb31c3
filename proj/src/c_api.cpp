#include "ldreg/ldreg.h"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <memory>
#include <new>
#include <string>

#include "ldreg/error.hpp"
#include "ldreg/flow.hpp"
#include "ldreg/impsampling.hpp"
#include "ldreg/targets.hpp"
#include "runs.hpp"

#ifndef LDREG_VERSION
#define LDREG_VERSION "0.0.0"
#endif

struct ldreg_flow {
  ldreg::FlowModel model;
};

struct ldreg_target {
  std::unique_ptr<ldreg::TargetDensity> target;
};

namespace {

thread_local std::string g_last_error;

ldreg_status status_of(ldreg::ErrorKind kind) {
  switch (kind) {
    case ldreg::ErrorKind::Config: return LDREG_ERR_CONFIG;
    case ldreg::ErrorKind::Training: return LDREG_ERR_TRAINING;
    case ldreg::ErrorKind::Degenerate: return LDREG_ERR_DEGENERATE;
    case ldreg::ErrorKind::Contract: return LDREG_ERR_CONTRACT;
    case ldreg::ErrorKind::Io: return LDREG_ERR_IO;
  }
  return LDREG_ERR_INTERNAL;
}

template <typename Body>
ldreg_status guard(Body&& body) {
  try {
    g_last_error.clear();
    body();
    return LDREG_OK;
  } catch (const ldreg::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return LDREG_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LDREG_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LDREG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return LDREG_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be null");
}

ldreg_status argument_error(const char* what) {
  g_last_error = std::string(what) + " must not be null";
  return LDREG_ERR_ARGUMENT;
}

ldreg::Points to_points(const double* x, size_t n, size_t dim) {
  return Eigen::Map<const Eigen::MatrixXd>(x, static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
}

template <typename Fn>
ldreg_status run_workflow(const char* config_json, const char* path, Fn fn) {
  if (!config_json) return argument_error("config_json");
  if (!path) return argument_error("output path");
  return guard([&] { fn(ldreg::runs::parse_config(config_json), std::string(path)); });
}

}  // namespace

extern "C" {

const char* ldreg_last_error(void) { return g_last_error.c_str(); }

const char* ldreg_version(void) { return LDREG_VERSION; }

const char* ldreg_status_name(ldreg_status status) {
  switch (status) {
    case LDREG_OK: return "ok";
    case LDREG_ERR_CONFIG: return "configuration error";
    case LDREG_ERR_TRAINING: return "training error";
    case LDREG_ERR_DEGENERATE: return "degenerate input";
    case LDREG_ERR_CONTRACT: return "contract violation";
    case LDREG_ERR_IO: return "i/o error";
    case LDREG_ERR_ARGUMENT: return "invalid argument";
    case LDREG_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

ldreg_status ldreg_flow_create(size_t dim, size_t layers, size_t hidden, uint64_t seed, ldreg_flow** out) {
  if (!out) return argument_error("out");
  *out = nullptr;
  return guard([&] {
    ldreg::FlowShape shape;
    shape.dim = dim;
    shape.layers = layers;
    shape.hidden = hidden;
    *out = new ldreg_flow{ldreg::FlowModel(shape, seed)};
  });
}

ldreg_status ldreg_flow_load(const char* path, ldreg_flow** out) {
  if (!out) return argument_error("out");
  if (!path) return argument_error("path");
  *out = nullptr;
  return guard([&] { *out = new ldreg_flow{ldreg::load_checkpoint(path)}; });
}

ldreg_status ldreg_flow_save(const ldreg_flow* flow, const char* path) {
  if (!flow) return argument_error("flow");
  if (!path) return argument_error("path");
  return guard([&] { ldreg::save_checkpoint(flow->model, path); });
}

void ldreg_flow_free(ldreg_flow* flow) { delete flow; }

size_t ldreg_flow_dim(const ldreg_flow* flow) { return flow ? flow->model.dim() : 0; }

size_t ldreg_flow_num_params(const ldreg_flow* flow) { return flow ? flow->model.num_params() : 0; }

ldreg_status ldreg_flow_log_density(const ldreg_flow* flow, const double* x, size_t n, double* out) {
  if (!flow) return argument_error("flow");
  if (!x) return argument_error("x");
  if (!out) return argument_error("out");
  return guard([&] {
    const Eigen::VectorXd lq = flow->model.log_density(to_points(x, n, flow->model.dim()));
    std::memcpy(out, lq.data(), n * sizeof(double));
  });
}

ldreg_status ldreg_flow_sample(const ldreg_flow* flow, size_t n, uint64_t seed, double* x_out, double* log_q_out) {
  if (!flow) return argument_error("flow");
  if (!x_out) return argument_error("x_out");
  return guard([&] {
    const ldreg::FlowSample s = flow->model.sample(n, seed);
    std::memcpy(x_out, s.points.data(), n * flow->model.dim() * sizeof(double));
    if (log_q_out) std::memcpy(log_q_out, s.log_density.data(), n * sizeof(double));
  });
}

ldreg_status ldreg_target_create(const char* name, ldreg_target** out) {
  if (!out) return argument_error("out");
  if (!name) return argument_error("name");
  *out = nullptr;
  return guard([&] { *out = new ldreg_target{ldreg::make_target(name)}; });
}

void ldreg_target_free(ldreg_target* target) { delete target; }

size_t ldreg_target_dim(const ldreg_target* target) { return target ? target->target->dim() : 0; }

ldreg_status ldreg_target_log_density(const ldreg_target* target, const double* x, size_t n, double* out) {
  if (!target) return argument_error("target");
  if (!x) return argument_error("x");
  if (!out) return argument_error("out");
  return guard([&] {
    const Eigen::VectorXd lp = target->target->log_density(to_points(x, n, target->target->dim()));
    std::memcpy(out, lp.data(), n * sizeof(double));
  });
}

uint64_t ldreg_target_evaluations(const ldreg_target* target) { return target ? target->target->evaluations() : 0; }

ldreg_status ldreg_ess(const double* log_weights, size_t n, double clip_fraction, double* out) {
  if (!log_weights) return argument_error("log_weights");
  if (!out) return argument_error("out");
  return guard([&] {
    ldreg::WeightedSamples ws;
    ws.log_weights = Eigen::Map<const Eigen::VectorXd>(log_weights, static_cast<Eigen::Index>(n));
    ws.normalized = ldreg::normalize_log_weights(ws.log_weights);
    *out = ldreg::ess(clip_fraction > 0.0 ? ldreg::clip_top_weights(ws, clip_fraction) : ws);
  });
}

ldreg_status ldreg_run_dataset(const char* config_json, const char* csv_path) {
  return run_workflow(config_json, csv_path, ldreg::runs::dataset);
}

ldreg_status ldreg_run_train(const char* config_json, const char* run_dir) {
  return run_workflow(config_json, run_dir, ldreg::runs::train);
}

ldreg_status ldreg_run_anneal(const char* config_json, const char* run_dir) {
  return run_workflow(config_json, run_dir, ldreg::runs::anneal);
}

ldreg_status ldreg_run_refine(const char* config_json, const char* run_dir) {
  return run_workflow(config_json, run_dir, ldreg::runs::refine);
}

ldreg_status ldreg_run_eval(const char* config_json, const char* run_dir) {
  return run_workflow(config_json, run_dir, ldreg::runs::eval);
}

ldreg_status ldreg_run_demo_ldr_only(const char* config_json, const char* run_dir) {
  return run_workflow(config_json, run_dir, ldreg::runs::demo_ldr_only);
}

ldreg_status ldreg_report(const char* const* run_dirs, size_t n, char** markdown_out) {
  if (!markdown_out) return argument_error("markdown_out");
  if (n > 0 && !run_dirs) return argument_error("run_dirs");
  *markdown_out = nullptr;
  return guard([&] {
    std::vector<std::string> dirs;
    for (size_t i = 0; i < n; ++i) {
      require(run_dirs[i], "run directory");
      dirs.emplace_back(run_dirs[i]);
    }
    const std::string md = ldreg::runs::report(dirs);
    char* buf = static_cast<char*>(std::malloc(md.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, md.c_str(), md.size() + 1);
    *markdown_out = buf;
  });
}

void ldreg_string_free(char* s) { std::free(s); }

}  // extern "C"
