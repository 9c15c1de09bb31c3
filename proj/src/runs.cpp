#include "runs.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ldreg/annealing.hpp"
#include "ldreg/dataset.hpp"
#include "ldreg/error.hpp"
#include "ldreg/metrics.hpp"
#include "ldreg/trainer.hpp"

#ifndef LDREG_BUILD_ID
#define LDREG_BUILD_ID "unknown"
#endif

namespace ldreg::runs {

namespace fs = std::filesystem;

namespace {

// Reads typed values from one config object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : path_(std::move(path)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    j_ = j;
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_[key].is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + where(key) + "' has the wrong type");
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError("config: missing '" + where(key) + "'");
    return get<T>(key, T{});
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.contains(key) ? j_[key] : json(), where(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError("config: unknown key '" + where(key) + "'");
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  json j_ = json::object();
  std::string path_;
  std::set<std::string> used_;
};

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("bad JSON in " + path.string() + ": " + e.what());
  }
}

// Resolved settings shared by the workflows.
struct Common {
  std::string target_name = "gmm2";
  std::uint64_t seed = 0;
  TargetOptions target_opts;
  FlowShape shape;
  EvalConfig eval;
  std::size_t history_n = 10000;
};

FlowShape parse_shape(Section s, std::size_t dim) {
  FlowShape sh;
  sh.dim = dim;
  sh.layers = s.get<std::size_t>("layers", sh.layers);
  sh.hidden = s.get<std::size_t>("hidden", sh.hidden);
  sh.scale_clamp = s.get<double>("scale_clamp", sh.scale_clamp);
  s.finish();
  return sh;
}

LossConfig parse_loss(Section s, LossConfig loss) {
  loss.lambda_data = s.get<double>("lambda_data", loss.lambda_data);
  loss.lambda_ld = s.get<double>("lambda_ld", loss.lambda_ld);
  loss.p = s.get<int>("p", loss.p);
  s.finish();
  loss.validate();
  return loss;
}

TrainConfig parse_train(Section s, TrainConfig base) {
  base.steps = s.get<std::size_t>("steps", base.steps);
  base.batch_size = s.get<std::size_t>("batch_size", base.batch_size);
  base.lr0 = s.get<double>("lr0", base.lr0);
  base.eval_every = s.get<std::size_t>("eval_every", base.eval_every);
  base.loss = parse_loss(s.child("loss"), base.loss);
  s.finish();
  base.validate();
  return base;
}

Common parse_common(Section& root) {
  Common c;
  root.get<std::string>("description", "");
  root.get<std::string>("workflow", "");
  c.target_name = root.get<std::string>("target", c.target_name);
  c.seed = root.get<std::uint64_t>("seed", 0);
  {
    Section reg = root.child("regularization");
    if (root.has("regularization")) {
      EnergyRegularization r;
      r.e_high = reg.get<double>("e_high", r.e_high);
      r.e_max = reg.get<double>("e_max", r.e_max);
      c.target_opts.regularization = r;
    }
    reg.finish();
  }
  const auto probe = make_target(c.target_name, c.target_opts);
  c.shape = parse_shape(root.child("flow"), probe->dim());
  Section ev = root.child("eval");
  c.eval.n_eval = ev.get<std::size_t>("n_eval", c.eval.n_eval);
  c.eval.n_test = ev.get<std::size_t>("n_test", c.eval.n_test);
  c.eval.clip_fraction = ev.get<double>("clip_fraction", c.eval.clip_fraction);
  c.eval.seed = ev.get<std::uint64_t>("seed", 424242 + c.seed);
  c.history_n = ev.get<std::size_t>("history_n", c.history_n);
  ev.finish();
  return c;
}

struct DatasetSpec {
  std::string path;
  std::string sampler;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> bias_weights;
  std::optional<std::vector<std::size_t>> modes;
};

DatasetSpec parse_dataset(Section s, const Common& c) {
  DatasetSpec d;
  d.path = s.get<std::string>("path", "");
  d.sampler = s.get<std::string>("sampler", c.target_name);
  d.n = s.get<std::size_t>("n", 0);
  d.seed = s.get<std::uint64_t>("seed", 1000 + c.seed);
  if (s.has("bias_weights")) d.bias_weights = s.get<std::vector<double>>("bias_weights", {});
  if (s.has("modes")) d.modes = s.get<std::vector<std::size_t>>("modes", {});
  s.finish();
  if (d.path.empty() && d.n == 0) throw ConfigError("config: dataset needs either 'path' or 'n'");
  return d;
}

// Loads or generates a dataset labelled by the target. Generated datasets are
// also written into the run directory.
LabeledDataset load_dataset(const DatasetSpec& d, const Common& c, std::uint64_t& label_evals) {
  label_evals = 0;
  if (!d.path.empty()) {
    LabeledDataset data = read_dataset(d.path);
    const auto t = make_target(c.target_name, c.target_opts);
    if (data.dim() != t->dim()) throw ConfigError("dataset dimension does not match target '" + c.target_name + "'");
    return data;
  }
  const auto labeler = make_target(c.target_name, c.target_opts);
  std::unique_ptr<TargetDensity> sampler;
  if (d.modes) {
    const auto* gmm = dynamic_cast<const GmmTarget*>(labeler.get());
    if (!gmm) throw ConfigError("dataset 'modes' needs a gmm target");
    std::vector<double> w(gmm->num_components(), 0.0);
    if (d.modes->empty()) throw ConfigError("dataset 'modes' must not be empty");
    for (std::size_t m : *d.modes) {
      if (m >= w.size()) throw ConfigError("dataset mode index " + std::to_string(m) + " out of range");
      w[m] = 1.0 / static_cast<double>(d.modes->size());
    }
    sampler = std::make_unique<GmmTarget>(gmm->dim(), w, gmm->sigma());
  } else {
    TargetOptions so;
    so.bias_weights = d.bias_weights;
    sampler = make_target(d.sampler, so);
  }
  if (!sampler->can_sample()) throw ConfigError("dataset sampler '" + d.sampler + "' cannot be sampled exactly");
  LabeledDataset data = make_dataset(*sampler, *labeler, d.n, d.seed);
  if (d.bias_weights)
    data.bias_weights = d.bias_weights;
  else if (d.sampler.find("-biased") != std::string::npos && labeler->dim() == 2)
    data.bias_weights = default_biased_weights();
  label_evals = labeler->evaluations();
  return data;
}

json metrics_json(const MetricsReport& r) {
  return json{{"nll", r.nll},           {"nll_stderr", r.nll_stderr}, {"ess", r.ess},
              {"hist_kl", r.hist_kl},   {"hist_kl_rw", r.hist_kl_rw}, {"energy_w2", r.energy_w2},
              {"n_eval", r.n_eval},     {"seed", r.seed}};
}

// Owns the manifest of one run directory.
class Run {
 public:
  Run(std::string workflow, const json& cfg, const std::string& dir)
      : dir_(dir), cfg_(cfg) {
    fs::create_directories(dir_);
    manifest_ = {{"workflow", std::move(workflow)},
                 {"config_hash", config_hash(cfg)},
                 {"seed", cfg.value("seed", std::uint64_t{0})},
                 {"build_id", LDREG_BUILD_ID},
                 {"started", now_iso()},
                 {"status", "running"},
                 {"target_evals", 0},
                 {"artifacts", json::array()}};
    write_json(cfg_, dir_ / "config.json");
    add_artifact("config.json");
  }

  fs::path path(const std::string& name) const { return dir_ / name; }
  void add_artifact(const std::string& name) { manifest_["artifacts"].push_back(name); }
  void set(const std::string& key, json value) { manifest_[key] = std::move(value); }

  void evals(std::uint64_t dataset, std::uint64_t training) {
    manifest_["target_evals"] = dataset + training;
    manifest_["target_evals_breakdown"] = {{"dataset", dataset}, {"training", training}};
  }

  void finish() {
    manifest_["status"] = "ok";
    manifest_["finished"] = now_iso();
    write_json(manifest_, dir_ / "manifest.json");
  }

  void fail(const std::string& what) {
    manifest_["status"] = "failed";
    manifest_["error"] = what;
    manifest_["finished"] = now_iso();
    try {
      write_json(manifest_, dir_ / "manifest.json");
    } catch (...) {
    }
  }

 private:
  fs::path dir_;
  json cfg_;
  json manifest_;
};

template <typename Body>
void guarded(Run& run, Body&& body) {
  try {
    body();
    run.finish();
  } catch (const std::exception& e) {
    run.fail(e.what());
    throw;
  }
}

EvalHook history_hook(const Common& c, const TargetDensity& eval_target, const Points* val) {
  return [&c, &eval_target, val](const FlowModel& m, HistoryRecord& r) {
    if (val) r.val_nll = nll(*val, m).mean;
    const FlowSample s = m.sample(c.history_n, c.eval.seed ^ 0x4157 ^ r.step);
    r.ess = ess(clip_top_weights(importance_weights(s.points, s.log_density, eval_target), c.eval.clip_fraction));
  };
}

void save_metrics(Run& run, const std::string& name, const MetricsReport& r) {
  write_json(metrics_json(r), run.path(name));
  run.add_artifact(name);
}

}  // namespace

json parse_config(const std::string& text) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::string config_hash(const json& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : cfg.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void dataset(const json& cfg, const std::string& csv_path) {
  Section root(cfg, "");
  Common c = parse_common(root);
  const DatasetSpec d = parse_dataset(root.child("dataset"), c);
  for (const char* k : {"train", "loss", "anneal", "refine", "demo", "checkpoint"}) root.has(k);
  root.finish();
  if (!d.path.empty()) throw ConfigError("config: the dataset command generates data; remove 'dataset.path'");
  std::uint64_t evals = 0;
  const LabeledDataset data = load_dataset(d, c, evals);
  const fs::path p(csv_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_dataset(data, csv_path);
}

void train(const json& cfg, const std::string& run_dir) {
  Run run("train", cfg, run_dir);
  guarded(run, [&] {
    Section root(cfg, "");
    Common c = parse_common(root);
    const DatasetSpec dspec = parse_dataset(root.child("dataset"), c);
    TrainConfig tc;
    tc.seed = c.seed;
    tc.loss = parse_loss(root.child("loss"), LossConfig{});
    tc = parse_train(root.child("train"), tc);
    const double val_fraction = root.get<double>("val_fraction", 0.0);
    root.finish();

    std::uint64_t label_evals = 0;
    LabeledDataset data = load_dataset(dspec, c, label_evals);
    if (dspec.path.empty()) {
      write_dataset(data, run.path("data.csv").string());
      run.add_artifact("data.csv");
    }
    std::optional<LabeledDataset> holdout;
    if (val_fraction > 0.0) {
      auto parts = split_dataset(data, val_fraction, c.seed);
      data = std::move(parts.first);
      holdout = std::move(parts.second);
    }

    const auto eval_target = make_target(c.target_name, c.target_opts);
    FlowModel model(c.shape, c.seed);
    const RunHistory hist =
        train_unbiased(data, tc, model, history_hook(c, *eval_target, holdout ? &holdout->points : nullptr));
    save_checkpoint(model, run.path("model.ckpt").string());
    run.add_artifact("model.ckpt");
    hist.write_csv(run.path("history.csv").string());
    run.add_artifact("history.csv");

    const MetricsReport r = evaluate(model, *eval_target, c.eval);
    save_metrics(run, "metrics.json", r);
    run.evals(label_evals, 0);
    run.set("n_data", data.size());
    run.set("eval_target_evals", eval_target->evaluations());
  });
}

void anneal(const json& cfg, const std::string& run_dir) {
  Run run("anneal", cfg, run_dir);
  guarded(run, [&] {
    Section root(cfg, "");
    Common c = parse_common(root);
    AnnealConfig ac;
    ac.seed = c.seed;
    Section a = root.child("anneal");
    ac.outer_steps = a.get<std::size_t>("outer_steps", ac.outer_steps);
    ac.inner_steps = a.get<std::size_t>("inner_steps", ac.inner_steps);
    ac.buffer_size = a.get<std::size_t>("buffer_size", ac.buffer_size);
    ac.batch_size = a.get<std::size_t>("batch_size", ac.batch_size);
    ac.eps_tr = a.get<double>("eps_tr", ac.eps_tr);
    ac.t_start = a.get<double>("t_start", ac.t_start);
    ac.t_end = a.get<double>("t_end", ac.t_end);
    ac.anneal_fraction = a.get<double>("anneal_fraction", ac.anneal_fraction);
    ac.lambda_tol = a.get<double>("lambda_tol", ac.lambda_tol);
    ac.lr0 = a.get<double>("lr0", ac.lr0);
    ac.min_buffer_ess = a.get<double>("min_buffer_ess", ac.min_buffer_ess);
    ac.resample_buffer = a.get<bool>("resample_buffer", ac.resample_buffer);
    if (a.has("force_lambda")) ac.force_lambda = a.get<double>("force_lambda", 1.0);
    a.finish();
    ac.loss = parse_loss(root.child("loss"), ac.loss);
    root.finish();
    ac.validate();

    const auto target = make_target(c.target_name, c.target_opts);
    const auto eval_target = make_target(c.target_name, c.target_opts);
    FlowModel model(c.shape, c.seed);
    AnnealHistory hist;
    try {
      hist = anneal_run(ac, *target, model);
    } catch (...) {
      run.evals(0, target->evaluations());
      throw;
    }
    save_checkpoint(model, run.path("model.ckpt").string());
    run.add_artifact("model.ckpt");
    hist.write_csv(run.path("anneal_history.csv").string());
    run.add_artifact("anneal_history.csv");
    double max_kl = 0.0;
    for (const auto& rec : hist.records) max_kl = std::max(max_kl, rec.kl_expost);
    run.set("max_kl_expost", max_kl);
    save_metrics(run, "metrics.json", evaluate(model, *eval_target, c.eval));
    run.evals(0, hist.target_evals);
    run.set("eval_target_evals", eval_target->evaluations());
  });
}

void refine(const json& cfg, const std::string& run_dir) {
  Run run("refine", cfg, run_dir);
  guarded(run, [&] {
    Section root(cfg, "");
    Common c = parse_common(root);
    const DatasetSpec dspec = parse_dataset(root.child("dataset"), c);
    RefineConfig rc;
    Section r = root.child("refine");
    rc.m_is = r.get<std::size_t>("m_is", rc.m_is);
    rc.mode = parse_ld_reference(r.get<std::string>("ld_reference", "both"));
    rc.min_stage1_ess = r.get<double>("min_stage1_ess", rc.min_stage1_ess);
    rc.clip_fraction = r.get<double>("clip_fraction", rc.clip_fraction);
    rc.stage1.seed = c.seed;
    rc.stage1.loss = {1.0, 0.0, 1};
    rc.stage1 = parse_train(r.child("stage1"), rc.stage1);
    rc.stage2.seed = c.seed + 1;
    rc.stage2.loss = {0.5, 1.0, 1};
    rc.stage2 = parse_train(r.child("stage2"), rc.stage2);
    r.finish();
    root.finish();

    std::uint64_t label_evals = 0;
    const LabeledDataset biased = load_dataset(dspec, c, label_evals);
    if (dspec.path.empty()) {
      write_dataset(biased, run.path("data.csv").string());
      run.add_artifact("data.csv");
    }
    const auto target = make_target(c.target_name, c.target_opts);
    const auto eval_target = make_target(c.target_name, c.target_opts);
    FlowModel model(c.shape, c.seed);
    RefineResult res;
    try {
      res = refine_biased(biased, *target, rc, model, {}, [&](const FlowModel& m) {
        save_checkpoint(m, run.path("stage1.ckpt").string());
        run.add_artifact("stage1.ckpt");
        save_metrics(run, "stage1_metrics.json", evaluate(m, *eval_target, c.eval));
      });
    } catch (...) {
      run.evals(label_evals, target->evaluations());
      throw;
    }
    save_checkpoint(model, run.path("model.ckpt").string());
    run.add_artifact("model.ckpt");
    res.stage1.write_csv(run.path("history_stage1.csv").string());
    res.stage2.write_csv(run.path("history_stage2.csv").string());
    run.add_artifact("history_stage1.csv");
    run.add_artifact("history_stage2.csv");
    write_json({{"stage1_ess_is", res.stage1_ess}, {"m_is", rc.m_is}, {"ld_reference", to_string(rc.mode)},
                {"target_evals_is", res.target_evals}},
               run.path("refine.json"));
    run.add_artifact("refine.json");
    save_metrics(run, "metrics.json", evaluate(model, *eval_target, c.eval));
    run.evals(label_evals, res.target_evals);
    run.set("n_data", biased.size());
    run.set("eval_target_evals", eval_target->evaluations());
  });
}

void eval(const json& cfg, const std::string& run_dir) {
  Run run("eval", cfg, run_dir);
  guarded(run, [&] {
    Section root(cfg, "");
    Common c = parse_common(root);
    const std::string ckpt = root.require<std::string>("checkpoint");
    for (const char* k : {"dataset", "train", "loss", "anneal", "refine", "demo", "val_fraction"}) root.has(k);
    root.finish();
    const FlowModel model = load_checkpoint(ckpt);
    const auto eval_target = make_target(c.target_name, c.target_opts);
    if (model.dim() != eval_target->dim()) throw ConfigError("checkpoint dimension does not match the target");
    save_metrics(run, "metrics.json", evaluate(model, *eval_target, c.eval));
    run.evals(0, 0);
    run.set("checkpoint", ckpt);
    run.set("eval_target_evals", eval_target->evaluations());
  });
}

void demo_ldr_only(const json& cfg, const std::string& run_dir) {
  Run run("demo-ldr-only", cfg, run_dir);
  guarded(run, [&] {
    Section root(cfg, "");
    Common c = parse_common(root);
    const DatasetSpec dspec = parse_dataset(root.child("dataset"), c);
    DemoConfig dc;
    dc.train.seed = c.seed;
    dc.train.loss = {0.0, 1.0, 1};
    Section d = root.child("demo");
    dc.combined_lambda_data = d.get<double>("combined_lambda_data", dc.combined_lambda_data);
    dc.n_test = d.get<std::size_t>("n_test", dc.n_test);
    dc.box_grid = d.get<int>("box_grid", dc.box_grid);
    const double half = d.get<double>("box_half_width", 3.0);
    dc.box_lo = {-half, -half};
    dc.box_hi = {half, half};
    d.finish();
    dc.train = parse_train(root.child("train"), dc.train);
    root.finish();

    std::uint64_t label_evals = 0;
    const LabeledDataset data = load_dataset(dspec, c, label_evals);
    if (dspec.path.empty()) {
      write_dataset(data, run.path("data.csv").string());
      run.add_artifact("data.csv");
    }
    const auto full = make_target(c.target_name, c.target_opts);
    const DemoReport rep = ldr_only_demo(data, *full, dc, c.shape, c.seed);
    auto to_json = [](const DemoRun& r) {
      return json{{"ld_loss", r.ld_loss}, {"nll_full", r.nll_full}, {"hist_kl", r.hist_kl}, {"box_mass", r.box_mass}};
    };
    json out = to_json(rep.ld_only);
    out["combined"] = to_json(rep.combined);
    out["combined"]["lambda_data"] = dc.combined_lambda_data;
    out["box"] = {dc.box_lo[0], dc.box_hi[0]};
    write_json(out, run.path("report.json"));
    run.add_artifact("report.json");
    run.evals(label_evals, 0);
  });
}

std::string report(const std::vector<std::string>& run_dirs) {
  struct Acc {
    std::vector<double> nll, ess, kl;
  };
  std::map<std::tuple<std::string, long long, std::string>, Acc> groups;
  for (const auto& dir : run_dirs) {
    const fs::path d(dir);
    if (!fs::exists(d / "metrics.json") || !fs::exists(d / "manifest.json")) continue;
    const json manifest = read_json(d / "manifest.json");
    if (manifest.value("status", "") != "ok") continue;
    const json cfg = read_json(d / "config.json");
    const json m = read_json(d / "metrics.json");
    const std::string wf = manifest.value("workflow", "");
    const json loss = cfg.value("loss", json::object());
    std::string method;
    if (wf == "refine") {
      method = "refine (" + cfg.value("refine", json::object()).value("ld_reference", std::string("both")) + ")";
    } else {
      const double lld = loss.value("lambda_ld", wf == "anneal" ? 1.0 : 0.0);
      const int p = loss.value("p", 1);
      std::string base = wf == "anneal" ? "anneal" : "fwd KL";
      method = lld > 0.0 ? base + " + LDR-L" + std::to_string(p) : base;
      if (wf == "train" && lld > 0.0 && loss.contains("lambda_data")) {
        std::ostringstream os;
        os << " (λ_data " << loss["lambda_data"].get<double>() << ")";
        method += os.str();
      }
    }
    const long long n = manifest.value("n_data", 0LL);
    auto& acc = groups[{cfg.value("target", std::string("gmm2")), n, method}];
    acc.nll.push_back(m.value("nll", NAN));
    acc.ess.push_back(m.value("ess", NAN));
    acc.kl.push_back(m.value("hist_kl", NAN));
  }
  auto stats = [](const std::vector<double>& v, double scale, int prec) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << mean * scale << " ± " << sd * scale;
    return os.str();
  };
  std::ostringstream os;
  os << "| Target | Dataset size | Method | Seeds | NLL | ESS (%) | Hist KL |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& [key, acc] : groups) {
    const auto& [target, n, method] = key;
    os << "| " << target << " | " << (n > 0 ? std::to_string(n) : "-") << " | " << method << " | "
       << acc.nll.size() << " | " << stats(acc.nll, 1.0, 3) << " | " << stats(acc.ess, 100.0, 2) << " | "
       << stats(acc.kl, 1.0, 3) << " |\n";
  }
  return os.str();
}

}  // namespace ldreg::runs
