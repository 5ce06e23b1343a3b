#pragma once

// Experiment orchestration: corpus generation, offline training of every method, online
// adaptation traces and summary reports. Directory layout under output_dir:
//   corpus/<case>/    manifest.json, case.m, task_<m>.jsonl
//   models/<case>/    mtl.json, pretrain1.json, pretrain2/task_<m>.json, meta_loss.csv, timing.json
//   traces/<case>/    trace.csv, trace_samples_<n>.csv, trace_tasks_<t>.csv
//   reports/<case>/   table2.csv, table3.csv, curves.csv, summary.json

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaopf/case_parser.hpp"
#include "metaopf/checkpoint.hpp"
#include "metaopf/corpus_io.hpp"
#include "metaopf/datagen.hpp"
#include "metaopf/error.hpp"
#include "metaopf/hash.hpp"
#include "metaopf/meta.hpp"
#include "metaopf/metrics.hpp"
#include "metaopf/parallel.hpp"

namespace metaopf {

inline const std::vector<std::string> kMethods = {"mtl", "scratch", "pretrain1", "pretrain2"};

struct ExperimentConfig {
  std::string case_path;
  std::string output_dir = "runs";
  std::uint64_t seed = 7;
  CorpusConfig corpus;
  std::optional<std::vector<int>> hidden;  // overrides the per-system default widths
  std::vector<std::string> methods = kMethods;
  MetaConfig meta;
  TrainConfig pretrain{{OptimKind::adam, 0.001, 0.001}, 1000};
  AdaptConfig online{0.1, 0.001, 100, {0, 1, 10, 100}, true};
  int online_samples = 50;
  std::vector<int> sweep_sample_counts;
  std::vector<int> sweep_offline_task_counts;

  std::string case_name() const { return std::filesystem::path(case_path).stem().string(); }
  fs::path corpus_dir() const { return fs::path(output_dir) / "corpus" / case_name(); }
  fs::path models_dir() const { return fs::path(output_dir) / "models" / case_name(); }
  fs::path traces_dir() const { return fs::path(output_dir) / "traces" / case_name(); }
  fs::path reports_dir() const { return fs::path(output_dir) / "reports" / case_name(); }

  void validate() const {
    if (case_path.empty()) throw InputError("config: case path is required");
    corpus.validate();
    meta.validate();
    if (methods.empty()) throw InputError("config: at least one method is required");
    for (const auto& m : methods)
      if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end()) throw InputError("config: unknown method '" + m + "'");
    if (online_samples < 1) throw InputError("config: online sample_count must be at least 1");
    if (online.epochs < 0) throw InputError("config: online epochs must be non-negative");
    if (pretrain.epochs < 0) throw InputError("config: offline epochs must be non-negative");
    for (int n : sweep_sample_counts)
      if (n < 1 || n > corpus.k) throw InputError("config: sweep sample count " + std::to_string(n) + " outside [1, k]");
    for (int t : sweep_offline_task_counts)
      if (t < 1 || t > corpus.m_offline)
        throw InputError("config: sweep task count " + std::to_string(t) + " outside [1, m_offline]");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InputError("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
      throw InputError("config: unknown key '" + k + "' in " + where);
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using detail::reject_unknown;
  try {
    reject_unknown(j, {"case", "output_dir", "seed", "corpus", "arch", "methods", "offline", "online", "sweeps"}, "config");
    ExperimentConfig c;
    c.case_path = j.at("case").get<std::string>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
      const auto& jc = j.at("corpus");
      reject_unknown(jc, {"m_total", "m_offline", "k", "online_test_count", "lambda", "perturbation"}, "corpus");
      if (jc.contains("perturbation"))
        reject_unknown(jc.at("perturbation"), {"max_removed", "impedance_range", "load_fraction", "retry_budget"},
                       "corpus.perturbation");
      c.corpus = corpus_config_from_json(jc);
    }
    c.corpus.seed = c.seed;
    c.corpus.case_name = c.case_name();
    if (j.contains("arch")) {
      reject_unknown(j.at("arch"), {"hidden"}, "arch");
      c.hidden = j.at("arch").at("hidden").get<std::vector<int>>();
    }
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("offline")) {
      const auto& jo = j.at("offline");
      reject_unknown(jo, {"learning_rate", "weight_decay", "epochs", "meta"}, "offline");
      c.pretrain.optim.learning_rate = jo.value("learning_rate", c.pretrain.optim.learning_rate);
      c.pretrain.optim.weight_decay = jo.value("weight_decay", c.pretrain.optim.weight_decay);
      c.pretrain.epochs = jo.value("epochs", c.pretrain.epochs);
      if (jo.contains("meta")) {
        const auto& jm = jo.at("meta");
        reject_unknown(jm, {"beta", "inner_steps", "task_batch_size", "inner_sample_count", "order"}, "offline.meta");
        c.meta.beta = jm.value("beta", c.meta.beta);
        c.meta.inner_steps = jm.value("inner_steps", c.meta.inner_steps);
        c.meta.task_batch_size = jm.value("task_batch_size", c.meta.task_batch_size);
        c.meta.inner_sample_count = jm.value("inner_sample_count", c.meta.inner_sample_count);
        const std::string order = jm.value("order", std::string("first_order"));
        if (order == "first_order")
          c.meta.order = MetaOrder::first_order;
        else if (order == "second_order_fd")
          c.meta.order = MetaOrder::second_order_fd;
        else
          throw InputError("config: unknown meta order '" + order + "'");
      }
    }
    c.meta.alpha = c.pretrain.optim.learning_rate;
    c.meta.weight_decay = c.pretrain.optim.weight_decay;
    c.meta.meta_epochs = c.pretrain.epochs;
    if (j.contains("online")) {
      const auto& jo = j.at("online");
      reject_unknown(jo, {"gamma", "weight_decay", "epochs", "sample_count", "record_epochs"}, "online");
      c.online.gamma = jo.value("gamma", c.online.gamma);
      c.online.weight_decay = jo.value("weight_decay", c.online.weight_decay);
      c.online.epochs = jo.value("epochs", c.online.epochs);
      c.online.record_epochs = jo.value("record_epochs", c.online.record_epochs);
      c.online_samples = jo.value("sample_count", c.online_samples);
    }
    c.meta.gamma = c.online.gamma;
    if (j.contains("sweeps")) {
      const auto& js = j.at("sweeps");
      reject_unknown(js, {"sample_counts", "offline_task_counts"}, "sweeps");
      c.sweep_sample_counts = js.value("sample_counts", c.sweep_sample_counts);
      c.sweep_offline_task_counts = js.value("offline_task_counts", c.sweep_offline_task_counts);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const fs::path& p) { return experiment_config_from_json(read_json_file(p)); }

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = {
      {"case", c.case_path},
      {"output_dir", c.output_dir},
      {"seed", c.seed},
      {"methods", c.methods},
      {"offline",
       {{"learning_rate", c.pretrain.optim.learning_rate},
        {"weight_decay", c.pretrain.optim.weight_decay},
        {"epochs", c.pretrain.epochs},
        {"meta",
         {{"beta", c.meta.beta},
          {"inner_steps", c.meta.inner_steps},
          {"task_batch_size", c.meta.task_batch_size},
          {"inner_sample_count", c.meta.inner_sample_count},
          {"order", c.meta.order == MetaOrder::first_order ? "first_order" : "second_order_fd"}}}}},
      {"online",
       {{"gamma", c.online.gamma},
        {"weight_decay", c.online.weight_decay},
        {"epochs", c.online.epochs},
        {"sample_count", c.online_samples},
        {"record_epochs", c.online.record_epochs}}},
      {"sweeps", {{"sample_counts", c.sweep_sample_counts}, {"offline_task_counts", c.sweep_offline_task_counts}}}};
  nlohmann::json corpus = to_json(c.corpus);
  corpus.erase("case_name");
  corpus.erase("seed");
  j["corpus"] = corpus;
  if (c.hidden) j["arch"] = {{"hidden", *c.hidden}};
  return j;
}

inline std::string training_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  j.erase("online");
  j.erase("sweeps");
  return hex64(fnv1a(j.dump()));
}

inline MlpArch experiment_arch(const ExperimentConfig& c, const Corpus& corpus) {
  MlpArch a = arch_for(static_cast<int>(corpus.base.n_bus()), static_cast<int>(2 * corpus.load_buses.size()),
                       static_cast<int>(target_dim(corpus.base)));
  if (c.hidden) a.hidden = *c.hidden;
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------------------------
// gen

struct GenSummary {
  int tasks = 0;
  int samples = 0;
  int excluded_samples = 0;
  TopologyStats topology_stats;
};

inline GenSummary run_gen(const ExperimentConfig& cfg, bool force) {
  cfg.validate();
  if (fs::exists(cfg.corpus_dir() / "manifest.json") && !force)
    throw OverwriteError("corpus exists: " + cfg.corpus_dir().string());
  const std::string text = read_text_file(cfg.case_path);
  Network base = parse_case(text);
  const Corpus c = build_corpus(base, cfg.corpus);
  write_corpus(c, text, cfg.corpus_dir(), force);
  GenSummary s;
  s.tasks = static_cast<int>(c.tasks.size());
  s.topology_stats = c.topology_stats;
  for (const auto& t : c.tasks) {
    s.samples += static_cast<int>(t.samples.size());
    s.excluded_samples += t.excluded;
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// train

inline std::vector<TaskData> offline_tasks(const Corpus& c, int limit = -1) {
  std::vector<TaskData> out;
  for (const auto* t : c.with_split(Split::offline)) {
    if (limit >= 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(task_data(*t));
  }
  if (out.empty()) throw InputError("corpus has no offline tasks");
  return out;
}

inline std::string mtl_checkpoint_name(int task_count) {
  return task_count < 0 ? "mtl.json" : "mtl_t" + std::to_string(task_count) + ".json";
}

struct TrainSummary {
  std::map<std::string, double> wall_clock_ms;
  std::map<std::string, int> checkpoints;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Trains the offline methods in `methods` ("scratch" needs no offline stage). With
/// task_count >= 0 only the first task_count offline topologies are used, and only MTL is
/// trained (offline-task sweep).
inline TrainSummary run_train(const ExperimentConfig& cfg, const std::vector<std::string>& methods, int task_count = -1) {
  const Corpus corpus = load_corpus(cfg.corpus_dir());
  const MlpArch arch = experiment_arch(cfg, corpus);
  const auto tasks = offline_tasks(corpus, task_count);
  const std::string hash = training_hash(cfg);
  const fs::path dir = cfg.models_dir();
  fs::create_directories(dir);
  TrainSummary out;
  for (const auto& m : methods) {
    const auto t0 = std::chrono::steady_clock::now();
    if (m == "mtl") {
      const MetaModel model = meta_train(tasks, arch, cfg.meta, cfg.seed);
      out.wall_clock_ms[m] = elapsed_ms(t0);
      save_checkpoint({arch, model.params, cfg.seed, hash, "mtl", -1}, dir / mtl_checkpoint_name(task_count));
      std::string csv = "epoch,meta_loss\n";
      for (std::size_t e = 0; e < model.meta_loss.size(); ++e)
        csv += std::to_string(e) + "," + fmt_double(model.meta_loss[e]) + "\n";
      write_text_file(dir / (task_count < 0 ? "meta_loss.csv" : "meta_loss_t" + std::to_string(task_count) + ".csv"), csv);
      out.checkpoints[m] = 1;
    } else if (m == "pretrain1" && task_count < 0) {
      const TrainResult r = pretrain_joint(tasks, arch, cfg.pretrain, cfg.seed);
      out.wall_clock_ms[m] = elapsed_ms(t0);
      save_checkpoint({arch, r.params, cfg.seed, hash, "pretrain1", -1}, dir / "pretrain1.json");
      out.checkpoints[m] = 1;
    } else if (m == "pretrain2" && task_count < 0) {
      const PretrainBank bank = pretrain_bank(tasks, arch, cfg.pretrain, cfg.seed);
      out.wall_clock_ms[m] = elapsed_ms(t0);
      fs::remove_all(dir / "pretrain2");
      fs::create_directories(dir / "pretrain2");
      for (const auto& b : bank.models)
        save_checkpoint({arch, b.params, cfg.seed, hash, "pretrain2", b.topology_id},
                        dir / "pretrain2" / ("task_" + std::to_string(b.topology_id) + ".json"));
      out.checkpoints[m] = static_cast<int>(bank.models.size());
    }
  }
  if (task_count < 0) {
    nlohmann::json timing = nlohmann::json::object();
    const fs::path tp = dir / "timing.json";
    if (fs::exists(tp)) timing = read_json_file(tp);
    for (const auto& [m, ms] : out.wall_clock_ms) timing[m] = {{"wall_clock_ms", ms}, {"checkpoints", out.checkpoints[m]}};
    write_text_file(tp, timing.dump(2) + "\n");
  }
  return out;
}

inline Params require_checkpoint(const fs::path& p, const MlpArch& arch) {
  if (!fs::exists(p)) throw InputError("missing checkpoint: " + p.string());
  Checkpoint c = load_checkpoint(p);
  if (!(c.arch == arch)) throw InputError("checkpoint architecture does not match the corpus: " + p.string());
  return std::move(c.params);
}

inline PretrainBank load_bank(const fs::path& dir, const MlpArch& arch) {
  if (!fs::is_directory(dir)) throw InputError("missing checkpoint directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  PretrainBank bank;
  for (const auto& f : files) {
    Checkpoint c = load_checkpoint(f);
    if (!(c.arch == arch)) throw InputError("bank checkpoint architecture mismatch: " + f.string());
    bank.models.push_back({c.topology_id, std::move(c.params), 0.0});
  }
  std::sort(bank.models.begin(), bank.models.end(), [](const auto& a, const auto& b) { return a.topology_id < b.topology_id; });
  if (bank.models.empty()) throw InputError("empty model bank in " + dir.string());
  return bank;
}

// ---------------------------------------------------------------------------------------------
// adapt

inline const char* kTraceHeader = "method,topology_id,epoch,eta1,eta2,eta3,feasibility_rate,wall_clock_ms";

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string s = std::string(kTraceHeader) + "\n";
  for (const auto& r : rows)
    s += r.method + "," + std::to_string(r.topology_id) + "," + std::to_string(r.epoch) + "," + fmt_double(r.eta1) + "," +
         fmt_double(r.eta2) + "," + fmt_double(r.eta3) + "," + fmt_double(r.feasibility_rate) + "," +
         fmt_double(r.wall_clock_ms) + "\n";
  return s;
}

inline std::vector<TraceRow> read_trace_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot read trace " + p.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty trace file: " + p.string());
  if (line != kTraceHeader) throw InputError("unexpected trace header in " + p.string());
  std::vector<TraceRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw InputError(p.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      rows.push_back({f[0], std::stoi(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                      std::stod(f[6]), std::stod(f[7])});
    } catch (const std::exception&) {
      throw InputError(p.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  if (rows.empty()) throw InputError("trace has no rows: " + p.string());
  return rows;
}

struct AdaptRun {
  int sample_count = 50;
  std::vector<std::string> methods;
  std::string mtl_checkpoint = "mtl.json";
  bool timing = true;
  bool enforce_q_limits = true;
};

struct OnlineCell {
  const TaskDataset* task;
  std::string method;
};

/// Adapts every requested method on every online topology; rows are ordered by topology, then
/// method order, then epoch.
inline std::vector<TraceRow> run_adapt(const ExperimentConfig& cfg, const AdaptRun& run,
                                       nlohmann::json* selections = nullptr) {
  const Corpus corpus = load_corpus(cfg.corpus_dir());
  const MlpArch arch = experiment_arch(cfg, corpus);
  std::set<int> offline_ids;
  for (const auto* t : corpus.with_split(Split::offline)) offline_ids.insert(t->topology.topology_id);
  const auto online = corpus.with_split(Split::online);
  if (online.empty()) throw InputError("corpus has no online tasks");

  std::map<std::string, Params> init;
  PretrainBank bank;
  for (const auto& m : run.methods) {
    if (m == "mtl") init[m] = require_checkpoint(cfg.models_dir() / run.mtl_checkpoint, arch);
    if (m == "pretrain1") init[m] = require_checkpoint(cfg.models_dir() / "pretrain1.json", arch);
    if (m == "pretrain2") bank = load_bank(cfg.models_dir() / "pretrain2", arch);
  }

  AdaptConfig ac = cfg.online;
  ac.timing = run.timing;
  std::vector<OnlineCell> cells;
  for (const auto* t : online)
    for (const auto& m : run.methods) cells.push_back({t, m});
  std::vector<std::vector<TraceRow>> out(cells.size());
  std::vector<int> chosen(cells.size(), -1);
  std::vector<std::unique_ptr<Evaluator>> evals(online.size());
  std::vector<TaskData> train_sets(online.size());
  for (std::size_t i = 0; i < online.size(); ++i) {
    const auto* t = online[i];
    if (static_cast<int>(t->train.size()) < run.sample_count)
      throw InputError("online task " + std::to_string(t->topology.topology_id) + " has fewer than " +
                       std::to_string(run.sample_count) + " training samples");
    train_sets[i] = task_data(*t, std::vector<int>(t->train.begin(), t->train.begin() + run.sample_count));
    std::vector<OpfSample> test;
    for (int j : t->test) test.push_back(t->samples.at(j));
    RecoveryOptions ro;
    ro.enforce_q_limits = run.enforce_q_limits;
    evals[i] = std::make_unique<Evaluator>(apply_topology(corpus.base, t->topology), corpus.load_buses, std::move(test), ro);
  }
  parallel_for(cells.size(), [&](std::size_t c) {
    const std::size_t ti = c / run.methods.size();
    const auto& m = cells[c].method;
    const TaskData& d = train_sets[ti];
    const Evaluator& ev = *evals[ti];
    if (m == "scratch") {
      out[c] = scratch_baseline(arch, cfg.seed, d, ev, ac, offline_ids).trace;
    } else if (m == "pretrain2") {
      const std::size_t b = select_closest(bank, arch, d);
      chosen[c] = bank.models[b].topology_id;
      out[c] = adapt(bank.models[b].params, arch, d, ev, ac, offline_ids, m).trace;
    } else {
      out[c] = adapt(init.at(m), arch, d, ev, ac, offline_ids, m).trace;
    }
  });
  std::vector<TraceRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    rows.insert(rows.end(), out[c].begin(), out[c].end());
    if (selections && chosen[c] >= 0) (*selections)[std::to_string(cells[c].task->topology.topology_id)] = chosen[c];
  }
  return rows;
}

inline std::string trace_file_for_samples(int n) { return "trace_samples_" + std::to_string(n) + ".csv"; }
inline std::string trace_file_for_tasks(int t) { return "trace_tasks_" + std::to_string(t) + ".csv"; }

/// Runs one adaptation pass and writes traces/<case>/<file>; pretrain2 picks go to a JSON
/// file next to it.
inline std::vector<TraceRow> adapt_to_file(const ExperimentConfig& cfg, const AdaptRun& run, const std::string& file) {
  nlohmann::json picks = nlohmann::json::object();
  const auto rows = run_adapt(cfg, run, &picks);
  fs::create_directories(cfg.traces_dir());
  write_text_file(cfg.traces_dir() / file, trace_csv(rows));
  if (!picks.empty())
    write_text_file(cfg.traces_dir() / (fs::path(file).stem().string() + "_pretrain2_selection.json"), picks.dump(2) + "\n");
  return rows;
}

/// Main trace plus every configured sweep.
inline void run_adapt_all(const ExperimentConfig& cfg, bool timing, bool enforce_q_limits = true) {
  AdaptRun base{cfg.online_samples, cfg.methods, "mtl.json", timing, enforce_q_limits};
  adapt_to_file(cfg, base, "trace.csv");
  for (int n : cfg.sweep_sample_counts) {
    AdaptRun r = base;
    r.sample_count = n;
    adapt_to_file(cfg, r, trace_file_for_samples(n));
  }
  for (int t : cfg.sweep_offline_task_counts) {
    AdaptRun r = base;
    r.methods = {"mtl"};
    r.mtl_checkpoint = mtl_checkpoint_name(t);
    adapt_to_file(cfg, r, trace_file_for_tasks(t));
  }
}

/// Offline training of every configured method plus the offline-task sweep checkpoints.
inline TrainSummary run_train_all(const ExperimentConfig& cfg) {
  TrainSummary s = run_train(cfg, cfg.methods);
  if (std::find(cfg.methods.begin(), cfg.methods.end(), "mtl") != cfg.methods.end())
    for (int t : cfg.sweep_offline_task_counts) run_train(cfg, {"mtl"}, t);
  return s;
}

// ---------------------------------------------------------------------------------------------
// report

struct CurvePoint {
  double eta1 = 0, eta2 = 0, eta3 = 0, feasibility = 0;
  int n = 0;
};

/// Mean metrics per (method, epoch) over topologies.
inline std::map<std::string, std::map<int, CurvePoint>> mean_curves(const std::vector<TraceRow>& rows) {
  std::map<std::string, std::map<int, CurvePoint>> out;
  for (const auto& r : rows) {
    auto& p = out[r.method][r.epoch];
    p.eta1 += r.eta1;
    p.eta2 += r.eta2;
    p.eta3 += r.eta3;
    p.feasibility += r.feasibility_rate;
    ++p.n;
  }
  for (auto& [m, curve] : out)
    for (auto& [e, p] : curve) {
      p.eta1 /= p.n;
      p.eta2 /= p.n;
      p.eta3 /= p.n;
      p.feasibility /= p.n;
    }
  return out;
}

inline std::vector<std::string> ordered_methods(const std::map<std::string, std::map<int, CurvePoint>>& curves) {
  std::vector<std::string> out;
  for (const auto& m : kMethods)
    if (curves.count(m)) out.push_back(m);
  for (const auto& [m, c] : curves)
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  return out;
}

struct LabelledTrace {
  std::string label;  // usually the case name
  std::vector<TraceRow> rows;
};

/// Writes table2.csv (metric x method over reporting epochs), table3.csv (final feasibility,
/// method x case), curves.csv (every recorded epoch) and summary.json. Returns the summary.
inline nlohmann::json run_report(const std::vector<LabelledTrace>& traces, const fs::path& out_dir) {
  if (traces.empty()) throw InputError("no traces to report");
  fs::create_directories(out_dir);
  nlohmann::json summary = {{"cases", nlohmann::json::object()}};
  std::string t2 = "case,metric,method,epoch_0,epoch_1,epoch_10,epoch_100\n";
  std::string curves_csv = "case,method,epoch,eta1,eta2,eta3,feasibility_rate\n";
  std::map<std::string, std::map<std::string, double>> final_feas;  // method -> case -> rate
  std::vector<std::string> labels;
  for (const auto& tr : traces) {
    labels.push_back(tr.label);
    const auto curves = mean_curves(tr.rows);
    nlohmann::json jc = nlohmann::json::object();
    for (const auto& m : ordered_methods(curves)) {
      const auto& c = curves.at(m);
      for (const char* metric : {"eta1", "eta2", "eta3"}) {
        t2 += tr.label + "," + metric + "," + m;
        for (int e : {0, 1, 10, 100}) {
          t2 += ",";
          if (!c.count(e)) continue;
          const auto& p = c.at(e);
          const double v = std::string(metric) == "eta1" ? p.eta1 : std::string(metric) == "eta2" ? p.eta2 : p.eta3;
          t2 += fmt_double(v);
          jc[m][metric][std::to_string(e)] = v;
        }
        t2 += "\n";
      }
      for (const auto& [e, p] : c)
        curves_csv += tr.label + "," + m + "," + std::to_string(e) + "," + fmt_double(p.eta1) + "," + fmt_double(p.eta2) +
                      "," + fmt_double(p.eta3) + "," + fmt_double(p.feasibility) + "\n";
      final_feas[m][tr.label] = c.rbegin()->second.feasibility;
      jc[m]["final_epoch"] = c.rbegin()->first;
      jc[m]["final_feasibility_rate"] = c.rbegin()->second.feasibility;
    }
    summary["cases"][tr.label] = jc;
  }
  std::string t3 = "method";
  for (const auto& l : labels) t3 += "," + l;
  t3 += "\n";
  for (const auto& m : kMethods) {
    if (!final_feas.count(m)) continue;
    t3 += m;
    for (const auto& l : labels) t3 += "," + (final_feas[m].count(l) ? fmt_double(final_feas[m][l]) : std::string());
    t3 += "\n";
  }
  write_text_file(out_dir / "table2.csv", t2);
  write_text_file(out_dir / "table3.csv", t3);
  write_text_file(out_dir / "curves.csv", curves_csv);
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

/// Final-epoch mean eta2 of one method over topologies.
inline double final_eta2(const std::vector<TraceRow>& rows, const std::string& method) {
  const auto curves = mean_curves(rows);
  if (!curves.count(method)) throw InputError("no rows for method " + method);
  return curves.at(method).rbegin()->second.eta2;
}

}  // namespace metaopf
