// metaopf: corpus generation, offline training, online adaptation, reports and OPF audits.
// Exit codes: 0 ok, 1 internal error, 2 bad input, 3 refused overwrite.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metaopf/network_json.hpp"
#include "metaopf/opf.hpp"
#include "metaopf/pipeline.hpp"

using namespace metaopf;

namespace {

struct CommonOpts {
  std::string config;
  std::string case_path;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)");
  cmd->add_option("--case", o.case_path, "MATPOWER case file");
  cmd->add_option("--out", o.out, "output root directory");
  cmd->add_option("--seed", o.seed, "master seed");
}

ExperimentConfig resolve(const CommonOpts& o) {
  nlohmann::json j = o.config.empty() ? nlohmann::json::object() : read_json_file(o.config);
  if (!o.case_path.empty()) j["case"] = o.case_path;
  if (!o.out.empty()) j["output_dir"] = o.out;
  if (o.seed) j["seed"] = *o.seed;
  if (!j.contains("case")) throw InputError("a case file is required (--case or config)");
  return experiment_config_from_json(j);
}

void print_gen(const ExperimentConfig& cfg, const GenSummary& s) {
  std::printf("corpus %s: %d topologies, %d samples\n", cfg.corpus_dir().string().c_str(), s.tasks, s.samples);
  std::printf("excluded: %d load draws with non-optimal OPF; topology attempts rejected: %d infeasible, %d duplicate, "
              "%d without a connected removal set\n",
              s.excluded_samples, s.topology_stats.rejected_infeasible, s.topology_stats.rejected_duplicate,
              s.topology_stats.rejected_disconnected);
}

int run(int argc, char** argv) {
  CLI::App app{"Meta-learned OPF predictors: data, training, adaptation and reports"};
  app.require_subcommand(1);

  CommonOpts gen_o;
  int m = -1, m_off = -1, k = -1;
  std::optional<double> lambda;
  bool force = false;
  auto* gen = app.add_subcommand("gen", "generate the topology/load/OPF corpus");
  add_common(gen, gen_o);
  gen->add_option("--m", m, "number of topologies");
  gen->add_option("--m-offline", m_off, "topologies in the offline pool");
  gen->add_option("--k", k, "samples per topology");
  gen->add_option("--lambda", lambda, "voltage calibration margin (pu)");
  gen->add_flag("--force", force, "overwrite an existing corpus");

  CommonOpts train_o;
  std::vector<std::string> train_methods;
  bool train_sweeps = false;
  auto* train = app.add_subcommand("train", "offline training of the selected methods");
  add_common(train, train_o);
  train->add_option("--method", train_methods, "mtl, pretrain1, pretrain2 (repeatable; default: config)");
  train->add_flag("--sweeps", train_sweeps, "also train MTL on the configured offline-task-count subsets");

  CommonOpts adapt_o;
  std::vector<std::string> adapt_methods;
  int samples = -1;
  bool no_timing = false, no_q_limits = false, adapt_sweeps = false;
  std::string trace_name = "trace.csv";
  auto* adapt_cmd = app.add_subcommand("adapt", "online adaptation on every online topology");
  add_common(adapt_cmd, adapt_o);
  adapt_cmd->add_option("--method", adapt_methods, "mtl, scratch, pretrain1, pretrain2 (repeatable)");
  adapt_cmd->add_option("--samples", samples, "adaptation samples per topology");
  adapt_cmd->add_option("--trace", trace_name, "trace file name under traces/<case>/");
  adapt_cmd->add_flag("--no-timing", no_timing, "write zero wall-clock columns (byte-stable traces)");
  adapt_cmd->add_flag("--no-q-limits", no_q_limits, "recover states without generator Q-limit switching");
  adapt_cmd->add_flag("--sweeps", adapt_sweeps, "also run the configured sample-count and task-count sweeps");

  std::vector<std::string> traces;
  std::string report_out = "reports";
  auto* report = app.add_subcommand("report", "aggregate trace CSVs into tables and figure series");
  report->add_option("traces", traces, "trace CSV files; the case label is the parent directory name")->required();
  report->add_option("--out", report_out, "report directory");

  std::string audit_case, audit_out;
  double audit_lambda = 0.0, load_scale = 1.0;
  auto* audit = app.add_subcommand("audit", "solve the base-load OPF and audit every constraint");
  audit->add_option("--case", audit_case, "MATPOWER case file")->required();
  audit->add_option("--lambda", audit_lambda, "voltage calibration margin (pu)");
  audit->add_option("--load-scale", load_scale, "multiplier on every demand");
  audit->add_option("--out", audit_out, "write the JSON report here instead of stdout");
  bool emit_network = false;
  audit->add_flag("--network", emit_network, "also emit the parsed network as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*gen) {
    ExperimentConfig cfg = resolve(gen_o);
    if (m > 0) cfg.corpus.m_total = m;
    if (m_off > 0) cfg.corpus.m_offline = m_off;
    if (k > 0) cfg.corpus.k = k;
    if (lambda) cfg.corpus.lambda = *lambda;
    cfg.validate();
    try {
      print_gen(cfg, run_gen(cfg, force));
    } catch (const NumericError& e) {
      throw InputError(std::string("corpus generation failed: ") + e.what());  // reported as bad input
    }
  } else if (*train) {
    const ExperimentConfig cfg = resolve(train_o);
    const auto methods = train_methods.empty() ? cfg.methods : train_methods;
    const TrainSummary s = run_train(cfg, methods);
    for (const auto& [name, ms] : s.wall_clock_ms)
      std::printf("%s: %.1f ms, %d checkpoint(s)\n", name.c_str(), ms, s.checkpoints.at(name));
    if (train_sweeps)
      for (int t : cfg.sweep_offline_task_counts) {
        run_train(cfg, {"mtl"}, t);
        std::printf("mtl on %d offline tasks: %s\n", t, mtl_checkpoint_name(t).c_str());
      }
  } else if (*adapt_cmd) {
    ExperimentConfig cfg = resolve(adapt_o);
    AdaptRun r{samples > 0 ? samples : cfg.online_samples, adapt_methods.empty() ? cfg.methods : adapt_methods,
               "mtl.json", !no_timing, !no_q_limits};
    for (const auto& name : r.methods)
      if (std::find(kMethods.begin(), kMethods.end(), name) == kMethods.end())
        throw InputError("unknown method '" + name + "'");
    if (adapt_sweeps) {
      if (samples > 0) cfg.online_samples = samples;
      cfg.methods = r.methods;
      run_adapt_all(cfg, r.timing, r.enforce_q_limits);
    } else {
      adapt_to_file(cfg, r, trace_name);
    }
    std::printf("traces written to %s\n", cfg.traces_dir().string().c_str());
  } else if (*report) {
    std::vector<LabelledTrace> in;
    for (const auto& t : traces) {
      const fs::path p(t);
      in.push_back({p.parent_path().filename().string(), read_trace_csv(p)});
    }
    const auto summary = run_report(in, report_out);
    for (const auto& [label, methods] : summary.at("cases").items())
      for (const auto& [name, v] : methods.items())
        std::printf("%s %-10s final epoch %d: feasibility %.4f\n", label.c_str(), name.c_str(),
                    v.at("final_epoch").get<int>(), v.at("final_feasibility_rate").get<double>());
    std::printf("tables written to %s\n", report_out.c_str());
  } else if (*audit) {
    const Network net = load_case(audit_case);
    const auto y = build_ybus(net);
    OpfProblem prob = make_opf_problem(net, y, audit_lambda);
    for (auto& v : prob.p_demand) v *= load_scale;
    for (auto& v : prob.q_demand) v *= load_scale;
    const OpfSolution sol = solve_opf(prob);
    nlohmann::json j = {{"solution", to_json(sol)}};
    if (sol.status == OpfStatus::optimal) j["audit"] = to_json(audit_solution(prob, sol));
    if (emit_network) j["network"] = to_json(net);
    const std::string text = j.dump(2) + "\n";
    if (audit_out.empty())
      std::fwrite(text.data(), 1, text.size(), stdout);
    else
      write_text_file(audit_out, text);
    return sol.status == OpfStatus::optimal ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const OverwriteError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
}
