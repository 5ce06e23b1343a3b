#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include <sys/wait.h>
#include <unistd.h>

#include "metaopf/pipeline.hpp"
#include "test_support.hpp"

using namespace metaopf;
using metaopf::testing::fixture;

namespace {

fs::path scratch_root() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / ("metaopf_pipeline_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

nlohmann::json tiny_config_json(const std::string& out) {
  return {{"case", fixture("case9.m")},
          {"output_dir", (scratch_root() / out).string()},
          {"seed", 5},
          {"corpus", {{"m_total", 5}, {"m_offline", 3}, {"k", 24}, {"online_test_count", 8}}},
          {"offline", {{"epochs", 20}, {"meta", {{"task_batch_size", 2}, {"inner_sample_count", 6}}}}},
          {"online", {{"epochs", 10}, {"sample_count", 8}, {"record_epochs", {1, 10}}}},
          {"sweeps", {{"sample_counts", {1, 24}}, {"offline_task_counts", {1, 3}}}}};
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(METAOPF_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = experiment_config_from_json({{"case", "x/case14.m"}});
  EXPECT_EQ(c.case_name(), "case14");
  EXPECT_EQ(c.corpus.m_total, 20);
  EXPECT_EQ(c.corpus.m_offline, 14);
  EXPECT_EQ(c.corpus.k, 300);
  EXPECT_EQ(c.corpus.lambda, 0.005);
  EXPECT_EQ(c.pretrain.optim.learning_rate, 0.001);
  EXPECT_EQ(c.pretrain.epochs, 1000);
  EXPECT_EQ(c.online.gamma, 0.1);
  EXPECT_EQ(c.online.weight_decay, 0.001);
  EXPECT_EQ(c.online_samples, 50);
  EXPECT_EQ(c.online.record_epochs, (std::vector<int>{0, 1, 10, 100}));
  EXPECT_EQ(c.methods, kMethods);
  const auto round = experiment_config_from_json(to_json(c));
  EXPECT_EQ(to_json(round), to_json(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(experiment_config_from_json({{"case", "a.m"}, {"epochs", 3}}), InputError);
  EXPECT_THROW(experiment_config_from_json({{"case", "a.m"}, {"corpus", {{"mm", 3}}}}), InputError);
  EXPECT_THROW(experiment_config_from_json({{"case", "a.m"}, {"corpus", {{"m_total", 5}, {"m_offline", 5}}}}),
               InputError);
  EXPECT_THROW(experiment_config_from_json({{"case", "a.m"}, {"methods", {"mtl", "reptile"}}}), InputError);
  EXPECT_THROW(experiment_config_from_json({{"case", "a.m"}, {"corpus", {{"k", "many"}}}}), InputError);
  EXPECT_THROW(experiment_config_from_json({{"case", "a.m"}, {"sweeps", {{"sample_counts", {400}}}}}), InputError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json::object()), InputError);
}

TEST(Trace, CsvRoundTripAndMalformedRows) {
  const std::vector<TraceRow> rows{{"mtl", 3, 0, 0.1, 0.2, 0.3, 0.75, 0.0}, {"scratch", 3, 10, 1e-17, -5.5, 1.0, 1.0, 12.5}};
  const fs::path p = scratch_root() / "t.csv";
  write_text_file(p, trace_csv(rows));
  const auto back = read_trace_csv(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].method, "scratch");
  EXPECT_EQ(back[1].eta1, 1e-17);
  EXPECT_EQ(back[1].eta2, -5.5);
  write_text_file(p, std::string(kTraceHeader) + "\nmtl,3,0,abc,1,1,1,0\n");
  EXPECT_THROW(read_trace_csv(p), InputError);
  write_text_file(p, std::string(kTraceHeader) + "\n");
  EXPECT_THROW(read_trace_csv(p), InputError);
  write_text_file(p, "");
  EXPECT_THROW(read_trace_csv(p), InputError);
}

TEST(Report, TableLayouts) {
  std::vector<TraceRow> rows;
  for (const auto& m : kMethods)
    for (int topo : {14, 15})
      for (int e : {0, 1, 10, 100}) rows.push_back({m, topo, e, 0.1, 0.9, 0.95, topo == 14 ? 1.0 : 0.5, 0.0});
  const fs::path out = scratch_root() / "report";
  const auto summary = run_report({{"case14", rows}}, out);
  const std::string t2 = slurp(out / "table2.csv");
  EXPECT_EQ(std::count(t2.begin(), t2.end(), '\n'), 13);  // header + 3 metrics x 4 methods
  const std::string t3 = slurp(out / "table3.csv");
  EXPECT_EQ(t3.substr(0, t3.find('\n')), "method,case14");
  EXPECT_NE(t3.find("mtl,0.75\n"), std::string::npos);
  EXPECT_EQ(summary["cases"]["case14"]["mtl"]["final_epoch"], 100);
  EXPECT_THROW(run_report({}, out), InputError);
}

class TinyExperiment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new ExperimentConfig(experiment_config_from_json(tiny_config_json("tiny")));
    run_gen(*cfg_, false);
    run_train_all(*cfg_);
  }
  static void TearDownTestSuite() { delete cfg_; }
  static ExperimentConfig* cfg_;
};
ExperimentConfig* TinyExperiment::cfg_ = nullptr;

TEST_F(TinyExperiment, ArtifactsAndCardinalities) {
  const fs::path models = cfg_->models_dir();
  EXPECT_TRUE(fs::exists(models / "mtl.json"));
  EXPECT_TRUE(fs::exists(models / "pretrain1.json"));
  EXPECT_TRUE(fs::exists(models / "mtl_t1.json"));
  EXPECT_TRUE(fs::exists(models / "mtl_t3.json"));
  int bank = 0;
  for (const auto& e : fs::directory_iterator(models / "pretrain2")) bank += e.path().extension() == ".json";
  EXPECT_EQ(bank, 3);
  const std::string curve = slurp(models / "meta_loss.csv");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 21);
  const auto timing = read_json_file(models / "timing.json");
  EXPECT_EQ(timing["mtl"]["checkpoints"], 1);
  EXPECT_EQ(timing["pretrain2"]["checkpoints"], 3);
  EXPECT_THROW(run_gen(*cfg_, false), OverwriteError);
}

TEST_F(TinyExperiment, TraceGridAndPretrain2Selection) {
  nlohmann::json picks;
  const auto rows = run_adapt(*cfg_, {8, kMethods, "mtl.json", false, true}, &picks);
  // 2 online topologies x 4 methods x epochs {0, 1, 10}
  ASSERT_EQ(rows.size(), 24u);
  EXPECT_EQ(rows[0].topology_id, 3);
  EXPECT_EQ(rows[0].method, "mtl");
  EXPECT_EQ(rows[3].method, "scratch");
  EXPECT_EQ(rows[12].topology_id, 4);
  EXPECT_EQ(rows[2].epoch, 10);

  // The bank member chosen for each online task is the standalone argmin.
  const Corpus corpus = load_corpus(cfg_->corpus_dir());
  const MlpArch arch = experiment_arch(*cfg_, corpus);
  const PretrainBank bank = load_bank(cfg_->models_dir() / "pretrain2", arch);
  for (const auto* t : corpus.with_split(Split::online)) {
    const TaskData d = task_data(*t, std::vector<int>(t->train.begin(), t->train.begin() + 8));
    std::vector<double> l;
    for (const auto& m : bank.models) l.push_back(loss(m.params, arch, d.x, d.y));
    const auto best = std::min_element(l.begin(), l.end()) - l.begin();
    EXPECT_EQ(picks[std::to_string(t->topology.topology_id)], bank.models[best].topology_id);
  }
}

TEST_F(TinyExperiment, TracesAreByteIdenticalWithoutTiming) {
  run_adapt_all(*cfg_, false);
  const fs::path dir = cfg_->traces_dir();
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(dir)) first[e.path().filename().string()] = slurp(e.path());
  EXPECT_TRUE(first.count("trace.csv"));
  EXPECT_TRUE(first.count("trace_samples_1.csv"));
  EXPECT_TRUE(first.count("trace_samples_24.csv"));
  EXPECT_TRUE(first.count("trace_tasks_1.csv"));
  EXPECT_TRUE(first.count("trace_tasks_3.csv"));

  ExperimentConfig again = experiment_config_from_json(tiny_config_json("tiny_again"));
  run_gen(again, false);
  run_train_all(again);
  run_adapt_all(again, false);
  for (const auto& [name, text] : first) EXPECT_EQ(slurp(again.traces_dir() / name), text) << name;
}

TEST_F(TinyExperiment, MissingCheckpointIsInputError) {
  AdaptRun r{8, {"mtl"}, "mtl_t99.json", false, true};
  EXPECT_THROW(run_adapt(*cfg_, r), InputError);
}

TEST(Cli, ExitCodes) {
  const fs::path out = scratch_root() / "cli";
  const std::string base = "gen --case " + fixture("case9.m") + " --out " + out.string() + " --m 3 --m-offline 2 --k 5";
  EXPECT_EQ(run_cli(base), 0);
  EXPECT_TRUE(fs::exists(out / "corpus" / "case9" / "task_0.jsonl"));
  EXPECT_TRUE(fs::exists(out / "corpus" / "case9" / "task_2.jsonl"));
  EXPECT_EQ(run_cli(base), 3);
  EXPECT_EQ(run_cli(base + " --force"), 0);
  EXPECT_EQ(run_cli("gen --case " + fixture("case9.m") + " --out " + out.string() + " --m 3 --m-offline 3"), 2);
  EXPECT_EQ(run_cli("gen --case /nonexistent.m --out " + out.string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  const fs::path empty = scratch_root() / "empty" / "trace.csv";
  fs::create_directories(empty.parent_path());
  write_text_file(empty, "");
  EXPECT_EQ(run_cli("report " + empty.string() + " --out " + (scratch_root() / "r").string()), 2);
  EXPECT_EQ(run_cli("audit --case " + fixture("case14.m") + " --lambda 0.005 --out " + (scratch_root() / "a.json").string()), 0);
  const auto audit = read_json_file(scratch_root() / "a.json");
  EXPECT_TRUE(audit["audit"]["feasible"].get<bool>());
}
