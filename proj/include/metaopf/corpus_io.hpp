#pragma once

// On-disk corpus: <dir>/manifest.json, <dir>/case.m and one <dir>/task_<m>.jsonl per topology.
// Doubles are written in shortest round-trip form, so reading a corpus back is bit-exact.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaopf/case_parser.hpp"
#include "metaopf/datagen.hpp"
#include "metaopf/error.hpp"
#include "metaopf/hash.hpp"

namespace metaopf {

namespace fs = std::filesystem;

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json to_json(const PerturbationConfig& p) {
  return {{"max_removed", p.max_removed},
          {"impedance_range", p.impedance_range},
          {"load_fraction", p.load_fraction},
          {"retry_budget", p.retry_budget}};
}

inline nlohmann::json to_json(const CorpusConfig& c) {
  return {{"case_name", c.case_name},
          {"m_total", c.m_total},
          {"m_offline", c.m_offline},
          {"k", c.k},
          {"online_test_count", c.online_test_count},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"perturbation", to_json(c.perturbation)}};
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.case_name = j.value("case_name", c.case_name);
  c.m_total = j.value("m_total", c.m_total);
  c.m_offline = j.value("m_offline", c.m_offline);
  c.k = j.value("k", c.k);
  c.online_test_count = j.value("online_test_count", c.online_test_count);
  c.lambda = j.value("lambda", c.lambda);
  c.seed = j.value("seed", c.seed);
  if (j.contains("perturbation")) {
    const auto& p = j.at("perturbation");
    c.perturbation.max_removed = p.value("max_removed", c.perturbation.max_removed);
    c.perturbation.impedance_range = p.value("impedance_range", c.perturbation.impedance_range);
    c.perturbation.load_fraction = p.value("load_fraction", c.perturbation.load_fraction);
    c.perturbation.retry_budget = p.value("retry_budget", c.perturbation.retry_budget);
  }
  return c;
}

inline std::string config_hash(const CorpusConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

inline std::string task_file_name(int topology_id) { return "task_" + std::to_string(topology_id) + ".jsonl"; }

inline nlohmann::json to_json(const OpfSample& s) {
  return {{"sample_id", s.sample_id},
          {"x", vec_json(s.x)},
          {"y", vec_json(s.y)},
          {"raw_y", vec_json(s.raw_y)},
          {"objective", s.objective}};
}

inline nlohmann::json manifest_json(const Corpus& c, const std::string& case_text) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : c.tasks)
    tasks.push_back({{"topology_id", t.topology.topology_id},
                     {"split", to_string(t.split)},
                     {"file", task_file_name(t.topology.topology_id)},
                     {"attempt", t.topology.attempt},
                     {"removed_branches", t.topology.removed_branches},
                     {"impedance_scale", t.topology.impedance_scale},
                     {"n_samples", t.samples.size()},
                     {"train", t.train},
                     {"test", t.test},
                     {"excluded_samples", t.excluded}});
  return {{"format", "metaopf-corpus"},
          {"version", 1},
          {"case_name", c.config.case_name},
          {"case_file", "case.m"},
          {"case_hash", hex64(fnv1a(case_text))},
          {"config", to_json(c.config)},
          {"config_hash", config_hash(c.config)},
          {"lambda", c.config.lambda},
          {"seeds", {{"corpus", c.config.seed}}},
          {"load_buses", c.load_buses},
          {"input_dim", 2 * c.load_buses.size()},
          {"output_dim", target_dim(c.base)},
          {"topology_stats",
           {{"rejected_infeasible", c.topology_stats.rejected_infeasible},
            {"rejected_duplicate", c.topology_stats.rejected_duplicate},
            {"rejected_disconnected", c.topology_stats.rejected_disconnected}}},
          {"tasks", std::move(tasks)}};
}

inline void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
  if (!out) throw InputError("write failed: " + p.string());
}

/// Writes the corpus into `dir`. An existing manifest is only replaced when `force` is set.
inline void write_corpus(const Corpus& c, const std::string& case_text, const fs::path& dir, bool force) {
  if (fs::exists(dir / "manifest.json") && !force) throw OverwriteError("corpus exists: " + dir.string());
  fs::create_directories(dir);
  write_text_file(dir / "case.m", case_text);
  for (const auto& t : c.tasks) {
    std::string body;
    for (const auto& s : t.samples) body += to_json(s).dump() + "\n";
    write_text_file(dir / task_file_name(t.topology.topology_id), body);
  }
  write_text_file(dir / "manifest.json", manifest_json(c, case_text).dump(2) + "\n");
}

inline nlohmann::json read_json_file(const fs::path& p) {
  if (!fs::exists(p)) throw InputError("missing file: " + p.string());
  try {
    return nlohmann::json::parse(read_text_file(p.string()));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

inline Corpus load_corpus(const fs::path& dir) {
  const auto man = read_json_file(dir / "manifest.json");
  try {
    if (man.at("format") != "metaopf-corpus") throw InputError("not a corpus manifest: " + dir.string());
    Corpus c;
    c.config = corpus_config_from_json(man.at("config"));
    c.base = load_case((dir / man.at("case_file").get<std::string>()).string());
    c.load_buses = man.at("load_buses").get<std::vector<int>>();
    c.topology_stats.rejected_infeasible = man.at("topology_stats").at("rejected_infeasible");
    c.topology_stats.rejected_duplicate = man.at("topology_stats").at("rejected_duplicate");
    c.topology_stats.rejected_disconnected = man.at("topology_stats").at("rejected_disconnected");
    const std::size_t in_dim = 2 * c.load_buses.size(), out_dim = target_dim(c.base);
    for (const auto& jt : man.at("tasks")) {
      TaskDataset t;
      t.topology.base_case = c.base.name;
      t.topology.seed = c.config.seed;
      t.topology.topology_id = jt.at("topology_id");
      t.topology.attempt = jt.at("attempt");
      t.topology.removed_branches = jt.at("removed_branches").get<std::vector<int>>();
      t.topology.impedance_scale = jt.at("impedance_scale").get<std::vector<double>>();
      t.split = jt.at("split") == "online" ? Split::online : Split::offline;
      t.train = jt.at("train").get<std::vector<int>>();
      t.test = jt.at("test").get<std::vector<int>>();
      t.excluded = jt.at("excluded_samples");
      std::ifstream in(dir / jt.at("file").get<std::string>());
      if (!in) throw InputError("missing task file for topology " + std::to_string(t.topology.topology_id));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto js = nlohmann::json::parse(line);
        OpfSample s;
        s.sample_id = js.at("sample_id");
        s.x = json_vec(js.at("x"));
        s.y = json_vec(js.at("y"));
        s.raw_y = json_vec(js.at("raw_y"));
        s.objective = js.at("objective");
        if (static_cast<std::size_t>(s.x.size()) != in_dim || static_cast<std::size_t>(s.y.size()) != out_dim ||
            s.raw_y.size() != s.y.size())
          throw InputError("sample dimensions disagree with the manifest");
        t.samples.push_back(std::move(s));
      }
      if (t.samples.size() != jt.at("n_samples").get<std::size_t>())
        throw InputError("task file for topology " + std::to_string(t.topology.topology_id) + " is truncated");
      c.tasks.push_back(std::move(t));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("corpus manifest: " + std::string(e.what()));
  }
}

}  // namespace metaopf
