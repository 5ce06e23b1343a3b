#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <queue>
#include <set>

#include <unistd.h>

#include "metaopf/case_parser.hpp"
#include "metaopf/corpus_io.hpp"
#include "metaopf/datagen.hpp"
#include "test_support.hpp"

using namespace metaopf;
using metaopf::testing::fixture;
using metaopf::testing::fixture_text;

namespace {

// Independent connectivity check over in-service branches.
bool bfs_connected(const Network& net) {
  std::vector<std::vector<std::size_t>> adj(net.n_bus());
  for (const auto& br : net.branches) {
    if (!br.in_service()) continue;
    adj[br.from_bus].push_back(br.to_bus);
    adj[br.to_bus].push_back(br.from_bus);
  }
  std::vector<bool> seen(net.n_bus(), false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        ++count;
        q.push(v);
      }
  }
  return count == net.n_bus();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metaopf_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

CorpusConfig small_config() {
  CorpusConfig c;
  c.case_name = "case9";
  c.m_total = 4;
  c.m_offline = 3;
  c.k = 6;
  c.online_test_count = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(SampleTopologies, DegenerateConfigReproducesBaseCase) {
  const Network base = load_case(fixture("case14.m"));
  PerturbationConfig cfg;
  cfg.max_removed = 0;
  cfg.impedance_range = 0.0;
  const auto specs = sample_topologies(base, 3, cfg, 1);
  ASSERT_EQ(specs.size(), 3u);
  for (const auto& s : specs) {
    EXPECT_TRUE(s.removed_branches.empty());
    const Network net = apply_topology(base, s);
    for (std::size_t b = 0; b < base.branches.size(); ++b) {
      EXPECT_EQ(net.branches[b].r, base.branches[b].r);
      EXPECT_EQ(net.branches[b].x, base.branches[b].x);
      EXPECT_EQ(net.branches[b].status, base.branches[b].status);
    }
  }
}

TEST(SampleTopologies, Case14SpecsAreConnectedDistinctAndInRange) {
  const Network base = load_case(fixture("case14.m"));
  TopologyStats stats;
  const auto specs = sample_topologies(base, 20, {}, 7, 0.005, &stats);
  ASSERT_EQ(specs.size(), 20u);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    EXPECT_EQ(s.topology_id, static_cast<int>(i));
    EXPECT_LE(s.removed_branches.size(), 2u);
    for (double k : s.impedance_scale) {
      EXPECT_GE(k, 0.7);
      EXPECT_LE(k, 1.3);
    }
    EXPECT_TRUE(bfs_connected(apply_topology(base, s))) << "topology " << i;
    for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(s.same_topology(specs[j]));
  }
}

TEST(SampleTopologies, BridgeRemovalIsNeverEmitted) {
  // Bus 8 of case14 hangs off bus 7 through a single branch.
  const Network base = load_case(fixture("case14.m"));
  int bridge = -1;
  for (std::size_t b = 0; b < base.branches.size(); ++b) {
    Network trial = base;
    trial.branches[b].status = BranchStatus::out_of_service;
    if (!bfs_connected(trial)) bridge = static_cast<int>(b);
  }
  ASSERT_GE(bridge, 0);
  PerturbationConfig cfg;
  cfg.max_removed = 2;
  for (int attempt = 0; attempt < 300; ++attempt) {
    const auto s = draw_topology(base, cfg, 3, 0, attempt);
    ASSERT_TRUE(s);
    EXPECT_EQ(std::count(s->removed_branches.begin(), s->removed_branches.end(), bridge), 0);
    EXPECT_TRUE(bfs_connected(apply_topology(base, *s)));
  }
}

TEST(SampleTopologies, RetryBudgetExhaustionReportsCount) {
  const Network base = load_case(fixture("case14.m"));
  PerturbationConfig cfg;
  cfg.max_removed = 0;
  cfg.impedance_range = 0.0;
  EXPECT_NO_THROW(sample_topologies(base, 2, cfg, 1));
  // Demand far beyond total generation capacity makes every topology infeasible.
  Network heavy = base;
  for (auto& b : heavy.buses) b.p_demand *= 20.0;
  try {
    sample_topologies(heavy, 2, {0, 0.1, 0.7, 3}, 1);
    FAIL() << "expected an error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("found only 0 of 2"), std::string::npos);
  }
}

TEST(SampleTopologies, RingWithRadialSpursRejectsDoubleRemovals) {
  // case9 is a six-bus ring with three generator spurs: any two removals split it.
  const Network base = load_case(fixture("case9.m"));
  PerturbationConfig two;
  two.max_removed = 2;
  int empty = 0;
  for (int attempt = 0; attempt < 30; ++attempt) {
    const auto s = draw_topology(base, two, 5, 0, attempt);
    if (!s) {
      ++empty;
      continue;
    }
    EXPECT_LE(s->removed_branches.size(), 1u);
    EXPECT_TRUE(bfs_connected(apply_topology(base, *s)));
  }
  EXPECT_GT(empty, 0);
  TopologyStats stats;
  const auto specs = sample_topologies(base, 12, two, 5, 0.005, &stats);
  EXPECT_EQ(specs.size(), 12u);
  EXPECT_GT(stats.rejected_disconnected, 0);
}

TEST(SampleLoads, ZeroFractionGivesBaseDemand) {
  const Network base = load_case(fixture("case14.m"));
  PerturbationConfig cfg;
  cfg.load_fraction = 0.0;
  for (const auto& s : sample_loads(base, 5, cfg, 2)) {
    EXPECT_EQ(s.p, base.p_demand());
    EXPECT_EQ(s.q, base.q_demand());
  }
}

TEST(SampleLoads, EnvelopeAndMeanOverThousandDraws) {
  const Network base = load_case(fixture("case14.m"));
  const auto loads = sample_loads(base, 1000, {}, 5);
  const auto p0 = base.p_demand(), q0 = base.q_demand();
  // A multiplier uniform on [0.3, 1.7] has standard deviation 1.4 / sqrt(12); the mean of 1000
  // draws has standard error 1.28% of d0.
  const double se = 1.4 / std::sqrt(12.0) / std::sqrt(1000.0);
  double tp = 0, tq = 0, tp0 = 0, tq0 = 0;
  for (std::size_t i = 0; i < base.n_bus(); ++i) {
    double sp = 0, sq = 0;
    for (const auto& s : loads) {
      for (auto [v, d0] : {std::pair{s.p[i], p0[i]}, std::pair{s.q[i], q0[i]}}) {
        EXPECT_GE(v, std::min(0.3 * d0, 1.7 * d0) - 1e-15);
        EXPECT_LE(v, std::max(0.3 * d0, 1.7 * d0) + 1e-15);
        if (d0 == 0.0) EXPECT_EQ(v, 0.0);
      }
      sp += s.p[i];
      sq += s.q[i];
    }
    if (p0[i] != 0.0) EXPECT_NEAR(sp / 1000.0, p0[i], 4.0 * se * std::abs(p0[i])) << "bus " << i;
    if (q0[i] != 0.0) EXPECT_NEAR(sq / 1000.0, q0[i], 4.0 * se * std::abs(q0[i])) << "bus " << i;
    tp += sp / 1000.0;
    tq += sq / 1000.0;
    tp0 += p0[i];
    tq0 += q0[i];
  }
  // System totals average many independent multipliers and sit well inside 2%.
  EXPECT_NEAR(tp, tp0, 0.02 * std::abs(tp0));
  EXPECT_NEAR(tq, tq0, 0.02 * std::abs(tq0));
}

TEST(SampleLoads, DrawsDependOnlyOnTheirIds) {
  const Network base = load_case(fixture("case14.m"));
  const auto a = sample_loads(base, 10, {}, 9, 4);
  EXPECT_EQ(draw_load(base, 0.7, 9, 4, 7).p, a[7].p);
  EXPECT_NE(draw_load(base, 0.7, 9, 5, 7).p, a[7].p);
}

TEST(Scaling, RoundTripOnCorpusSamples) {
  const Network base = load_case(fixture("case14.m"));
  CorpusConfig cfg;
  cfg.case_name = "case14";
  cfg.m_total = 2;
  cfg.m_offline = 1;
  cfg.k = 20;
  cfg.online_test_count = 5;
  const Corpus c = build_corpus(base, cfg);
  for (const auto& t : c.tasks) {
    const Network net = apply_topology(base, t.topology);
    for (const auto& s : t.samples) {
      ASSERT_EQ(s.x.size(), 22);
      ASSERT_EQ(s.y.size(), 9);
      EXPECT_GE(s.y.minCoeff(), 0.0);
      EXPECT_LE(s.y.maxCoeff(), 1.0);
      const Eigen::VectorXd back = stack(unscale_outputs(net, s.y));
      for (Eigen::Index i = 0; i < back.size(); ++i)
        EXPECT_LE(std::abs(back[i] - s.raw_y[i]), 1e-12 * std::max(1.0, std::abs(s.raw_y[i])));
    }
  }
}

TEST(Scaling, InverseIsIdentityOnUnitBox) {
  const Network net = load_case(fixture("case30.m"));
  Rng rng(99);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd y(target_dim(net));
    for (auto& v : y) v = rng.uniform();
    EXPECT_LE((scale_targets(net, unscale_outputs(net, y)) - y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BuildCorpus, SplitCountsAndNoLeakage) {
  const Network base = load_case(fixture("case9.m"));
  const Corpus c = build_corpus(base, small_config());
  ASSERT_EQ(c.tasks.size(), 4u);
  const auto off = c.with_split(Split::offline), on = c.with_split(Split::online);
  ASSERT_EQ(off.size(), 3u);
  ASSERT_EQ(on.size(), 1u);
  for (const auto* t : off) {
    EXPECT_EQ(t->samples.size(), 6u);
    EXPECT_EQ(t->train.size(), 6u);
    EXPECT_TRUE(t->test.empty());
  }
  EXPECT_EQ(on[0]->samples.size(), 10u);
  EXPECT_EQ(on[0]->train.size(), 6u);
  EXPECT_EQ(on[0]->test.size(), 4u);
  for (const auto* a : on)
    for (const auto* b : off) {
      EXPECT_NE(a->topology.topology_id, b->topology.topology_id);
      EXPECT_FALSE(a->topology.same_topology(b->topology));
    }
}

TEST(BuildCorpus, RejectsBadSplit) {
  auto cfg = small_config();
  cfg.m_offline = cfg.m_total;
  EXPECT_THROW(cfg.validate(), InputError);
}

TEST(BuildCorpus, ManifestIsByteIdenticalAcrossRuns) {
  const std::string text = fixture_text("case9.m");
  const Network base = parse_case(text);
  const fs::path a = temp_dir("corpus_a"), b = temp_dir("corpus_b");
  write_corpus(build_corpus(base, small_config()), text, a, false);
  write_corpus(build_corpus(base, small_config()), text, b, false);
  for (const auto& e : fs::directory_iterator(a))
    EXPECT_EQ(read_text_file(e.path().string()), read_text_file((b / e.path().filename()).string())) << e.path();
  EXPECT_THROW(write_corpus(build_corpus(base, small_config()), text, a, false), OverwriteError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(BuildCorpus, DiskRoundTripPreservesSamples) {
  const std::string text = fixture_text("case9.m");
  const Network base = parse_case(text);
  const Corpus c = build_corpus(base, small_config());
  const fs::path dir = temp_dir("corpus_rt");
  write_corpus(c, text, dir, false);
  const Corpus r = load_corpus(dir);
  ASSERT_EQ(r.tasks.size(), c.tasks.size());
  EXPECT_EQ(r.load_buses, c.load_buses);
  for (std::size_t t = 0; t < c.tasks.size(); ++t) {
    EXPECT_EQ(r.tasks[t].split, c.tasks[t].split);
    EXPECT_TRUE(r.tasks[t].topology.same_topology(c.tasks[t].topology));
    ASSERT_EQ(r.tasks[t].samples.size(), c.tasks[t].samples.size());
    for (std::size_t s = 0; s < c.tasks[t].samples.size(); ++s) {
      EXPECT_EQ(r.tasks[t].samples[s].x, c.tasks[t].samples[s].x);
      EXPECT_EQ(r.tasks[t].samples[s].y, c.tasks[t].samples[s].y);
      EXPECT_EQ(r.tasks[t].samples[s].raw_y, c.tasks[t].samples[s].raw_y);
      EXPECT_EQ(r.tasks[t].samples[s].objective, c.tasks[t].samples[s].objective);
    }
  }
  fs::remove_all(dir);
}

TEST(BuildCorpus, InputWidthsMatchLoadBusCounts) {
  for (auto [name, width] : {std::pair{"case14.m", 22}, std::pair{"case30.m", 40}, std::pair{"case118.m", 198}}) {
    const Network net = load_case(fixture(name));
    EXPECT_EQ(2 * static_cast<int>(net.load_buses().size()), width) << name;
  }
}
