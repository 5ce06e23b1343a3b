#include <gtest/gtest.h>

#include <algorithm>

#include "metaopf/case_parser.hpp"
#include "metaopf/datagen.hpp"
#include "metaopf/meta.hpp"
#include "metaopf/metrics.hpp"
#include "test_support.hpp"

using namespace metaopf;
using metaopf::testing::fixture;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

struct Case14Task {
  Network base;
  TaskDataset task;
  std::vector<int> load_buses;
};

const Case14Task& case14_task() {
  static const Case14Task t = [] {
    CorpusConfig cfg;
    cfg.case_name = "case14";
    cfg.m_total = 2;
    cfg.m_offline = 1;
    cfg.k = 10;
    cfg.online_test_count = 12;
    const Network base = load_case(fixture("case14.m"));
    Corpus c = build_corpus(base, cfg);
    return Case14Task{base, c.tasks[1], c.load_buses};
  }();
  return t;
}

}  // namespace

TEST(Eta2, Examples) {
  EXPECT_EQ(eta2({vec({1.0, 2.0})}, {vec({1.0, 2.0})}).value, 1.0);
  EXPECT_NEAR(eta2({vec({0.9})}, {vec({1.0})}).value, 0.9, 1e-15);
  EXPECT_NEAR(eta2({vec({1.1}), vec({0.8})}, {vec({1.0}), vec({1.0})}).value, 0.85, 1e-15);
}

TEST(Eta2, ZeroTruthDimsAreMaskedAndCounted) {
  const Eta2 e = eta2({vec({0.9, 0.3}), vec({1.0, 0.0})}, {vec({1.0, 0.0}), vec({1.0, 0.0})});
  EXPECT_NEAR(e.value, 0.95, 1e-15);
  EXPECT_EQ(e.excluded_dims, 2);
  try {
    eta2({vec({0.1, 0.2})}, {vec({0.0, 0.0})});
    FAIL();
  } catch (const InputError& err) {
    EXPECT_NE(std::string(err.what()).find("sample 0"), std::string::npos);
  }
  EXPECT_THROW(eta2({vec({1.0})}, {vec({1.0, 2.0})}), InputError);
}

TEST(Eta2, StrictlyDecreasesAsOneErrorGrows) {
  std::vector<Eigen::VectorXd> truth{vec({1.0, 2.0}), vec({3.0, 4.0})};
  auto pred = truth;
  double prev = eta2(pred, truth).value;
  for (int s = 1; s <= 5; ++s) {
    pred[1][0] = 3.0 + 0.1 * s;
    const double v = eta2(pred, truth).value;
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Eta3, Examples) {
  EXPECT_EQ(eta3({100.0, 50.0}, {100.0, 50.0}), 1.0);
  EXPECT_NEAR(eta3({101.0}, {100.0}), 0.99, 1e-15);
  EXPECT_THROW(eta3({1.0}, {0.0}), InputError);
  EXPECT_THROW(eta3({1.0}, {-3.0}), InputError);
}

TEST(Feasibility, RateAndOrderInvariance) {
  std::vector<bool> f{true, false, true, true};
  EXPECT_EQ(feasibility_rate(f), 0.75);
  std::sort(f.begin(), f.end());
  EXPECT_EQ(feasibility_rate(f), 0.75);
  EXPECT_EQ(feasibility_rate({true, true}), 1.0);
}

TEST(Evaluator, OneVoltageViolationOfFourGivesThreeQuarters) {
  // Four identical operating points, one pushed over its voltage limit.
  const auto& t = case14_task();
  const Network net = apply_topology(t.base, t.task.topology);
  const auto y = build_ybus(net);
  std::vector<bool> flags;
  for (int s = 0; s < 4; ++s) {
    const auto& smp = t.task.samples[0];
    const LoadSample load = demand_from_input(net, t.load_buses, smp.x);
    Setpoints sp = unscale_outputs(net, smp.y);
    RecoveryOptions ro;
    ro.enforce_q_limits = false;
    PfState st = recover_full_state(net, y, sp.p_gen_nonslack, sp.v_gen, load.p, load.q, ro);
    if (s == 2) st.v_mag[13] = net.buses[13].v_max + 0.01;
    flags.push_back(state_feasible(net, y, load, st));
  }
  // The tampered state also breaks the power balance at bus 13; either way it is infeasible.
  EXPECT_EQ(feasibility_rate(flags), 0.75);
}

TEST(Evaluator, ExactLabelsScorePerfectly) {
  const auto& t = case14_task();
  std::vector<OpfSample> test;
  for (int j : t.task.test) test.push_back(t.task.samples[j]);
  const Evaluator ev(apply_topology(t.base, t.task.topology), t.load_buses, test);
  // A "model" that reproduces every label: a one-layer net cannot, so score the labels through
  // the metric functions with the same recovery the evaluator uses.
  const Network& net = ev.network();
  const auto y = build_ybus(net);
  std::vector<Eigen::VectorXd> pred, truth;
  std::vector<double> pc, tc;
  std::vector<bool> flags;
  for (const auto& s : test) {
    const Setpoints sp = unscale_outputs(net, s.y);
    pred.push_back(stack(sp));
    truth.push_back(s.raw_y);
    const LoadSample load = demand_from_input(net, t.load_buses, s.x);
    const PfState st = recover_full_state(net, y, sp.p_gen_nonslack, sp.v_gen, load.p, load.q);
    double cost = 0.0;
    for (std::size_t g = 0; g < net.n_gen(); ++g) cost += net.generators[g].cost(st.gen_p[g]);
    pc.push_back(cost);
    tc.push_back(s.objective);
    flags.push_back(state_feasible(net, y, load, st));
  }
  EXPECT_NEAR(eta2(pred, truth).value, 1.0, 1e-12);
  EXPECT_NEAR(eta3(pc, tc), 1.0, 1e-6);
  EXPECT_EQ(feasibility_rate(flags), 1.0);
}

TEST(Evaluator, Eta1EqualsTrainingLoss) {
  const auto& t = case14_task();
  std::vector<OpfSample> test;
  for (int j : t.task.test) test.push_back(t.task.samples[j]);
  const Evaluator ev(apply_topology(t.base, t.task.topology), t.load_buses, test);
  const MlpArch a{22, {16}, 9};
  const Params w = initial_params(a, 2);
  const MetricsReport r = ev.evaluate(w, a);
  EXPECT_NEAR(r.eta1, loss_and_grad(w, a, ev.inputs(), ev.targets()).loss, 1e-15);
  EXPECT_EQ(r.n_samples, 12);
  EXPECT_LE(r.eta2, 1.0);
  EXPECT_LE(r.eta3, 1.0);
  EXPECT_GE(r.feasibility_rate, 0.0);
  EXPECT_LE(r.feasibility_rate, 1.0);
}

TEST(Evaluator, FeasibilityIgnoresSampleOrder) {
  const auto& t = case14_task();
  std::vector<OpfSample> test;
  for (int j : t.task.test) test.push_back(t.task.samples[j]);
  const Network net = apply_topology(t.base, t.task.topology);
  const MlpArch a{22, {16}, 9};
  const Params w = initial_params(a, 3);
  const double f1 = Evaluator(net, t.load_buses, test).evaluate(w, a).feasibility_rate;
  std::reverse(test.begin(), test.end());
  EXPECT_EQ(Evaluator(net, t.load_buses, test).evaluate(w, a).feasibility_rate, f1);
}
