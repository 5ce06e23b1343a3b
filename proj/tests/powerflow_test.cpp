#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "metaopf/case_parser.hpp"
#include "metaopf/opf.hpp"
#include "metaopf/powerflow.hpp"
#include "test_support.hpp"

using namespace metaopf;
using metaopf::testing::fixture;
using metaopf::testing::two_bus_case;

namespace {

/// Base-case schedule from the case file: Pg and Vg at every generator.
PfSpec base_case_spec(const Network& net, const AdmittanceMatrix& y) {
  std::vector<PvSetpoint> pv;
  const int slack = net.slack_bus();
  double slack_v = 1.0;
  for (const auto& g : net.generators) {
    if (g.bus == slack) {
      slack_v = g.v_setpoint;
      continue;
    }
    pv.push_back({g.bus, g.p_setpoint, g.v_setpoint});
  }
  return make_pf_spec(net, y, pv, slack_v, net.p_demand(), net.q_demand());
}

/// Gauss-Seidel fixed-point oracle on the complex nodal equations, independent of the Newton path.
Eigen::VectorXcd gauss_seidel(const PfSpec& spec, int sweeps) {
  const Eigen::MatrixXcd y = spec.ybus->complex();
  const Eigen::Index n = y.rows();
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = spec.kind[i] == BusKind::pq ? cplx(1.0, 0.0) : cplx(spec.v_set[i], 0.0);
  for (int it = 0; it < sweeps; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (spec.kind[i] == BusKind::slack) continue;
      cplx sum(0.0, 0.0);
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) sum += y(i, j) * v[j];
      double q = spec.q_gen[i] - spec.q_demand[i];
      if (spec.kind[i] == BusKind::pv) q = -std::imag(std::conj(v[i]) * (sum + y(i, i) * v[i]));
      const cplx s(spec.p_gen[i] - spec.p_demand[i], q);
      cplx vi = (std::conj(s / v[i]) - sum) / y(i, i);
      if (spec.kind[i] == BusKind::pv) vi = std::polar(spec.v_set[i], std::arg(vi));
      v[i] = vi;
    }
  }
  return v;
}

TEST(SolvePf, TwoBusNoLoadIsFlat) {
  const Network net = parse_case(two_bus_case(0.01, 0.1, 0, 0));
  const auto y = build_ybus(net);
  const PfState st = solve_pf(make_pf_spec(net, y, {}, 1.0, net.p_demand(), net.q_demand()));
  EXPECT_LE(st.iterations, 1);
  EXPECT_NEAR(st.v_mag[1], 1.0, 1e-12);
  EXPECT_NEAR(st.v_ang[1], 0.0, 1e-12);
  EXPECT_NEAR(st.slack_p, 0.0, 1e-12);
  EXPECT_NEAR(st.slack_q, 0.0, 1e-12);
}

TEST(SolvePf, TwoBusLosslessClosedFormAngle) {
  const Network net = parse_case(two_bus_case(0.0, 0.1, 50, 0));
  const auto y = build_ybus(net);
  // hold |V| = 1 at the load end with a zero-output voltage-controlled injection
  const PfState st = solve_pf(make_pf_spec(net, y, {{1, 0.0, 1.0}}, 1.0, net.p_demand(), net.q_demand()));
  EXPECT_NEAR(st.v_ang[0] - st.v_ang[1], std::asin(0.5 * 0.1), 1e-9);
  EXPECT_NEAR(st.v_ang[0] - st.v_ang[1], 0.050021, 1e-6);
  EXPECT_NEAR(st.slack_p, 0.5, 1e-9);
}

TEST(SolvePf, Case14ConvergesAndMatchesGaussSeidel) {
  const Network net = load_case(fixture("case14.m"));
  const auto y = build_ybus(net);
  const PfSpec spec = base_case_spec(net, y);
  const PfState st = solve_pf(spec);
  EXPECT_LE(st.max_mismatch, 1e-8);
  EXPECT_LE(st.iterations, 10);

  const Eigen::VectorXcd v_gs = gauss_seidel(spec, 3000);
  for (Eigen::Index i = 0; i < v_gs.size(); ++i) {
    EXPECT_NEAR(st.v_mag[i], std::abs(v_gs[i]), 1e-6) << "bus " << i;
    EXPECT_NEAR(st.v_ang[i], std::arg(v_gs[i]), 1e-6) << "bus " << i;
  }
  // Published MATPOWER runpf result for case14 slack output: 232.39 MW.
  EXPECT_NEAR(st.slack_p * net.base_mva, 232.39, 0.01);
}

TEST(SolvePf, PowerBalanceIncludesLosses) {
  for (const char* f : {"case14.m", "case30.m", "case118.m"}) {
    const Network net = load_case(fixture(f));
    const auto y = build_ybus(net);
    const PfSpec spec = base_case_spec(net, y);
    const PfState st = solve_pf(spec);
    double gen = st.slack_p, demand = 0.0;
    for (std::size_t i = 0; i < net.n_bus(); ++i) {
      gen += spec.p_gen[i];
      demand += spec.p_demand[i];
    }
    EXPECT_NEAR(gen - demand - total_losses(net, st), 0.0, 1e-8) << f;
  }
}

TEST(SolvePf, JacobianMatchesCentralDifferences) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Network base = load_case(fixture("case14.m"));
  for (int trial = 0; trial < 6; ++trial) {
    Network net = base;
    for (auto& br : net.branches) {
      br.r *= 0.7 + 0.6 * u(rng);
      br.x *= 0.7 + 0.6 * u(rng);
    }
    const auto y = build_ybus(net);
    const PfSpec spec = base_case_spec(net, y);
    PowerFlowEquations eqs(spec);
    Eigen::VectorXd vm(net.n_bus()), va(net.n_bus());
    for (std::size_t i = 0; i < net.n_bus(); ++i) {
      vm[i] = 0.9 + 0.2 * u(rng);
      va[i] = -0.3 + 0.6 * u(rng);
    }
    const Eigen::VectorXd x0 = eqs.pack(vm, va);
    const Eigen::MatrixXd jac = eqs.jacobian(vm, va);
    Eigen::MatrixXd fd(jac.rows(), jac.cols());
    const double h = 1e-6;
    for (Eigen::Index c = 0; c < x0.size(); ++c) {
      Eigen::VectorXd xp = x0, xm = x0;
      xp[c] += h;
      xm[c] -= h;
      Eigen::VectorXd vmp = vm, vap = va, vmm = vm, vam = va;
      eqs.unpack(xp, vmp, vap);
      eqs.unpack(xm, vmm, vam);
      fd.col(c) = (eqs.mismatch(vmp, vap) - eqs.mismatch(vmm, vam)) / (2 * h);
    }
    EXPECT_LE((jac - fd).norm() / jac.norm(), 1e-6) << "trial " << trial;
  }
}

TEST(SolvePf, DeterministicBitForBit) {
  const Network net = load_case(fixture("case30.m"));
  const auto y = build_ybus(net);
  const PfSpec spec = base_case_spec(net, y);
  const PfState a = solve_pf(spec);
  const PfState b = solve_pf(spec);
  EXPECT_EQ(a.v_mag, b.v_mag);
  EXPECT_EQ(a.v_ang, b.v_ang);
  EXPECT_EQ(a.slack_p, b.slack_p);
}

TEST(SolvePf, ImpossibleLoadDiverges) {
  const Network net = parse_case(two_bus_case(0.0, 0.1, 2000, 0));  // 20 pu over x = 0.1
  const auto y = build_ybus(net);
  PfSpec spec = make_pf_spec(net, y, {}, 1.0, net.p_demand(), net.q_demand());
  try {
    solve_pf(spec);
    FAIL() << "expected divergence";
  } catch (const PowerFlowError& e) {
    EXPECT_GT(e.residual(), 1e-8);
  }
}

TEST(RecoverFullState, ZeroDemandIsFlat) {
  Network net = load_case(fixture("case14.m"));
  for (auto& b : net.buses) {
    b.p_demand = b.q_demand = 0.0;
    b.gs = b.bs = 0.0;
  }
  for (auto& br : net.branches) {
    br.b_charge = 0.0;
    br.tap = 1.0;
  }
  const auto y = build_ybus(net);
  const std::vector<double> p(net.n_gen() - 1, 0.0), v(net.n_gen(), 1.0);
  const PfState st = recover_full_state(net, y, p, v, net.p_demand(), net.q_demand());
  EXPECT_LE((st.v_mag.array() - 1.0).abs().maxCoeff(), 1e-10);
  EXPECT_LE(st.v_ang.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(st.slack_p, 0.0, 1e-10);
}

TEST(RecoverFullState, QLimitSwitchesPvToPq) {
  const Network net = load_case(fixture("case14.m"));
  const auto y = build_ybus(net);
  std::vector<double> p, v;
  for (std::size_t g : net.non_slack_generators()) p.push_back(net.generators[g].p_setpoint);
  for (const auto& g : net.generators) v.push_back(g.v_setpoint);
  v[4] = 1.2;  // drive the bus-8 condenser well past its 24 MVAr ceiling

  RecoveryOptions off;
  off.enforce_q_limits = false;
  const PfState raw = recover_full_state(net, y, p, v, net.p_demand(), net.q_demand(), off);
  EXPECT_GT(raw.gen_q[4], net.generators[4].q_max);

  const PfState st = recover_full_state(net, y, p, v, net.p_demand(), net.q_demand());
  ASSERT_FALSE(st.switched_to_pq.empty());
  EXPECT_NE(std::find(st.switched_to_pq.begin(), st.switched_to_pq.end(), 7), st.switched_to_pq.end());
  for (std::size_t g = 1; g < net.n_gen(); ++g) {
    EXPECT_LE(st.gen_q[g], net.generators[g].q_max + 1e-7);
    EXPECT_GE(st.gen_q[g], net.generators[g].q_min - 1e-7);
  }
  EXPECT_NEAR(st.gen_q[4], net.generators[4].q_max, 1e-8);
}

TEST(RecoverFullState, RejectsWrongDimensions) {
  const Network net = load_case(fixture("case14.m"));
  const auto y = build_ybus(net);
  EXPECT_THROW(recover_full_state(net, y, std::vector<double>(5, 0.0), std::vector<double>(5, 1.0),
                                  net.p_demand(), net.q_demand()),
               InputError);
}

TEST(RecoverFullState, ReproducesOpfOperatingPoint) {
  const Network net = load_case(fixture("case14.m"));
  const auto y = build_ybus(net);
  const OpfSolution sol = solve_opf(make_opf_problem(net, y, 0.005));
  ASSERT_EQ(sol.status, OpfStatus::optimal);
  std::vector<double> p, v;
  for (std::size_t g : net.non_slack_generators()) p.push_back(sol.p_gen[g]);
  for (const auto& g : net.generators) v.push_back(sol.state.v_mag[g.bus]);
  RecoveryOptions off;
  off.enforce_q_limits = false;
  const PfState st = recover_full_state(net, y, p, v, net.p_demand(), net.q_demand(), off);
  EXPECT_LE((st.v_mag - sol.state.v_mag).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((st.v_ang - sol.state.v_ang).cwiseAbs().maxCoeff(), 1e-6);
  for (std::size_t g = 0; g < net.n_gen(); ++g) {
    EXPECT_NEAR(st.gen_p[g], sol.p_gen[g], 1e-6);
    EXPECT_NEAR(st.gen_q[g], sol.q_gen[g], 1e-6);
  }
}

}  // namespace
