#pragma once

// Polar Newton-Raphson AC power flow and recovery of the full operating point from
// predicted generator setpoints.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaopf/error.hpp"
#include "metaopf/network.hpp"
#include "metaopf/ybus.hpp"

namespace metaopf {

class PowerFlowError : public NumericError {
 public:
  enum class Kind { diverged, singular_jacobian };

  PowerFlowError(Kind kind, double residual, int iterations)
      : NumericError(std::string(kind == Kind::diverged ? "power flow diverged" : "singular power-flow Jacobian") +
                     " after " + std::to_string(iterations) + " iterations (max mismatch " +
                     std::to_string(residual) + " pu)"),
        kind_(kind),
        residual_(residual),
        iterations_(iterations) {}

  Kind kind() const noexcept { return kind_; }
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  Kind kind_;
  double residual_;
  int iterations_;
};

struct BranchFlow {
  cplx s_from;
  cplx s_to;
};

struct PfState {
  Eigen::VectorXd v_mag;
  Eigen::VectorXd v_ang;
  Eigen::VectorXd p_inj;  // net injection, generation minus demand
  Eigen::VectorXd q_inj;
  std::vector<BranchFlow> branch_flows;
  double slack_p = 0.0;
  double slack_q = 0.0;
  // Per-generator dispatch; filled by recover_full_state.
  std::vector<double> gen_p;
  std::vector<double> gen_q;
  int iterations = 0;
  double max_mismatch = 0.0;
  std::vector<int> switched_to_pq;  // generator buses whose Q limit forced PQ operation
};

/// Scheduled generator at a PV bus: real power output and voltage magnitude.
struct PvSetpoint {
  int bus = 0;
  double p_gen = 0.0;
  double v_mag = 1.0;
};

/// One power-flow problem. Per-bus arrays are indexed by internal bus id.
struct PfSpec {
  const Network* net = nullptr;
  const AdmittanceMatrix* ybus = nullptr;
  std::vector<BusKind> kind;
  std::vector<double> p_gen;  // scheduled generation; ignored at the slack bus
  std::vector<double> q_gen;  // scheduled generation; used at PQ buses only
  std::vector<double> v_set;  // voltage magnitude at slack and PV buses
  std::vector<double> p_demand;
  std::vector<double> q_demand;
  double tol = 1e-8;
  int max_iter = 30;
  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> warm_start;  // (v_mag, v_ang)
};

/// Builds a spec from the network's bus roles and the given PV schedule; buses without a
/// setpoint are PQ.
inline PfSpec make_pf_spec(const Network& net, const AdmittanceMatrix& ybus,
                           const std::vector<PvSetpoint>& pv_setpoints, double slack_v_mag,
                           std::vector<double> p_demand, std::vector<double> q_demand) {
  const std::size_t n = net.n_bus();
  if (p_demand.size() != n || q_demand.size() != n) throw InputError("demand vectors must have one entry per bus");
  PfSpec s;
  s.net = &net;
  s.ybus = &ybus;
  s.kind.assign(n, BusKind::pq);
  s.p_gen.assign(n, 0.0);
  s.q_gen.assign(n, 0.0);
  s.v_set.assign(n, 1.0);
  const int slack = net.slack_bus();
  s.kind[slack] = BusKind::slack;
  s.v_set[slack] = slack_v_mag;
  for (const auto& pv : pv_setpoints) {
    if (pv.bus < 0 || static_cast<std::size_t>(pv.bus) >= n) throw InputError("PV setpoint references unknown bus");
    if (pv.bus == slack) throw InputError("PV setpoint given for the slack bus");
    s.kind[pv.bus] = BusKind::pv;
    s.p_gen[pv.bus] += pv.p_gen;
    s.v_set[pv.bus] = pv.v_mag;
  }
  s.p_demand = std::move(p_demand);
  s.q_demand = std::move(q_demand);
  return s;
}

/// Mismatch function and analytic Jacobian of the power-flow equations over the reduced
/// unknowns [angles at non-slack buses; magnitudes at PQ buses].
class PowerFlowEquations {
 public:
  explicit PowerFlowEquations(const PfSpec& spec) : spec_(spec), y_(spec.ybus->complex()) {
    const std::size_t n = spec.kind.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (spec.kind[i] == BusKind::slack) {
        slack_ = static_cast<int>(i);
        continue;
      }
      pvpq_.push_back(static_cast<int>(i));
      if (spec.kind[i] == BusKind::pq) pq_.push_back(static_cast<int>(i));
    }
    if (slack_ < 0) throw InputError("power-flow spec has no slack bus");
  }

  Eigen::Index dim() const { return static_cast<Eigen::Index>(pvpq_.size() + pq_.size()); }
  const std::vector<int>& pvpq() const { return pvpq_; }
  const std::vector<int>& pq() const { return pq_; }

  /// Full voltage state with the unknowns substituted in.
  void unpack(const Eigen::VectorXd& x, Eigen::VectorXd& vm, Eigen::VectorXd& va) const {
    for (std::size_t k = 0; k < pvpq_.size(); ++k) va[pvpq_[k]] = x[k];
    for (std::size_t k = 0; k < pq_.size(); ++k) vm[pq_[k]] = x[pvpq_.size() + k];
  }
  Eigen::VectorXd pack(const Eigen::VectorXd& vm, const Eigen::VectorXd& va) const {
    Eigen::VectorXd x(dim());
    for (std::size_t k = 0; k < pvpq_.size(); ++k) x[k] = va[pvpq_[k]];
    for (std::size_t k = 0; k < pq_.size(); ++k) x[pvpq_.size() + k] = vm[pq_[k]];
    return x;
  }

  Eigen::VectorXcd voltage(const Eigen::VectorXd& vm, const Eigen::VectorXd& va) const {
    Eigen::VectorXcd v(vm.size());
    for (Eigen::Index i = 0; i < vm.size(); ++i) v[i] = std::polar(vm[i], va[i]);
    return v;
  }

  /// Calculated minus scheduled injection.
  Eigen::VectorXd mismatch(const Eigen::VectorXd& vm, const Eigen::VectorXd& va) const {
    const Eigen::VectorXcd v = voltage(vm, va);
    const Eigen::VectorXcd s = v.cwiseProduct((y_ * v).conjugate());
    Eigen::VectorXd f(dim());
    for (std::size_t k = 0; k < pvpq_.size(); ++k) {
      const int i = pvpq_[k];
      f[k] = s[i].real() - (spec_.p_gen[i] - spec_.p_demand[i]);
    }
    for (std::size_t k = 0; k < pq_.size(); ++k) {
      const int i = pq_[k];
      f[pvpq_.size() + k] = s[i].imag() - (spec_.q_gen[i] - spec_.q_demand[i]);
    }
    return f;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& vm, const Eigen::VectorXd& va) const {
    const Eigen::VectorXcd v = voltage(vm, va);
    const Eigen::VectorXcd ibus = y_ * v;
    const Eigen::Index n = v.size();
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)); dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    Eigen::MatrixXcd dva(n, n), dvm(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const cplx vnorm = v[j] / vm[j];
      for (Eigen::Index i = 0; i < n; ++i) {
        dva(i, j) = cplx(0.0, 1.0) * v[i] * std::conj(-y_(i, j) * v[j]);
        dvm(i, j) = v[i] * std::conj(y_(i, j) * vnorm);
      }
      dva(j, j) += cplx(0.0, 1.0) * v[j] * std::conj(ibus[j]);
      dvm(j, j) += std::conj(ibus[j]) * vnorm;
    }
    const Eigen::Index a = static_cast<Eigen::Index>(pvpq_.size());
    const Eigen::Index q = static_cast<Eigen::Index>(pq_.size());
    Eigen::MatrixXd jac(a + q, a + q);
    for (Eigen::Index r = 0; r < a; ++r) {
      for (Eigen::Index c = 0; c < a; ++c) jac(r, c) = dva(pvpq_[r], pvpq_[c]).real();
      for (Eigen::Index c = 0; c < q; ++c) jac(r, a + c) = dvm(pvpq_[r], pq_[c]).real();
    }
    for (Eigen::Index r = 0; r < q; ++r) {
      for (Eigen::Index c = 0; c < a; ++c) jac(a + r, c) = dva(pq_[r], pvpq_[c]).imag();
      for (Eigen::Index c = 0; c < q; ++c) jac(a + r, a + c) = dvm(pq_[r], pq_[c]).imag();
    }
    return jac;
  }

  const Eigen::MatrixXcd& y() const { return y_; }
  int slack() const { return slack_; }

 private:
  const PfSpec& spec_;
  Eigen::MatrixXcd y_;
  std::vector<int> pvpq_;
  std::vector<int> pq_;
  int slack_ = -1;
};

/// Complex branch flows at both ends; zero for out-of-service branches.
inline std::vector<BranchFlow> branch_flows(const Network& net, const Eigen::VectorXcd& v) {
  std::vector<BranchFlow> out(net.branches.size());
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const auto& br = net.branches[k];
    if (!br.in_service()) continue;
    const auto a = branch_admittance(br);
    const cplx vf = v[br.from_bus], vt = v[br.to_bus];
    out[k].s_from = vf * std::conj(a.yff * vf + a.yft * vt);
    out[k].s_to = vt * std::conj(a.ytf * vf + a.ytt * vt);
  }
  return out;
}

inline PfState solve_pf(const PfSpec& spec) {
  if (!(spec.tol > 0.0)) throw InputError("power-flow tolerance must be positive");
  if (spec.net == nullptr || spec.ybus == nullptr) throw InputError("power-flow spec is missing its network");
  const Eigen::Index n = static_cast<Eigen::Index>(spec.kind.size());
  PowerFlowEquations eqs(spec);

  Eigen::VectorXd vm = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd va = Eigen::VectorXd::Zero(n);
  if (spec.warm_start) {
    vm = spec.warm_start->first;
    va = spec.warm_start->second;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (spec.kind[i] != BusKind::pq) vm[i] = spec.v_set[i];
  va[eqs.slack()] = 0.0;

  Eigen::VectorXd x = eqs.pack(vm, va);
  Eigen::VectorXd f = eqs.mismatch(vm, va);
  double resid = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
  int it = 0;
  while (resid > spec.tol) {
    if (it >= spec.max_iter || !std::isfinite(resid))
      throw PowerFlowError(PowerFlowError::Kind::diverged, resid, it);
    const Eigen::MatrixXd jac = eqs.jacobian(vm, va);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    if (!(lu.rcond() > 1e-14)) throw PowerFlowError(PowerFlowError::Kind::singular_jacobian, resid, it);
    x -= lu.solve(f);
    eqs.unpack(x, vm, va);
    f = eqs.mismatch(vm, va);
    resid = f.lpNorm<Eigen::Infinity>();
    ++it;
  }

  PfState st;
  st.v_mag = vm;
  st.v_ang = va;
  const Eigen::VectorXcd v = eqs.voltage(vm, va);
  const Eigen::VectorXcd s = v.cwiseProduct((eqs.y() * v).conjugate());
  st.p_inj = s.real();
  st.q_inj = s.imag();
  const int sl = eqs.slack();
  st.slack_p = st.p_inj[sl] + spec.p_demand[sl] - spec.p_gen[sl];
  st.slack_q = st.q_inj[sl] + spec.q_demand[sl];
  st.branch_flows = branch_flows(*spec.net, v);
  st.iterations = it;
  st.max_mismatch = resid;
  return st;
}

/// Active losses in branches plus shunt conductance consumption.
inline double total_losses(const Network& net, const PfState& st) {
  double loss = 0.0;
  for (const auto& bf : st.branch_flows) loss += (bf.s_from + bf.s_to).real();
  for (const auto& b : net.buses) loss += b.gs * st.v_mag[b.id] * st.v_mag[b.id];
  return loss;
}

struct RecoveryOptions {
  bool enforce_q_limits = true;
  double q_limit_tol = 1e-7;
  double tol = 1e-8;
  int max_iter = 30;
};

/// Completes an operating point from non-slack generator outputs and generator voltage
/// magnitudes (both in generator file order, slack generator excluded from the former).
inline PfState recover_full_state(const Network& net, const AdmittanceMatrix& ybus,
                                  const std::vector<double>& p_gen_nonslack, const std::vector<double>& v_gen,
                                  const std::vector<double>& p_demand, const std::vector<double>& q_demand,
                                  const RecoveryOptions& opt = {}) {
  const std::size_t ng = net.n_gen();
  if (p_gen_nonslack.size() + 1 != ng) throw InputError("p_gen_nonslack must have |G|-1 entries");
  if (v_gen.size() != ng) throw InputError("v_gen must have |G| entries");
  const std::size_t sg = net.slack_generator();
  const int slack = net.slack_bus();
  const auto nonslack = net.non_slack_generators();

  std::vector<double> gen_p(ng, 0.0);
  for (std::size_t k = 0; k < nonslack.size(); ++k) gen_p[nonslack[k]] = p_gen_nonslack[k];

  std::vector<PvSetpoint> pv;
  double extra_slack_p = 0.0;
  for (std::size_t g : nonslack) {
    const auto& gen = net.generators[g];
    if (gen.bus == slack) {
      extra_slack_p += gen_p[g];
      continue;
    }
    pv.push_back({gen.bus, gen_p[g], v_gen[g]});
  }
  PfSpec spec = make_pf_spec(net, ybus, pv, v_gen[sg], p_demand, q_demand);
  spec.p_gen[slack] = extra_slack_p;
  spec.tol = opt.tol;
  spec.max_iter = opt.max_iter;

  // Per-bus reactive capability.
  const std::size_t n = net.n_bus();
  std::vector<double> qmin(n, 0.0), qmax(n, 0.0);
  for (const auto& gen : net.generators) {
    qmin[gen.bus] += gen.q_min;
    qmax[gen.bus] += gen.q_max;
  }

  std::vector<int> switched;
  PfState st = solve_pf(spec);
  if (opt.enforce_q_limits) {
    for (std::size_t round = 0; round < n; ++round) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (spec.kind[i] != BusKind::pv) continue;
        const double qg = st.q_inj[i] + q_demand[i];
        if (qg > qmax[i] + opt.q_limit_tol || qg < qmin[i] - opt.q_limit_tol) {
          spec.kind[i] = BusKind::pq;
          spec.q_gen[i] = qg > qmax[i] ? qmax[i] : qmin[i];
          switched.push_back(static_cast<int>(i));
          changed = true;
        }
      }
      if (!changed) break;
      spec.warm_start = std::make_pair(st.v_mag, st.v_ang);
      st = solve_pf(spec);
    }
  }
  std::sort(switched.begin(), switched.end());
  st.switched_to_pq = switched;

  gen_p[sg] = st.slack_p;
  // Reactive output per bus is shared in proportion to each generator's Q range.
  std::vector<double> gen_q(ng, 0.0);
  std::vector<int> count(n, 0);
  for (const auto& gen : net.generators) ++count[gen.bus];
  for (std::size_t g = 0; g < ng; ++g) {
    const auto& gen = net.generators[g];
    const int b = gen.bus;
    const double qbus = st.q_inj[b] + q_demand[b];
    const double range = qmax[b] - qmin[b];
    gen_q[g] = range > 0.0 ? gen.q_min + (qbus - qmin[b]) * (gen.q_max - gen.q_min) / range : qbus / count[b];
  }
  st.gen_p = std::move(gen_p);
  st.gen_q = std::move(gen_q);
  return st;
}

}  // namespace metaopf
