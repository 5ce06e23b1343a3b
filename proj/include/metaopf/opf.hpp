#pragma once

// AC optimal power flow on the polar formulation, solved by a primal-dual interior-point
// method in the style of MATPOWER's MIPS.
//
// Decision vector x = [Va (n); Vm (n); Pg (ng); Qg (ng)].
// Equalities: nodal P and Q balance at every bus, reference angle, and any variable whose
// bounds coincide. Inequalities: variable bounds on Vm (optionally calibrated inward by
// lambda), Pg and Qg.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "metaopf/error.hpp"
#include "metaopf/network.hpp"
#include "metaopf/powerflow.hpp"
#include "metaopf/ybus.hpp"

namespace metaopf {

struct OpfProblem {
  const Network* net = nullptr;
  const AdmittanceMatrix* ybus = nullptr;
  std::vector<double> p_demand;  // per bus, pu
  std::vector<double> q_demand;
  double calibration_lambda = 0.0;  // inward margin on voltage limits
};

inline OpfProblem make_opf_problem(const Network& net, const AdmittanceMatrix& ybus, double lambda) {
  return {&net, &ybus, net.p_demand(), net.q_demand(), lambda};
}

enum class OpfStatus { optimal, infeasible, max_iter };

inline const char* to_string(OpfStatus s) {
  switch (s) {
    case OpfStatus::optimal: return "optimal";
    case OpfStatus::infeasible: return "infeasible";
    case OpfStatus::max_iter: return "max_iter";
  }
  return "?";
}

struct OpfSolution {
  std::vector<double> p_gen;
  std::vector<double> q_gen;
  PfState state;
  double objective = 0.0;
  OpfStatus status = OpfStatus::infeasible;
  int iterations = 0;
  // Final convergence measures (scaled problem).
  double feas_cond = 0.0;
  double grad_cond = 0.0;
  double comp_cond = 0.0;
  Eigen::VectorXd lambda_p;  // nodal P-balance multipliers, $/pu
  Eigen::VectorXd lambda_q;
};

struct OpfOptions {
  int max_iter = 150;
  double feas_tol = 1e-9;
  double grad_tol = 1e-8;
  double comp_tol = 1e-9;
  double cost_scale = 1e-4;  // objective multiplier inside the solver
};

/// Objective, constraints and their first and second derivatives.
class AcOpfModel {
 public:
  explicit AcOpfModel(const OpfProblem& prob) : prob_(prob), net_(*prob.net), y_(prob.ybus->complex()) {
    if (prob.calibration_lambda < 0.0) throw InputError("calibration lambda must be non-negative");
    n_ = static_cast<Eigen::Index>(net_.n_bus());
    ng_ = static_cast<Eigen::Index>(net_.n_gen());
    if (prob.p_demand.size() != static_cast<std::size_t>(n_) || prob.q_demand.size() != static_cast<std::size_t>(n_))
      throw InputError("demand vectors must have one entry per bus");
    slack_ = net_.slack_bus();
    lb_ = Eigen::VectorXd::Constant(nx(), -std::numeric_limits<double>::infinity());
    ub_ = Eigen::VectorXd::Constant(nx(), std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < n_; ++i) {
      lb_[n_ + i] = net_.buses[i].v_min + prob.calibration_lambda;
      ub_[n_ + i] = net_.buses[i].v_max - prob.calibration_lambda;
      if (lb_[n_ + i] > ub_[n_ + i]) throw InputError("calibration lambda empties the voltage range");
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      lb_[pg(g)] = net_.generators[g].p_min;
      ub_[pg(g)] = net_.generators[g].p_max;
      lb_[qg(g)] = net_.generators[g].q_min;
      ub_[qg(g)] = net_.generators[g].q_max;
    }
    for (Eigen::Index k = 0; k < nx(); ++k) {
      if (std::isfinite(lb_[k]) && std::isfinite(ub_[k]) && lb_[k] == ub_[k]) {
        fixed_.push_back(k);
        continue;
      }
      if (std::isfinite(lb_[k])) ineq_.push_back({k, -1.0, lb_[k]});
      if (std::isfinite(ub_[k])) ineq_.push_back({k, 1.0, ub_[k]});
    }
  }

  struct Bound {
    Eigen::Index var;
    double sign;  // h = sign * (x - bound) <= 0
    double bound;
  };

  Eigen::Index n() const { return n_; }
  Eigen::Index ng() const { return ng_; }
  Eigen::Index nx() const { return 2 * n_ + 2 * ng_; }
  Eigen::Index neq() const { return 2 * n_ + 1 + static_cast<Eigen::Index>(fixed_.size()); }
  Eigen::Index va(Eigen::Index i) const { return i; }
  Eigen::Index vm(Eigen::Index i) const { return n_ + i; }
  Eigen::Index pg(Eigen::Index g) const { return 2 * n_ + g; }
  Eigen::Index qg(Eigen::Index g) const { return 2 * n_ + ng_ + g; }
  const std::vector<Bound>& bounds() const { return ineq_; }
  const Eigen::VectorXd& lower() const { return lb_; }
  const Eigen::VectorXd& upper() const { return ub_; }

  double cost(const Eigen::VectorXd& x) const {
    double f = 0.0;
    for (Eigen::Index g = 0; g < ng_; ++g) f += net_.generators[g].cost(x[pg(g)]);
    return f;
  }
  Eigen::VectorXd cost_gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(nx());
    for (Eigen::Index g = 0; g < ng_; ++g) d[pg(g)] = net_.generators[g].marginal_cost(x[pg(g)]);
    return d;
  }

  Eigen::VectorXcd voltage(const Eigen::VectorXd& x) const {
    Eigen::VectorXcd v(n_);
    for (Eigen::Index i = 0; i < n_; ++i) v[i] = std::polar(x[vm(i)], x[va(i)]);
    return v;
  }

  /// Equality residuals: [P balance (n); Q balance (n); reference angle; fixed variables].
  Eigen::VectorXd equalities(const Eigen::VectorXd& x) const {
    const Eigen::VectorXcd v = voltage(x);
    const Eigen::VectorXcd s = v.cwiseProduct((y_ * v).conjugate());
    Eigen::VectorXd g(neq());
    for (Eigen::Index i = 0; i < n_; ++i) {
      g[i] = s[i].real() + prob_.p_demand[i];
      g[n_ + i] = s[i].imag() + prob_.q_demand[i];
    }
    for (Eigen::Index k = 0; k < ng_; ++k) {
      const int b = net_.generators[k].bus;
      g[b] -= x[pg(k)];
      g[n_ + b] -= x[qg(k)];
    }
    g[2 * n_] = x[va(slack_)];
    for (std::size_t k = 0; k < fixed_.size(); ++k) g[2 * n_ + 1 + k] = x[fixed_[k]] - lb_[fixed_[k]];
    return g;
  }

  Eigen::MatrixXd equality_jacobian(const Eigen::VectorXd& x) const {
    const Eigen::VectorXcd v = voltage(x);
    const Eigen::VectorXcd ibus = y_ * v;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(neq(), nx());
    for (Eigen::Index j = 0; j < n_; ++j) {
      const cplx vnorm = v[j] / x[vm(j)];
      for (Eigen::Index i = 0; i < n_; ++i) {
        cplx dva = cplx(0.0, 1.0) * v[i] * std::conj(-y_(i, j) * v[j]);
        cplx dvm = v[i] * std::conj(y_(i, j) * vnorm);
        if (i == j) {
          dva += cplx(0.0, 1.0) * v[j] * std::conj(ibus[j]);
          dvm += std::conj(ibus[j]) * vnorm;
        }
        jac(i, va(j)) = dva.real();
        jac(i, vm(j)) = dvm.real();
        jac(n_ + i, va(j)) = dva.imag();
        jac(n_ + i, vm(j)) = dvm.imag();
      }
    }
    for (Eigen::Index k = 0; k < ng_; ++k) {
      const int b = net_.generators[k].bus;
      jac(b, pg(k)) = -1.0;
      jac(n_ + b, qg(k)) = -1.0;
    }
    jac(2 * n_, va(slack_)) = 1.0;
    for (std::size_t k = 0; k < fixed_.size(); ++k) jac(2 * n_ + 1 + k, fixed_[k]) = 1.0;
    return jac;
  }

  /// Hessian of lam' * g(x), where lam is ordered like equalities().
  Eigen::MatrixXd equality_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& lam) const {
    const Eigen::VectorXcd v = voltage(x);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nx(), nx());
    Eigen::MatrixXcd aa, av, va_, vv;
    Eigen::MatrixXd haa = Eigen::MatrixXd::Zero(n_, n_), hav = haa, hva = haa, hvv = haa;
    second_derivatives(v, lam.head(n_), aa, av, va_, vv);
    haa += aa.real();
    hav += av.real();
    hva += va_.real();
    hvv += vv.real();
    second_derivatives(v, lam.segment(n_, n_), aa, av, va_, vv);
    haa += aa.imag();
    hav += av.imag();
    hva += va_.imag();
    hvv += vv.imag();
    h.block(0, 0, n_, n_) = haa;
    h.block(0, n_, n_, n_) = hav;
    h.block(n_, 0, n_, n_) = hva;
    h.block(n_, n_, n_, n_) = hvv;
    return h;
  }

  int slack() const { return slack_; }
  const Network& net() const { return net_; }
  const OpfProblem& problem() const { return prob_; }

 private:
  // Second derivatives of the complex injections S(V) weighted by lam, polar coordinates.
  void second_derivatives(const Eigen::VectorXcd& v, const Eigen::VectorXd& lam, Eigen::MatrixXcd& gaa,
                          Eigen::MatrixXcd& gav, Eigen::MatrixXcd& gva, Eigen::MatrixXcd& gvv) const {
    const Eigen::Index n = n_;
    const Eigen::VectorXcd ibus = y_ * v;
    Eigen::MatrixXcd c(n, n), d(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        c(i, j) = lam[i] * v[i] * std::conj(y_(i, j) * v[j]);
        d(i, j) = std::conj(y_(j, i)) * v[j];
      }
    const Eigen::VectorXcd dlam = d * lam.cast<cplx>();
    Eigen::MatrixXcd e(n, n), f = c;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) e(i, j) = std::conj(v[i]) * d(i, j) * lam[j];
    for (Eigen::Index i = 0; i < n; ++i) {
      e(i, i) -= std::conj(v[i]) * dlam[i];
      f(i, i) -= lam[i] * v[i] * std::conj(ibus[i]);
    }
    gaa = e + f;
    gva.resize(n, n);
    gvv.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        gva(i, j) = cplx(0.0, 1.0) * (e(i, j) - f(i, j)) / std::abs(v[i]);
        gvv(i, j) = (c(i, j) + c(j, i)) / (std::abs(v[i]) * std::abs(v[j]));
      }
    gav = gva.transpose();
  }

  const OpfProblem& prob_;
  const Network& net_;
  Eigen::MatrixXcd y_;
  Eigen::Index n_ = 0;
  Eigen::Index ng_ = 0;
  int slack_ = 0;
  Eigen::VectorXd lb_, ub_;
  std::vector<Eigen::Index> fixed_;
  std::vector<Bound> ineq_;
};

inline OpfSolution solve_opf(const OpfProblem& prob, const OpfOptions& opt = {}) {
  if (prob.net == nullptr || prob.ybus == nullptr) throw InputError("OPF problem is missing its network");
  const AcOpfModel model(prob);
  const Network& net = *prob.net;
  const Eigen::Index nx = model.nx(), neq = model.neq();
  const auto& bounds = model.bounds();
  const Eigen::Index niq = static_cast<Eigen::Index>(bounds.size());
  const double scale = opt.cost_scale;

  // Start from the middle of every box; angles flat.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(nx);
  for (Eigen::Index k = model.n(); k < nx; ++k) {
    const double lo = model.lower()[k], hi = model.upper()[k];
    x[k] = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi) : (std::isfinite(lo) ? lo : (std::isfinite(hi) ? hi : 0.0));
  }
  for (Eigen::Index i = 0; i < model.n(); ++i)
    if (!(std::isfinite(model.lower()[model.vm(i)]) && std::isfinite(model.upper()[model.vm(i)]))) x[model.vm(i)] = 1.0;

  auto ineq_values = [&](const Eigen::VectorXd& xv) {
    Eigen::VectorXd h(niq);
    for (Eigen::Index j = 0; j < niq; ++j) h[j] = bounds[j].sign * (xv[bounds[j].var] - bounds[j].bound);
    return h;
  };

  Eigen::VectorXd h = ineq_values(x);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(niq);
  for (Eigen::Index j = 0; j < niq; ++j)
    if (h[j] < -1.0) z[j] = -h[j];
  double gamma = 1.0;
  Eigen::VectorXd mu = gamma * z.cwiseInverse();
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(neq);

  constexpr double xi = 0.99995;
  constexpr double sigma = 0.1;

  OpfSolution sol;
  sol.status = OpfStatus::max_iter;
  int it = 0;
  for (;; ++it) {
    const Eigen::VectorXd g = model.equalities(x);
    const Eigen::MatrixXd jg = model.equality_jacobian(x);
    h = ineq_values(x);
    Eigen::VectorXd lx = scale * model.cost_gradient(x) + jg.transpose() * lam;
    for (Eigen::Index j = 0; j < niq; ++j) lx[bounds[j].var] += bounds[j].sign * mu[j];

    const double xnorm = x.lpNorm<Eigen::Infinity>();
    const double znorm = niq ? z.lpNorm<Eigen::Infinity>() : 0.0;
    const double maxh = niq ? std::max(h.maxCoeff(), 0.0) : 0.0;
    sol.feas_cond = std::max(g.lpNorm<Eigen::Infinity>(), maxh) / (1.0 + std::max(xnorm, znorm));
    sol.grad_cond = lx.lpNorm<Eigen::Infinity>() /
                    (1.0 + std::max(lam.lpNorm<Eigen::Infinity>(), niq ? mu.lpNorm<Eigen::Infinity>() : 0.0));
    sol.comp_cond = niq ? z.dot(mu) / (1.0 + xnorm) : 0.0;
    if (!std::isfinite(sol.feas_cond) || !std::isfinite(sol.grad_cond) || xnorm > 1e10) {
      sol.status = OpfStatus::infeasible;
      break;
    }
    if (sol.feas_cond < opt.feas_tol && sol.grad_cond < opt.grad_tol && sol.comp_cond < opt.comp_tol) {
      sol.status = OpfStatus::optimal;
      break;
    }
    if (it >= opt.max_iter) {
      const double primal = std::max(g.lpNorm<Eigen::Infinity>(), maxh);
      sol.status = primal > 1e-4 ? OpfStatus::infeasible : OpfStatus::max_iter;
      break;
    }

    // Newton step on the perturbed KKT conditions, condensed to (dx, dlam).
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nx + neq, nx + neq);
    kkt.topLeftCorner(nx, nx) = model.equality_hessian(x, lam);
    for (Eigen::Index gi = 0; gi < model.ng(); ++gi)
      kkt(model.pg(gi), model.pg(gi)) += scale * 2.0 * net.generators[gi].cost_c2;
    Eigen::VectorXd rhs_n = lx;
    for (Eigen::Index j = 0; j < niq; ++j) {
      const Eigen::Index k = bounds[j].var;
      kkt(k, k) += mu[j] / z[j];
      rhs_n[k] += bounds[j].sign * (mu[j] * h[j] + gamma) / z[j];
    }
    kkt.topRightCorner(nx, neq) = jg.transpose();
    kkt.bottomLeftCorner(neq, nx) = jg;
    Eigen::VectorXd rhs(nx + neq);
    rhs << -rhs_n, -g;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    const Eigen::VectorXd step = lu.solve(rhs);
    if (!step.allFinite()) {
      sol.status = OpfStatus::infeasible;
      break;
    }
    const Eigen::VectorXd dx = step.head(nx);
    const Eigen::VectorXd dlam = step.tail(neq);
    Eigen::VectorXd dz(niq), dmu(niq);
    for (Eigen::Index j = 0; j < niq; ++j) {
      dz[j] = -h[j] - z[j] - bounds[j].sign * dx[bounds[j].var];
      dmu[j] = -mu[j] + (gamma - mu[j] * dz[j]) / z[j];
    }
    double alpha_p = 1.0, alpha_d = 1.0;
    for (Eigen::Index j = 0; j < niq; ++j) {
      if (dz[j] < 0.0) alpha_p = std::min(alpha_p, xi * (-z[j] / dz[j]));
      if (dmu[j] < 0.0) alpha_d = std::min(alpha_d, xi * (-mu[j] / dmu[j]));
    }
    x += alpha_p * dx;
    z += alpha_p * dz;
    lam += alpha_d * dlam;
    mu += alpha_d * dmu;
    if (niq) gamma = sigma * z.dot(mu) / static_cast<double>(niq);
  }
  sol.iterations = it;

  const Eigen::Index n = model.n(), ng = model.ng();
  sol.p_gen.resize(ng);
  sol.q_gen.resize(ng);
  for (Eigen::Index k = 0; k < ng; ++k) {
    sol.p_gen[k] = x[model.pg(k)];
    sol.q_gen[k] = x[model.qg(k)];
  }
  sol.objective = model.cost(x);
  sol.lambda_p = lam.head(n) / scale;
  sol.lambda_q = lam.segment(n, n) / scale;

  PfState& st = sol.state;
  st.v_ang = x.head(n);
  st.v_mag = x.segment(n, n);
  const Eigen::VectorXcd v = model.voltage(x);
  const Eigen::VectorXcd s = v.cwiseProduct((prob.ybus->complex() * v).conjugate());
  st.p_inj = s.real();
  st.q_inj = s.imag();
  st.branch_flows = branch_flows(net, v);
  const std::size_t sg = net.slack_generator();
  st.slack_p = sol.p_gen[sg];
  st.slack_q = 0.0;
  for (Eigen::Index k = 0; k < ng; ++k)
    if (net.generators[k].bus == net.slack_bus()) st.slack_q += sol.q_gen[k];
  st.gen_p = sol.p_gen;
  st.gen_q = sol.q_gen;
  st.iterations = it;
  st.max_mismatch = model.equalities(x).head(2 * n).lpNorm<Eigen::Infinity>();
  return sol;
}

// ---------------------------------------------------------------------------------------------
// Constraint audit

struct ConstraintRecord {
  std::string kind;  // p_gen, q_gen, v_mag, p_balance, q_balance
  int index = 0;     // generator or bus index
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double lower_slack = 0.0;  // value - lower; negative means violated
  double upper_slack = 0.0;  // upper - value
  double violation() const { return std::max({0.0, -lower_slack, -upper_slack}); }
};

struct AuditReport {
  std::vector<ConstraintRecord> records;
  double max_violation = 0.0;
  bool feasible = true;
};

inline constexpr double kFeasibilityTol = 1e-6;

/// Audits generator limits and voltage limits (shrunk by `v_margin`) of an operating point, and
/// the nodal balance of the voltages against the generator dispatch.
inline AuditReport audit_operating_point(const Network& net, const AdmittanceMatrix& ybus,
                                         const std::vector<double>& p_demand, const std::vector<double>& q_demand,
                                         const std::vector<double>& gen_p, const std::vector<double>& gen_q,
                                         const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ang, double v_margin,
                                         double tol = kFeasibilityTol) {
  AuditReport rep;
  auto add = [&](const char* kind, int idx, double value, double lo, double hi) {
    ConstraintRecord r{kind, idx, value, lo, hi, value - lo, hi - value};
    rep.max_violation = std::max(rep.max_violation, r.violation());
    rep.records.push_back(std::move(r));
  };
  for (std::size_t g = 0; g < net.n_gen(); ++g) {
    const auto& gen = net.generators[g];
    add("p_gen", static_cast<int>(g), gen_p[g], gen.p_min, gen.p_max);
    add("q_gen", static_cast<int>(g), gen_q[g], gen.q_min, gen.q_max);
  }
  for (const auto& b : net.buses) add("v_mag", b.id, v_mag[b.id], b.v_min + v_margin, b.v_max - v_margin);

  Eigen::VectorXcd v(v_mag.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std::polar(v_mag[i], v_ang[i]);
  const Eigen::VectorXcd s = v.cwiseProduct((ybus.complex() * v).conjugate());
  std::vector<double> pg_bus(net.n_bus(), 0.0), qg_bus(net.n_bus(), 0.0);
  for (std::size_t g = 0; g < net.n_gen(); ++g) {
    pg_bus[net.generators[g].bus] += gen_p[g];
    qg_bus[net.generators[g].bus] += gen_q[g];
  }
  for (const auto& b : net.buses) {
    add("p_balance", b.id, s[b.id].real() + p_demand[b.id] - pg_bus[b.id], 0.0, 0.0);
    add("q_balance", b.id, s[b.id].imag() + q_demand[b.id] - qg_bus[b.id], 0.0, 0.0);
  }
  rep.feasible = rep.max_violation <= tol;
  return rep;
}

/// Audits an OPF solution against the problem's (calibrated) limits.
inline AuditReport audit_solution(const OpfProblem& prob, const OpfSolution& sol) {
  return audit_operating_point(*prob.net, *prob.ybus, prob.p_demand, prob.q_demand, sol.p_gen, sol.q_gen,
                               sol.state.v_mag, sol.state.v_ang, prob.calibration_lambda);
}

inline nlohmann::json to_json(const AuditReport& rep) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : rep.records)
    recs.push_back({{"kind", r.kind},
                    {"index", r.index},
                    {"value", r.value},
                    {"lower", r.lower},
                    {"upper", r.upper},
                    {"lower_slack", r.lower_slack},
                    {"upper_slack", r.upper_slack}});
  return {{"feasible", rep.feasible}, {"max_violation", rep.max_violation}, {"records", std::move(recs)}};
}

inline nlohmann::json to_json(const PfState& st) {
  nlohmann::json flows = nlohmann::json::array();
  for (const auto& f : st.branch_flows)
    flows.push_back({f.s_from.real(), f.s_from.imag(), f.s_to.real(), f.s_to.imag()});
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"v_mag", vec(st.v_mag)},
          {"v_ang", vec(st.v_ang)},
          {"p_inj", vec(st.p_inj)},
          {"q_inj", vec(st.q_inj)},
          {"branch_flows", std::move(flows)},
          {"slack_p", st.slack_p},
          {"slack_q", st.slack_q},
          {"gen_p", st.gen_p},
          {"gen_q", st.gen_q},
          {"iterations", st.iterations},
          {"max_mismatch", st.max_mismatch}};
}

inline nlohmann::json to_json(const OpfSolution& sol) {
  return {{"status", to_string(sol.status)},
          {"objective", sol.objective},
          {"iterations", sol.iterations},
          {"p_gen", sol.p_gen},
          {"q_gen", sol.q_gen},
          {"state", to_json(sol.state)}};
}

}  // namespace metaopf
