#pragma once

// Offline meta-training of a shared initialization, online adaptation to a new topology, and
// the comparison baselines (random init, joint pretraining, per-task model bank).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaopf/datagen.hpp"
#include "metaopf/error.hpp"
#include "metaopf/metrics.hpp"
#include "metaopf/mlp.hpp"
#include "metaopf/optim.hpp"
#include "metaopf/parallel.hpp"
#include "metaopf/rng.hpp"

namespace metaopf {

/// Training data of one task, samples as columns.
struct TaskData {
  int topology_id = 0;
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;
  Eigen::Index size() const { return x.cols(); }
};

inline TaskData task_data(const TaskDataset& t, const std::vector<int>& idx) {
  if (idx.empty()) throw InputError("task " + std::to_string(t.topology.topology_id) + " has no samples selected");
  TaskData d;
  d.topology_id = t.topology.topology_id;
  d.x.resize(t.samples.front().x.size(), static_cast<Eigen::Index>(idx.size()));
  d.y.resize(t.samples.front().y.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    d.x.col(static_cast<Eigen::Index>(i)) = t.samples.at(idx[i]).x;
    d.y.col(static_cast<Eigen::Index>(i)) = t.samples.at(idx[i]).y;
  }
  return d;
}

inline TaskData task_data(const TaskDataset& t) { return task_data(t, t.train); }

inline TaskData columns(const TaskData& d, const std::vector<int>& idx) {
  TaskData out{d.topology_id, Eigen::MatrixXd(d.x.rows(), static_cast<Eigen::Index>(idx.size())),
               Eigen::MatrixXd(d.y.rows(), static_cast<Eigen::Index>(idx.size()))};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.x.col(static_cast<Eigen::Index>(i)) = d.x.col(idx[i]);
    out.y.col(static_cast<Eigen::Index>(i)) = d.y.col(idx[i]);
  }
  return out;
}

/// Shared starting point for meta-training and joint pretraining under one seed.
inline Params initial_params(const MlpArch& arch, std::uint64_t seed) {
  return init_params(arch, stream_key({seed, static_cast<std::uint64_t>(Stream::init)}));
}

enum class MetaOrder { first_order, second_order_fd };

struct MetaConfig {
  double alpha = 0.001;  // outer Adam step
  double beta = 0.1;     // inner gradient step
  double gamma = 0.1;    // online SGD step
  int inner_steps = 1;
  int task_batch_size = 10;
  int meta_epochs = 1000;
  int inner_sample_count = 50;
  double weight_decay = 0.001;
  MetaOrder order = MetaOrder::first_order;
  double fd_step = 1e-6;  // relative step of the Hessian-vector finite difference

  void validate() const {
    if (!(alpha > 0.0) || beta < 0.0 || !(gamma > 0.0)) throw InputError("meta step sizes must be positive");
    if (inner_steps < 1 || task_batch_size < 1 || meta_epochs < 0 || inner_sample_count < 1)
      throw InputError("invalid meta-training counts");
  }
};

/// Support and query columns of one task for one outer step. Large tasks give disjoint random
/// subsets of inner_sample_count each; small tasks adapt on a random subset and are scored on
/// every sample in stored order.
inline std::pair<std::vector<int>, std::vector<int>> support_query(Eigen::Index k, int s, Rng& rng) {
  const auto perm = rng.permutation(static_cast<int>(k));
  if (k >= 2 * static_cast<Eigen::Index>(s))
    return {std::vector<int>(perm.begin(), perm.begin() + s), std::vector<int>(perm.begin() + s, perm.begin() + 2 * s)};
  std::vector<int> query(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) query[i] = i;
  return {std::vector<int>(perm.begin(), perm.begin() + std::min<Eigen::Index>(s, k)), query};
}

struct OuterGradient {
  Params grad;             // mean over the task batch
  double meta_loss = 0.0;  // sum over the batch of post-adaptation query losses
};

/// Hessian-vector product of the task loss by central differences of the gradient. The step is
/// halved until both probes keep the base point's ReLU pattern, since a difference across a kink
/// measures the jump in the gradient rather than its derivative.
inline Params hvp_fd(const Params& w, const MlpArch& arch, const TaskData& d, const Params& v, double rel_step) {
  const double vn = v.norm();
  if (vn == 0.0) return Params::Zero(w.size());
  double eps = rel_step * (1.0 + w.norm()) / vn;
  const auto base = activation_pattern(w, arch, d.x);
  for (int halvings = 0; halvings < 40; ++halvings, eps *= 0.5)
    if (activation_pattern(w + eps * v, arch, d.x) == base && activation_pattern(w - eps * v, arch, d.x) == base) break;
  const Params gp = loss_and_grad(w + eps * v, arch, d.x, d.y).grad;
  const Params gm = loss_and_grad(w - eps * v, arch, d.x, d.y).grad;
  return (gp - gm) / (2.0 * eps);
}

/// Outer gradient for given support/query splits. First order uses the query gradient at the
/// adapted weights; second order chains it back through every inner step.
inline OuterGradient outer_gradient(const Params& w, const MlpArch& arch, const std::vector<TaskData>& support,
                                    const std::vector<TaskData>& query, const MetaConfig& cfg) {
  const std::size_t n = support.size();
  std::vector<Params> grads(n);
  std::vector<double> losses(n);
  parallel_for(n, [&](std::size_t m) {
    std::vector<Params> path;
    Params wm = w;
    for (int s = 0; s < cfg.inner_steps; ++s) {
      path.push_back(wm);
      wm -= cfg.beta * loss_and_grad(wm, arch, support[m].x, support[m].y).grad;
    }
    LossGrad q = loss_and_grad(wm, arch, query[m].x, query[m].y);
    if (cfg.order == MetaOrder::second_order_fd)
      for (auto it = path.rbegin(); it != path.rend(); ++it)
        q.grad -= cfg.beta * hvp_fd(*it, arch, support[m], q.grad, cfg.fd_step);
    grads[m] = std::move(q.grad);
    losses[m] = q.loss;
  });
  OuterGradient out{Params::Zero(w.size()), 0.0};
  for (std::size_t m = 0; m < n; ++m) {
    out.grad += grads[m];
    out.meta_loss += losses[m];
  }
  out.grad /= static_cast<double>(n);
  return out;
}

struct MetaModel {
  MlpArch arch;
  Params params;
  std::vector<double> meta_loss;  // per outer step
  int epochs_run = 0;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

inline MetaModel meta_train(const std::vector<TaskData>& tasks, const MlpArch& arch, const MetaConfig& cfg,
                            std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (tasks.empty()) throw InputError("meta-training needs at least one offline task");
  MetaModel model{arch, initial_params(arch, seed), {}, 0};
  Optimizer opt({OptimKind::adam, cfg.alpha, cfg.weight_decay});
  const int m_total = static_cast<int>(tasks.size());
  for (int epoch = 0; epoch < cfg.meta_epochs; ++epoch) {
    Rng rng(seed, Stream::meta, static_cast<std::uint64_t>(epoch));
    std::vector<int> batch;
    if (cfg.task_batch_size >= m_total) {
      for (int m = 0; m < m_total; ++m) batch.push_back(m);
    } else {
      const auto perm = rng.permutation(m_total);
      batch.assign(perm.begin(), perm.begin() + cfg.task_batch_size);
      std::sort(batch.begin(), batch.end());
    }
    std::vector<TaskData> support, query;
    for (int m : batch) {
      auto [s, q] = support_query(tasks[m].size(), cfg.inner_sample_count, rng);
      support.push_back(columns(tasks[m], s));
      query.push_back(columns(tasks[m], q));
    }
    const OuterGradient og = outer_gradient(model.params, arch, support, query, cfg);
    if (!std::isfinite(og.meta_loss)) throw NumericError("meta-loss diverged at epoch " + std::to_string(epoch));
    opt.step(model.params, og.grad);
    model.meta_loss.push_back(og.meta_loss);
    model.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(epoch, og.meta_loss);
  }
  return model;
}

struct TrainConfig {
  OptimConfig optim;
  int epochs = 1000;
};

struct TrainResult {
  Params params;
  std::vector<double> loss;  // before each step
};

/// Full-batch training from `w` on one data set.
inline TrainResult train(Params w, const MlpArch& arch, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                         const TrainConfig& cfg) {
  Optimizer opt(cfg.optim);
  TrainResult r;
  for (int e = 0; e < cfg.epochs; ++e) {
    const LossGrad lg = loss_and_grad(w, arch, x, y);
    r.loss.push_back(lg.loss);
    opt.step(w, lg.grad);
  }
  r.params = std::move(w);
  return r;
}

inline TaskData pool(const std::vector<TaskData>& tasks) {
  if (tasks.empty()) throw InputError("no tasks to pool");
  Eigen::Index n = 0;
  for (const auto& t : tasks) n += t.size();
  TaskData d{-1, Eigen::MatrixXd(tasks[0].x.rows(), n), Eigen::MatrixXd(tasks[0].y.rows(), n)};
  Eigen::Index c = 0;
  for (const auto& t : tasks) {
    d.x.middleCols(c, t.size()) = t.x;
    d.y.middleCols(c, t.size()) = t.y;
    c += t.size();
  }
  return d;
}

/// One model trained on the union of all offline samples.
inline TrainResult pretrain_joint(const std::vector<TaskData>& tasks, const MlpArch& arch, const TrainConfig& cfg,
                                  std::uint64_t seed) {
  const TaskData all = pool(tasks);
  return train(initial_params(arch, seed), arch, all.x, all.y, cfg);
}

struct BankModel {
  int topology_id = 0;
  Params params;
  double final_loss = 0.0;
};

struct PretrainBank {
  std::vector<BankModel> models;
};

/// One independently initialized model per offline task.
inline PretrainBank pretrain_bank(const std::vector<TaskData>& tasks, const MlpArch& arch, const TrainConfig& cfg,
                                  std::uint64_t seed) {
  if (tasks.empty()) throw InputError("bank needs at least one task");
  PretrainBank bank;
  bank.models.resize(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t m) {
    const auto& t = tasks[m];
    const Params w0 = init_params(
        arch, stream_key({seed, static_cast<std::uint64_t>(Stream::bank), static_cast<std::uint64_t>(t.topology_id)}));
    try {
      TrainResult r = train(w0, arch, t.x, t.y, cfg);
      bank.models[m] = {t.topology_id, std::move(r.params), 0.0};
      bank.models[m].final_loss = loss(bank.models[m].params, arch, t.x, t.y);
    } catch (const NumericError& e) {
      throw NumericError("bank incomplete: task " + std::to_string(t.topology_id) + ": " + e.what());
    }
  });
  return bank;
}

/// Position of the smallest loss; ties go to the lowest id.
inline std::size_t argmin_loss(const std::vector<double>& losses, const std::vector<int>& ids) {
  if (losses.empty() || losses.size() != ids.size()) throw InputError("argmin over an empty or ragged list");
  std::size_t best = 0;
  for (std::size_t m = 1; m < losses.size(); ++m)
    if (losses[m] < losses[best] || (losses[m] == losses[best] && ids[m] < ids[best])) best = m;
  return best;
}

/// Index of the bank model with the lowest loss on the new task.
inline std::size_t select_closest(const PretrainBank& bank, const MlpArch& arch, const TaskData& task) {
  if (bank.models.empty()) throw InputError("empty model bank");
  std::vector<double> losses;
  std::vector<int> ids;
  for (const auto& m : bank.models) {
    losses.push_back(loss(m.params, arch, task.x, task.y));
    ids.push_back(m.topology_id);
  }
  return argmin_loss(losses, ids);
}

struct TraceRow {
  std::string method;
  int topology_id = 0;
  int epoch = 0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  double eta3 = 0.0;
  double feasibility_rate = 0.0;
  double wall_clock_ms = 0.0;
};

struct AdaptConfig {
  double gamma = 0.1;
  double weight_decay = 0.001;
  int epochs = 100;
  std::vector<int> record_epochs;  // empty: every epoch
  bool timing = true;              // false writes zero wall-clock times
};

struct AdaptResult {
  Params params;
  std::vector<TraceRow> trace;
};

/// Online adaptation: full-batch SGD on the new task's training samples, scored on its held-out
/// samples at epoch 0 and after the recorded epochs.
inline AdaptResult adapt(const Params& w_init, const MlpArch& arch, const TaskData& train_set, const Evaluator& eval,
                         const AdaptConfig& cfg, const std::set<int>& offline_ids = {},
                         const std::string& method = "mtl") {
  if (offline_ids.count(train_set.topology_id))
    throw InputError("topology " + std::to_string(train_set.topology_id) + " belongs to the offline pool");
  if (cfg.epochs < 0) throw InputError("epochs must be non-negative");
  const auto wanted = [&](int e) {
    return cfg.record_epochs.empty() || e == 0 ||
           std::find(cfg.record_epochs.begin(), cfg.record_epochs.end(), e) != cfg.record_epochs.end();
  };
  AdaptResult out{w_init, {}};
  Optimizer opt({OptimKind::sgd, cfg.gamma, cfg.weight_decay});
  double train_ms = 0.0;
  auto record = [&](int e) {
    const MetricsReport m = eval.evaluate(out.params, arch);
    out.trace.push_back({method, train_set.topology_id, e, m.eta1, m.eta2, m.eta3, m.feasibility_rate,
                         cfg.timing ? train_ms : 0.0});
  };
  record(0);
  for (int e = 1; e <= cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const LossGrad lg = loss_and_grad(out.params, arch, train_set.x, train_set.y);
    opt.step(out.params, lg.grad);
    train_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (wanted(e)) record(e);
  }
  return out;
}

/// Same loop from a random initialization.
inline AdaptResult scratch_baseline(const MlpArch& arch, std::uint64_t seed, const TaskData& train_set,
                                    const Evaluator& eval, const AdaptConfig& cfg,
                                    const std::set<int>& offline_ids = {}) {
  const Params w0 = init_params(arch, stream_key({seed, static_cast<std::uint64_t>(Stream::scratch),
                                                  static_cast<std::uint64_t>(train_set.topology_id)}));
  return adapt(w0, arch, train_set, eval, cfg, offline_ids, "scratch");
}

}  // namespace metaopf
