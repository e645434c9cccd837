#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/envs.hpp"
#include "gcr/manifold.hpp"
#include "gcr/mdp.hpp"
#include "gcr/order.hpp"
#include "gcr/symmetry.hpp"

namespace gcr {

struct GeometricSchedule {
  double start = 1.0;
  double end = 1.0;
  long horizon = 1;
};

struct LinearSchedule {
  double start = 1.0;
  double end = 1.0;
  long horizon = 1;
};

// Soft-route hyperparameters (Algorithm-1 style training step).
struct SoftConfig {
  double lambda_sym = 0.1;
  double lambda_dag = 0.1;
  double lambda_ord = 2.0;
  double gamma_grp = 0.1;
  double gamma_perm = 0.01;
  double gamma_div = 0.01;
  GeometricSchedule mu_schedule{1.0, 1000.0, 0};  // horizon 0: set to total_steps
  double ord_start_frac = 0.1;                    // lambda_ord anneals up from this fraction
  double delta = 0.05;
  double tau = 1.0;
  int knn_k = 5;
  double percentile_p = 70.0;
  double min_score = 0.7;  // absolute confidence floor for order-source samples
  int t_iso = 3;
  double lr_q = 0.1;
  double lr_bank = 0.01;
  double lr_iso = -1.0;  // <= 0: exact line search inside the isotonic solve
  double lambda_rank = 0.0;
  LinearSchedule epsilon_schedule{1.0, 0.05, 0};  // horizon 0: set to total_steps/2
  int target_sync = 100;
  int batch = 64;
  int buffer_cap = 10000;
  int bank_k = 4;
  int sinkhorn_iters = 80;
  double sinkhorn_temp = 1.0;
  double sigma_loc = 1.0;
  double tau_loc = 1.0;

  void validate() const {
    require(t_iso >= 1 && t_iso <= 5, "SoftConfig: t_iso must lie in [1,5]");
    require(lambda_sym >= 0 && lambda_dag >= 0 && lambda_ord >= 0, "SoftConfig: negative weight");
    require(batch >= 2 && buffer_cap >= batch, "SoftConfig: batch/buffer sizes");
    require(lr_q > 0 && lr_q <= 1.0, "SoftConfig: lr_q in (0,1]");
  }
};

// Hard-route hyperparameters (0-loss geometric enforcement).
struct HardConfig {
  double eta = 0.2;
  double eta_mu = 0.3;
  double lambda = 1.0;
  double gate_threshold = 1e-10;
  int group_period_r = 10;
  double eps_damp = 1e-6;
  double xi_active = 0.05;

  void validate() const {
    require(eta > 0 && eta_mu > 0 && lambda > 0, "HardConfig: step sizes must be positive");
    require(gate_threshold >= 0 && eps_damp >= 0 && xi_active >= 0, "HardConfig: negative knob");
    require(group_period_r >= 1, "HardConfig: group period");
  }
};

enum class TrainMode { soft, hard, baseline, sym_only, logic_only, no_relabel };

inline TrainMode parse_mode(const std::string& s) {
  if (s == "soft") return TrainMode::soft;
  if (s == "hard") return TrainMode::hard;
  if (s == "baseline") return TrainMode::baseline;
  if (s == "sym_only") return TrainMode::sym_only;
  if (s == "logic_only") return TrainMode::logic_only;
  if (s == "no_relabel") return TrainMode::no_relabel;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

inline std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::soft: return "soft";
    case TrainMode::hard: return "hard";
    case TrainMode::baseline: return "baseline";
    case TrainMode::sym_only: return "sym_only";
    case TrainMode::logic_only: return "logic_only";
    case TrainMode::no_relabel: return "no_relabel";
  }
  return "?";
}

// Effective per-step weights: geometric interpolation for mu and lambda_ord,
// linear for epsilon, constants otherwise.
struct EffectiveWeights {
  double mu = 1.0;
  double lambda_ord = 0.0;
  double epsilon = 1.0;
  double lambda_sym = 0.0;
  double lambda_dag = 0.0;
};

namespace detail {

inline double geom_interp(double start, double end, double frac) {
  if (start <= 0.0 || end <= 0.0) return start + (end - start) * frac;
  return start * std::pow(end / start, frac);
}

}  // namespace detail

inline EffectiveWeights anneal(const SoftConfig& cfg, long step) {
  require(step >= 0, "anneal: negative step");
  EffectiveWeights w;
  const long mh = std::max<long>(1, cfg.mu_schedule.horizon);
  const double mf = std::min(1.0, static_cast<double>(step) / static_cast<double>(mh));
  w.mu = detail::geom_interp(cfg.mu_schedule.start, cfg.mu_schedule.end, mf);
  w.lambda_ord = detail::geom_interp(cfg.ord_start_frac * cfg.lambda_ord, cfg.lambda_ord, mf);
  const long eh = std::max<long>(1, cfg.epsilon_schedule.horizon);
  const double ef = std::min(1.0, static_cast<double>(step) / static_cast<double>(eh));
  w.epsilon = cfg.epsilon_schedule.start + (cfg.epsilon_schedule.end - cfg.epsilon_schedule.start) * ef;
  w.lambda_sym = cfg.lambda_sym;
  w.lambda_dag = cfg.lambda_dag;
  return w;
}

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int cap) : cap_(cap) { require(cap >= 1, "ReplayBuffer: bad capacity"); }

  void push(const Transition& t) {
    if (static_cast<int>(data_.size()) < cap_) {
      data_.push_back(t);
    } else {
      data_[next_] = t;
      next_ = (next_ + 1) % cap_;
    }
  }

  int size() const { return static_cast<int>(data_.size()); }

  TransitionBatch sample(int n, Rng& rng) const {
    require(size() > 0, "ReplayBuffer: empty");
    TransitionBatch b;
    std::uniform_int_distribution<int> pick(0, size() - 1);
    b.entries.reserve(n);
    for (int i = 0; i < n; ++i) b.entries.push_back(data_[pick(rng)]);
    return b;
  }

 private:
  std::vector<Transition> data_;
  int cap_ = 0;
  std::size_t next_ = 0;
};

// Per-step scalars logged into the run record.
struct StepDiagnostics {
  double loss_td = 0.0;
  double loss_sym = 0.0;
  double loss_dag = 0.0;
  double loss_ord = 0.0;
  double grad_sym_norm = 0.0;
  double grad_ord_norm = 0.0;
  double viol_mean = 0.0;          // mean hinge of current values on the batch DAG
  double eq_residual = 0.0;        // equivariance residual (hard route / sym branch)
  double eq_residual_after = 0.0;  // hard route: same equality rows after the step
  double phi = 0.0;                // 1/2 ||c||^2 after the hard step
};

struct LearnerState {
  QModel q_a, q_b, q_target;
  TransformBank bank;
  Mat coord_features;  // per-state embedding for order-branch neighborhoods
  Rng rng;
  long step = 0;
  std::vector<OracleSymmetry> oracle_syms;  // hard route equality source
  bool pin_identity_relabel = false;
  StepDiagnostics last;

  QModel mean_model() const {
    QModel m = q_a;
    m.head = 0.5 * (q_a.head + q_b.head);
    return m;
  }
};

inline LearnerState make_learner(const Env& env, const SoftConfig& cfg, std::uint64_t seed,
                                 bool pin_identity) {
  LearnerState st;
  st.q_a = QModel::make_linear_one_hot(env.n_states(), env.n_actions());
  st.q_b = st.q_a;
  st.q_target = st.q_a;
  st.bank = TransformBank::init(cfg.bank_k, env.n_states(), env.n_actions(), mix_seed(seed, 11));
  st.bank.sinkhorn_iters = cfg.sinkhorn_iters;
  st.bank.sinkhorn_temp = cfg.sinkhorn_temp;
  st.coord_features = env.coordinate_features();
  st.rng.seed(mix_seed(seed, 1));
  st.pin_identity_relabel = pin_identity;
  if (pin_identity) {
    for (int k = 0; k < st.bank.K; ++k) {
      st.bank.Pi[k] = Mat::Identity(env.n_actions(), env.n_actions());
      st.bank.perm_logits[k] = 8.0 * Mat::Identity(env.n_actions(), env.n_actions());
    }
  }
  return st;
}

namespace detail {

struct OrderBranch {
  PrefDag dag{0};
  Vec v;                    // current values of the selected model on the batch
  std::vector<int> greedy;  // cached argmax per sample
  PenaltyIsotonicResult iso;
  bool built = false;
};

inline OrderBranch build_order_branch(const QModel& sel, const QModel& q_target,
                                      const Mat& coord_features, const TransitionBatch& batch,
                                      const Vec& nudges, const SoftConfig& cfg, double mu) {
  OrderBranch ob;
  const int b = batch.size();
  Mat features(b, coord_features.cols());
  std::vector<Vec> next_rows(b);
  for (int i = 0; i < b; ++i) {
    features.row(i) = coord_features.row(batch.entries[i].s);
    next_rows[i] = q_target.values(batch.entries[i].s2);
  }
  const Vec scores = preference_scores(nudges, next_rows, cfg.tau);
  const std::vector<PrefEdge> cands = knn_candidates(features, scores, nudges, cfg.knn_k,
                                                     cfg.percentile_p, cfg.tau, cfg.min_score);
  ob.dag = greedy_dagify(b, cands);
  ob.v = Vec(b);
  ob.greedy.resize(b);
  for (int i = 0; i < b; ++i) {
    ob.greedy[i] = sel.argmax(batch.entries[i].s);
    ob.v(i) = sel.value(batch.entries[i].s, ob.greedy[i]);
  }
  ob.iso = penalty_isotonic(ob.v, ob.dag, cfg.delta, mu, cfg.t_iso, cfg.lr_iso, cfg.lambda_rank);
  ob.built = true;
  return ob;
}

}  // namespace detail

// One soft training step: TD double-Q update plus gradient steps on the
// weighted symmetry and order regularizers, all evaluated at the pre-update
// parameters. With every weight at zero this is exactly a plain double-Q
// update (the regularizer branches are skipped entirely).
inline void soft_train_step(LearnerState& st, const TransitionBatch& batch, const Env& env,
                            const SoftConfig& cfg, const EffectiveWeights& w) {
  const bool update_first = (st.step % 2) == 0;
  QModel& sel = update_first ? st.q_a : st.q_b;
  st.last = StepDiagnostics{};

  const auto [targets, nudges] = td_targets(batch, st.q_target, env.gamma());
  {
    double td = 0.0;
    for (int i = 0; i < batch.size(); ++i) {
      const double d = sel.value(batch.entries[i].s, batch.entries[i].a) - targets(i);
      td += d * d;
    }
    st.last.loss_td = td / batch.size();
  }

  // order branch (from pre-update values)
  detail::OrderBranch ob;
  if (w.lambda_ord > 0.0 || w.lambda_dag > 0.0) {
    ob = detail::build_order_branch(sel, st.q_target, st.coord_features, batch, nudges, cfg, w.mu);
    st.last.loss_dag = dag_loss(ob.dag);
    st.last.loss_ord = ob.iso.loss;
    st.last.viol_mean = violations(ob.v, ob.dag, cfg.delta).mean_hinge;
  }

  // symmetry branch (from pre-update parameters)
  SymGrads sym;
  bool have_sym = false;
  if (w.lambda_sym > 0.0) {
    SymWeights sw;
    sw.gamma_grp = cfg.gamma_grp;
    sw.gamma_perm = cfg.gamma_perm;
    sw.gamma_div = cfg.gamma_div;
    sw.sigma_loc = cfg.sigma_loc;
    sw.tau_loc = cfg.tau_loc;
    std::vector<int> states(batch.size());
    for (int i = 0; i < batch.size(); ++i) states[i] = batch.entries[i].s;
    sym = sym_loss_total(sel, st.bank, states, sw);
    st.last.loss_sym = sym.value;
    st.last.eq_residual = sym.value;
    have_sym = true;
  }

  // TD update, then the regularizer gradients
  q_update_double(batch, st.q_a, st.q_b, env.gamma(), cfg.lr_q, update_first);

  if (ob.built && w.lambda_ord > 0.0) {
    // the returned order gradient is the batch mean (2/B)(v - vhat); the
    // tabular TD update is per-sample full-magnitude, so the pull on each
    // value slot is applied at its per-sample scale (v_i - vhat_i)
    double gn = 0.0;
    for (int i = 0; i < batch.size(); ++i) {
      const double g =
          w.lambda_ord * 0.5 * static_cast<double>(batch.size()) * ob.iso.grad_wrt_v(i);
      sel.entry(batch.entries[i].s, ob.greedy[i]) -= cfg.lr_q * g;
      gn += g * g;
    }
    st.last.grad_ord_norm = std::sqrt(gn);
  }
  if (have_sym) {
    sel.head -= cfg.lr_q * w.lambda_sym * sym.grad_head;
    double gn = sym.grad_head.squaredNorm();
    for (int k = 0; k < st.bank.K; ++k) {
      st.bank.W[k] -= cfg.lr_bank * w.lambda_sym * sym.grad_W[k];
      gn += sym.grad_W[k].squaredNorm();
      if (!st.pin_identity_relabel) {
        st.bank.perm_logits[k] -= cfg.lr_bank * w.lambda_sym * sym.grad_Pi[k];
        gn += sym.grad_Pi[k].squaredNorm();
      }
    }
    st.last.grad_sym_norm = w.lambda_sym * std::sqrt(gn);
    if (!st.pin_identity_relabel) {
      st.bank.refresh_pi();
    }
  }

  ++st.step;
  if (st.step % cfg.target_sync == 0) st.q_target = st.mean_model();
}

// One hard training step: a value-layer tangent+normal manifold update on the
// batch DAG constraints plus materialized symmetry equalities, written back
// into the greedy entries (stop-gradient through the solver). Every
// group_period_r steps the bank goes through projection-closure-alignment.
inline void hard_train_step(LearnerState& st, const TransitionBatch& batch, const Env& env,
                            const SoftConfig& cfg, const HardConfig& hard) {
  QModel& q = st.q_a;
  st.last = StepDiagnostics{};
  const int b = batch.size();
  const auto [targets, nudges] = td_targets(batch, st.q_target, env.gamma());

  detail::OrderBranch ob =
      detail::build_order_branch(q, st.q_target, st.coord_features, batch, nudges, cfg,
                                 cfg.mu_schedule.start);
  st.last.loss_dag = dag_loss(ob.dag);
  st.last.viol_mean = violations(ob.v, ob.dag, cfg.delta).mean_hinge;

  ConstraintSystem cs;
  cs.n = b;
  cs.delta = cfg.delta;
  for (const PrefEdge& e : ob.dag.edges) cs.ineq_edges.emplace_back(e.u, e.v);
  // materialized equivariance equalities: sample i maps to sample j's state
  std::map<int, std::vector<int>> by_state;
  for (int i = 0; i < b; ++i) by_state[batch.entries[i].s].push_back(i);
  std::map<std::pair<int, int>, bool> seen;
  for (const OracleSymmetry& g : st.oracle_syms) {
    for (int i = 0; i < b; ++i) {
      const int mapped = g.state_map[batch.entries[i].s];
      const auto it = by_state.find(mapped);
      if (it == by_state.end()) continue;
      const int j = it->second.front();
      if (j == i) continue;
      const auto key = std::minmax(i, j);
      if (seen.emplace(std::make_pair(key.first, key.second), true).second)
        cs.eq_pairs.emplace_back(key.first, key.second);
    }
  }
  cs.mu = (-cs.margins(ob.v)).cwiseMax(0.0);

  const ConstraintSystem act = active_set(cs, ob.v, hard.xi_active);
  const SparseJacobians js = SparseJacobians::build(act);
  const Vec td_grad = ob.v - targets;
  st.last.loss_td = td_grad.squaredNorm() / b;
  ManifoldUpdate up = manifold_update(act, js, ob.v, td_grad, hard.eta, hard.eta_mu, hard.lambda,
                                      hard.gate_threshold, hard.eps_damp);
  st.last.phi = up.diag.phi_after;
  {
    Vec eq_res(static_cast<int>(act.eq_pairs.size()));
    for (int e = 0; e < eq_res.size(); ++e)
      eq_res(e) = ob.v(act.eq_pairs[e].first) - ob.v(act.eq_pairs[e].second);
    st.last.eq_residual = eq_res.size() > 0 ? eq_res.norm() : 0.0;
  }
  Vec v_new = up.v_plus;
  if (up.diag.phi_after > 1.0 + up.diag.phi_before) {
    ConstraintSystem cor = act;
    cor.mu = up.mu_plus;
    const CorrectionResult fixed = fallback_correct(cor, js, v_new, 1e-6, 200, hard.eps_damp);
    v_new = fixed.v;
  }
  {
    double sq = 0.0;
    for (const auto& [p, r] : act.eq_pairs) {
      const double d = v_new(p) - v_new(r);
      sq += d * d;
    }
    st.last.eq_residual_after = std::sqrt(sq);
  }
  for (int i = 0; i < b; ++i)
    q.entry(batch.entries[i].s, ob.greedy[i]) += v_new(i) - ob.v(i);

  ++st.step;
  if (st.step % hard.group_period_r == 0) {
    std::vector<int> states(b);
    for (int i = 0; i < b; ++i) states[i] = batch.entries[i].s;
    st.bank = closure_alignment_step(st.bank, q, states);
  }
  if (st.step % cfg.target_sync == 0) st.q_target = q;
}

// Evaluation logs and per-step diagnostic traces of one run.
struct RunRecord {
  std::string env;
  std::string mode;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  long total_steps = 0;
  std::vector<long> eval_steps;
  std::vector<double> eval_returns;
  // per-checkpoint means of the per-step traces since the previous checkpoint
  std::vector<double> diag_viol, diag_eq, diag_phi;
  // full per-step traces (not serialized)
  std::vector<double> trace_viol, trace_eq, trace_phi;
};

struct RunOptions {
  long total_steps = 20000;
  long eval_every = 0;  // 0: total_steps / 100
  int eval_episodes = 20;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline int greedy_mean_action(const LearnerState& st, int s, bool hard) {
  if (hard) return st.q_a.argmax(s);
  const Vec v = 0.5 * (st.q_a.values(s) + st.q_b.values(s));
  int best = 0;
  for (int a = 1; a < static_cast<int>(v.size()); ++a)
    if (v(a) > v(best)) best = a;
  return best;
}

// Greedy evaluation with common random numbers: episode e reuses the same
// seed at every checkpoint so across-checkpoint return variation reflects
// policy changes rather than env noise.
inline double evaluate(const LearnerState& st, Env& env, std::uint64_t run_seed, int episodes,
                       bool hard) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    int s = env.reset(mix_seed(run_seed, 0xeea1'0000ull + static_cast<std::uint64_t>(e)));
    double ep = 0.0;
    for (;;) {
      const StepResult r = env.step(s, greedy_mean_action(st, s, hard));
      ep += r.reward;
      s = r.next_state;
      if (r.done) break;
    }
    total += ep;
  }
  return total / episodes;
}

}  // namespace detail

// One deterministic training run. Modes reuse the soft step with weights
// zeroed per ablation; hard uses the manifold route with oracle symmetries
// when the env provides them.
inline RunRecord train_run(const std::string& env_name, TrainMode mode, const SoftConfig& soft_in,
                           const HardConfig& hard, const EnvParams& envp, std::uint64_t seed,
                           const RunOptions& opt) {
  SoftConfig cfg = soft_in;
  if (cfg.mu_schedule.horizon == 0) cfg.mu_schedule.horizon = opt.total_steps;
  if (cfg.epsilon_schedule.horizon == 0) cfg.epsilon_schedule.horizon = opt.total_steps / 2;
  switch (mode) {
    case TrainMode::baseline: cfg.lambda_sym = cfg.lambda_dag = cfg.lambda_ord = 0.0; break;
    case TrainMode::sym_only: cfg.lambda_dag = cfg.lambda_ord = 0.0; break;
    case TrainMode::logic_only: cfg.lambda_sym = 0.0; break;
    default: break;
  }
  cfg.validate();
  hard.validate();

  std::unique_ptr<Env> env = make_env(env_name, envp);
  std::unique_ptr<Env> eval_env = make_env(env_name, envp);
  LearnerState st = make_learner(*env, cfg, seed, mode == TrainMode::no_relabel);
  if (mode == TrainMode::hard) {
    for (const OracleSymmetry& g : env->oracle_symmetries())
      if (g.name != "identity") st.oracle_syms.push_back(g);
  }
  ReplayBuffer replay(cfg.buffer_cap);

  RunRecord rec;
  rec.env = env->name();
  rec.mode = mode_name(mode);
  rec.seed = seed;
  rec.config_hash = opt.config_hash;
  rec.total_steps = opt.total_steps;
  const long eval_every = opt.eval_every > 0 ? opt.eval_every : std::max<long>(1, opt.total_steps / 100);

  int s = env->reset(st.rng());
  double viol_acc = 0.0, eq_acc = 0.0, phi_acc = 0.0;
  long acc_n = 0;
  for (long t = 0; t < opt.total_steps; ++t) {
    const EffectiveWeights w = anneal(cfg, t);
    int a;
    if (std::uniform_real_distribution<double>(0.0, 1.0)(st.rng) < w.epsilon) {
      a = std::uniform_int_distribution<int>(0, env->n_actions() - 1)(st.rng);
    } else {
      a = detail::greedy_mean_action(st, s, mode == TrainMode::hard);
    }
    const StepResult r = env->step(s, a);
    replay.push({s, a, r.reward, r.next_state, r.done});
    s = r.done ? env->reset(st.rng()) : r.next_state;

    if (replay.size() >= cfg.batch) {
      const TransitionBatch batch = replay.sample(cfg.batch, st.rng);
      if (mode == TrainMode::hard) {
        hard_train_step(st, batch, *env, cfg, hard);
      } else {
        soft_train_step(st, batch, *env, cfg, w);
      }
      rec.trace_viol.push_back(st.last.viol_mean);
      rec.trace_eq.push_back(st.last.eq_residual);
      rec.trace_phi.push_back(st.last.phi);
      viol_acc += st.last.viol_mean;
      eq_acc += st.last.eq_residual;
      phi_acc += st.last.phi;
      ++acc_n;
    }

    if ((t + 1) % eval_every == 0) {
      rec.eval_steps.push_back(t + 1);
      rec.eval_returns.push_back(
          detail::evaluate(st, *eval_env, seed, opt.eval_episodes, mode == TrainMode::hard));
      const double n = acc_n > 0 ? static_cast<double>(acc_n) : 1.0;
      rec.diag_viol.push_back(viol_acc / n);
      rec.diag_eq.push_back(eq_acc / n);
      rec.diag_phi.push_back(phi_acc / n);
      viol_acc = eq_acc = phi_acc = 0.0;
      acc_n = 0;
    }
  }
  return rec;
}

}  // namespace gcr
