#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "gcr/common.hpp"

namespace gcr {

// Finite MDP with dense tensors. transition[a](s, s') is P(s'|s,a); rows sum to 1.
// Terminal states self-loop with reward 0 so the Bellman operator needs no special case.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Mat> transition;  // one S x S matrix per action
  Mat reward;                   // S x A
  double gamma = 0.99;
  std::vector<std::uint8_t> terminal;

  void validate() const {
    require(n_states > 0 && n_actions > 0, "TabularMdp: empty state/action space");
    require(gamma > 0.0 && gamma < 1.0, "TabularMdp: gamma must lie strictly inside (0,1)");
    require(static_cast<int>(transition.size()) == n_actions, "TabularMdp: transition tensor shape");
    require(reward.rows() == n_states && reward.cols() == n_actions, "TabularMdp: reward shape");
    require(static_cast<int>(terminal.size()) == n_states, "TabularMdp: terminal vector shape");
    for (int a = 0; a < n_actions; ++a) {
      require(transition[a].rows() == n_states && transition[a].cols() == n_states,
              "TabularMdp: transition matrix shape");
      for (int s = 0; s < n_states; ++s) {
        require(std::abs(transition[a].row(s).sum() - 1.0) <= 1e-9,
                "TabularMdp: transition row does not sum to 1");
      }
    }
    for (int s = 0; s < n_states; ++s) {
      if (!terminal[s]) continue;
      for (int a = 0; a < n_actions; ++a) {
        require(transition[a](s, s) == 1.0, "TabularMdp: terminal state must self-loop");
        require(reward(s, a) == 0.0, "TabularMdp: terminal state must have zero reward");
      }
    }
  }
};

enum class QMode { tabular, linear };

// Action-value model. Tabular mode stores Q directly; linear mode is
// q(s,.) = head^T phi(s) with the feature map materialized as a matrix
// (finite state spaces only). One-hot features make linear mode coincide
// with tabular entry-wise, which keeps TD updates and the symmetry branch
// on the same storage.
struct QModel {
  QMode mode = QMode::tabular;
  int n_states = 0;
  int n_actions = 0;
  Mat table;  // tabular: S x A
  Mat phi;    // linear: S x d, row s = phi(s)^T
  Mat head;   // linear: d x A
  bool one_hot = false;

  static QModel make_tabular(int n_states, int n_actions) {
    QModel q;
    q.mode = QMode::tabular;
    q.n_states = n_states;
    q.n_actions = n_actions;
    q.table = Mat::Zero(n_states, n_actions);
    return q;
  }

  static QModel make_linear_one_hot(int n_states, int n_actions) {
    QModel q;
    q.mode = QMode::linear;
    q.n_states = n_states;
    q.n_actions = n_actions;
    q.head = Mat::Zero(n_states, n_actions);
    q.one_hot = true;
    return q;
  }

  static QModel make_linear(Mat features, int n_actions) {
    QModel q;
    q.mode = QMode::linear;
    q.n_states = static_cast<int>(features.rows());
    q.n_actions = n_actions;
    q.head = Mat::Zero(features.cols(), n_actions);
    q.phi = std::move(features);
    return q;
  }

  int feature_dim() const {
    if (mode == QMode::tabular) return n_states;
    return one_hot ? n_states : static_cast<int>(phi.cols());
  }

  Vec feature(int s) const {
    require(s >= 0 && s < n_states, "QModel::feature: state out of range");
    if (one_hot || mode == QMode::tabular) {
      Vec z = Vec::Zero(n_states);
      z(s) = 1.0;
      return z;
    }
    return phi.row(s).transpose();
  }

  Vec values(int s) const {
    require(s >= 0 && s < n_states, "QModel::values: state out of range");
    if (mode == QMode::tabular) return table.row(s).transpose();
    if (one_hot) return head.row(s).transpose();
    return head.transpose() * phi.row(s).transpose();
  }

  double value(int s, int a) const {
    require(a >= 0 && a < n_actions, "QModel::value: action out of range");
    if (mode == QMode::tabular) return table(s, a);
    if (one_hot) return head(s, a);
    return values(s)(a);
  }

  double vmax(int s) const { return values(s).maxCoeff(); }

  // Greedy action, ties to the lowest index.
  int argmax(int s) const {
    const Vec v = values(s);
    int best = 0;
    for (int a = 1; a < n_actions; ++a)
      if (v(a) > v(best)) best = a;
    return best;
  }

  // Direct entry access; only meaningful when storage is entry-addressable.
  double& entry(int s, int a) {
    require(s >= 0 && s < n_states && a >= 0 && a < n_actions, "QModel::entry: index out of range");
    if (mode == QMode::tabular) return table(s, a);
    require(one_hot, "QModel::entry: linear model with non-one-hot features has no table entries");
    return head(s, a);
  }

  bool entry_addressable() const { return mode == QMode::tabular || one_hot; }
};

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s2 = 0;
  bool done = false;
};

struct TransitionBatch {
  std::vector<Transition> entries;

  int size() const { return static_cast<int>(entries.size()); }

  void validate(int n_states, int n_actions) const {
    for (const Transition& t : entries) {
      require(t.s >= 0 && t.s < n_states && t.s2 >= 0 && t.s2 < n_states,
              "TransitionBatch: state id out of range");
      require(t.a >= 0 && t.a < n_actions, "TransitionBatch: action id out of range");
    }
  }
};

// One exact application of the optimal Bellman operator T*Q.
inline QModel bellman_backup(const TabularMdp& mdp, const QModel& q) {
  require(q.mode == QMode::tabular, "bellman_backup: q must be tabular");
  require(q.n_states == mdp.n_states && q.n_actions == mdp.n_actions,
          "bellman_backup: model/mdp shape mismatch");
  Vec vmax(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) vmax(s) = q.table.row(s).maxCoeff();
  QModel out = q;
  for (int a = 0; a < mdp.n_actions; ++a)
    out.table.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * vmax);
  return out;
}

// Value iteration to a sup-norm fixed point; gamma-contraction guarantees
// termination, the hard cap only guards against non-finite inputs.
inline QModel solve_q_star(const TabularMdp& mdp, double tol = 1e-10) {
  require(tol > 0.0, "solve_q_star: tol must be positive");
  QModel q = QModel::make_tabular(mdp.n_states, mdp.n_actions);
  const long max_iters = 10000000;
  long iters = 0;
  for (;;) {
    QModel next = bellman_backup(mdp, q);
    const double change = (next.table - q.table).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (change < tol) break;
    numeric_check(std::isfinite(change), "solve_q_star: non-finite backup");
    numeric_check(++iters < max_iters, "solve_q_star: iteration cap exceeded");
  }
  return q;
}

// One-step TD targets y_i and target-relative nudges y_i - max_a q(s_i, a).
// Bootstraps zero on done transitions.
inline std::pair<Vec, Vec> td_targets(const TransitionBatch& batch, const QModel& q_target,
                                      double gamma) {
  require(!batch.entries.empty(), "td_targets: batch must be nonempty");
  const int n = batch.size();
  Vec targets(n), nudges(n);
  for (int i = 0; i < n; ++i) {
    const Transition& t = batch.entries[i];
    const double boot = t.done ? 0.0 : gamma * q_target.vmax(t.s2);
    targets(i) = t.r + boot;
    nudges(i) = targets(i) - q_target.vmax(t.s);
  }
  return {targets, nudges};
}

// Tabular double Q-learning step: the updated table selects the argmax, the
// other table evaluates it. Exactly one table changes per call; the caller
// alternates update_first.
inline void q_update_double(const TransitionBatch& batch, QModel& q_a, QModel& q_b, double gamma,
                            double lr, bool update_first) {
  require(lr >= 0.0 && lr <= 1.0, "q_update_double: lr must lie in [0,1]");
  QModel& sel = update_first ? q_a : q_b;
  const QModel& eval = update_first ? q_b : q_a;
  require(sel.entry_addressable() && eval.entry_addressable(),
          "q_update_double: models must be entry-addressable");
  for (const Transition& t : batch.entries) {
    const int a_star = sel.argmax(t.s2);
    const double y = t.r + (t.done ? 0.0 : gamma * eval.value(t.s2, a_star));
    double& cell = sel.entry(t.s, t.a);
    cell += lr * (y - cell);
  }
}

}  // namespace gcr
