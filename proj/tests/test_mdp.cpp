#include <catch2/catch_amalgamated.hpp>

#include "gcr/mdp.hpp"
#include "gcr/verify.hpp"

using namespace gcr;

namespace {

// 2-state deterministic chain: s0 --move--> s1 (terminal), reward 1, gamma 0.5.
// Both actions perform the move so every action is optimal.
TabularMdp chain_mdp(int n_actions = 2) {
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = n_actions;
  mdp.gamma = 0.5;
  mdp.reward = Mat::Zero(2, n_actions);
  mdp.terminal = {0, 1};
  for (int a = 0; a < n_actions; ++a) {
    mdp.transition.push_back(Mat::Zero(2, 2));
    mdp.transition[a](0, 1) = 1.0;
    mdp.transition[a](1, 1) = 1.0;
    mdp.reward(0, a) = 1.0;
  }
  mdp.validate();
  return mdp;
}

TabularMdp constant_reward_mdp(int n, int m, double r, double gamma) {
  TabularMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = m;
  mdp.gamma = gamma;
  mdp.reward = Mat::Constant(n, m, r);
  mdp.terminal.assign(n, 0);
  for (int a = 0; a < m; ++a) {
    Mat p = Mat::Constant(n, n, 1.0 / n);
    for (int s = 0; s < n; ++s) p(s, n - 1) = 1.0 - p.row(s).head(n - 1).sum();
    mdp.transition.push_back(p);
  }
  mdp.validate();
  return mdp;
}

// Doubled MDP: two disjoint copies of a base MDP with the swap of copies as
// an oracle symmetry (state map s <-> s + n, identity action relabel).
TabularMdp mirrored_mdp(const TabularMdp& base) {
  TabularMdp m;
  m.n_states = 2 * base.n_states;
  m.n_actions = base.n_actions;
  m.gamma = base.gamma;
  m.reward = Mat::Zero(m.n_states, m.n_actions);
  m.terminal.assign(m.n_states, 0);
  for (int a = 0; a < m.n_actions; ++a) {
    Mat p = Mat::Zero(m.n_states, m.n_states);
    p.topLeftCorner(base.n_states, base.n_states) = base.transition[a];
    p.bottomRightCorner(base.n_states, base.n_states) = base.transition[a];
    m.transition.push_back(p);
  }
  m.reward.topRows(base.n_states) = base.reward;
  m.reward.bottomRows(base.n_states) = base.reward;
  for (int s = 0; s < base.n_states; ++s) {
    m.terminal[s] = base.terminal[s];
    m.terminal[s + base.n_states] = base.terminal[s];
  }
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("bellman backup on constant rewards") {
  TabularMdp mdp = constant_reward_mdp(4, 3, 1.0, 0.9);
  QModel q = QModel::make_tabular(4, 3);
  const QModel out = bellman_backup(mdp, q);
  REQUIRE(out.table.isApproxToConstant(1.0, 1e-15));
  REQUIRE(q.table.isZero());  // input untouched
}

TEST_CASE("bellman backup at a terminal state") {
  TabularMdp mdp = chain_mdp();
  QModel q = QModel::make_tabular(2, 2);
  const QModel out = bellman_backup(mdp, q);
  REQUIRE(out.table(1, 0) == 0.0);
  REQUIRE(out.table(1, 1) == 0.0);
}

TEST_CASE("bellman backup rejects shape mismatches") {
  TabularMdp mdp = chain_mdp();
  QModel q = QModel::make_tabular(3, 2);
  REQUIRE_THROWS_AS(bellman_backup(mdp, q), std::invalid_argument);
  QModel lin = QModel::make_linear_one_hot(2, 2);
  REQUIRE_THROWS_AS(bellman_backup(mdp, lin), std::invalid_argument);
}

TEST_CASE("repeated backups reach the chain fixed point") {
  TabularMdp mdp = chain_mdp();
  QModel q = QModel::make_tabular(2, 2);
  for (int i = 0; i < 50; ++i) q = bellman_backup(mdp, q);
  REQUIRE(q.table(0, 0) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(q.table(0, 1) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("solve_q_star: geometric series on constant rewards") {
  const double gamma = 0.9;
  TabularMdp mdp = constant_reward_mdp(5, 2, 0.7, gamma);
  const QModel q = solve_q_star(mdp, 1e-12);
  REQUIRE(q.table.isApproxToConstant(0.7 / (1.0 - gamma), 1e-9));
}

TEST_CASE("solve_q_star: chain value") {
  const QModel q = solve_q_star(chain_mdp(), 1e-12);
  REQUIRE(q.table(0, 0) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("solve_q_star is a Bellman fixed point") {
  Rng rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    const TabularMdp mdp = oracle::random_mdp(rng);
    const double tol = 1e-10;
    const QModel q = solve_q_star(mdp, tol);
    const QModel t = bellman_backup(mdp, q);
    REQUIRE((t.table - q.table).cwiseAbs().maxCoeff() < 2 * tol);
  }
}

TEST_CASE("Bellman operator is a gamma-contraction") {
  Rng rng(17);
  std::uniform_real_distribution<double> unit(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const TabularMdp mdp = oracle::random_mdp(rng);
    QModel q1 = QModel::make_tabular(mdp.n_states, mdp.n_actions);
    QModel q2 = q1;
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        q1.table(s, a) = unit(rng);
        q2.table(s, a) = unit(rng);
      }
    const double lhs =
        (bellman_backup(mdp, q1).table - bellman_backup(mdp, q2).table).cwiseAbs().maxCoeff();
    const double rhs = mdp.gamma * (q1.table - q2.table).cwiseAbs().maxCoeff();
    REQUIRE(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("Q* of a mirrored MDP is symmetry-invariant") {
  Rng rng(5);
  const TabularMdp base = oracle::random_mdp(rng, 2, 2, false);
  const TabularMdp twin = mirrored_mdp(base);
  const double tol = 1e-10;
  const QModel q = solve_q_star(twin, tol);
  for (int s = 0; s < base.n_states; ++s)
    for (int a = 0; a < twin.n_actions; ++a)
      REQUIRE(q.table(s, a) == Catch::Approx(q.table(s + base.n_states, a)).margin(tol));
}

TEST_CASE("td_targets: terminal bootstrap is zero") {
  QModel q = QModel::make_tabular(3, 2);
  q.table.setConstant(100.0);
  TransitionBatch batch;
  batch.entries.push_back({0, 0, 3.0, 2, true});
  const auto [y, nudge] = td_targets(batch, q, 0.9);
  REQUIRE(y(0) == 3.0);
}

TEST_CASE("td_targets: direct substitution") {
  QModel q = QModel::make_tabular(2, 2);
  q.table(1, 0) = 10.0;
  q.table(1, 1) = 4.0;
  TransitionBatch batch;
  batch.entries.push_back({0, 0, 0.0, 1, false});
  const auto [y, nudge] = td_targets(batch, q, 0.9);
  REQUIRE(y(0) == Catch::Approx(9.0));
  REQUIRE(nudge(0) == Catch::Approx(9.0 - 0.0));
}

TEST_CASE("td_targets of Q* has vanishing nudges") {
  const TabularMdp mdp = chain_mdp();
  const double tol = 1e-10;
  const QModel q = solve_q_star(mdp, tol);
  TransitionBatch batch;
  batch.entries.push_back({0, 0, 1.0, 1, true});
  batch.entries.push_back({0, 1, 1.0, 1, true});
  const auto [y, nudge] = td_targets(batch, q, mdp.gamma);
  REQUIRE(nudge.cwiseAbs().maxCoeff() < 10 * tol);
}

TEST_CASE("td_targets requires a nonempty batch") {
  QModel q = QModel::make_tabular(2, 2);
  REQUIRE_THROWS_AS(td_targets(TransitionBatch{}, q, 0.9), std::invalid_argument);
}

TEST_CASE("q_update_double: lr=0 is the identity") {
  QModel a = QModel::make_tabular(2, 2), b = a;
  a.table.setRandom();
  b.table.setRandom();
  const Mat sa = a.table, sb = b.table;
  TransitionBatch batch;
  batch.entries.push_back({0, 0, 1.0, 1, false});
  q_update_double(batch, a, b, 0.9, 0.0, true);
  REQUIRE(a.table == sa);
  REQUIRE(b.table == sb);
}

TEST_CASE("q_update_double: full overwrite on a terminal transition") {
  QModel a = QModel::make_tabular(2, 2), b = a;
  TransitionBatch batch;
  batch.entries.push_back({0, 1, 5.0, 1, true});
  q_update_double(batch, a, b, 0.9, 1.0, true);
  REQUIRE(a.table(0, 1) == 5.0);
  REQUIRE(b.table.isZero());  // only one table changes per call
}

TEST_CASE("q_update_double converges to Q* on the chain") {
  const TabularMdp mdp = chain_mdp();
  const QModel star = solve_q_star(mdp, 1e-12);
  QModel a = QModel::make_tabular(2, 2), b = a;
  Rng rng(3);
  std::uniform_int_distribution<int> action(0, 1);
  for (int t = 0; t < 4000; ++t) {
    TransitionBatch batch;
    const int act = action(rng);
    batch.entries.push_back({0, act, 1.0, 1, true});
    batch.entries.push_back({1, act, 0.0, 1, true});
    q_update_double(batch, a, b, mdp.gamma, 0.2, t % 2 == 0);
  }
  REQUIRE((a.table - star.table).cwiseAbs().maxCoeff() < 1e-3);
  REQUIRE((b.table - star.table).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("QModel linear one-hot matches tabular semantics") {
  QModel lin = QModel::make_linear_one_hot(3, 2);
  lin.head << 1, 2, 3, 4, 5, 6;
  REQUIRE(lin.value(1, 1) == 4.0);
  REQUIRE(lin.vmax(2) == 6.0);
  REQUIRE(lin.argmax(0) == 1);
  const Vec z = lin.feature(1);
  REQUIRE(z(1) == 1.0);
  REQUIRE(z.sum() == 1.0);
}

TEST_CASE("QModel linear general features") {
  Mat phi(2, 3);
  phi << 1, 0, 2, 0, 1, -1;
  QModel q = QModel::make_linear(phi, 2);
  q.head = Mat::Zero(3, 2);
  q.head(0, 0) = 1.0;
  q.head(2, 1) = 1.0;
  REQUIRE(q.value(0, 0) == 1.0);
  REQUIRE(q.value(0, 1) == 2.0);
  REQUIRE(q.value(1, 1) == -1.0);
  REQUIRE_THROWS_AS(q.entry(0, 0), std::invalid_argument);
}

TEST_CASE("TabularMdp validation rejects broken tensors") {
  TabularMdp mdp = chain_mdp();
  mdp.gamma = 1.0;
  REQUIRE_THROWS_AS(mdp.validate(), std::invalid_argument);
  mdp.gamma = 0.5;
  mdp.transition[0](0, 1) = 0.5;
  REQUIRE_THROWS_AS(mdp.validate(), std::invalid_argument);
}
