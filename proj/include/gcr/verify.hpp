#pragma once

// Self-check suite: independent reference implementations (brute force,
// enumeration, finite differences) and the runnable verification criteria
// exposed through the `verify` CLI subcommand. Reference code here must stay
// independent of the implementation paths it certifies.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/envs.hpp"
#include "gcr/experiment.hpp"
#include "gcr/manifold.hpp"
#include "gcr/mdp.hpp"
#include "gcr/metrics.hpp"
#include "gcr/order.hpp"
#include "gcr/symmetry.hpp"
#include "gcr/trainer.hpp"

namespace gcr::oracle {

// Random dense MDP with valid rows; optionally with terminal states.
inline TabularMdp random_mdp(Rng& rng, int max_states = 6, int max_actions = 3,
                             bool allow_terminal = true) {
  std::uniform_int_distribution<int> ns(2, max_states), na(1, max_actions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TabularMdp mdp;
  mdp.n_states = ns(rng);
  mdp.n_actions = na(rng);
  mdp.gamma = 0.2 + 0.75 * unit(rng);
  mdp.reward = Mat::Zero(mdp.n_states, mdp.n_actions);
  mdp.terminal.assign(mdp.n_states, 0);
  if (allow_terminal && unit(rng) < 0.5) mdp.terminal[mdp.n_states - 1] = 1;
  for (int a = 0; a < mdp.n_actions; ++a) mdp.transition.push_back(Mat::Zero(mdp.n_states, mdp.n_states));
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (mdp.terminal[s]) {
        mdp.transition[a](s, s) = 1.0;
        continue;
      }
      mdp.reward(s, a) = 2.0 * unit(rng) - 1.0;
      Vec row(mdp.n_states);
      double sum = 0.0;
      for (int t = 0; t < mdp.n_states; ++t) {
        row(t) = -std::log(unit(rng) + 1e-12);
        sum += row(t);
      }
      row /= sum;
      // exact renormalization so the 1e-9 row-sum invariant holds bit-tight
      row(mdp.n_states - 1) = 1.0 - row.head(mdp.n_states - 1).sum();
      mdp.transition[a].row(s) = row.transpose();
    }
  }
  mdp.validate();
  return mdp;
}

// Random weighted digraph candidates (distinct ordered pairs, no self loops).
inline std::vector<PrefEdge> random_digraph(Rng& rng, int n, double density) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PrefEdge> edges;
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (u != v && unit(rng) < density) edges.push_back({u, v, unit(rng)});
  return edges;
}

inline PrefDag random_dag(Rng& rng, int n, double density) {
  return greedy_dagify(n, random_digraph(rng, n, density));
}

// Central finite difference of a scalar function at x, one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Relative gradient error between analytic grad and central differences over
// every entry of a parameter matrix accessed through get/set callbacks.
inline double max_rel_grad_err(const Mat& analytic,
                               const std::function<double&(int, int)>& param,
                               const std::function<double()>& loss_fn, double h = 1e-5) {
  double worst = 0.0;
  for (int i = 0; i < analytic.rows(); ++i) {
    for (int j = 0; j < analytic.cols(); ++j) {
      double& slot = param(i, j);
      const double saved = slot;
      slot = saved + h;
      const double up = loss_fn();
      slot = saved - h;
      const double dn = loss_fn();
      slot = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double scale = std::max({1.0, std::abs(fd), std::abs(analytic(i, j))});
      worst = std::max(worst, std::abs(fd - analytic(i, j)) / scale);
    }
  }
  return worst;
}

// Brute-force nearest permutation by factorial enumeration, first-strictly-
// better scan in lexicographic order of the assignment vector.
inline Mat brute_force_proj_perm(const Mat& s) {
  const int n = static_cast<int>(s.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_gain = -1e300;
  do {
    double gain = 0.0;
    for (int i = 0; i < n; ++i) gain += s(i, perm[i]);
    if (gain > best_gain) {
      best_gain = gain;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Mat p = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) p(i, best[i]) = 1.0;
  return p;
}

// Brute-force maximum-weight acyclic subgraph via subset enumeration (small m).
inline double brute_force_max_acyclic_weight(int n, const std::vector<PrefEdge>& edges) {
  const int m = static_cast<int>(edges.size());
  require(m <= 20, "brute_force_max_acyclic_weight: too many edges");
  double best = 0.0;
  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<std::vector<int>> adj(n);
    double w = 0.0;
    for (int e = 0; e < m; ++e) {
      if (!(mask >> e & 1)) continue;
      adj[edges[e].u].push_back(edges[e].v);
      w += edges[e].w;
    }
    // cycle check by iterative removal of sources
    std::vector<int> indeg(n, 0);
    for (int u = 0; u < n; ++u)
      for (int v : adj[u]) ++indeg[v];
    std::vector<int> stack;
    for (int u = 0; u < n; ++u)
      if (indeg[u] == 0) stack.push_back(u);
    int seen = 0;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      ++seen;
      for (int v : adj[u])
        if (--indeg[v] == 0) stack.push_back(v);
    }
    if (seen == n) best = std::max(best, w);
  }
  return best;
}

// Brute-force maximum antichain by subset enumeration over the reachability
// relation (strictly incomparable sets).
inline int brute_force_max_antichain(const PrefDag& dag) {
  const int n = dag.n;
  require(n <= 20, "brute_force_max_antichain: too many nodes");
  int best = 0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    bool ok = true;
    for (int u = 0; u < n && ok; ++u) {
      if (!(mask >> u & 1)) continue;
      for (int v = u + 1; v < n && ok; ++v) {
        if (!(mask >> v & 1)) continue;
        if (dag.reachable(u, v) || dag.reachable(v, u)) ok = false;
      }
    }
    if (ok) best = std::max(best, __builtin_popcount(static_cast<unsigned>(mask)));
  }
  return best;
}

// Brute-force cosine kNN by full sort; mirrors the documented tie rule.
inline std::vector<int> brute_force_knn(const Mat& features, int i, int k) {
  const int n = static_cast<int>(features.rows());
  std::vector<std::pair<double, int>> all;
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    const double den = features.row(i).norm() * features.row(j).norm();
    if (den == 0.0) continue;
    all.emplace_back(-features.row(i).dot(features.row(j)) / den, j);
  }
  std::sort(all.begin(), all.end());
  std::vector<int> out;
  for (int t = 0; t < std::min<int>(k, static_cast<int>(all.size())); ++t)
    out.push_back(all[t].second);
  return out;
}

// Random orthogonal matrix via the polar factor of a Gaussian sample,
// independent of gcr::polar (explicit Householder QR).
inline Mat random_orthogonal(Rng& rng, int d) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = gauss(rng);
  const Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

inline Mat random_doubly_stochastic(Rng& rng, int n, int rounds = 200) {
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  Mat s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = unit(rng);
  for (int it = 0; it < rounds; ++it) {
    for (int c = 0; c < n; ++c) s.col(c) /= s.col(c).sum();
    for (int r = 0; r < n; ++r) s.row(r) /= s.row(r).sum();
  }
  return s;
}

inline Mat random_permutation_matrix(Rng& rng, int n) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  Mat m = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) m(p[i], i) = 1.0;
  return m;
}

}  // namespace gcr::oracle
