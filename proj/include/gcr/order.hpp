#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "gcr/common.hpp"

namespace gcr {

// Weighted comparison "u should have no smaller value than v".
struct PrefEdge {
  int u = 0;
  int v = 0;
  double w = 0.0;
};

// Batch-indexed weighted DAG with an incremental reachability index
// (one bitset row per node, reach[u] bit v <=> directed path u ~> v).
struct PrefDag {
  int n = 0;
  std::vector<PrefEdge> edges;
  std::vector<int> topo;
  std::vector<std::vector<std::uint64_t>> reach;

  explicit PrefDag(int nodes = 0) : n(nodes) {
    reach.assign(n, std::vector<std::uint64_t>((n + 63) / 64, 0));
  }

  bool reachable(int u, int v) const {
    return (reach[u][v >> 6] >> (v & 63)) & 1ull;
  }

  void add_edge_unchecked(const PrefEdge& e) {
    edges.push_back(e);
    // new paths: every x that reaches u (or u itself) now reaches v and all of v's successors
    std::vector<std::uint64_t> grown = reach[e.v];
    grown[e.v >> 6] |= 1ull << (e.v & 63);
    for (int x = 0; x < n; ++x) {
      if (x != e.u && !reachable(x, e.u)) continue;
      for (std::size_t b = 0; b < grown.size(); ++b) reach[x][b] |= grown[b];
    }
  }

  void finalize_topo() {
    std::vector<int> indeg(n, 0);
    std::vector<std::vector<int>> adj(n);
    for (const PrefEdge& e : edges) {
      adj[e.u].push_back(e.v);
      ++indeg[e.v];
    }
    topo.clear();
    std::vector<int> ready;
    for (int i = 0; i < n; ++i)
      if (indeg[i] == 0) ready.push_back(i);
    while (!ready.empty()) {
      // lowest index first keeps the order deterministic
      const auto it = std::min_element(ready.begin(), ready.end());
      const int u = *it;
      ready.erase(it);
      topo.push_back(u);
      for (int v : adj[u])
        if (--indeg[v] == 0) ready.push_back(v);
    }
    require(static_cast<int>(topo.size()) == n, "PrefDag: cycle detected in topological sort");
  }
};

// Confidence-weighted preference score w_i = sigmoid(nudge_i / tau) * exp(-Var_a q(s'_i, a)).
// Variance is the population variance over the action axis.
inline Vec preference_scores(const Vec& nudges, const std::vector<Vec>& next_q_rows, double tau) {
  require(tau > 0.0, "preference_scores: tau must be positive");
  require(nudges.size() == static_cast<Eigen::Index>(next_q_rows.size()),
          "preference_scores: shape mismatch");
  const int n = static_cast<int>(nudges.size());
  Vec w(n);
  for (int i = 0; i < n; ++i) {
    const Vec& row = next_q_rows[i];
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    w(i) = sigmoid(nudges(i) / tau) * std::exp(-var);
  }
  return w;
}

// Linear-interpolation percentile with all-pass / all-fail endpoints so that
// p<=0 keeps every sample and p>=100 keeps none.
inline double percentile_cutoff(const Vec& w, double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 100.0) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(w.data(), w.data() + w.size());
  std::sort(sorted.begin(), sorted.end());
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Candidate comparisons between kNN pairs in feature space (cosine similarity,
// ties by index). A sample i whose score clears the percentile cutoff (and the
// optional absolute floor min_score) proposes one edge per neighbor j; the
// pair is directed toward the smaller nudge (source = larger nudge, ties keep
// the proposing sample as source) and weighted
// w_i * (1 - sigmoid((nudge_v - nudge_u)/tau)). Duplicate (u,v) proposals
// keep the maximum weight. Zero-norm features are excluded from neighborhoods
// entirely.
inline std::vector<PrefEdge> knn_candidates(const Mat& features, const Vec& scores,
                                            const Vec& nudges, int k, double percentile_p,
                                            double tau, double min_score = 0.0) {
  const int n = static_cast<int>(features.rows());
  require(n >= 2, "knn_candidates: need at least two samples");
  require(scores.size() == n && nudges.size() == n, "knn_candidates: shape mismatch");
  require(k >= 1, "knn_candidates: k must be positive");
  require(tau > 0.0, "knn_candidates: tau must be positive");

  Vec norms(n);
  for (int i = 0; i < n; ++i) norms(i) = features.row(i).norm();

  const double cutoff = std::max(percentile_cutoff(scores, percentile_p), min_score);

  std::map<std::pair<int, int>, double> best;
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < n; ++i) {
    if (norms(i) == 0.0 || scores(i) < cutoff) continue;
    order.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i || norms(j) == 0.0) continue;
      const double cos = features.row(i).dot(features.row(j)) / (norms(i) * norms(j));
      order.emplace_back(-cos, j);
    }
    std::sort(order.begin(), order.end());
    const int take = std::min<int>(k, static_cast<int>(order.size()));
    for (int t = 0; t < take; ++t) {
      const int j = order[t].second;
      const bool i_source = nudges(i) >= nudges(j);
      const int u = i_source ? i : j;
      const int v = i_source ? j : i;
      const double w = scores(i) * (1.0 - sigmoid((nudges(v) - nudges(u)) / tau));
      auto [it, inserted] = best.emplace(std::make_pair(u, v), w);
      if (!inserted) it->second = std::max(it->second, w);
    }
  }

  std::vector<PrefEdge> out;
  out.reserve(best.size());
  for (const auto& [uv, w] : best) out.push_back({uv.first, uv.second, w});
  return out;
}

// Greedy add-unless-cycle over candidates sorted by decreasing weight
// (ties: lexicographically smaller (u,v) first). An edge is skipped exactly
// when the head already reaches the tail, so the result is acyclic and
// maximal for this edge order.
inline PrefDag greedy_dagify(int n, std::vector<PrefEdge> candidates) {
  PrefDag dag(n);
  for (const PrefEdge& e : candidates) {
    require(e.u >= 0 && e.u < n && e.v >= 0 && e.v < n, "greedy_dagify: endpoint out of range");
    require(e.u != e.v, "greedy_dagify: self-loop candidate");
  }
  std::sort(candidates.begin(), candidates.end(), [](const PrefEdge& a, const PrefEdge& b) {
    if (a.w != b.w) return a.w > b.w;
    return std::tie(a.u, a.v) < std::tie(b.u, b.v);
  });
  for (const PrefEdge& e : candidates) {
    if (dag.reachable(e.v, e.u)) continue;
    dag.add_edge_unchecked(e);
  }
  dag.finalize_topo();
  return dag;
}

// Negative mean retained weight; 0 for an empty DAG.
inline double dag_loss(const PrefDag& dag) {
  if (dag.edges.empty()) return 0.0;
  double sum = 0.0;
  for (const PrefEdge& e : dag.edges) sum += e.w;
  return -sum / static_cast<double>(dag.edges.size());
}

// Hinge violation statistics of v against the DAG constraints
// v(u) >= v(v) + delta.
struct ViolationStats {
  double mean_hinge = 0.0;
  double mean_hinge_sq = 0.0;
  double max_hinge = 0.0;
};

inline ViolationStats violations(const Vec& v, const PrefDag& dag, double delta) {
  ViolationStats out;
  if (dag.edges.empty()) return out;
  for (const PrefEdge& e : dag.edges) {
    const double h = std::max(0.0, delta + v(e.v) - v(e.u));
    out.mean_hinge += h;
    out.mean_hinge_sq += h * h;
    out.max_hinge = std::max(out.max_hinge, h);
  }
  const double m = static_cast<double>(dag.edges.size());
  out.mean_hinge /= m;
  out.mean_hinge_sq /= m;
  return out;
}

// delta-scaled longest-path potential: V(i) = delta * (longest path length
// from i). Satisfies every edge constraint with zero hinge, witnessing
// feasibility of the monotone cone.
inline Vec feasible_potential(const PrefDag& dag, double delta) {
  require(static_cast<int>(dag.topo.size()) == dag.n, "feasible_potential: DAG not finalized");
  std::vector<std::vector<int>> adj(dag.n);
  for (const PrefEdge& e : dag.edges) adj[e.u].push_back(e.v);
  std::vector<double> level(dag.n, 0.0);
  for (auto it = dag.topo.rbegin(); it != dag.topo.rend(); ++it) {
    const int u = *it;
    for (int v : adj[u]) level[u] = std::max(level[u], 1.0 + level[v]);
  }
  Vec out(dag.n);
  for (int i = 0; i < dag.n; ++i) out(i) = delta * level[i];
  return out;
}

struct IsotonicResult {
  Vec v_hat;
  int iterations = 0;
  double final_violation = 0.0;
  bool exact = false;
};

namespace detail {

// Loss and gradient of the penalty surrogate
//   (1/B)||x - v||^2 + (mu/|E|) sum_e [delta + x(v)-x(u)]_+^2
//   + (lambda_rank/|E|) sum_e log(1 + exp(x(v)-x(u))).
inline double penalty_loss(const Vec& x, const Vec& v, const PrefDag& dag, double delta, double mu,
                           double lambda_rank, Vec* grad) {
  const double b = static_cast<double>(x.size());
  double loss = (x - v).squaredNorm() / b;
  if (grad) *grad = 2.0 / b * (x - v);
  if (!dag.edges.empty()) {
    const double m = static_cast<double>(dag.edges.size());
    double hinge_sq = 0.0;
    double rank = 0.0;
    for (const PrefEdge& e : dag.edges) {
      const double gap = delta + x(e.v) - x(e.u);
      if (gap > 0.0) {
        hinge_sq += gap * gap;
        if (grad) {
          (*grad)(e.v) += 2.0 * mu / m * gap;
          (*grad)(e.u) -= 2.0 * mu / m * gap;
        }
      }
      if (lambda_rank != 0.0) {
        const double z = x(e.v) - x(e.u);
        rank += z > 30.0 ? z : std::log1p(std::exp(z));
        if (grad) {
          const double s = sigmoid(z);
          (*grad)(e.v) += lambda_rank / m * s;
          (*grad)(e.u) -= lambda_rank / m * s;
        }
      }
    }
    loss += mu / m * hinge_sq + lambda_rank / m * rank;
  }
  return loss;
}

// Exact minimizer of penalty_loss along x + t*d for t >= 0 when
// lambda_rank == 0 (piecewise quadratic: scan hinge breakpoints).
// Otherwise bisect on the monotone directional derivative.
inline double penalty_line_search(const Vec& x, const Vec& d, const Vec& v, const PrefDag& dag,
                                  double delta, double mu, double lambda_rank) {
  const double b = static_cast<double>(x.size());
  if (lambda_rank == 0.0) {
    const double m = dag.edges.empty() ? 1.0 : static_cast<double>(dag.edges.size());
    // phi'(t) = alpha + beta*t restricted to each breakpoint segment
    double alpha = 2.0 / b * (x - v).dot(d);
    double beta = 2.0 / b * d.squaredNorm();
    struct Event {
      double t;
      double dalpha;
      double dbeta;
    };
    std::vector<Event> events;
    for (const PrefEdge& e : dag.edges) {
      const double c = delta + x(e.v) - x(e.u);
      const double s = d(e.v) - d(e.u);
      const double a_term = 2.0 * mu / m * c * s;
      const double b_term = 2.0 * mu / m * s * s;
      const bool active0 = c > 0.0 || (c == 0.0 && s > 0.0);
      if (active0) {
        alpha += a_term;
        beta += b_term;
      }
      if (s != 0.0) {
        const double tcross = -c / s;
        if (tcross > 0.0) {
          const double sign = active0 ? -1.0 : 1.0;  // hinge leaves/enters at tcross
          events.push_back({tcross, sign * a_term, sign * b_term});
        }
      }
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    double t0 = 0.0;
    std::size_t idx = 0;
    for (;;) {
      const double t1 = idx < events.size() ? events[idx].t : std::numeric_limits<double>::infinity();
      const double phi0 = alpha + beta * t0;
      if (phi0 >= 0.0) return t0;
      const double phi1 = alpha + beta * t1;
      if (std::isfinite(t1) && phi1 < 0.0) {
        alpha += events[idx].dalpha;
        beta += events[idx].dbeta;
        t0 = t1;
        ++idx;
        continue;
      }
      if (beta <= 0.0) return t0;  // flat or unbounded segment: should not happen (convex)
      return -alpha / beta;
    }
  }
  // convex, so phi'(t) is nondecreasing: bracket then bisect
  auto dphi = [&](double t) {
    Vec g;
    penalty_loss(x + t * d, v, dag, delta, mu, lambda_rank, &g);
    return g.dot(d);
  };
  if (dphi(0.0) >= 0.0) return 0.0;
  double hi = 1.0;
  while (dphi(hi) < 0.0 && hi < 1e12) hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (dphi(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

struct PenaltyIsotonicResult {
  IsotonicResult iso;
  double loss = 0.0;
  Vec grad_wrt_v;
};

// Quadratic-penalty surrogate of the isotonic projection: a fixed number of
// gradient-descent steps on the auxiliary variable, initialized at v.
// lr > 0 runs plain GD with the step halved whenever the loss would increase
// (monitored; persistent increase is a numeric error). lr <= 0 selects exact
// line search along the negative gradient. The returned gradient treats the
// inner solution as constant: d/dv = (2/B)(v - v_hat).
inline PenaltyIsotonicResult penalty_isotonic(const Vec& v, const PrefDag& dag, double delta,
                                              double mu, int steps, double lr,
                                              double lambda_rank = 0.0) {
  require(mu > 0.0, "penalty_isotonic: mu must be positive");
  require(steps >= 1, "penalty_isotonic: steps must be positive");
  require(delta >= 0.0, "penalty_isotonic: delta must be nonnegative");

  Vec x = v;
  Vec grad;
  double loss = detail::penalty_loss(x, v, dag, delta, mu, lambda_rank, &grad);
  int done = 0;
  for (int it = 0; it < steps; ++it) {
    numeric_check(std::isfinite(loss) && grad.allFinite(),
                  "penalty_isotonic: non-finite loss at iteration " + std::to_string(it));
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + x.lpNorm<Eigen::Infinity>())) break;
    if (lr <= 0.0) {
      const double t = detail::penalty_line_search(x, -grad, v, dag, delta, mu, lambda_rank);
      if (t <= 0.0) break;
      x -= t * grad;
      loss = detail::penalty_loss(x, v, dag, delta, mu, lambda_rank, &grad);
    } else {
      double step = lr;
      Vec x_try;
      double loss_try = 0.0;
      bool ok = false;
      for (int h = 0; h < 60; ++h) {
        x_try = x - step * grad;
        loss_try = detail::penalty_loss(x_try, v, dag, delta, mu, lambda_rank, nullptr);
        if (loss_try <= loss * (1.0 + 1e-14) + 1e-300) {
          ok = true;
          break;
        }
        step *= 0.5;
      }
      numeric_check(ok, "penalty_isotonic: loss increased at iteration " + std::to_string(it));
      x = x_try;
      loss = detail::penalty_loss(x, v, dag, delta, mu, lambda_rank, &grad);
    }
    ++done;
  }

  PenaltyIsotonicResult out;
  out.iso.v_hat = x;
  out.iso.iterations = done;
  out.iso.final_violation = violations(x, dag, delta).max_hinge;
  out.iso.exact = false;
  out.loss = loss;
  out.grad_wrt_v = 2.0 / static_cast<double>(v.size()) * (v - x);
  return out;
}

// Euclidean projection onto the monotone cone {x : x(u) >= x(v) + delta}
// via a primal feasible active-set method (equality subproblems with
// step-length control, starting from the delta-potential point). Redundant
// path constraints are handled by a rank-revealing working-set solve. The
// KKT conditions are certified before exact=true is reported; should the
// iteration cap ever be hit, a long penalty run is returned flagged
// exact=false.
inline IsotonicResult exact_isotonic(const Vec& v, const PrefDag& dag, double delta) {
  require(delta >= 0.0, "exact_isotonic: delta must be nonnegative");
  const int n = static_cast<int>(v.size());
  require(n == dag.n, "exact_isotonic: value/DAG size mismatch");
  const int m = static_cast<int>(dag.edges.size());

  IsotonicResult out;
  out.v_hat = v;
  out.exact = true;
  if (m == 0) return out;

  constexpr double kTol = 1e-10;
  // rows a_e with +1 at head, -1 at tail; constraints a_e^T x <= -delta
  Mat a = Mat::Zero(m, n);
  for (int e = 0; e < m; ++e) {
    a(e, dag.edges[e].v) = 1.0;
    a(e, dag.edges[e].u) = -1.0;
  }
  const Vec b = Vec::Constant(m, -delta);

  Vec x = violations(v, dag, delta).max_hinge == 0.0 ? v : feasible_potential(dag, delta);
  std::vector<int> work;
  std::vector<char> in_work(m, 0);
  for (int e = 0; e < m; ++e) {
    if (std::abs(a.row(e).dot(x) - b(e)) <= kTol) {
      work.push_back(e);
      in_work[e] = 1;
    }
  }

  const int max_iters = 400 + 60 * m;
  int it = 0;
  for (; it < max_iters; ++it) {
    const int s = static_cast<int>(work.size());
    Mat a_w(s, n);
    for (int r = 0; r < s; ++r) a_w.row(r) = a.row(work[r]);

    // direction: project (v - x) onto the nullspace of the working rows
    Vec p = v - x;
    Eigen::CompleteOrthogonalDecomposition<Mat> cod;
    if (s > 0) {
      cod.compute(a_w * a_w.transpose());
      p -= a_w.transpose() * cod.solve(a_w * p);
    }

    if (p.lpNorm<Eigen::Infinity>() <= kTol) {
      // stationary on the working set: check multipliers
      if (s == 0) break;
      const Vec lambda = cod.solve(a_w * (v - x));
      int drop = -1;
      double worst = -kTol;
      for (int r = 0; r < s; ++r) {
        if (lambda(r) < worst) {
          worst = lambda(r);
          drop = r;
        }
      }
      if (drop < 0) break;  // KKT satisfied
      in_work[work[drop]] = 0;
      work.erase(work.begin() + drop);
      continue;
    }

    // step length to the nearest blocking constraint
    double alpha = 1.0;
    int blocking = -1;
    for (int e = 0; e < m; ++e) {
      if (in_work[e]) continue;
      const double ap = a.row(e).dot(p);
      if (ap <= kTol) continue;
      const double room = (b(e) - a.row(e).dot(x)) / ap;
      if (room < alpha) {
        alpha = room;
        blocking = e;
      }
    }
    x += std::max(0.0, alpha) * p;
    if (blocking >= 0) {
      in_work[blocking] = 1;
      work.push_back(blocking);
    }
  }

  if (it >= max_iters) {
    PenaltyIsotonicResult fb = penalty_isotonic(v, dag, delta, 1e8, 100000, -1.0, 0.0);
    fb.iso.exact = false;
    fb.iso.iterations = it + fb.iso.iterations;
    return fb.iso;
  }

  out.v_hat = x;
  out.iterations = it;
  out.final_violation = violations(x, dag, delta).max_hinge;
  return out;
}

// Dilworth width: maximum antichain size of the reachability poset, computed
// as n minus a maximum bipartite matching on the strict reachability relation
// (minimum chain cover).
inline int dag_width(const PrefDag& dag) {
  require(static_cast<int>(dag.topo.size()) == dag.n, "dag_width: DAG not finalized");
  const int n = dag.n;
  std::vector<std::vector<int>> comp(n);
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (u != v && dag.reachable(u, v)) comp[u].push_back(v);

  std::vector<int> match_right(n, -1);
  std::vector<char> used;
  std::function<bool(int)> try_kuhn = [&](int u) -> bool {
    for (int v : comp[u]) {
      if (used[v]) continue;
      used[v] = 1;
      if (match_right[v] < 0 || try_kuhn(match_right[v])) {
        match_right[v] = u;
        return true;
      }
    }
    return false;
  };
  int matching = 0;
  for (int u = 0; u < n; ++u) {
    used.assign(n, 0);
    if (try_kuhn(u)) ++matching;
  }
  return n - matching;
}

}  // namespace gcr
