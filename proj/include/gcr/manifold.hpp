#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "gcr/common.hpp"

namespace gcr {

// Stacked batchwise constraints for the hard route:
//   inequality rows  delta + v(v) - v(u) + mu_e = 0   (slack mu_e >= 0)
//   equality rows    v(a) - v(b) = 0                  (materialized value-slot pairs)
struct ConstraintSystem {
  int n = 0;  // value dimension B
  std::vector<std::pair<int, int>> ineq_edges;  // (u, v) with margin delta
  std::vector<std::pair<int, int>> eq_pairs;    // value slots forced equal
  Vec mu;
  double delta = 0.0;

  void validate() const {
    require(static_cast<int>(mu.size()) == static_cast<int>(ineq_edges.size()),
            "ConstraintSystem: slack dimension mismatch");
    require(mu.size() == 0 || mu.minCoeff() >= 0.0, "ConstraintSystem: slacks must be nonnegative");
    for (const auto& [u, v] : ineq_edges)
      require(u >= 0 && u < n && v >= 0 && v < n && u != v, "ConstraintSystem: bad edge");
    for (const auto& [a, b] : eq_pairs)
      require(a >= 0 && a < n && b >= 0 && b < n, "ConstraintSystem: bad equality pair");
  }

  // g(V): the inequality margins without slack.
  Vec margins(const Vec& v) const {
    Vec g(static_cast<int>(ineq_edges.size()));
    for (int e = 0; e < g.size(); ++e)
      g(e) = delta + v(ineq_edges[e].second) - v(ineq_edges[e].first);
    return g;
  }
};

// Dense realizations of the structured Jacobian blocks
//   J_g (each row: -1 at u, +1 at v), J_h (+1 at a, -1 at b),
//   J_V = [J_g; J_h],  J_c = [[J_g, I], [J_h, 0]].
struct SparseJacobians {
  Mat J_g, J_h, J_V, J_c;
  int n = 0, m_ineq = 0, m_eq = 0;

  static SparseJacobians build(const ConstraintSystem& cs) {
    SparseJacobians js;
    js.n = cs.n;
    js.m_ineq = static_cast<int>(cs.ineq_edges.size());
    js.m_eq = static_cast<int>(cs.eq_pairs.size());
    js.J_g = Mat::Zero(js.m_ineq, cs.n);
    for (int e = 0; e < js.m_ineq; ++e) {
      js.J_g(e, cs.ineq_edges[e].first) = -1.0;
      js.J_g(e, cs.ineq_edges[e].second) = 1.0;
    }
    js.J_h = Mat::Zero(js.m_eq, cs.n);
    for (int e = 0; e < js.m_eq; ++e) {
      js.J_h(e, cs.eq_pairs[e].first) = 1.0;
      js.J_h(e, cs.eq_pairs[e].second) -= 1.0;
    }
    js.J_V = Mat::Zero(js.m_ineq + js.m_eq, cs.n);
    js.J_V.topRows(js.m_ineq) = js.J_g;
    js.J_V.bottomRows(js.m_eq) = js.J_h;
    js.J_c = Mat::Zero(js.m_ineq + js.m_eq, cs.n + js.m_ineq);
    js.J_c.leftCols(cs.n) = js.J_V;
    js.J_c.block(0, cs.n, js.m_ineq, js.m_ineq) = Mat::Identity(js.m_ineq, js.m_ineq);
    return js;
  }
};

// Stacked residual c(V, mu) = [g(V) + mu; h(V)].
inline Vec residual(const ConstraintSystem& cs, const Vec& v) {
  require(static_cast<int>(v.size()) == cs.n, "residual: value dimension mismatch");
  const int m1 = static_cast<int>(cs.ineq_edges.size());
  const int m2 = static_cast<int>(cs.eq_pairs.size());
  Vec c(m1 + m2);
  for (int e = 0; e < m1; ++e)
    c(e) = cs.delta + v(cs.ineq_edges[e].second) - v(cs.ineq_edges[e].first) + cs.mu(e);
  for (int e = 0; e < m2; ++e)
    c(m1 + e) = v(cs.eq_pairs[e].first) - v(cs.eq_pairs[e].second);
  return c;
}

namespace detail {

// Solve (M M^T + eps I) y = rhs. eps == 0 uses a rank-revealing decomposition
// so rank-deficient systems produce the minimum-norm solution.
inline Vec gram_solve(const Mat& m, const Vec& rhs, double eps) {
  const Mat gram = m * m.transpose();
  if (eps > 0.0) {
    Mat damped = gram;
    damped.diagonal().array() += eps;
    const auto ldlt = damped.ldlt();
    numeric_check(ldlt.info() == Eigen::Success, "gram_solve: factorization failed");
    return ldlt.solve(rhs);
  }
  return gram.completeOrthogonalDecomposition().solve(rhs);
}

}  // namespace detail

// Orthogonal projection of g onto the tangent space of the value-layer
// constraints: g - J_V^T (J_V J_V^T + eps I)^{-1} J_V g.
inline Vec tangent_project(const SparseJacobians& js, const Vec& g, double eps = 0.0) {
  require(eps >= 0.0, "tangent_project: eps must be nonnegative");
  require(static_cast<int>(g.size()) == js.n, "tangent_project: dimension mismatch");
  if (js.J_V.rows() == 0) return g;
  const Vec y = detail::gram_solve(js.J_V, js.J_V * g, eps);
  return g - js.J_V.transpose() * y;
}

// Minimum-norm (damped) correction Delta = -lambda J_c^+ c over (v, mu).
inline Vec normal_step(const SparseJacobians& js, const Vec& c, double lambda, double eps) {
  require(lambda > 0.0, "normal_step: lambda must be positive");
  require(static_cast<int>(c.size()) == js.J_c.rows(), "normal_step: residual dimension mismatch");
  if (js.J_c.rows() == 0) return Vec::Zero(js.n);
  return -lambda * (js.J_c.transpose() * detail::gram_solve(js.J_c, c, eps));
}

struct ManifoldDiagnostics {
  double phi_before = 0.0;
  double phi_after = 0.0;
  double residual_norm = 0.0;
  bool normal_gated_on = false;
};

struct ManifoldUpdate {
  Vec v_plus;
  Vec mu_plus;
  ManifoldDiagnostics diag;
};

// One tangent+normal value-layer step:
//   Delta_tan = -P_tan td_grad, Delta_nor gated on ||c|| > threshold,
//   V+ = V + eta (Delta_tan + Delta_nor_V), mu+ = [mu - eta_mu (g(V)+mu)]_+.
inline ManifoldUpdate manifold_update(const ConstraintSystem& cs, const SparseJacobians& js,
                                      const Vec& v, const Vec& td_grad, double eta, double eta_mu,
                                      double lambda, double gate_threshold, double eps = 1e-6) {
  require(eta > 0.0 && eta_mu > 0.0, "manifold_update: step sizes must be positive");
  const int m1 = js.m_ineq;
  const Vec c = residual(cs, v);
  ManifoldUpdate out;
  out.diag.phi_before = 0.5 * c.squaredNorm();
  out.diag.residual_norm = c.norm();
  Vec delta = -tangent_project(js, td_grad, eps);
  if (c.norm() > gate_threshold && c.size() > 0) {
    out.diag.normal_gated_on = true;
    delta += normal_step(js, c, lambda, eps).head(cs.n);
  }
  out.v_plus = v + eta * delta;
  const Vec g = cs.margins(v);
  out.mu_plus = (cs.mu - eta_mu * (g + cs.mu)).cwiseMax(0.0);
  ConstraintSystem after = cs;
  after.mu = out.mu_plus;
  out.diag.phi_after = 0.5 * residual(after, out.v_plus).squaredNorm();
  return out;
}

// Keep only near-violated inequality rows g_e(V) > -xi; equalities untouched.
// Slacks follow their surviving rows.
inline ConstraintSystem active_set(const ConstraintSystem& cs, const Vec& v, double xi) {
  require(xi >= 0.0, "active_set: xi must be nonnegative");
  ConstraintSystem out;
  out.n = cs.n;
  out.delta = cs.delta;
  out.eq_pairs = cs.eq_pairs;
  std::vector<double> mu_kept;
  for (int e = 0; e < static_cast<int>(cs.ineq_edges.size()); ++e) {
    const double g = cs.delta + v(cs.ineq_edges[e].second) - v(cs.ineq_edges[e].first);
    if (g > -xi) {
      out.ineq_edges.push_back(cs.ineq_edges[e]);
      mu_kept.push_back(cs.mu(e));
    }
  }
  out.mu = Vec::Zero(static_cast<int>(mu_kept.size()));
  for (int e = 0; e < out.mu.size(); ++e) out.mu(e) = mu_kept[e];
  return out;
}

struct CorrectionResult {
  Vec v;
  Vec mu;
  int iterations = 0;
  double residual_norm = 0.0;
};

// Pure minimum-norm correction iterations Delta = -J_c^+ c until ||c|| <= tol.
// Non-convergence within max_iters is a hard error carrying the final norm.
inline CorrectionResult fallback_correct(const ConstraintSystem& cs, const SparseJacobians& js,
                                         const Vec& v, double tol, int max_iters,
                                         double eps = 1e-6) {
  require(tol > 0.0, "fallback_correct: tol must be positive");
  CorrectionResult out;
  out.v = v;
  out.mu = cs.mu;
  ConstraintSystem cur = cs;
  for (int it = 0; it <= max_iters; ++it) {
    cur.mu = out.mu;
    const Vec c = residual(cur, out.v);
    out.residual_norm = c.norm();
    out.iterations = it;
    if (out.residual_norm <= tol) return out;
    if (it == max_iters) break;
    const Vec delta_full = js.J_c.transpose() * detail::gram_solve(js.J_c, c, eps);
    out.v -= delta_full.head(cs.n);
    out.mu = (out.mu - delta_full.tail(js.m_ineq)).cwiseMax(0.0);
  }
  numeric_check(false, "fallback_correct: no convergence within " + std::to_string(max_iters) +
                           " iterations, ||c|| = " + std::to_string(out.residual_norm));
  return out;  // unreachable
}

}  // namespace gcr
