#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/mdp.hpp"

namespace gcr {

// Alternating column/row normalization of exp(logits/temp). The global max is
// subtracted before exponentiation; normalization cancels the shift.
inline Mat sinkhorn(const Mat& logits, int iters, double temp) {
  require(logits.rows() == logits.cols(), "sinkhorn: matrix must be square");
  require(iters >= 1, "sinkhorn: iters must be positive");
  require(temp > 0.0, "sinkhorn: temp must be positive");
  numeric_check(logits.allFinite(), "sinkhorn: non-finite logits");
  Mat s = ((logits.array() - logits.maxCoeff()) / temp).exp();
  for (int it = 0; it < iters; ++it) {
    for (int c = 0; c < s.cols(); ++c) s.col(c) /= s.col(c).sum();
    for (int r = 0; r < s.rows(); ++r) s.row(r) /= s.row(r).sum();
  }
  return s;
}

namespace detail {

// O(n^3) Hungarian algorithm (potentials form), minimizing total cost.
// Returns row_of_col[j] = assigned row for column j... inverted below.
inline std::vector<int> hungarian_min(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_of_col(n);
  for (int j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
  return row_of_col;
}

inline double assignment_value(const Mat& cost, const std::vector<int>& row_of_col) {
  double s = 0.0;
  for (int j = 0; j < static_cast<int>(row_of_col.size()); ++j) s += cost(row_of_col[j], j);
  return s;
}

// Minimum-cost assignment with forced pairs; used to canonicalize ties.
inline double hungarian_with_forced(const Mat& cost, const std::vector<int>& forced_col_of_row,
                                    std::vector<int>* full_row_of_col) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> free_rows, free_cols;
  std::vector<char> col_taken(n, 0);
  double fixed = 0.0;
  for (int i = 0; i < n; ++i) {
    if (forced_col_of_row[i] >= 0) {
      fixed += cost(i, forced_col_of_row[i]);
      col_taken[forced_col_of_row[i]] = 1;
    } else {
      free_rows.push_back(i);
    }
  }
  for (int j = 0; j < n; ++j)
    if (!col_taken[j]) free_cols.push_back(j);
  std::vector<int> row_of_col(n, -1);
  for (int i = 0; i < n; ++i)
    if (forced_col_of_row[i] >= 0) row_of_col[forced_col_of_row[i]] = i;
  if (!free_rows.empty()) {
    const int k = static_cast<int>(free_rows.size());
    Mat sub(k, k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) sub(a, b) = cost(free_rows[a], free_cols[b]);
    const std::vector<int> sub_assign = hungarian_min(sub);
    for (int b = 0; b < k; ++b) row_of_col[free_cols[b]] = free_rows[sub_assign[b]];
    fixed += assignment_value(sub, sub_assign);
  }
  if (full_row_of_col) *full_row_of_col = row_of_col;
  return fixed;
}

}  // namespace detail

// Minimum-cost assignment, lexicographically canonicalized: among optimal
// assignments (within tol) the one mapping row 0 to the lowest column, then
// row 1, and so on. col_of_row[i] = assigned column.
inline std::vector<int> assignment_lex_min(const Mat& cost, double tol = 1e-12) {
  const int n = static_cast<int>(cost.rows());
  require(cost.cols() == n, "assignment_lex_min: cost must be square");
  std::vector<int> row_of_col = detail::hungarian_min(cost);
  const double best = detail::assignment_value(cost, row_of_col);
  const double eps = tol * (1.0 + std::abs(best));
  std::vector<int> forced(n, -1);
  std::vector<char> col_used(n, 0);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < n; ++c) {
      if (col_used[c]) continue;
      forced[i] = c;
      const double val = detail::hungarian_with_forced(cost, forced, nullptr);
      if (val <= best + eps) {
        col_used[c] = 1;
        break;
      }
      forced[i] = -1;
    }
    require(forced[i] >= 0, "assignment_lex_min: internal inconsistency");
  }
  return forced;
}

// Nearest permutation matrix in Frobenius norm, argmin ||S - P||_F^2, solved
// as a linear assignment maximizing <S, P>. Ties break toward the lowest
// row index, then lowest column index.
inline Mat proj_perm(const Mat& s) {
  require(s.rows() == s.cols(), "proj_perm: matrix must be square");
  const int n = static_cast<int>(s.rows());
  const std::vector<int> col_of_row = assignment_lex_min(-s);
  Mat p = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) p(i, col_of_row[i]) = 1.0;
  return p;
}

struct OrthogonalResult {
  Mat q;
  bool degenerate = false;  // smallest singular value < 1e-12
  double min_singular = 0.0;
};

// Polar factor U V^T: the nearest orthogonal matrix in Frobenius norm.
inline OrthogonalResult polar(const Mat& a) {
  require(a.rows() == a.cols(), "polar: matrix must be square");
  numeric_check(a.allFinite(), "polar: non-finite input");
  Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  OrthogonalResult out;
  out.q = svd.matrixU() * svd.matrixV().transpose();
  out.min_singular = svd.singularValues().minCoeff();
  out.degenerate = out.min_singular < 1e-12;
  return out;
}

// Orthogonal Procrustes: R = U V^T from the SVD of phi_g phi^T, minimizing
// ||R phi - phi_g||_F over O(d). Columns are paired samples.
inline OrthogonalResult procrustes(const Mat& phi, const Mat& phi_g) {
  require(phi.rows() == phi_g.rows() && phi.cols() == phi_g.cols(),
          "procrustes: shape mismatch");
  return polar(phi_g * phi.transpose());
}

// K paired (feature transform, action relabel) candidates. Slot 0 is pinned
// to the identity pair. Pi caches the Sinkhorn output of perm_logits.
// composition maps tracked generator pairs (g,h) to the slot holding their
// product; inverse_slot maps a slot to the slot holding its inverse.
struct TransformBank {
  int K = 0;
  int d = 0;
  int n_actions = 0;
  std::vector<Mat> W;
  std::vector<Mat> perm_logits;
  std::vector<Mat> Pi;
  std::vector<int> generators;
  std::map<std::pair<int, int>, int> composition;
  std::map<int, int> inverse_slot;
  int sinkhorn_iters = 80;
  double sinkhorn_temp = 1.0;

  void refresh_pi() {
    Pi.resize(K);
    for (int k = 0; k < K; ++k) Pi[k] = sinkhorn(perm_logits[k], sinkhorn_iters, sinkhorn_temp);
  }

  void validate() const {
    require(K >= 1, "TransformBank: need at least one slot");
    require(static_cast<int>(W.size()) == K && static_cast<int>(Pi.size()) == K &&
                static_cast<int>(perm_logits.size()) == K,
            "TransformBank: slot count mismatch");
    for (int k = 0; k < K; ++k) {
      require(W[k].rows() == d && W[k].cols() == d, "TransformBank: W shape");
      require(Pi[k].rows() == n_actions && Pi[k].cols() == n_actions, "TransformBank: Pi shape");
      for (int r = 0; r < n_actions; ++r) {
        require(std::abs(Pi[k].row(r).sum() - 1.0) < 1e-6 &&
                    std::abs(Pi[k].col(r).sum() - 1.0) < 1e-6,
                "TransformBank: cached Pi is not doubly stochastic");
      }
    }
  }

  // Slot 0 exactly identity; other W at I plus Gaussian noise, logits zero.
  static TransformBank init(int K, int d, int n_actions, std::uint64_t seed,
                            double noise = 0.01) {
    require(K >= 1, "TransformBank::init: K must be positive");
    TransformBank b;
    b.K = K;
    b.d = d;
    b.n_actions = n_actions;
    Rng rng(mix_seed(seed, 0x7ba9'4cf1ull));
    std::normal_distribution<double> gauss(0.0, noise);
    for (int k = 0; k < K; ++k) {
      Mat w = Mat::Identity(d, d);
      Mat logits = Mat::Zero(n_actions, n_actions);
      if (k == 0) {
        logits = 8.0 * Mat::Identity(n_actions, n_actions);
      } else {
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) w(i, j) += gauss(rng);
      }
      b.W.push_back(std::move(w));
      b.perm_logits.push_back(std::move(logits));
      if (k > 0) b.generators.push_back(k);
    }
    b.refresh_pi();
    b.Pi[0] = Mat::Identity(n_actions, n_actions);  // slot 0 exactly the identity pair
    return b;
  }

  // Exact bank from paired (feature transform, action permutation) matrices;
  // slot 0 must be the identity pair.
  static TransformBank from_exact(const std::vector<Mat>& ws, const std::vector<Mat>& pis,
                                  std::vector<int> generators) {
    require(!ws.empty() && ws.size() == pis.size(), "TransformBank::from_exact: shape mismatch");
    TransformBank b;
    b.K = static_cast<int>(ws.size());
    b.d = static_cast<int>(ws[0].rows());
    b.n_actions = static_cast<int>(pis[0].rows());
    b.W = ws;
    b.Pi = pis;
    b.generators = std::move(generators);
    for (int k = 0; k < b.K; ++k) b.perm_logits.push_back(8.0 * (2.0 * pis[k] - Mat::Ones(b.n_actions, b.n_actions)));
    return b;
  }
};

// Q(T_k s, .) in linear mode: head^T (W_k phi(s)). The bank acts on features.
inline Vec transformed_values(const QModel& q, const TransformBank& bank, int k, const Vec& z) {
  return q.head.transpose() * (bank.W[k] * z);
}

struct SymGrads {
  double value = 0.0;
  Mat grad_head;
  std::vector<Mat> grad_W;
  std::vector<Mat> grad_Pi;  // straight-through: gradients land on perm_logits
};

namespace detail {

// Shared core of the global and local equivariance losses. weight(i,k)
// multiplies each residual term; scale(k) divides slot k's sum.
template <class WeightFn>
SymGrads equivariance_core(const QModel& q, const TransformBank& bank,
                           const std::vector<int>& states, WeightFn&& weight,
                           const Vec& slot_scale) {
  require(q.mode == QMode::linear, "equivariance loss: q must be in linear mode");
  const int B = static_cast<int>(states.size());
  SymGrads out;
  out.grad_head = Mat::Zero(q.head.rows(), q.head.cols());
  out.grad_W.assign(bank.K, Mat::Zero(bank.d, bank.d));
  out.grad_Pi.assign(bank.K, Mat::Zero(bank.n_actions, bank.n_actions));
  for (int k = 0; k < bank.K; ++k) {
    const double sc = slot_scale(k);
    if (sc == 0.0) continue;
    for (int i = 0; i < B; ++i) {
      const double wik = weight(i, k);
      if (wik == 0.0) continue;
      const Vec z = q.feature(states[i]);
      const Vec wz = bank.W[k] * z;
      const Vec qt = q.head.transpose() * wz;       // Q(T_k s, .)
      const Vec r = q.head.transpose() * z - bank.Pi[k].transpose() * qt;
      const double c = wik * sc;
      out.value += c * r.squaredNorm();
      const Vec pir = bank.Pi[k] * r;
      out.grad_head += 2.0 * c * (z * r.transpose() - wz * pir.transpose());
      out.grad_W[k] -= 2.0 * c * (q.head * pir) * z.transpose();
      out.grad_Pi[k] -= 2.0 * c * qt * r.transpose();
    }
  }
  return out;
}

}  // namespace detail

// L_eq = (1/KB) sum_k sum_i || Q(s_i,.) - Pi_k^T Q(T_k s_i,.) ||^2 with
// analytic gradients; Pi is treated as a constant of the Sinkhorn output.
inline SymGrads equivariance_loss(const QModel& q, const TransformBank& bank,
                                  const std::vector<int>& states) {
  require(!states.empty(), "equivariance_loss: empty batch");
  const double scale = 1.0 / (static_cast<double>(bank.K) * static_cast<double>(states.size()));
  return detail::equivariance_core(
      q, bank, states, [](int, int) { return 1.0; },
      Vec::Constant(bank.K, scale));
}

struct ApplicabilityWeights {
  Mat alpha;  // B x K in [0,1]
  double sigma_loc = 1.0;
  double tau_loc = 1.0;
};

// alpha_{i,k} = exp(-||z_i W_k - NN(z_i W_k)||^2 / sigma^2) * exp(-rho_{i,k}/tau_loc)
// with NN the nearest feature vector within the batch and rho the equivariance
// residual of the pair.
inline ApplicabilityWeights applicability_weights(const QModel& q, const TransformBank& bank,
                                                  const std::vector<int>& states,
                                                  double sigma_loc = 1.0, double tau_loc = 1.0) {
  const int B = static_cast<int>(states.size());
  require(B >= 2, "applicability_weights: need at least two samples");
  require(sigma_loc > 0.0 && tau_loc > 0.0, "applicability_weights: scales must be positive");
  std::vector<Vec> feats(B);
  for (int i = 0; i < B; ++i) feats[i] = q.feature(states[i]);
  ApplicabilityWeights out;
  out.sigma_loc = sigma_loc;
  out.tau_loc = tau_loc;
  out.alpha = Mat::Zero(B, bank.K);
  for (int k = 0; k < bank.K; ++k) {
    for (int i = 0; i < B; ++i) {
      const Vec wz = bank.W[k] * feats[i];
      double nn = std::numeric_limits<double>::infinity();
      for (int j = 0; j < B; ++j) nn = std::min(nn, (wz - feats[j]).squaredNorm());
      const Vec qt = q.head.transpose() * wz;
      const double rho = (q.head.transpose() * feats[i] - bank.Pi[k].transpose() * qt).squaredNorm();
      out.alpha(i, k) = std::exp(-nn / (sigma_loc * sigma_loc)) * std::exp(-rho / tau_loc);
    }
  }
  return out;
}

// Normalized local equivariance loss; reduces to equivariance_loss when all
// alpha are 1. alpha is treated as a constant input.
inline SymGrads local_equivariance_loss(const QModel& q, const TransformBank& bank,
                                        const std::vector<int>& states,
                                        const ApplicabilityWeights& weights) {
  require(!states.empty(), "local_equivariance_loss: empty batch");
  require(weights.alpha.rows() == static_cast<Eigen::Index>(states.size()) &&
              weights.alpha.cols() == bank.K,
          "local_equivariance_loss: alpha shape mismatch");
  Vec scale(bank.K);
  for (int k = 0; k < bank.K; ++k)
    scale(k) = 1.0 / (static_cast<double>(bank.K) * (weights.alpha.col(k).sum() + 1e-8));
  return detail::equivariance_core(
      q, bank, states, [&](int i, int k) { return weights.alpha(i, k); }, scale);
}

struct GroupRegs {
  double r_id = 0.0;
  double r_clo = 0.0;
  double r_inv = 0.0;
  double r_ord = 0.0;
  Mat clo_argmin;            // per pair (i,j): winning slot l
  std::vector<int> inv_argmin;
  std::vector<Mat> grad_W;   // gradient of r_id + r_clo + r_inv + r_ord
  std::vector<Mat> grad_Pi;

  double total() const { return r_id + r_clo + r_inv + r_ord; }
};

namespace detail {

// d/dW ||W^m - I||_F^2 accumulated into grad.
inline void power_penalty_grad(const Mat& w, int m, double coeff, double* value, Mat* grad) {
  std::vector<Mat> pows(m + 1);
  pows[0] = Mat::Identity(w.rows(), w.cols());
  for (int j = 1; j <= m; ++j) pows[j] = pows[j - 1] * w;
  const Mat a = pows[m] - Mat::Identity(w.rows(), w.cols());
  *value += coeff * a.squaredNorm();
  if (!grad) return;
  for (int j = 0; j < m; ++j)
    *grad += coeff * 2.0 * pows[j].transpose() * a * pows[m - 1 - j].transpose();
}

}  // namespace detail

// Group-like regularizers keeping the bank anchored, closed, inverse-closed
// and of finite order:
//   R_id  = ||W_0-I||^2 + ||Pi_0-I||^2 + (1/K) sum_k ||W_k^T W_k - I||^2
//   R_clo = E_{i,j} min_l (||W_i W_j - W_l||^2 + ||Pi_i Pi_j - Pi_l||^2)
//   R_inv = E_i   min_l (||W_i^T - W_l||^2 + ||Pi_i^T - Pi_l||^2)
//   R_ord = (1/K) sum_i sum_{m in orders} (||W_i^m - I||^2 + ||Pi_i^m - I||^2)
// The min is hard; gradients flow to the recorded winner. Pair expectations
// enumerate fully for K <= 6 and subsample 30 pairs otherwise (rng required
// in that case).
inline GroupRegs group_regularizers(const TransformBank& bank,
                                    const std::vector<int>& orders = {2, 4},
                                    Rng* rng = nullptr) {
  const int K = bank.K;
  require(K >= 1, "group_regularizers: empty bank");
  GroupRegs out;
  out.grad_W.assign(K, Mat::Zero(bank.d, bank.d));
  out.grad_Pi.assign(K, Mat::Zero(bank.n_actions, bank.n_actions));
  out.clo_argmin = Mat::Constant(K, K, -1);
  out.inv_argmin.assign(K, -1);
  const Mat id_w = Mat::Identity(bank.d, bank.d);
  const Mat id_p = Mat::Identity(bank.n_actions, bank.n_actions);

  // R_id
  out.r_id = (bank.W[0] - id_w).squaredNorm() + (bank.Pi[0] - id_p).squaredNorm();
  out.grad_W[0] += 2.0 * (bank.W[0] - id_w);
  out.grad_Pi[0] += 2.0 * (bank.Pi[0] - id_p);
  for (int k = 0; k < K; ++k) {
    const Mat gram = bank.W[k].transpose() * bank.W[k] - id_w;
    out.r_id += gram.squaredNorm() / K;
    out.grad_W[k] += 4.0 / K * bank.W[k] * gram;
  }

  // R_clo over ordered pairs
  std::vector<std::pair<int, int>> pairs;
  if (K <= 6) {
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) pairs.emplace_back(i, j);
  } else {
    require(rng != nullptr, "group_regularizers: rng required for pair subsampling");
    std::uniform_int_distribution<int> pick(0, K - 1);
    for (int t = 0; t < 30; ++t) pairs.emplace_back(pick(*rng), pick(*rng));
  }
  const double pair_scale = 1.0 / static_cast<double>(pairs.size());
  for (const auto& [i, j] : pairs) {
    const Mat wij = bank.W[i] * bank.W[j];
    const Mat pij = bank.Pi[i] * bank.Pi[j];
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int l = 0; l < K; ++l) {
      const double val = (wij - bank.W[l]).squaredNorm() + (pij - bank.Pi[l]).squaredNorm();
      if (val < best_val) {
        best_val = val;
        best = l;
      }
    }
    out.clo_argmin(i, j) = best;
    out.r_clo += pair_scale * best_val;
    const Mat dw = wij - bank.W[best];
    const Mat dp = pij - bank.Pi[best];
    out.grad_W[i] += pair_scale * 2.0 * dw * bank.W[j].transpose();
    out.grad_W[j] += pair_scale * 2.0 * bank.W[i].transpose() * dw;
    out.grad_W[best] -= pair_scale * 2.0 * dw;
    out.grad_Pi[i] += pair_scale * 2.0 * dp * bank.Pi[j].transpose();
    out.grad_Pi[j] += pair_scale * 2.0 * bank.Pi[i].transpose() * dp;
    out.grad_Pi[best] -= pair_scale * 2.0 * dp;
  }

  // R_inv
  for (int i = 0; i < K; ++i) {
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int l = 0; l < K; ++l) {
      const double val = (bank.W[i].transpose() - bank.W[l]).squaredNorm() +
                         (bank.Pi[i].transpose() - bank.Pi[l]).squaredNorm();
      if (val < best_val) {
        best_val = val;
        best = l;
      }
    }
    out.inv_argmin[i] = best;
    out.r_inv += best_val / K;
    const Mat dw = bank.W[i].transpose() - bank.W[best];
    const Mat dp = bank.Pi[i].transpose() - bank.Pi[best];
    out.grad_W[i] += 2.0 / K * dw.transpose();
    out.grad_W[best] -= 2.0 / K * dw;
    out.grad_Pi[i] += 2.0 / K * dp.transpose();
    out.grad_Pi[best] -= 2.0 / K * dp;
  }

  // R_ord
  for (int i = 0; i < K; ++i) {
    for (int m : orders) {
      detail::power_penalty_grad(bank.W[i], m, 1.0 / K, &out.r_ord, &out.grad_W[i]);
      detail::power_penalty_grad(bank.Pi[i], m, 1.0 / K, &out.r_ord, &out.grad_Pi[i]);
    }
  }
  return out;
}

// Same value with the min winners pinned; used by the finite-difference check.
inline double group_reg_value_fixed_argmin(const TransformBank& bank, const GroupRegs& ref,
                                           const std::vector<int>& orders = {2, 4}) {
  const int K = bank.K;
  const Mat id_w = Mat::Identity(bank.d, bank.d);
  const Mat id_p = Mat::Identity(bank.n_actions, bank.n_actions);
  double total = (bank.W[0] - id_w).squaredNorm() + (bank.Pi[0] - id_p).squaredNorm();
  for (int k = 0; k < K; ++k)
    total += (bank.W[k].transpose() * bank.W[k] - id_w).squaredNorm() / K;
  const double pair_scale = 1.0 / static_cast<double>(K * K);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      const int l = static_cast<int>(ref.clo_argmin(i, j));
      total += pair_scale * ((bank.W[i] * bank.W[j] - bank.W[l]).squaredNorm() +
                             (bank.Pi[i] * bank.Pi[j] - bank.Pi[l]).squaredNorm());
    }
  }
  for (int i = 0; i < K; ++i) {
    const int l = ref.inv_argmin[i];
    total += ((bank.W[i].transpose() - bank.W[l]).squaredNorm() +
              (bank.Pi[i].transpose() - bank.Pi[l]).squaredNorm()) /
             K;
  }
  for (int i = 0; i < K; ++i) {
    for (int m : orders) {
      double v = 0.0;
      detail::power_penalty_grad(bank.W[i], m, 1.0 / K, &v, nullptr);
      detail::power_penalty_grad(bank.Pi[i], m, 1.0 / K, &v, nullptr);
      total += v;
    }
  }
  return total;
}

struct PermDivRegs {
  double r_perm = 0.0;  // mean row entropy of the cached Pi, pushing toward vertices
  double r_div = 0.0;   // pairwise exp(-||W_i - W_j||^2), discouraging collapse
  std::vector<Mat> grad_Pi;
  std::vector<Mat> grad_W;
};

inline PermDivRegs perm_and_div_regularizers(const TransformBank& bank) {
  const int K = bank.K;
  require(K >= 1, "perm_and_div_regularizers: empty bank");
  PermDivRegs out;
  out.grad_Pi.assign(K, Mat::Zero(bank.n_actions, bank.n_actions));
  out.grad_W.assign(K, Mat::Zero(bank.d, bank.d));
  const double scale = 1.0 / (static_cast<double>(K) * bank.n_actions);
  for (int k = 0; k < K; ++k) {
    for (int r = 0; r < bank.n_actions; ++r) {
      for (int c = 0; c < bank.n_actions; ++c) {
        const double p = bank.Pi[k](r, c);
        if (p <= 0.0) continue;  // 0 log 0 = 0
        out.r_perm -= scale * p * std::log(p);
        out.grad_Pi[k](r, c) = -scale * (std::log(p) + 1.0);
      }
    }
  }
  if (K >= 2) {
    const double pair_scale = 2.0 / (static_cast<double>(K) * (K - 1));
    for (int i = 0; i < K; ++i) {
      for (int j = i + 1; j < K; ++j) {
        const Mat diff = bank.W[i] - bank.W[j];
        const double e = std::exp(-diff.squaredNorm());
        out.r_div += pair_scale * e;
        out.grad_W[i] -= pair_scale * 2.0 * e * diff;
        out.grad_W[j] += pair_scale * 2.0 * e * diff;
      }
    }
  }
  return out;
}

// One Projection -> Closure -> Alignment cycle:
//   (I)   every W is replaced by its polar factor, every Pi by the nearest
//         permutation of Sinkhorn(logits);
//   (II)  tracked composite slots are overwritten by Polar(W_g W_h) and
//         ProjPerm(Pi_g Pi_h); slot 0 is forced to the identity pair and
//         inverse slots to transposes;
//   (III) each generator W is re-anchored by Procrustes on the batch features
//         against its own image, and Pi by a minimum-cost assignment on the
//         value-discrepancy matrix M_g(a,b) = ||Y_g(a,.) - Y(b,.)||^2.
// A degenerate cross-covariance (rank-deficient batch) skips the alignment of
// that generator and keeps the projection result. Logits are re-anchored to
// the final permutations so the cached Pi stays consistent.
inline TransformBank closure_alignment_step(const TransformBank& bank_in, const QModel& q,
                                            const std::vector<int>& states) {
  TransformBank bank = bank_in;
  const Mat id_w = Mat::Identity(bank.d, bank.d);
  const Mat id_p = Mat::Identity(bank.n_actions, bank.n_actions);

  // (I) projection
  for (int g : bank.generators) {
    bank.W[g] = polar(bank.W[g]).q;
    bank.Pi[g] = proj_perm(sinkhorn(bank.perm_logits[g], bank.sinkhorn_iters, bank.sinkhorn_temp));
  }

  // (II) closure on tracked pairs, then identity and inverses
  for (const auto& [pair, slot] : bank.composition) {
    const auto& [g, h] = pair;
    bank.W[slot] = polar(bank.W[g] * bank.W[h]).q;
    bank.Pi[slot] = proj_perm(bank.Pi[g] * bank.Pi[h]);
  }
  bank.W[0] = id_w;
  bank.Pi[0] = id_p;
  for (const auto& [g, slot] : bank.inverse_slot) {
    if (slot == g) continue;
    bank.W[slot] = bank.W[g].transpose();
    bank.Pi[slot] = bank.Pi[g].transpose();
  }

  // (III) alignment on the batch
  if (!states.empty() && q.mode == QMode::linear) {
    const int B = static_cast<int>(states.size());
    Mat phi(bank.d, B);
    for (int i = 0; i < B; ++i) phi.col(i) = q.feature(states[i]);
    for (int g : bank.generators) {
      const Mat phi_g = bank.W[g] * phi;
      const OrthogonalResult pro = procrustes(phi, phi_g);
      if (pro.degenerate) continue;
      bank.W[g] = pro.q;
      // matching step: Y(b, i) = Q(s_i, b), Y_g(a, i) = Q(T_g s_i, a)
      Mat y(bank.n_actions, B), yg(bank.n_actions, B);
      for (int i = 0; i < B; ++i) {
        y.col(i) = q.head.transpose() * phi.col(i);
        yg.col(i) = q.head.transpose() * (bank.W[g] * phi.col(i));
      }
      Mat cost(bank.n_actions, bank.n_actions);
      for (int a = 0; a < bank.n_actions; ++a)
        for (int b = 0; b < bank.n_actions; ++b) cost(a, b) = (yg.row(a) - y.row(b)).squaredNorm();
      // Pi(a,b) = 1 iff column b is matched to row a (minimizing total cost)
      const std::vector<int> row_of_col = [&] {
        const std::vector<int> col_of_row = assignment_lex_min(cost.transpose());
        return col_of_row;  // transposed cost: row index = b, value = a
      }();
      Mat pi = Mat::Zero(bank.n_actions, bank.n_actions);
      for (int b = 0; b < bank.n_actions; ++b) pi(row_of_col[b], b) = 1.0;
      bank.Pi[g] = pi;
    }
    // re-apply closure/identity/inverses so composites match aligned generators
    for (const auto& [pair, slot] : bank.composition) {
      const auto& [g, h] = pair;
      bank.W[slot] = polar(bank.W[g] * bank.W[h]).q;
      bank.Pi[slot] = proj_perm(bank.Pi[g] * bank.Pi[h]);
    }
    bank.W[0] = id_w;
    bank.Pi[0] = id_p;
    for (const auto& [g, slot] : bank.inverse_slot) {
      if (slot == g) continue;
      bank.W[slot] = bank.W[g].transpose();
      bank.Pi[slot] = bank.Pi[g].transpose();
    }
  }

  // keep logits consistent with the projected permutations
  for (int k = 0; k < bank.K; ++k)
    bank.perm_logits[k] = 8.0 * (2.0 * bank.Pi[k] - Mat::Ones(bank.n_actions, bank.n_actions));
  return bank;
}

// Frobenius closure residuals ||W_{gh} - W_g W_h|| + ||Pi_{gh} - Pi_g Pi_h||
// summed over tracked pairs; diagnostic for the contraction property.
inline double closure_residual(const TransformBank& bank) {
  double r = 0.0;
  for (const auto& [pair, slot] : bank.composition) {
    const auto& [g, h] = pair;
    r += (bank.W[slot] - bank.W[g] * bank.W[h]).norm() +
         (bank.Pi[slot] - bank.Pi[g] * bank.Pi[h]).norm();
  }
  return r;
}

struct SymWeights {
  double gamma_grp = 1.0;
  double gamma_perm = 0.0;
  double gamma_div = 0.0;
  double sigma_loc = 1.0;
  double tau_loc = 1.0;
  bool use_local = true;
  std::vector<int> orders = {2, 4};
};

// L_sym = L_eq^local + gamma_grp (R_id+R_clo+R_inv+R_ord)
//       + gamma_perm R_perm + gamma_div R_div, with composed gradients.
inline SymGrads sym_loss_total(const QModel& q, const TransformBank& bank,
                               const std::vector<int>& states, const SymWeights& weights) {
  SymGrads eq = weights.use_local
                    ? local_equivariance_loss(
                          q, bank, states,
                          applicability_weights(q, bank, states, weights.sigma_loc, weights.tau_loc))
                    : equivariance_loss(q, bank, states);
  if (weights.gamma_grp != 0.0) {
    const GroupRegs g = group_regularizers(bank, weights.orders);
    eq.value += weights.gamma_grp * g.total();
    for (int k = 0; k < bank.K; ++k) {
      eq.grad_W[k] += weights.gamma_grp * g.grad_W[k];
      eq.grad_Pi[k] += weights.gamma_grp * g.grad_Pi[k];
    }
  }
  if (weights.gamma_perm != 0.0 || weights.gamma_div != 0.0) {
    const PermDivRegs pd = perm_and_div_regularizers(bank);
    eq.value += weights.gamma_perm * pd.r_perm + weights.gamma_div * pd.r_div;
    for (int k = 0; k < bank.K; ++k) {
      eq.grad_Pi[k] += weights.gamma_perm * pd.grad_Pi[k];
      eq.grad_W[k] += weights.gamma_div * pd.grad_W[k];
    }
  }
  return eq;
}

}  // namespace gcr
