#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/trainer.hpp"

namespace gcr {

// Centered moving-average smoothing (window clipped at the series ends).
inline std::vector<double> smooth_returns(const std::vector<double>& r, int window) {
  require(window >= 1, "smooth_returns: window must be positive");
  const int n = static_cast<int>(r.size());
  std::vector<double> out(n, 0.0);
  const int half = (window - 1) / 2;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + window - 1 - half);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += r[j];
    out[i] = s / (hi - lo + 1);
  }
  return out;
}

// Trapezoidal integral of the window-smoothed return series over env steps
// up to n, with the curve extended from step 0 at the first checkpoint value.
inline double auc_at_n(const RunRecord& rec, long n, int window) {
  require(!rec.eval_steps.empty(), "auc_at_n: empty record");
  require(n <= rec.eval_steps.back(), "auc_at_n: n beyond the last evaluation step");
  const std::vector<double> sm = smooth_returns(rec.eval_returns, window);
  double auc = 0.0;
  long prev_step = 0;
  double prev_val = sm.front();
  for (std::size_t i = 0; i < sm.size(); ++i) {
    const long step = rec.eval_steps[i];
    if (step > n) {
      // partial segment up to n
      const double frac = static_cast<double>(n - prev_step) / (step - prev_step);
      const double val = prev_val + frac * (sm[i] - prev_val);
      auc += 0.5 * (prev_val + val) * (n - prev_step);
      return auc;
    }
    auc += 0.5 * (prev_val + sm[i]) * (step - prev_step);
    prev_step = step;
    prev_val = sm[i];
    if (step == n) break;
  }
  return auc;
}

// Smallest evaluation step at which the smoothed return reaches r_thr,
// clipped at n when never reached.
inline long steps_to_threshold(const RunRecord& rec, double r_thr, long n, int window) {
  const std::vector<double> sm = smooth_returns(rec.eval_returns, window);
  for (std::size_t i = 0; i < sm.size(); ++i) {
    if (rec.eval_steps[i] > n) break;
    if (sm[i] >= r_thr) return rec.eval_steps[i];
  }
  return n;
}

// Mean evaluation return over the last 20% of checkpoints (at least one).
inline double final_return(const RunRecord& rec) {
  require(!rec.eval_returns.empty(), "final_return: empty record");
  const int n = static_cast<int>(rec.eval_returns.size());
  const int take = std::max(1, (n + 4) / 5);
  double s = 0.0;
  for (int i = n - take; i < n; ++i) s += rec.eval_returns[i];
  return s / take;
}

// Percentile bootstrap CI over per-seed values with a seeded resampler.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& values, int resamples,
                                              double level = 0.95, std::uint64_t seed = 0) {
  require(values.size() >= 2, "bootstrap_ci: need at least two seeds");
  require(resamples >= 1, "bootstrap_ci: resamples must be positive");
  Rng rng(mix_seed(seed, 0xb007ull));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(values.size()) - 1);
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    means[r] = s / values.size();
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  const auto at = [&](double q) {
    const double pos = q * (resamples - 1);
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, resamples - 1);
    return means[lo] + (pos - lo) * (means[hi] - means[lo]);
  };
  return {at(tail), at(1.0 - tail)};
}

// Mean variance of the eval-return series over sliding windows; the stability
// diagnostic used for the order-regularizer comparisons.
inline double within_window_variance(const RunRecord& rec, int window = 10) {
  const int n = static_cast<int>(rec.eval_returns.size());
  require(window >= 2, "within_window_variance: window must be at least 2");
  if (n < window) return 0.0;
  double total = 0.0;
  int count = 0;
  for (int t = 0; t + window <= n; ++t) {
    double mean = 0.0;
    for (int j = t; j < t + window; ++j) mean += rec.eval_returns[j];
    mean /= window;
    double var = 0.0;
    for (int j = t; j < t + window; ++j) {
      const double d = rec.eval_returns[j] - mean;
      var += d * d;
    }
    total += var / window;
    ++count;
  }
  return total / count;
}

struct MetricsSummary {
  double auc_at_n = 0.0;
  long steps_to_threshold = 0;
  double final_return_mean = 0.0;
  double final_return_std = 0.0;
  double worst_seed_final = 0.0;
  std::pair<double, double> ci_auc{0, 0};
  std::pair<double, double> ci_steps{0, 0};
  std::pair<double, double> ci_final{0, 0};
};

// Across-seed aggregate of the three metric families.
inline MetricsSummary summarize(const std::vector<RunRecord>& records, double r_thr, long n,
                                int window, int resamples = 2000) {
  require(!records.empty(), "summarize: no records");
  std::vector<double> aucs, steps, finals;
  for (const RunRecord& r : records) {
    aucs.push_back(auc_at_n(r, n, window));
    steps.push_back(static_cast<double>(steps_to_threshold(r, r_thr, n, window)));
    finals.push_back(final_return(r));
  }
  MetricsSummary s;
  const auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return t / v.size();
  };
  s.auc_at_n = mean(aucs);
  s.steps_to_threshold = static_cast<long>(mean(steps));
  s.final_return_mean = mean(finals);
  double var = 0.0;
  for (double f : finals) var += (f - s.final_return_mean) * (f - s.final_return_mean);
  s.final_return_std = finals.size() > 1 ? std::sqrt(var / (finals.size() - 1)) : 0.0;
  s.worst_seed_final = *std::min_element(finals.begin(), finals.end());
  if (records.size() >= 2) {
    s.ci_auc = bootstrap_ci(aucs, resamples);
    s.ci_steps = bootstrap_ci(steps, resamples);
    s.ci_final = bootstrap_ci(finals, resamples);
  }
  return s;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace gcr
