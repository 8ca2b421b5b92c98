// Independent reference computations used by the unit and acceptance
// tests. Nothing here calls into the library's numerical code.
#ifndef HPIM_TESTS_ORACLES_HPP_
#define HPIM_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using Sample = std::vector<std::vector<double>>;  // n x D

/// Direct evaluation of the L-order empirical CMD with std::pow and
/// separately accumulated norms.
inline double cmd(const Sample& a, const Sample& b, int order) {
  const std::size_t dim = a.front().size();
  auto mean = [&](const Sample& s) {
    std::vector<double> m(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
      for (const auto& x : s) m[d] += x[d];
      m[d] /= static_cast<double>(s.size());
    }
    return m;
  };
  auto central = [&](const Sample& s, const std::vector<double>& m, int l) {
    std::vector<double> c(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
      for (const auto& x : s) c[d] += std::pow(x[d] - m[d], l);
      c[d] /= static_cast<double>(s.size());
    }
    return c;
  };
  auto norm_diff = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  };
  const auto ma = mean(a), mb = mean(b);
  double total = norm_diff(ma, mb);
  for (int l = 2; l <= order; ++l) total += norm_diff(central(a, ma, l), central(b, mb, l));
  return total;
}

/// Average ranks (ties share the mean rank).
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

/// Exhaustive batch-hard hinge: per anchor, the largest single-triplet
/// term m + d(a,p) - d(a,n) over every (positive, negative) pair, clamped
/// at zero, summed over anchors.
inline double batch_hard_bruteforce(const std::vector<std::vector<double>>& e,
                                    const std::vector<std::size_t>& labels, double margin) {
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < e[i].size(); ++k) s += (e[i][k] - e[j][k]) * (e[i][k] - e[j][k]);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t a = 0; a < e.size(); ++a) {
    double best = 0.0;
    for (std::size_t p = 0; p < e.size(); ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < e.size(); ++n) {
        if (labels[n] == labels[a]) continue;
        best = std::max(best, margin + dist(a, p) - dist(a, n));
      }
    }
    total += best;
  }
  return total;
}

/// Average precision of one ranked relevance list.
inline double average_precision(const std::vector<bool>& relevant_in_rank_order) {
  double hits = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < relevant_in_rank_order.size(); ++i) {
    if (relevant_in_rank_order[i]) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  }
  return hits > 0 ? sum / hits : 0.0;
}

/// Central finite-difference gradient of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace oracle

#endif  // HPIM_TESTS_ORACLES_HPP_
