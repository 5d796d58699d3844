#pragma once

// Reference implementations written independently of the library, in the
// most literal form available. Slow on purpose.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double sigmoid(double x) { return 0.5 * (1.0 + std::tanh(0.5 * x)); }

/// -sum p log2 p / log2 K, summed term by term over nonzero counts.
inline double normalized_entropy(const Vec& counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double h = 0.0;
  for (double c : counts) {
    if (c > 0) {
      const double p = c / total;
      h += -p * std::log2(p);
    }
  }
  return h / std::log2(static_cast<double>(counts.size()));
}

inline Vec softmax(const Vec& z, double tau = 1.0, std::size_t width = 0) {
  const std::size_t k = width == 0 ? z.size() : width;
  double m = z[0] / tau;
  for (std::size_t j = 0; j < k; ++j) m = std::max(m, z[j] / tau);
  Vec e(k);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += (e[j] = std::exp(z[j] / tau - m));
  for (double& v : e) v /= s;
  return e;
}

inline double weighted_ce(const Mat& logits, const std::vector<std::size_t>& y, const Vec& w) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    num += w[i] * -std::log(softmax(logits[i])[y[i]]);
    den += w[i];
  }
  return num / den;
}

/// tau^2 * mean_i sum_j q_t log(q_t / q_s) over the first `old` columns.
inline double kd(const Mat& student, const Mat& teacher, double tau, std::size_t old) {
  double total = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    const Vec qs = softmax(student[i], tau, old);
    const Vec qt = softmax(teacher[i], tau, old);
    for (std::size_t j = 0; j < old; ++j) total += qt[j] * std::log(qt[j] / qs[j]);
  }
  return tau * tau * total / static_cast<double>(student.size());
}

/// MLP held as nested vectors: W[l][o][k], b[l][o]; ReLU on every layer but
/// the last.
struct Mlp {
  std::vector<Mat> W;
  std::vector<Vec> b;

  /// Unpacks a flat canonical parameter vector (per layer: weights row-major,
  /// then biases).
  static Mlp from_flat(const std::vector<std::size_t>& dims, const Vec& flat) {
    Mlp m;
    std::size_t p = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      Mat w(dims[l + 1], Vec(dims[l]));
      for (auto& row : w)
        for (double& v : row) v = flat[p++];
      Vec bias(dims[l + 1]);
      for (double& v : bias) v = flat[p++];
      m.W.push_back(std::move(w));
      m.b.push_back(std::move(bias));
    }
    return m;
  }

  Vec to_flat() const {
    Vec out;
    for (std::size_t l = 0; l < W.size(); ++l) {
      for (const auto& row : W[l]) out.insert(out.end(), row.begin(), row.end());
      out.insert(out.end(), b[l].begin(), b[l].end());
    }
    return out;
  }

  /// Activations of every layer for one input, input first.
  std::vector<Vec> activations(const Vec& x) const {
    std::vector<Vec> acts{x};
    for (std::size_t l = 0; l < W.size(); ++l) {
      Vec z(W[l].size());
      for (std::size_t o = 0; o < z.size(); ++o) {
        double s = b[l][o];
        for (std::size_t k = 0; k < acts.back().size(); ++k) s += acts.back()[k] * W[l][o][k];
        z[o] = (l + 1 < W.size()) ? std::max(0.0, s) : s;
      }
      acts.push_back(z);
    }
    return acts;
  }

  Mat logits(const Mat& xs) const {
    Mat out;
    for (const auto& x : xs) out.push_back(activations(x).back());
    return out;
  }

  /// Gradient of mean-over-batch unweighted CE, by textbook backprop.
  Mlp ce_grad(const Mat& xs, const std::vector<std::size_t>& y) const {
    Mlp g = zeros_like();
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto acts = activations(xs[i]);
      Vec delta = softmax(acts.back());
      delta[y[i]] -= 1.0;
      for (double& d : delta) d /= n;
      for (std::size_t l = W.size(); l-- > 0;) {
        const Vec& a = acts[l];
        for (std::size_t o = 0; o < delta.size(); ++o) {
          for (std::size_t k = 0; k < a.size(); ++k) g.W[l][o][k] += delta[o] * a[k];
          g.b[l][o] += delta[o];
        }
        if (l == 0) break;
        Vec prev(a.size(), 0.0);
        for (std::size_t k = 0; k < a.size(); ++k) {
          for (std::size_t o = 0; o < delta.size(); ++o) prev[k] += W[l][o][k] * delta[o];
          if (a[k] <= 0.0) prev[k] = 0.0;
        }
        delta = prev;
      }
    }
    return g;
  }

  Mlp zeros_like() const {
    Mlp z = *this;
    for (auto& w : z.W)
      for (auto& row : w) std::fill(row.begin(), row.end(), 0.0);
    for (auto& bias : z.b) std::fill(bias.begin(), bias.end(), 0.0);
    return z;
  }

  void sgd(const Mlp& g, double lr) {
    for (std::size_t l = 0; l < W.size(); ++l) {
      for (std::size_t o = 0; o < W[l].size(); ++o) {
        for (std::size_t k = 0; k < W[l][o].size(); ++k) W[l][o][k] -= lr * g.W[l][o][k];
        b[l][o] -= lr * g.b[l][o];
      }
    }
  }
};

/// Central differences of f at theta, one coordinate at a time.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec theta, double eps) {
  Vec g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t = theta[i];
    theta[i] = t + eps;
    const double up = f(theta);
    theta[i] = t - eps;
    const double down = f(theta);
    theta[i] = t;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// EMA after absorbing `grads` starting from an initialized average g0,
/// written out as the closed-form geometric sum.
inline Vec ema_unrolled(const Vec& g0, const Mat& grads, double beta) {
  const std::size_t n = grads.size();
  Vec out(g0.size());
  for (std::size_t d = 0; d < g0.size(); ++d) {
    double v = std::pow(beta, static_cast<double>(n)) * g0[d];
    for (std::size_t i = 0; i < n; ++i) v += (1.0 - beta) * std::pow(beta, static_cast<double>(n - 1 - i)) * grads[i][d];
    out[d] = v;
  }
  return out;
}

/// Regularized gradients of a stream, the average seeded from the first
/// gradient.
inline Mat gcr_stream(const Mat& grads, double lambda_gcr, double beta) {
  Mat out;
  Vec avg;
  for (const auto& g : grads) {
    if (avg.empty()) {
      out.push_back(g);
      avg = g;
      continue;
    }
    Vec r(g.size());
    for (std::size_t d = 0; d < g.size(); ++d) r[d] = g[d] + lambda_gcr * (g[d] - avg[d]);
    out.push_back(r);
    for (std::size_t d = 0; d < g.size(); ++d) avg[d] = beta * avg[d] + (1.0 - beta) * g[d];
  }
  return out;
}

inline std::map<std::size_t, double> reweight(const std::map<std::size_t, double>& G) {
  double lo = INFINITY;
  for (const auto& [c, v] : G) lo = std::min(lo, v);
  std::map<std::size_t, double> w;
  for (const auto& [c, v] : G) w[c] = lo / v;
  return w;
}

/// 0 major, 1 medium, 2 minor.
inline int group_of(std::size_t count, std::size_t major_min, std::size_t minor_max) {
  if (count > major_min) return 0;
  if (count > minor_max) return 1;
  return 2;
}

/// Exponential long-tail counts, straight from the formula.
inline std::vector<std::size_t> profile(std::size_t K, std::size_t n_max, double rho) {
  std::vector<std::size_t> c;
  for (std::size_t k = 0; k < K; ++k) {
    c.push_back(static_cast<std::size_t>(
        std::llround(static_cast<double>(n_max) * std::pow(rho, -static_cast<double>(k) / static_cast<double>(K - 1)))));
  }
  return c;
}

}  // namespace oracle
