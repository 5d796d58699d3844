#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ltcil/error.hpp"
#include "ltcil/matrix.hpp"

namespace ltcil {

/// Mini-batch with optional per-sample loss weights (default all ones).
struct Batch {
  DenseMatrix inputs;
  std::vector<std::size_t> labels;
  std::vector<double> per_sample_weights;

  void validate(std::size_t output_dim) const {
    if (labels.size() != inputs.rows() || per_sample_weights.size() != inputs.rows()) {
      throw InvalidInput("Batch: row counts disagree");
    }
    for (std::size_t y : labels) {
      if (y >= output_dim) throw InvalidInput("Batch: label out of range");
    }
    for (double w : per_sample_weights) {
      if (!(w >= 0.0)) throw InvalidInput("Batch: negative weight");
    }
  }
};

struct LossAndGrad {
  double loss = 0.0;
  DenseMatrix dlogits;
};

namespace detail {

/// log-softmax of the first `width` entries of `z` scaled by 1/temperature.
inline void log_softmax(std::span<const double> z, std::size_t width, double temperature,
                        std::span<double> out) {
  double m = z[0] / temperature;
  for (std::size_t j = 1; j < width; ++j) m = std::max(m, z[j] / temperature);
  double s = 0.0;
  for (std::size_t j = 0; j < width; ++j) s += std::exp(z[j] / temperature - m);
  const double lse = m + std::log(s);
  for (std::size_t j = 0; j < width; ++j) out[j] = z[j] / temperature - lse;
}

}  // namespace detail

/// Row-wise softmax with max subtraction.
inline DenseMatrix softmax_rows(const DenseMatrix& logits, double temperature = 1.0) {
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto o = out.row(i);
    detail::log_softmax(logits.row(i), logits.cols(), temperature, o);
    for (double& v : o) v = std::exp(v);
  }
  return out;
}

/// Weighted cross-entropy: sum_i w_i CE(softmax(z_i), y_i) / sum_i w_i, with
/// its exact gradient w.r.t. the logits.
inline LossAndGrad ce_loss_and_grad(const DenseMatrix& logits, std::span<const std::size_t> labels,
                                    std::span<const double> weights) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (labels.size() != n || weights.size() != n) throw InvalidInput("ce_loss_and_grad: shape mismatch");
  if (k == 0) throw InvalidInput("ce_loss_and_grad: zero-width logits");
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0)) throw InvalidInput("ce_loss_and_grad: negative weight");
    if (labels[i] >= k) throw InvalidInput("ce_loss_and_grad: label out of range");
    wsum += weights[i];
  }
  if (!(wsum > 0.0)) throw DegenerateBatch("ce_loss_and_grad: weights sum to zero");

  LossAndGrad r{0.0, DenseMatrix(n, k)};
  std::vector<double> logp(k);
  for (std::size_t i = 0; i < n; ++i) {
    detail::log_softmax(logits.row(i), k, 1.0, logp);
    const double scale = weights[i] / wsum;
    r.loss -= scale * logp[labels[i]];
    auto d = r.dlogits.row(i);
    for (std::size_t j = 0; j < k; ++j) d[j] = scale * std::exp(logp[j]);
    d[labels[i]] -= scale;
  }
  return r;
}

/// Euclidean norm of each sample's own (unweighted) CE logit gradient,
/// ||softmax(z_i) - onehot(y_i)||.
inline std::vector<double> per_sample_ce_grad_norms(const DenseMatrix& logits,
                                                    std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw InvalidInput("per_sample_ce_grad_norms: shape mismatch");
  std::vector<double> norms(logits.rows());
  std::vector<double> logp(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    detail::log_softmax(logits.row(i), logits.cols(), 1.0, logp);
    double s = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double g = std::exp(logp[j]) - (j == labels[i] ? 1.0 : 0.0);
      s += g * g;
    }
    norms[i] = std::sqrt(s);
  }
  return norms;
}

/// tau^2 * mean_i KL(softmax(teacher_i/tau) || softmax(student_i/tau)) over
/// the first `old_class_count` columns. The gradient is w.r.t. the student
/// only and is zero on every column past `old_class_count`.
inline LossAndGrad kd_loss_and_grad(const DenseMatrix& student_logits, const DenseMatrix& teacher_logits,
                                    double temperature, std::size_t old_class_count) {
  if (!(temperature > 0.0)) throw InvalidInput("kd_loss_and_grad: temperature must be positive");
  if (student_logits.rows() != teacher_logits.rows()) throw InvalidInput("kd_loss_and_grad: row mismatch");
  if (old_class_count > student_logits.cols() || old_class_count > teacher_logits.cols()) {
    throw InvalidInput("kd_loss_and_grad: old_class_count exceeds logit width");
  }
  const std::size_t n = student_logits.rows();
  LossAndGrad r{0.0, DenseMatrix(n, student_logits.cols())};
  if (old_class_count == 0 || n == 0) return r;

  std::vector<double> log_qs(old_class_count);
  std::vector<double> log_qt(old_class_count);
  const double loss_scale = temperature * temperature / static_cast<double>(n);
  const double grad_scale = temperature / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::log_softmax(student_logits.row(i), old_class_count, temperature, log_qs);
    detail::log_softmax(teacher_logits.row(i), old_class_count, temperature, log_qt);
    double kl = 0.0;
    auto d = r.dlogits.row(i);
    for (std::size_t j = 0; j < old_class_count; ++j) {
      const double qt = std::exp(log_qt[j]);
      kl += qt * (log_qt[j] - log_qs[j]);
      d[j] = grad_scale * (std::exp(log_qs[j]) - qt);
    }
    r.loss += loss_scale * std::max(0.0, kl);
  }
  return r;
}

}  // namespace ltcil
