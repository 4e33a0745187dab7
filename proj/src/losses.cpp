#include "mxq/losses.hpp"

#include <cmath>
#include <limits>

#include "mxq/ops.hpp"

namespace mxq {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

Tensor ctc_loss(const Tensor& log_posteriors, std::span<const int> target) {
  if (log_posteriors.rank() != 2) {
    throw ShapeError("ctc_loss: expected [T x V] log-posteriors, got " +
                     shape_str(log_posteriors.shape()));
  }
  const std::size_t T = log_posteriors.dim(0), V = log_posteriors.dim(1);
  if (target.empty()) throw Error("ctc_loss: empty target");
  for (int id : target) {
    if (id <= kBlank || static_cast<std::size_t>(id) >= V) {
      throw Error("ctc_loss: label " + std::to_string(id) + " outside [1, " +
                  std::to_string(V - 1) + "]");
    }
  }
  if (T < ctc_min_frames(target)) {
    throw Error("ctc_loss: unalignable, " + std::to_string(T) + " frames for a target needing " +
                std::to_string(ctc_min_frames(target)));
  }

  const std::size_t S = 2 * target.size() + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto lp = log_posteriors.data();
  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * V + static_cast<std::size_t>(ext[s])]; };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = emit(0, 0);
  if (S > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      if (a != kNegInf) alpha[t * S + s] = a + emit(t, s);
    }
  }
  const double log_p = log_add(alpha[(T - 1) * S + S - 1], alpha[(T - 1) * S + S - 2]);

  std::vector<double> beta(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = emit(T - 1, S - 1);
  beta[(T - 1) * S + S - 2] = emit(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && skip_ok(s + 2)) b = log_add(b, beta[(t + 1) * S + s + 2]);
      if (b != kNegInf) beta[t * S + s] = b + emit(t, s);
    }
  }

  std::vector<double> lp_saved(lp.begin(), lp.end());
  return Tensor::make_result(
      {1}, {-log_p}, "ctc_loss", {log_posteriors},
      [T, V, S, ext = std::move(ext), alpha = std::move(alpha), beta = std::move(beta),
       lp_saved = std::move(lp_saved), log_p](std::span<const double> g,
                                             std::span<std::vector<double>*> grads) {
        auto& gx = *grads[0];
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t s = 0; s < S; ++s) {
            const double ab = alpha[t * S + s] + beta[t * S + s];
            if (ab == kNegInf) continue;
            const std::size_t k = t * V + static_cast<std::size_t>(ext[s]);
            gx[k] -= g[0] * std::exp(ab - lp_saved[k] - log_p);
          }
        }
      },
      /*custom_gradient=*/true);
}

Tensor kl_regularizer(const Tensor& teacher_log_probs, const Tensor& student_log_probs) {
  if (teacher_log_probs.shape() != student_log_probs.shape() || teacher_log_probs.rank() != 2) {
    throw ShapeError("kl_regularizer: shapes " + shape_str(teacher_log_probs.shape()) + " and " +
                     shape_str(student_log_probs.shape()));
  }
  const Tensor p = ops::stop_gradient(teacher_log_probs);
  const Tensor per_elem = ops::mul(ops::exp(p), ops::sub(p, student_log_probs));
  return ops::scale(ops::reduce_sum(per_elem), 1.0 / static_cast<double>(p.dim(0)));
}

void LossCoefficients::validate() const {
  std::string bad;
  auto nonneg = [&bad](double v, const std::string& name) {
    if (!(v >= 0.0)) bad += (bad.empty() ? "" : ", ") + name;
  };
  nonneg(eta, "eta");
  nonneg(beta_mp, "beta_mp");
  nonneg(beta_kl, "beta_kl");
  for (const auto& [b, v] : beta) nonneg(v, "beta_" + std::to_string(b));
  for (const auto& [b, v] : lambda) nonneg(v, "lambda_" + std::to_string(b));
  if (!bad.empty()) throw Error("loss coefficients must be >= 0: " + bad);
}

LossBreakdown composite_loss(const NetworkLosses& terms, const LossCoefficients& coeffs,
                             const std::optional<Tensor>& size_megabits, bool strict) {
  LossBreakdown out;
  Tensor total = Tensor::scalar(0.0);
  auto accumulate = [&total](const Tensor& t, double weight) {
    if (weight != 0.0) total = ops::add(total, weight == 1.0 ? t : ops::scale(t, weight));
  };
  auto coeff = [](const std::map<int, double>& m, int bits) {
    auto it = m.find(bits);
    return it == m.end() ? 0.0 : it->second;
  };

  if (terms.ctc_fp) {
    accumulate(*terms.ctc_fp, 1.0);
    out.ctc_fp = terms.ctc_fp->item();
  }
  if (terms.ctc_mp) {
    accumulate(*terms.ctc_mp, 1.0);
    out.ctc_mp = terms.ctc_mp->item();
  }
  for (const auto& [bits, t] : terms.ctc_student) {
    accumulate(t, coeff(coeffs.lambda, bits));
    out.ctc_student[bits] = t.item();
  }
  if (terms.kl_mp) {
    accumulate(*terms.kl_mp, coeffs.beta_mp);
    out.kl_mp = terms.kl_mp->item();
  }
  for (const auto& [bits, t] : terms.kl_student) {
    accumulate(t, coeffs.beta_kl * coeff(coeffs.beta, bits));
    out.kl_student[bits] = t.item();
  }
  if (strict) {
    for (const auto& [bits, w] : coeffs.lambda)
      if (w != 0.0 && !terms.ctc_student.count(bits))
        throw Error("composite_loss: lambda_" + std::to_string(bits) +
                    " is nonzero but the " + std::to_string(bits) + "-bit network was not run");
    if (coeffs.beta_kl != 0.0) {
      for (const auto& [bits, w] : coeffs.beta)
        if (w != 0.0 && !terms.kl_student.count(bits))
          throw Error("composite_loss: beta_" + std::to_string(bits) +
                      " is nonzero but the " + std::to_string(bits) + "-bit network was not run");
    }
  }
  if (size_megabits && coeffs.eta != 0.0) {
    const Tensor s = ops::scale(*size_megabits, coeffs.eta);
    out.size_term = s.item();
    total = ops::add(total, s);
  }
  out.total = total;
  return out;
}

}  // namespace mxq
