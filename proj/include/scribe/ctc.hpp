#pragma once

// Connectionist temporal classification with the blank label at index K
// (the last column of the logits).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "scribe/tensor.hpp"

namespace scribe {

/// Label indices in [0, K); the blank is K and never appears here.
using LabelSeq = std::vector<int>;

/// Stand-in for log(0). Large enough that exp(kLogZero - x) underflows to
/// zero for any reachable log-probability, small enough that sums of a few
/// of them stay finite.
inline constexpr double kLogZero = -1e30;

inline double log_sum_exp(double a, double b) {
  if (a <= kLogZero) return b;
  if (b <= kLogZero) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Frames needed to emit `target`: one per label plus a blank between
/// adjacent repeats.
inline std::size_t ctc_min_frames(const LabelSeq& target) {
  std::size_t n = target.size();
  for (std::size_t k = 1; k < target.size(); ++k)
    if (target[k] == target[k - 1]) ++n;
  return n;
}

namespace detail {

inline void check_ctc_inputs(const Tensor& logits, const LabelSeq& target) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    throw DimensionError("ctc: logits must be Tseq x (K+1) with K >= 1, got " +
                         shape_str(logits.shape()));
  }
  const int K = static_cast<int>(logits.dim(1)) - 1;
  for (int l : target) {
    if (l < 0 || l >= K) {
      throw DimensionError(detail::concat("ctc: label ", l, " outside [0, ", K, ")"));
    }
  }
}

inline std::vector<double> log_softmax_rows(const Tensor& logits) {
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  std::vector<double> out(T * C);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = logits.data().data() + t * C;
    const double mx = *std::max_element(x, x + C);
    double s = 0.0;
    for (std::size_t k = 0; k < C; ++k) s += std::exp(x[k] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < C; ++k) out[t * C + k] = x[k] - lse;
  }
  return out;
}

}  // namespace detail

struct CtcResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, Tseq x (K+1)
};

/// -log p(target | softmax(logits)) by the forward-backward recursion in
/// log space, with the exact gradient w.r.t. the pre-softmax logits.
inline CtcResult ctc_loss(const Tensor& logits, const LabelSeq& target) {
  detail::check_ctc_inputs(logits, target);
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  const int blank = static_cast<int>(C) - 1;
  const std::size_t needed = ctc_min_frames(target);
  if (T < needed) {
    throw InfeasibleError(detail::concat("ctc: Tseq = ", T,
                                         " frames cannot emit the target; minimum is ",
                                         needed));
  }
  const auto logp = detail::log_softmax_rows(logits);

  const std::size_t S = 2 * target.size() + 1;
  std::vector<int> ext(S, blank);
  for (std::size_t k = 0; k < target.size(); ++k) ext[2 * k + 1] = target[k];
  auto skip_allowed = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  // alpha includes the emission at t; beta covers frames after t only.
  std::vector<double> alpha(T * S, kLogZero), beta(T * S, kLogZero);
  alpha[0] = logp[static_cast<std::size_t>(ext[0])];
  if (S > 1) alpha[1] = logp[static_cast<std::size_t>(ext[1])];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = alpha[(t - 1) * S + s];
      if (s >= 1) acc = log_sum_exp(acc, alpha[(t - 1) * S + s - 1]);
      if (skip_allowed(s)) acc = log_sum_exp(acc, alpha[(t - 1) * S + s - 2]);
      if (acc > kLogZero) alpha[t * S + s] = acc + logp[t * C + static_cast<std::size_t>(ext[s])];
    }
  }
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      auto next = [&](std::size_t s2) {
        const double b = beta[(t + 1) * S + s2];
        return b <= kLogZero ? kLogZero
                             : b + logp[(t + 1) * C + static_cast<std::size_t>(ext[s2])];
      };
      double acc = next(s);
      if (s + 1 < S) acc = log_sum_exp(acc, next(s + 1));
      if (s + 2 < S && skip_allowed(s + 2)) acc = log_sum_exp(acc, next(s + 2));
      beta[t * S + s] = acc;
    }
  }
  double log_prob = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_prob = log_sum_exp(log_prob, alpha[(T - 1) * S + S - 2]);

  CtcResult result;
  result.loss = -log_prob;
  result.grad = Tensor({T, C});
  std::vector<double> occupancy(C);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const double a = alpha[t * S + s], b = beta[t * S + s];
      if (a <= kLogZero || b <= kLogZero) continue;
      occupancy[static_cast<std::size_t>(ext[s])] += std::exp(a + b - log_prob);
    }
    for (std::size_t k = 0; k < C; ++k)
      result.grad[t * C + k] = std::exp(logp[t * C + k]) - occupancy[k];
  }
  if (!std::isfinite(result.loss)) throw NumericError("ctc_loss: non-finite loss");
  result.grad.check_finite("ctc_loss gradient");
  return result;
}

/// Largest search space ctc_brute_force accepts.
inline constexpr double kBruteForceBudget = 1e7;

/// Sums the probability of every frame-level path whose collapse (merge
/// repeats, drop blanks) equals `target`. Returns +infinity when no path
/// maps to the target.
inline double ctc_brute_force(const Tensor& logits, const LabelSeq& target) {
  detail::check_ctc_inputs(logits, target);
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  if (std::pow(static_cast<double>(C), static_cast<double>(T)) > kBruteForceBudget) {
    throw DimensionError(detail::concat("ctc_brute_force: ", C, "^", T,
                                        " paths exceed the enumeration budget"));
  }
  const int blank = static_cast<int>(C) - 1;
  const auto logp = detail::log_softmax_rows(logits);
  std::vector<std::size_t> path(T, 0);
  std::vector<int> collapsed;
  double total = 0.0;
  for (;;) {
    collapsed.clear();
    int last = -1;
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const int k = static_cast<int>(path[t]);
      lp += logp[t * C + path[t]];
      if (k != last && k != blank) collapsed.push_back(k);
      last = k;
    }
    if (collapsed == target) total += std::exp(lp);
    std::size_t t = 0;
    while (t < T && ++path[t] == C) path[t++] = 0;
    if (t == T) break;
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

/// Per-frame argmax (ties to the lowest index), merge repeats, drop blanks.
inline LabelSeq best_path_decode(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("best_path_decode: logits must be 2-D");
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  const int blank = static_cast<int>(C) - 1;
  LabelSeq out;
  int last = -1;
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = logits.data().data() + t * C;
    int best = 0;
    for (std::size_t k = 1; k < C; ++k)
      if (row[k] > row[best]) best = static_cast<int>(k);
    if (best != last && best != blank) out.push_back(best);
    last = best;
  }
  return out;
}

struct CtcPerLineResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

/// Independent CTC on each (segment, line) pair; the loss is their sum.
inline CtcPerLineResult ctc_per_line(const std::vector<Tensor>& segments,
                                     const std::vector<LabelSeq>& targets) {
  if (segments.size() != targets.size()) {
    throw DimensionError(detail::concat("ctc_per_line: cannot pair ", segments.size(),
                                        " segments with ", targets.size(), " lines"));
  }
  CtcPerLineResult out;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    auto r = ctc_loss(segments[k], targets[k]);
    out.loss += r.loss;
    out.grads.push_back(std::move(r.grad));
  }
  return out;
}

/// CTC as a tape node: returns the loss and, when recording, adds
/// scale * dloss/dlogits into logits' gradient on backward.
inline double ctc_loss_node(Tape* tape, const TensorPtr& logits, const LabelSeq& target,
                            double scale = 1.0) {
  auto r = ctc_loss(*logits, target);
  if (tape) {
    tape->record([logits, grad = std::move(r.grad), scale] {
      if (!detail::wants_grad(logits)) return;
      auto g = logits->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * grad[k];
    });
  }
  return r.loss;
}

/// CTC loss as a one-element tensor whose gradient flows back into logits.
inline TensorPtr ctc_loss_tensor(Tape* tape, const TensorPtr& logits, const LabelSeq& target) {
  auto r = ctc_loss(*logits, target);
  auto out = detail::new_output(tape, {1});
  (*out)[0] = r.loss;
  if (tape) {
    tape->record([logits, out, grad = std::move(r.grad)] {
      if (!detail::wants_grad(logits)) return;
      const double dy = out->grad()[0];
      auto g = logits->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += dy * grad[k];
    });
  }
  return out;
}

}  // namespace scribe
