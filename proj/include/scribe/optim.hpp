#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "scribe/parameter.hpp"
#include "scribe/tensor.hpp"

namespace scribe {

struct OptimizerConfig {
  double learning_rate = 0.001;
  double decay = 0.9;
  double epsilon = 1e-6;
  std::size_t batch_size = 8;
  double grad_clip = 10.0;

  bool operator==(const OptimizerConfig&) const = default;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be > 0");
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("optimizer: decay must be in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
    if (batch_size == 0) throw ConfigError("optimizer: batch_size must be >= 1");
    if (!(grad_clip > 0.0)) throw ConfigError("optimizer: grad_clip must be > 0");
  }
};

/// Plain RMSProp on one parameter:
///   ms <- decay * ms + (1 - decay) * g^2
///   value <- value - lr * g / sqrt(ms + eps)
/// with g clipped to [-grad_clip, grad_clip]. Zeroes the accumulator.
inline void rmsprop_step(Parameter& param, const OptimizerConfig& cfg) {
  auto g = param.value->grad();
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite gradient for parameter " + param.name);
    }
  }
  auto& ms = param.state_entry("ms");
  auto value = param.value->data();
  auto acc = ms.data();
  for (std::size_t k = 0; k < value.size(); ++k) {
    const double gk = std::clamp(g[k], -cfg.grad_clip, cfg.grad_clip);
    acc[k] = cfg.decay * acc[k] + (1.0 - cfg.decay) * gk * gk;
    value[k] -= cfg.learning_rate * gk / std::sqrt(acc[k] + cfg.epsilon);
  }
  param.value->zero_grad();
}

inline void rmsprop_step(ParameterSet& params, const OptimizerConfig& cfg) {
  for (auto& p : params.all()) rmsprop_step(p, cfg);
}

/// Drops all optimizer state (a fresh RMSProp accumulator).
inline void reset_optimizer_state(ParameterSet& params) {
  for (auto& p : params.all()) p.state.clear();
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradcheckTarget {
  std::string name;
  TensorPtr tensor;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;  // worst first

  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double threshold) const { return max_error() < threshold; }

  std::string str() const {
    std::ostringstream os;
    os.precision(3);
    for (const auto& e : entries) {
      os << std::scientific << e.max_rel_error << "  " << e.name << " [" << e.worst_index
         << "] analytic=" << e.analytic << " numeric=" << e.numeric << " (" << e.checked
         << " checked)\n";
    }
    return os.str();
  }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from reporting pure finite-difference noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

struct GradcheckOptions {
  double step = 1e-4;
  double floor = 1e-6;
  /// Check at most this many entries per tensor (evenly strided); 0 = all.
  std::size_t max_entries = 0;
};

/// Five-point finite differences of a scalar loss vs. the tape's analytic gradient for
/// every entry of every target. `loss` must build its graph from the
/// targets' current values and return a one-element tensor.
inline GradcheckReport gradcheck(const std::vector<GradcheckTarget>& targets,
                                 const std::function<TensorPtr(Tape*)>& loss,
                                 const GradcheckOptions& opt = {}) {
  for (const auto& t : targets) {
    t.tensor->ensure_grad();
    t.tensor->zero_grad();
  }
  Tape tape;
  auto out = loss(&tape);
  if (out->size() != 1) throw DimensionError("gradcheck: loss must be a scalar");
  out->grad()[0] = 1.0;
  tape.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : targets) analytic.emplace_back(t.tensor->grad().begin(), t.tensor->grad().end());

  GradcheckReport report;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    auto& tensor = *targets[ti].tensor;
    GradcheckEntry e;
    e.name = targets[ti].name;
    const std::size_t n = tensor.size();
    const std::size_t stride =
        opt.max_entries == 0 || n <= opt.max_entries ? 1 : (n + opt.max_entries - 1) / opt.max_entries;
    for (std::size_t k = 0; k < n; k += stride) {
      const double saved = tensor[k];
      auto at = [&](double offset) {
        tensor[k] = saved + offset;
        return (*loss(nullptr))[0];
      };
      const double h = opt.step;
      // five-point stencil, O(h^4) truncation
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      tensor[k] = saved;
      const double err = relative_error(analytic[ti][k], numeric, opt.floor);
      ++e.checked;
      if (err >= e.max_rel_error) {
        e.max_rel_error = err;
        e.worst_index = k;
        e.analytic = analytic[ti][k];
        e.numeric = numeric;
      }
    }
    report.entries.push_back(e);
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const auto& a, const auto& b) { return a.max_rel_error > b.max_rel_error; });
  return report;
}

inline std::vector<GradcheckTarget> targets_of(const ParameterSet& params,
                                               const std::string& prefix = "") {
  std::vector<GradcheckTarget> out;
  for (const auto& p : params.all())
    if (p.name.rfind(prefix, 0) == 0) out.push_back({p.name, p.value});
  return out;
}

/// sum_k r_k * out_k for fixed pseudo-random r in [-1, 1]: turns any layer
/// output into a scalar whose gradient exercises every output entry.
inline TensorPtr random_projection(Tape* tape, const TensorPtr& out, std::uint64_t seed) {
  Rng rng(seed);
  auto r = make_tensor({out->size(), 1});
  for (auto& v : r->data()) v = rng.uniform(-1.0, 1.0);
  auto flat = reshape(tape, out, {1, out->size()});
  auto zero = make_tensor({1});
  return reshape(tape, affine(tape, flat, r, zero), {1});
}

}  // namespace scribe
