#pragma once

// Reduction of an encoded H x W x D map to a sequence of column vectors:
// the plain vertical sum, and the iterated attention-weighted version that
// reads one text line per step.

#include <cmath>
#include <string>
#include <vector>

#include "scribe/layers.hpp"
#include "scribe/tensor.hpp"

namespace scribe {

/// Attention weights of every step, T x H x W; each (step, column) slice
/// sums to one.
struct AttentionMap {
  std::size_t steps = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> weights;

  double at(std::size_t t, std::size_t row, std::size_t col) const {
    return weights[(t * height + row) * width + col];
  }

  /// Largest |sum_j w[t,j,i] - 1| over all steps and columns.
  double max_column_error() const {
    double worst = 0.0;
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t i = 0; i < width; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < height; ++j) s += at(t, j, i);
        worst = std::max(worst, std::abs(s - 1.0));
      }
    return worst;
  }

  /// Mean row index of step t: sum_{i,j} j * w[t,j,i] / W.
  double row_centroid(std::size_t t) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < height; ++j)
      for (std::size_t i = 0; i < width; ++i) acc += static_cast<double>(j) * at(t, j, i);
    return acc / static_cast<double>(width);
  }
};

inline void check_feature_map(const TensorPtr& a, const char* op) {
  if (a->rank() != 3) {
    throw DimensionError(detail::concat(op, ": expected an H x W x D map, got ",
                                        shape_str(a->shape())));
  }
}

/// z_i = sum_j a_ij  ->  W x D.
inline TensorPtr standard_collapse(Tape* tape, const TensorPtr& a) {
  check_feature_map(a, "standard_collapse");
  return reduce_sum_along_axis(tape, a, 0);
}

/// Per-column softmax of an H x W score map (normalizes over rows).
inline TensorPtr column_softmax(Tape* tape, const TensorPtr& scores) {
  if (scores->rank() != 2) {
    throw DimensionError("column_softmax: expected H x W scores, got " +
                         shape_str(scores->shape()));
  }
  return softmax_along_axis(tape, scores, 0);
}

/// z_i = sum_j w_ij a_ij  ->  W x D.
inline TensorPtr weighted_collapse(Tape* tape, const TensorPtr& a, const TensorPtr& w) {
  check_feature_map(a, "weighted_collapse");
  const std::size_t H = a->dim(0), W = a->dim(1), D = a->dim(2);
  if (w->rank() != 2 || w->dim(0) != H || w->dim(1) != W) {
    throw DimensionError(detail::concat("weighted_collapse: weights ",
                                        shape_str(w->shape()), " for map ",
                                        shape_str(a->shape())));
  }
  auto out = detail::new_output(tape, {W, D});
  const double* av = a->data().data();
  const double* wv = w->data().data();
  double* z = out->data().data();
  for (std::size_t j = 0; j < H; ++j)
    for (std::size_t i = 0; i < W; ++i) {
      const double wt = wv[j * W + i];
      const double* ar = av + (j * W + i) * D;
      for (std::size_t d = 0; d < D; ++d) z[i * D + d] += wt * ar[d];
    }
  out->check_finite("weighted_collapse");

  if (tape) {
    tape->record([a, w, out, H, W, D] {
      const double* av = a->data().data();
      const double* wv = w->data().data();
      const double* dz = out->grad().data();
      double* da = detail::grad_ptr(a);
      double* dw = detail::grad_ptr(w);
      for (std::size_t j = 0; j < H; ++j)
        for (std::size_t i = 0; i < W; ++i) {
          const std::size_t cell = j * W + i;
          const double* dzi = dz + i * D;
          if (dw) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += dzi[d] * av[cell * D + d];
            dw[cell] += acc;
          }
          if (da) {
            const double wt = wv[cell];
            for (std::size_t d = 0; d < D; ++d) da[cell * D + d] += wt * dzi[d];
          }
        }
    });
  }
  return out;
}

/// MDLSTM over [a ; previous weights] (16 units per direction by default),
/// directions summed, then a linear map to one score per position.
struct AttentionParams {
  std::size_t units = 16;
  MdlstmBlockParams scan;
  TensorPtr out_weight;  // U x 1
  TensorPtr out_bias;    // 1

  static AttentionParams create(ParameterSet& set, std::size_t feature_depth,
                                std::size_t units, Rng& rng) {
    AttentionParams p;
    p.units = units;
    p.scan = create_mdlstm_block(set, "attention.mdlstm", feature_depth + 1, units, rng);
    p.out_weight = set.add("attention.out.W", {units, 1});
    p.out_bias = set.add("attention.out.b", {1});
    init_uniform(*p.out_weight, units, rng);
    return p;
  }

  /// Draws fresh values for every attention parameter.
  void reinitialize(Rng& rng) const {
    for (const auto& d : scan) {
      init_uniform(*d.weight, d.weight->dim(0), rng);
      std::fill(d.bias->data().begin(), d.bias->data().end(), 0.0);
    }
    init_uniform(*out_weight, units, rng);
    (*out_bias)[0] = 0.0;
  }
};

/// Unnormalized scores alpha^(t) (H x W) from the map and the previous
/// step's weights (all zeros before the first step), which enter the scan
/// as one extra channel scaled by H.
inline TensorPtr attention_scores(Tape* tape, const TensorPtr& a, const TensorPtr& prev,
                                  const AttentionParams& p) {
  check_feature_map(a, "attention_scores");
  const std::size_t H = a->dim(0), W = a->dim(1);
  if (prev->rank() != 2 || prev->dim(0) != H || prev->dim(1) != W) {
    throw DimensionError(detail::concat("attention_scores: previous weights ",
                                        shape_str(prev->shape()), " for map ",
                                        shape_str(a->shape())));
  }
  // rescaled so a uniform column reads 1 whatever the map height
  auto prev3 = scale(tape, reshape(tape, prev, {H, W, 1}), static_cast<double>(H));
  auto input = concat_last_axis(tape, a, prev3);
  auto hidden = add_all(tape, mdlstm_block(tape, input, p.scan));
  auto scores = affine(tape, hidden, p.out_weight, p.out_bias);
  return reshape(tape, scores, {H, W});
}

struct CollapseResult {
  TensorPtr sequence;              // (T * W) x D, step-major
  std::vector<TensorPtr> weights;  // T tensors of H x W
  AttentionMap map;
};

/// Column tolerance enforced on every attention step.
inline constexpr double kColumnSumTolerance = 1e-6;

/// Applies the attention-weighted collapse `steps` times, feeding each
/// step's weights into the next, and concatenates the step outputs.
inline CollapseResult iterate_collapse(Tape* tape, const TensorPtr& a, std::size_t steps,
                                       const AttentionParams& p) {
  check_feature_map(a, "iterate_collapse");
  if (steps == 0) throw DimensionError("iterate_collapse: zero steps");
  const std::size_t H = a->dim(0), W = a->dim(1);
  CollapseResult result;
  result.map.steps = steps;
  result.map.height = H;
  result.map.width = W;
  result.map.weights.reserve(steps * H * W);
  std::vector<TensorPtr> parts;
  TensorPtr prev = make_tensor({H, W});
  for (std::size_t t = 0; t < steps; ++t) {
    auto scores = attention_scores(tape, a, prev, p);
    auto w = column_softmax(tape, scores);
    for (std::size_t i = 0; i < W; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < H; ++j) s += (*w)[j * W + i];
      if (std::abs(s - 1.0) > kColumnSumTolerance) {
        throw NumericError(detail::concat("attention column ", i, " of step ", t + 1,
                                          " sums to ", s));
      }
    }
    result.map.weights.insert(result.map.weights.end(), w->data().begin(),
                              w->data().end());
    parts.push_back(weighted_collapse(tape, a, w));
    result.weights.push_back(w);
    prev = w;
  }
  result.sequence = concat_first_axis(tape, parts);
  return result;
}

}  // namespace scribe
