#pragma once

// Dense row-major tensors with a gradient slot, a reverse-mode tape and the
// handful of primitive operations the network layers are built from.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scribe/error.hpp"

namespace scribe {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError(detail::concat("tensor data length ", data_.size(),
                                          " does not match shape ",
                                          shape_str(shape_)));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  void drop_grad() { grad_.clear(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  /// Reinterprets the extents; the element count must not change.
  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError(detail::concat("cannot reshape ", shape_str(shape_),
                                          " to ", shape_str(shape)));
    }
    shape_ = std::move(shape);
  }

  void check_finite(std::string_view op) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw NumericError(detail::concat("non-finite value ", data_[i],
                                          " produced by ", op, " at index ", i,
                                          " of ", shape_str(shape_)));
      }
    }
  }

 private:
  void validate_shape() const {
    for (auto e : shape_) {
      if (e == 0) {
        throw DimensionError("tensor extents must be positive, got " +
                             shape_str(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Shape shape, double fill = 0.0) {
  return std::make_shared<Tensor>(std::move(shape), fill);
}

inline TensorPtr make_tensor(Shape shape, std::vector<double> data) {
  return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

/// Records backward closures during a forward pass and replays them in
/// reverse. A null tape pointer means "no gradients wanted".
class Tape {
 public:
  void record(std::function<void()> backward) {
    nodes_.push_back(std::move(backward));
  }

  /// Runs every recorded closure in reverse order and clears the tape.
  void backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

// Output of an op: gets a gradient slot when the op is being recorded.
inline TensorPtr new_output(Tape* tape, Shape shape) {
  auto out = make_tensor(std::move(shape));
  if (tape) out->ensure_grad();
  return out;
}

inline bool wants_grad(const TensorPtr& t) {
  return t && t->size() > 0 && t->grad().size() == t->size();
}

inline void check_grad_finite(std::span<const double> g, std::string_view op) {
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw NumericError(detail::concat("non-finite gradient in backward of ", op));
    }
  }
}

}  // namespace detail

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// affine

/// out[n,o] = sum_i input[n,i] * weight[i,o] + bias[o]. Any leading shape is
/// accepted for `input`; its last axis is the contraction axis.
inline TensorPtr affine(Tape* tape, const TensorPtr& input,
                        const TensorPtr& weight, const TensorPtr& bias) {
  if (input->rank() < 1 || weight->rank() != 2 || bias->rank() != 1 ||
      input->shape().back() != weight->dim(0) ||
      weight->dim(1) != bias->dim(0)) {
    throw DimensionError(detail::concat(
        "affine: input ", shape_str(input->shape()), " incompatible with weight ",
        shape_str(weight->shape()), " and bias ", shape_str(bias->shape())));
  }
  const std::size_t in_dim = weight->dim(0);
  const std::size_t out_dim = weight->dim(1);
  const std::size_t rows = input->size() / in_dim;
  Shape out_shape = input->shape();
  out_shape.back() = out_dim;
  auto out = detail::new_output(tape, out_shape);

  const double* x = input->data().data();
  const double* w = weight->data().data();
  const double* b = bias->data().data();
  double* y = out->data().data();
  for (std::size_t n = 0; n < rows; ++n) {
    double* yr = y + n * out_dim;
    std::copy(b, b + out_dim, yr);
    const double* xr = x + n * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = xr[i];
      const double* wr = w + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xi * wr[o];
    }
  }
  out->check_finite("affine");

  if (tape) {
    tape->record([input, weight, bias, out, rows, in_dim, out_dim] {
      const double* dy = out->grad().data();
      const double* x = input->data().data();
      const double* w = weight->data().data();
      if (detail::wants_grad(input)) {
        double* dx = input->grad().data();
        for (std::size_t n = 0; n < rows; ++n) {
          for (std::size_t i = 0; i < in_dim; ++i) {
            const double* wr = w + i * out_dim;
            const double* dyr = dy + n * out_dim;
            double acc = 0.0;
            for (std::size_t o = 0; o < out_dim; ++o) acc += wr[o] * dyr[o];
            dx[n * in_dim + i] += acc;
          }
        }
      }
      if (detail::wants_grad(weight)) {
        double* dw = weight->grad().data();
        for (std::size_t n = 0; n < rows; ++n) {
          const double* dyr = dy + n * out_dim;
          for (std::size_t i = 0; i < in_dim; ++i) {
            const double xi = x[n * in_dim + i];
            double* dwr = dw + i * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) dwr[o] += xi * dyr[o];
          }
        }
      }
      if (detail::wants_grad(bias)) {
        double* db = bias->grad().data();
        for (std::size_t n = 0; n < rows; ++n)
          for (std::size_t o = 0; o < out_dim; ++o) db[o] += dy[n * out_dim + o];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

enum class Elementwise { kTanh, kSigmoid, kExp, kLog, kAddConst, kMulConst };

inline std::string_view to_string(Elementwise fn) {
  switch (fn) {
    case Elementwise::kTanh: return "tanh";
    case Elementwise::kSigmoid: return "sigmoid";
    case Elementwise::kExp: return "exp";
    case Elementwise::kLog: return "log";
    case Elementwise::kAddConst: return "add-const";
    case Elementwise::kMulConst: return "mul-const";
  }
  return "?";
}

/// Applies `fn` per element. `constant` is used by add-const and mul-const.
inline TensorPtr elementwise(Tape* tape, const TensorPtr& input, Elementwise fn,
                             double constant = 0.0) {
  auto out = detail::new_output(tape, input->shape());
  const auto x = input->data();
  auto y = out->data();
  for (std::size_t k = 0; k < x.size(); ++k) {
    switch (fn) {
      case Elementwise::kTanh: y[k] = std::tanh(x[k]); break;
      case Elementwise::kSigmoid: y[k] = sigmoid(x[k]); break;
      case Elementwise::kExp: y[k] = std::exp(x[k]); break;
      case Elementwise::kLog:
        if (!(x[k] > 0.0)) {
          throw DomainError(detail::concat("log of non-positive value ", x[k],
                                           " at index ", k));
        }
        y[k] = std::log(x[k]);
        break;
      case Elementwise::kAddConst: y[k] = x[k] + constant; break;
      case Elementwise::kMulConst: y[k] = x[k] * constant; break;
    }
  }
  out->check_finite(to_string(fn));

  if (tape) {
    tape->record([input, out, fn, constant] {
      if (!detail::wants_grad(input)) return;
      const auto x = input->data();
      const auto y = out->data();
      const auto dy = out->grad();
      auto dx = input->grad();
      for (std::size_t k = 0; k < x.size(); ++k) {
        double d = 0.0;
        switch (fn) {
          case Elementwise::kTanh: d = 1.0 - y[k] * y[k]; break;
          case Elementwise::kSigmoid: d = y[k] * (1.0 - y[k]); break;
          case Elementwise::kExp: d = y[k]; break;
          case Elementwise::kLog: d = 1.0 / x[k]; break;
          case Elementwise::kAddConst: d = 1.0; break;
          case Elementwise::kMulConst: d = constant; break;
        }
        dx[k] += d * dy[k];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// axis helpers

namespace detail {

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError(detail::concat("axis ", axis, " out of range for ",
                                        shape_str(shape)));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

/// Softmax along `axis`, max-subtracted.
inline TensorPtr softmax_along_axis(Tape* tape, const TensorPtr& input,
                                    std::size_t axis) {
  const auto s = detail::split_axis(input->shape(), axis);
  auto out = detail::new_output(tape, input->shape());
  const double* x = input->data().data();
  double* y = out->data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = x[base];
      for (std::size_t k = 1; k < s.extent; ++k)
        mx = std::max(mx, x[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) y[base + k * s.inner] /= total;
    }
  }
  out->check_finite("softmax");

  if (tape) {
    tape->record([input, out, s] {
      if (!detail::wants_grad(input)) return;
      const double* y = out->data().data();
      const double* dy = out->grad().data();
      double* dx = input->grad().data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t idx = base + k * s.inner;
            dot += y[idx] * dy[idx];
          }
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t idx = base + k * s.inner;
            dx[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

/// Sums out `axis`; the result has rank one lower (rank-1 inputs give [1]).
inline TensorPtr reduce_sum_along_axis(Tape* tape, const TensorPtr& input,
                                       std::size_t axis) {
  const auto s = detail::split_axis(input->shape(), axis);
  Shape out_shape = input->shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  auto out = detail::new_output(tape, out_shape);
  const double* x = input->data().data();
  double* y = out->data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t in = 0; in < s.inner; ++in)
        y[o * s.inner + in] += x[(o * s.extent + k) * s.inner + in];
  out->check_finite("reduce_sum");

  if (tape) {
    tape->record([input, out, s] {
      if (!detail::wants_grad(input)) return;
      const double* dy = out->grad().data();
      double* dx = input->grad().data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
          for (std::size_t in = 0; in < s.inner; ++in)
            dx[(o * s.extent + k) * s.inner + in] += dy[o * s.inner + in];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structural ops

/// Elementwise sum of equally shaped tensors.
inline TensorPtr add_all(Tape* tape, const std::vector<TensorPtr>& inputs) {
  if (inputs.empty()) throw DimensionError("add_all: no inputs");
  for (const auto& t : inputs) {
    if (t->shape() != inputs.front()->shape()) {
      throw DimensionError(detail::concat("add_all: shape ", shape_str(t->shape()),
                                          " differs from ",
                                          shape_str(inputs.front()->shape())));
    }
  }
  auto out = detail::new_output(tape, inputs.front()->shape());
  auto y = out->data();
  for (const auto& t : inputs) {
    const auto x = t->data();
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += x[k];
  }
  out->check_finite("add_all");
  if (tape) {
    tape->record([inputs, out] {
      const auto dy = out->grad();
      for (const auto& t : inputs) {
        if (!detail::wants_grad(t)) continue;
        auto dx = t->grad();
        for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
      }
    });
  }
  return out;
}

/// Copy with new extents (same element count).
inline TensorPtr reshape(Tape* tape, const TensorPtr& input, Shape shape) {
  if (shape_size(shape) != input->size()) {
    throw DimensionError(detail::concat("reshape ", shape_str(input->shape()),
                                        " to ", shape_str(shape)));
  }
  auto out = detail::new_output(tape, std::move(shape));
  std::copy(input->data().begin(), input->data().end(), out->data().begin());
  if (tape) {
    tape->record([input, out] {
      if (!detail::wants_grad(input)) return;
      auto dx = input->grad();
      const auto dy = out->grad();
      for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
    });
  }
  return out;
}

/// c * input.
inline TensorPtr scale(Tape* tape, const TensorPtr& input, double c) {
  auto out = detail::new_output(tape, input->shape());
  const auto x = input->data();
  auto y = out->data();
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = c * x[k];
  out->check_finite("scale");
  if (tape) {
    tape->record([input, out, c] {
      if (!detail::wants_grad(input)) return;
      auto dx = input->grad();
      const auto dy = out->grad();
      for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += c * dy[k];
    });
  }
  return out;
}

/// Concatenates along the last axis; all leading extents must agree.
inline TensorPtr concat_last_axis(Tape* tape, const TensorPtr& a,
                                  const TensorPtr& b) {
  if (a->rank() != b->rank() ||
      !std::equal(a->shape().begin(), a->shape().end() - 1, b->shape().begin())) {
    throw DimensionError(detail::concat("concat_last_axis: ", shape_str(a->shape()),
                                        " vs ", shape_str(b->shape())));
  }
  const std::size_t da = a->shape().back(), db = b->shape().back();
  const std::size_t rows = a->size() / da;
  Shape shape = a->shape();
  shape.back() = da + db;
  auto out = detail::new_output(tape, shape);
  double* y = out->data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a->data().data() + r * da, da, y + r * (da + db));
    std::copy_n(b->data().data() + r * db, db, y + r * (da + db) + da);
  }
  if (tape) {
    tape->record([a, b, out, rows, da, db] {
      const double* dy = out->grad().data();
      if (detail::wants_grad(a)) {
        double* g = a->grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < da; ++k) g[r * da + k] += dy[r * (da + db) + k];
      }
      if (detail::wants_grad(b)) {
        double* g = b->grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < db; ++k)
            g[r * db + k] += dy[r * (da + db) + da + k];
      }
    });
  }
  return out;
}

/// Stacks tensors along axis 0; trailing extents must agree.
inline TensorPtr concat_first_axis(Tape* tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw DimensionError("concat_first_axis: no inputs");
  Shape shape = parts.front()->shape();
  std::size_t lead = 0;
  for (const auto& p : parts) {
    if (p->rank() != shape.size() ||
        !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1)) {
      throw DimensionError(detail::concat("concat_first_axis: ",
                                          shape_str(p->shape()), " vs ",
                                          shape_str(shape)));
    }
    lead += p->dim(0);
  }
  shape[0] = lead;
  auto out = detail::new_output(tape, shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p->data().begin(), p->data().end(), out->data().begin() + offset);
    offset += p->size();
  }
  if (tape) {
    tape->record([parts, out] {
      std::size_t offset = 0;
      const auto dy = out->grad();
      for (const auto& p : parts) {
        if (detail::wants_grad(p)) {
          auto g = p->grad();
          for (std::size_t k = 0; k < p->size(); ++k) g[k] += dy[offset + k];
        }
        offset += p->size();
      }
    });
  }
  return out;
}

/// Rows [begin, begin+count) of axis 0.
inline TensorPtr slice_first_axis(Tape* tape, const TensorPtr& input,
                                  std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > input->dim(0)) {
    throw DimensionError(detail::concat("slice_first_axis: [", begin, ", ",
                                        begin + count, ") of ",
                                        shape_str(input->shape())));
  }
  Shape shape = input->shape();
  shape[0] = count;
  const std::size_t stride = input->size() / input->dim(0);
  auto out = detail::new_output(tape, shape);
  std::copy_n(input->data().data() + begin * stride, count * stride,
              out->data().data());
  if (tape) {
    tape->record([input, out, begin, stride] {
      if (!detail::wants_grad(input)) return;
      const auto dy = out->grad();
      auto dx = input->grad().subspan(begin * stride, dy.size());
      for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
    });
  }
  return out;
}

}  // namespace scribe
