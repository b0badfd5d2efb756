#pragma once

// Recurrent and convolutional building blocks of the encoder and decoder.
//
// Every layer is a fused kernel: the forward pass keeps whatever activations
// its backward pass needs and records one closure on the tape.

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "scribe/parameter.hpp"
#include "scribe/tensor.hpp"

namespace scribe {

/// Pixel array, H x W x C, stored as a tensor without gradient.
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(std::size_t height, std::size_t width, std::size_t channels = 1,
             double fill = 0.0) {
    if (height == 0 || width == 0 || channels == 0) {
      throw DimensionError(detail::concat("empty image ", height, "x", width, "x",
                                          channels));
    }
    values_ = make_tensor({height, width, channels}, fill);
  }

  std::size_t height() const { return values_ ? values_->dim(0) : 0; }
  std::size_t width() const { return values_ ? values_->dim(1) : 0; }
  std::size_t channels() const { return values_ ? values_->dim(2) : 0; }
  bool empty() const { return !values_; }

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return (*values_)[(y * width() + x) * channels() + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return (*values_)[(y * width() + x) * channels() + c];
  }

  const TensorPtr& tensor() const { return values_; }

  bool operator==(const ImagePlane& other) const {
    if (empty() || other.empty()) return empty() == other.empty();
    return values_->shape() == other.values_->shape() &&
           values_->values() == other.values_->values();
  }

 private:
  TensorPtr values_;
};

// ---------------------------------------------------------------------------
// tiling

/// Groups th x tw pixel blocks into feature vectors (row-major within the
/// block, channels innermost). Bottom/right edges are zero-padded.
inline TensorPtr tile(Tape* tape, const ImagePlane& image, std::size_t th,
                      std::size_t tw) {
  if (image.empty()) throw DimensionError("tile: empty image");
  if (th == 0 || tw == 0) throw DimensionError("tile: zero tile extent");
  const std::size_t H = image.height(), W = image.width(), C = image.channels();
  const std::size_t oh = (H + th - 1) / th, ow = (W + tw - 1) / tw;
  const std::size_t depth = th * tw * C;
  auto out = detail::new_output(tape, {oh, ow, depth});
  double* y = out->data().data();
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      for (std::size_t dy = 0; dy < th; ++dy)
        for (std::size_t dx = 0; dx < tw; ++dx) {
          const std::size_t py = r * th + dy, px = c * tw + dx;
          if (py >= H || px >= W) continue;
          for (std::size_t ch = 0; ch < C; ++ch)
            y[(r * ow + c) * depth + (dy * tw + dx) * C + ch] = image.at(py, px, ch);
        }
  // The image is a leaf without gradient, so nothing to record.
  return out;
}

// ---------------------------------------------------------------------------
// 1-D LSTM

/// Gates packed as [input, forget, output, candidate]; weight rows are
/// [x; h_prev].
struct LstmParams {
  std::size_t inputs = 0;
  std::size_t units = 0;
  TensorPtr weight;  // (I + U) x 4U
  TensorPtr bias;    // 4U

  static LstmParams create(ParameterSet& set, const std::string& prefix,
                           std::size_t inputs, std::size_t units, Rng& rng) {
    LstmParams p{inputs, units, set.add(prefix + ".W", {inputs + units, 4 * units}),
                 set.add(prefix + ".b", {4 * units})};
    init_uniform(*p.weight, inputs + units, rng);
    return p;
  }
};

namespace detail {

// a = b + W^T z for a (rows x cols) row-major W.
inline void gemv_t(const double* w, const double* b, const double* z, std::size_t rows,
                   std::size_t cols, double* a) {
  std::copy(b, b + cols, a);
  for (std::size_t r = 0; r < rows; ++r) {
    const double zr = z[r];
    if (zr == 0.0) continue;
    const double* wr = w + r * cols;
    for (std::size_t k = 0; k < cols; ++k) a[k] += zr * wr[k];
  }
}

// dz = W da ; dW += z da^T ; db += da
inline void gemv_backward(const double* w, const double* z, const double* da,
                          std::size_t rows, std::size_t cols, double* dz, double* dw,
                          double* db) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    double acc = 0.0;
    for (std::size_t k = 0; k < cols; ++k) acc += wr[k] * da[k];
    dz[r] = acc;
    const double zr = z[r];
    if (dw && zr != 0.0) {
      double* dwr = dw + r * cols;
      for (std::size_t k = 0; k < cols; ++k) dwr[k] += zr * da[k];
    }
  }
  if (db)
    for (std::size_t k = 0; k < cols; ++k) db[k] += da[k];
}

inline double* grad_ptr(const TensorPtr& t) {
  return wants_grad(t) ? t->grad().data() : nullptr;
}

}  // namespace detail

struct LstmState {
  TensorPtr h;
  TensorPtr c;
};

/// One step of the gated update: c = f*c_prev + i*g, h = o*tanh(c).
inline LstmState lstm_step(Tape* tape, const TensorPtr& x, const TensorPtr& h_prev,
                           const TensorPtr& c_prev, const LstmParams& p) {
  const std::size_t I = p.inputs, U = p.units;
  if (x->size() != I || h_prev->size() != U || c_prev->size() != U) {
    throw DimensionError(detail::concat("lstm_step: x ", shape_str(x->shape()), ", h ",
                                        shape_str(h_prev->shape()), ", c ",
                                        shape_str(c_prev->shape()), " for I=", I,
                                        " U=", U));
  }
  std::vector<double> z(I + U);
  std::copy(x->data().begin(), x->data().end(), z.begin());
  std::copy(h_prev->data().begin(), h_prev->data().end(), z.begin() + I);
  std::vector<double> act(4 * U);
  detail::gemv_t(p.weight->data().data(), p.bias->data().data(), z.data(), I + U, 4 * U,
                 act.data());
  for (std::size_t u = 0; u < 3 * U; ++u) act[u] = sigmoid(act[u]);
  for (std::size_t u = 3 * U; u < 4 * U; ++u) act[u] = std::tanh(act[u]);

  auto h = detail::new_output(tape, {U});
  auto c = detail::new_output(tape, {U});
  for (std::size_t u = 0; u < U; ++u) {
    (*c)[u] = act[U + u] * (*c_prev)[u] + act[u] * act[3 * U + u];
    (*h)[u] = act[2 * U + u] * std::tanh((*c)[u]);
  }
  h->check_finite("lstm_step");
  c->check_finite("lstm_step");

  if (tape) {
    tape->record([x, h_prev, c_prev, p, z = std::move(z), act = std::move(act), h, c] {
      const std::size_t I = p.inputs, U = p.units;
      std::vector<double> da(4 * U), dz(I + U);
      for (std::size_t u = 0; u < U; ++u) {
        const double i = act[u], f = act[U + u], o = act[2 * U + u], g = act[3 * U + u];
        const double tc = std::tanh((*c)[u]);
        const double dh = h->grad()[u];
        const double dc = c->grad()[u] + dh * o * (1.0 - tc * tc);
        da[u] = dc * g * i * (1.0 - i);
        da[U + u] = dc * (*c_prev)[u] * f * (1.0 - f);
        da[2 * U + u] = dh * tc * o * (1.0 - o);
        da[3 * U + u] = dc * i * (1.0 - g * g);
        if (detail::wants_grad(c_prev)) c_prev->grad()[u] += dc * f;
      }
      detail::gemv_backward(p.weight->data().data(), z.data(), da.data(), I + U, 4 * U,
                            dz.data(), detail::grad_ptr(p.weight),
                            detail::grad_ptr(p.bias));
      if (detail::wants_grad(x))
        for (std::size_t k = 0; k < I; ++k) x->grad()[k] += dz[k];
      if (detail::wants_grad(h_prev))
        for (std::size_t k = 0; k < U; ++k) h_prev->grad()[k] += dz[I + k];
    });
  }
  return {h, c};
}

/// Runs an LSTM over seq [L x I] from zero state; `reverse` scans from the
/// last step to the first but writes outputs at their original positions.
inline TensorPtr lstm_sequence(Tape* tape, const TensorPtr& seq, const LstmParams& p,
                               bool reverse) {
  if (seq->rank() != 2 || seq->dim(1) != p.inputs) {
    throw DimensionError(detail::concat("lstm_sequence: input ", shape_str(seq->shape()),
                                        " for I=", p.inputs));
  }
  const std::size_t L = seq->dim(0), I = p.inputs, U = p.units, G = 4 * U;
  auto out = detail::new_output(tape, {L, U});
  std::vector<double> act(L * G), cell(L * U);
  std::vector<double> z(I + U);
  const double* x = seq->data().data();
  double* h = out->data().data();
  auto step_index = [L, reverse](std::size_t s) { return reverse ? L - 1 - s : s; };
  for (std::size_t s = 0; s < L; ++s) {
    const std::size_t t = step_index(s);
    std::copy_n(x + t * I, I, z.begin());
    if (s == 0) {
      std::fill(z.begin() + I, z.end(), 0.0);
    } else {
      std::copy_n(h + step_index(s - 1) * U, U, z.begin() + I);
    }
    double* a = act.data() + t * G;
    detail::gemv_t(p.weight->data().data(), p.bias->data().data(), z.data(), I + U, G, a);
    for (std::size_t u = 0; u < 3 * U; ++u) a[u] = sigmoid(a[u]);
    for (std::size_t u = 3 * U; u < G; ++u) a[u] = std::tanh(a[u]);
    const double* cprev = s == 0 ? nullptr : cell.data() + step_index(s - 1) * U;
    for (std::size_t u = 0; u < U; ++u) {
      const double c = a[U + u] * (cprev ? cprev[u] : 0.0) + a[u] * a[3 * U + u];
      cell[t * U + u] = c;
      h[t * U + u] = a[2 * U + u] * std::tanh(c);
    }
  }
  out->check_finite("lstm_sequence");

  if (tape) {
    tape->record([seq, p, out, reverse, act = std::move(act), cell = std::move(cell)] {
      const std::size_t L = seq->dim(0), I = p.inputs, U = p.units, G = 4 * U;
      auto step_index = [L, reverse](std::size_t s) { return reverse ? L - 1 - s : s; };
      const double* x = seq->data().data();
      const double* h = out->data().data();
      double* dx = detail::grad_ptr(seq);
      double* dw = detail::grad_ptr(p.weight);
      double* db = detail::grad_ptr(p.bias);
      std::vector<double> dh_next(U, 0.0), dc_next(U, 0.0), da(G), z(I + U), dz(I + U);
      for (std::size_t s = L; s-- > 0;) {
        const std::size_t t = step_index(s);
        const double* a = act.data() + t * G;
        const double* cprev = s == 0 ? nullptr : cell.data() + step_index(s - 1) * U;
        for (std::size_t u = 0; u < U; ++u) {
          const double i = a[u], f = a[U + u], o = a[2 * U + u], g = a[3 * U + u];
          const double tc = std::tanh(cell[t * U + u]);
          const double dh = out->grad()[t * U + u] + dh_next[u];
          const double dc = dc_next[u] + dh * o * (1.0 - tc * tc);
          da[u] = dc * g * i * (1.0 - i);
          da[U + u] = dc * (cprev ? cprev[u] : 0.0) * f * (1.0 - f);
          da[2 * U + u] = dh * tc * o * (1.0 - o);
          da[3 * U + u] = dc * i * (1.0 - g * g);
          dc_next[u] = dc * f;
        }
        std::copy_n(x + t * I, I, z.begin());
        if (s == 0) {
          std::fill(z.begin() + I, z.end(), 0.0);
        } else {
          std::copy_n(h + step_index(s - 1) * U, U, z.begin() + I);
        }
        detail::gemv_backward(p.weight->data().data(), z.data(), da.data(), I + U, G,
                              dz.data(), dw, db);
        if (dx)
          for (std::size_t k = 0; k < I; ++k) dx[t * I + k] += dz[k];
        for (std::size_t u = 0; u < U; ++u) dh_next[u] = dz[I + u];
      }
    });
  }
  return out;
}

struct BlstmParams {
  LstmParams forward;
  LstmParams backward;

  static BlstmParams create(ParameterSet& set, const std::string& prefix,
                            std::size_t inputs, std::size_t units, Rng& rng) {
    auto f = LstmParams::create(set, prefix + ".fwd", inputs, units, rng);
    auto b = LstmParams::create(set, prefix + ".bwd", inputs, units, rng);
    return {f, b};
  }
};

/// Bidirectional LSTM: [L x I] -> [L x 2U], forward outputs first.
inline TensorPtr blstm(Tape* tape, const TensorPtr& seq, const BlstmParams& p) {
  if (seq->rank() != 2 || seq->dim(0) == 0) throw DimensionError("blstm: empty sequence");
  auto fwd = lstm_sequence(tape, seq, p.forward, false);
  auto bwd = lstm_sequence(tape, seq, p.backward, true);
  return concat_last_axis(tape, fwd, bwd);
}

// ---------------------------------------------------------------------------
// MDLSTM

/// Scan directions named by where the scan heads: kDownRight starts at the
/// top-left corner.
enum class ScanDirection { kDownRight = 0, kDownLeft = 1, kUpLeft = 2, kUpRight = 3 };

inline constexpr std::array<ScanDirection, 4> kAllDirections = {
    ScanDirection::kDownRight, ScanDirection::kDownLeft, ScanDirection::kUpLeft,
    ScanDirection::kUpRight};

/// Gates packed as [input, forget-horizontal, forget-vertical, output,
/// candidate]; weight rows are [x; h_horizontal; h_vertical].
struct MdlstmParams {
  std::size_t inputs = 0;
  std::size_t units = 0;
  TensorPtr weight;  // (I + 2U) x 5U
  TensorPtr bias;    // 5U

  static MdlstmParams create(ParameterSet& set, const std::string& prefix,
                             std::size_t inputs, std::size_t units, Rng& rng) {
    MdlstmParams p{inputs, units,
                   set.add(prefix + ".W", {inputs + 2 * units, 5 * units}),
                   set.add(prefix + ".b", {5 * units})};
    init_uniform(*p.weight, inputs + 2 * units, rng);
    return p;
  }
};

using MdlstmBlockParams = std::array<MdlstmParams, 4>;

inline MdlstmBlockParams create_mdlstm_block(ParameterSet& set, const std::string& prefix,
                                             std::size_t inputs, std::size_t units,
                                             Rng& rng) {
  MdlstmBlockParams out;
  for (std::size_t d = 0; d < 4; ++d)
    out[d] = MdlstmParams::create(set, prefix + ".dir" + std::to_string(d), inputs, units,
                                  rng);
  return out;
}

namespace detail {

struct ScanGeometry {
  std::size_t H, W;
  bool down, right;

  // k-th visited position in scan order.
  std::size_t row(std::size_t k) const {
    const std::size_t r = k / W;
    return down ? r : H - 1 - r;
  }
  std::size_t col(std::size_t k) const {
    const std::size_t c = k % W;
    return right ? c : W - 1 - c;
  }
  // Predecessor flat indices, or npos when outside the image.
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t horizontal_pred(std::size_t r, std::size_t c) const {
    if (right) return c == 0 ? npos : r * W + c - 1;
    return c + 1 == W ? npos : r * W + c + 1;
  }
  std::size_t vertical_pred(std::size_t r, std::size_t c) const {
    if (down) return r == 0 ? npos : (r - 1) * W + c;
    return r + 1 == H ? npos : (r + 1) * W + c;
  }
};

}  // namespace detail

/// Two-predecessor LSTM scan over an H x W x I map. Out-of-image
/// predecessors contribute zero state.
inline TensorPtr mdlstm_scan(Tape* tape, const TensorPtr& input, ScanDirection dir,
                             const MdlstmParams& p) {
  if (input->rank() != 3 || input->dim(2) != p.inputs) {
    throw DimensionError(detail::concat("mdlstm_scan: input ", shape_str(input->shape()),
                                        " for I=", p.inputs));
  }
  const std::size_t H = input->dim(0), W = input->dim(1);
  const std::size_t I = p.inputs, U = p.units, G = 5 * U, Z = I + 2 * U;
  const detail::ScanGeometry geo{
      H, W, dir == ScanDirection::kDownRight || dir == ScanDirection::kDownLeft,
      dir == ScanDirection::kDownRight || dir == ScanDirection::kUpRight};

  auto out = detail::new_output(tape, {H, W, U});
  std::vector<double> act(H * W * G), cell(H * W * U), z(Z);
  const double* x = input->data().data();
  double* h = out->data().data();
  const double* w = p.weight->data().data();
  const double* b = p.bias->data().data();

  for (std::size_t k = 0; k < H * W; ++k) {
    const std::size_t r = geo.row(k), c = geo.col(k), pos = r * W + c;
    const std::size_t ph = geo.horizontal_pred(r, c), pv = geo.vertical_pred(r, c);
    std::copy_n(x + pos * I, I, z.begin());
    if (ph != geo.npos) std::copy_n(h + ph * U, U, z.begin() + I);
    else std::fill_n(z.begin() + I, U, 0.0);
    if (pv != geo.npos) std::copy_n(h + pv * U, U, z.begin() + I + U);
    else std::fill_n(z.begin() + I + U, U, 0.0);

    double* a = act.data() + pos * G;
    detail::gemv_t(w, b, z.data(), Z, G, a);
    for (std::size_t u = 0; u < 4 * U; ++u) a[u] = sigmoid(a[u]);
    for (std::size_t u = 4 * U; u < G; ++u) a[u] = std::tanh(a[u]);
    for (std::size_t u = 0; u < U; ++u) {
      const double ch = ph != geo.npos ? cell[ph * U + u] : 0.0;
      const double cv = pv != geo.npos ? cell[pv * U + u] : 0.0;
      const double cc = a[u] * a[4 * U + u] + a[U + u] * ch + a[2 * U + u] * cv;
      cell[pos * U + u] = cc;
      h[pos * U + u] = a[3 * U + u] * std::tanh(cc);
    }
  }
  out->check_finite("mdlstm_scan");

  if (tape) {
    tape->record([input, out, p, geo, act = std::move(act), cell = std::move(cell)] {
      const std::size_t H = geo.H, W = geo.W;
      const std::size_t I = p.inputs, U = p.units, G = 5 * U, Z = I + 2 * U;
      const double* x = input->data().data();
      const double* h = out->data().data();
      const double* w = p.weight->data().data();
      double* dx = detail::grad_ptr(input);
      double* dw = detail::grad_ptr(p.weight);
      double* db = detail::grad_ptr(p.bias);
      std::vector<double> dh(out->grad().begin(), out->grad().end());
      std::vector<double> dcell(H * W * U, 0.0), da(G), z(Z), dz(Z);
      for (std::size_t k = H * W; k-- > 0;) {
        const std::size_t r = geo.row(k), c = geo.col(k), pos = r * W + c;
        const std::size_t ph = geo.horizontal_pred(r, c), pv = geo.vertical_pred(r, c);
        const double* a = act.data() + pos * G;
        for (std::size_t u = 0; u < U; ++u) {
          const double i = a[u], fh = a[U + u], fv = a[2 * U + u], o = a[3 * U + u],
                       g = a[4 * U + u];
          const double ch = ph != geo.npos ? cell[ph * U + u] : 0.0;
          const double cv = pv != geo.npos ? cell[pv * U + u] : 0.0;
          const double tc = std::tanh(cell[pos * U + u]);
          const double dhu = dh[pos * U + u];
          const double dc = dcell[pos * U + u] + dhu * o * (1.0 - tc * tc);
          da[u] = dc * g * i * (1.0 - i);
          da[U + u] = dc * ch * fh * (1.0 - fh);
          da[2 * U + u] = dc * cv * fv * (1.0 - fv);
          da[3 * U + u] = dhu * tc * o * (1.0 - o);
          da[4 * U + u] = dc * i * (1.0 - g * g);
          if (ph != geo.npos) dcell[ph * U + u] += dc * fh;
          if (pv != geo.npos) dcell[pv * U + u] += dc * fv;
        }
        std::copy_n(x + pos * I, I, z.begin());
        if (ph != geo.npos) std::copy_n(h + ph * U, U, z.begin() + I);
        else std::fill_n(z.begin() + I, U, 0.0);
        if (pv != geo.npos) std::copy_n(h + pv * U, U, z.begin() + I + U);
        else std::fill_n(z.begin() + I + U, U, 0.0);
        detail::gemv_backward(w, z.data(), da.data(), Z, G, dz.data(), dw, db);
        if (dx)
          for (std::size_t q = 0; q < I; ++q) dx[pos * I + q] += dz[q];
        if (ph != geo.npos)
          for (std::size_t u = 0; u < U; ++u) dh[ph * U + u] += dz[I + u];
        if (pv != geo.npos)
          for (std::size_t u = 0; u < U; ++u) dh[pv * U + u] += dz[I + U + u];
      }
    });
  }
  return out;
}

/// One scan per direction, outputs kept separate (ordered as kAllDirections).
inline std::vector<TensorPtr> mdlstm_block(Tape* tape, const TensorPtr& input,
                                           const MdlstmBlockParams& p) {
  std::vector<TensorPtr> out;
  out.reserve(4);
  for (std::size_t d = 0; d < 4; ++d)
    out.push_back(mdlstm_scan(tape, input, kAllDirections[d], p[d]));
  return out;
}

// ---------------------------------------------------------------------------
// non-overlapping convolution

struct KernelSize {
  std::size_t width = 2;
  std::size_t height = 4;
  bool operator==(const KernelSize&) const = default;
};

/// One kernel per input map, one shared bias. Weight rows are indexed
/// ((ky * kw) + kx) * I + channel.
struct ConvParams {
  KernelSize kernel;
  std::size_t inputs = 0;
  std::size_t filters = 0;
  std::vector<TensorPtr> weights;
  TensorPtr bias;

  static ConvParams create(ParameterSet& set, const std::string& prefix, KernelSize kernel,
                           std::size_t inputs, std::size_t filters, std::size_t maps,
                           Rng& rng) {
    ConvParams p{kernel, inputs, filters, {}, nullptr};
    const std::size_t rows = kernel.width * kernel.height * inputs;
    for (std::size_t d = 0; d < maps; ++d) {
      p.weights.push_back(set.add(prefix + ".dir" + std::to_string(d) + ".W", {rows, filters}));
      init_uniform(*p.weights.back(), rows * maps, rng);
    }
    p.bias = set.add(prefix + ".b", {filters});
    return p;
  }
};

/// Sum over maps of the strided convolutions plus bias, before any
/// nonlinearity. Inputs are zero-padded bottom/right to kernel divisibility.
inline TensorPtr conv_sum(Tape* tape, const std::vector<TensorPtr>& inputs,
                          const ConvParams& p) {
  const std::size_t kw = p.kernel.width, kh = p.kernel.height;
  if (kw == 0 || kh == 0) throw DimensionError("conv: zero kernel extent");
  if (inputs.size() != p.weights.size() || inputs.empty()) {
    throw DimensionError(detail::concat("conv: ", inputs.size(), " inputs for ",
                                        p.weights.size(), " kernels"));
  }
  const Shape& s0 = inputs.front()->shape();
  for (const auto& in : inputs) {
    if (in->rank() != 3 || in->shape() != s0 || in->dim(2) != p.inputs) {
      throw DimensionError(detail::concat("conv: input ", shape_str(in->shape()),
                                          " expected depth ", p.inputs));
    }
  }
  const std::size_t H = s0[0], W = s0[1], I = p.inputs, F = p.filters;
  const std::size_t oh = (H + kh - 1) / kh, ow = (W + kw - 1) / kw;
  auto out = detail::new_output(tape, {oh, ow, F});
  double* y = out->data().data();
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      std::copy_n(p.bias->data().data(), F, y + (r * ow + c) * F);

  for (std::size_t d = 0; d < inputs.size(); ++d) {
    const double* x = inputs[d]->data().data();
    const double* w = p.weights[d]->data().data();
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double* yo = y + (r * ow + c) * F;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::size_t py = r * kh + ky;
          if (py >= H) break;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t px = c * kw + kx;
            if (px >= W) break;
            const double* xi = x + (py * W + px) * I;
            const double* wr = w + (ky * kw + kx) * I * F;
            for (std::size_t q = 0; q < I; ++q) {
              const double v = xi[q];
              const double* wq = wr + q * F;
              for (std::size_t f = 0; f < F; ++f) yo[f] += v * wq[f];
            }
          }
        }
      }
  }
  out->check_finite("conv");

  if (tape) {
    tape->record([inputs, p, out, H, W, oh, ow] {
      const std::size_t kw = p.kernel.width, kh = p.kernel.height, I = p.inputs,
                        F = p.filters;
      const double* dy = out->grad().data();
      if (double* db = detail::grad_ptr(p.bias)) {
        for (std::size_t k = 0; k < oh * ow; ++k)
          for (std::size_t f = 0; f < F; ++f) db[f] += dy[k * F + f];
      }
      for (std::size_t d = 0; d < inputs.size(); ++d) {
        const double* x = inputs[d]->data().data();
        const double* w = p.weights[d]->data().data();
        double* dx = detail::grad_ptr(inputs[d]);
        double* dw = detail::grad_ptr(p.weights[d]);
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            const double* dyo = dy + (r * ow + c) * F;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::size_t py = r * kh + ky;
              if (py >= H) break;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t px = c * kw + kx;
                if (px >= W) break;
                const std::size_t pix = (py * W + px) * I;
                const std::size_t wrow = (ky * kw + kx) * I;
                for (std::size_t q = 0; q < I; ++q) {
                  const double* wq = w + (wrow + q) * F;
                  if (dx) {
                    double acc = 0.0;
                    for (std::size_t f = 0; f < F; ++f) acc += wq[f] * dyo[f];
                    dx[pix + q] += acc;
                  }
                  if (dw) {
                    double* dwq = dw + (wrow + q) * F;
                    const double v = x[pix + q];
                    for (std::size_t f = 0; f < F; ++f) dwq[f] += v * dyo[f];
                  }
                }
              }
            }
          }
      }
    });
  }
  return out;
}

/// Direction-specific strided convolutions, summed, then tanh.
inline TensorPtr conv_nonoverlap(Tape* tape, const std::vector<TensorPtr>& inputs,
                                 const ConvParams& p) {
  return elementwise(tape, conv_sum(tape, inputs, p), Elementwise::kTanh);
}

// ---------------------------------------------------------------------------
// encoder

struct EncoderConfig {
  std::size_t tile_height = 2;
  std::size_t tile_width = 2;
  std::vector<std::size_t> mdlstm_units{4, 20, 100};
  std::vector<std::size_t> conv_filters{12, 32};
  std::vector<KernelSize> conv_kernels{{2, 4}, {2, 4}};
  /// Depth of the encoder output; 0 means "label count including blank".
  std::size_t output_dim = 0;

  bool operator==(const EncoderConfig&) const = default;

  void validate() const {
    if (tile_height == 0 || tile_width == 0) throw ConfigError("encoder: zero tile extent");
    if (mdlstm_units.empty()) throw ConfigError("encoder: no MDLSTM layers");
    if (conv_filters.size() + 1 != mdlstm_units.size()) {
      throw ConfigError(detail::concat("encoder: ", conv_filters.size(),
                                       " convolutions for ", mdlstm_units.size(),
                                       " MDLSTM layers (need one fewer)"));
    }
    if (conv_kernels.size() != conv_filters.size()) {
      throw ConfigError("encoder: conv_kernels and conv_filters differ in length");
    }
    for (auto u : mdlstm_units)
      if (u == 0) throw ConfigError("encoder: zero MDLSTM units");
    for (auto f : conv_filters)
      if (f == 0) throw ConfigError("encoder: zero conv filters");
    for (auto k : conv_kernels)
      if (k.width == 0 || k.height == 0) throw ConfigError("encoder: zero kernel extent");
  }

  /// Image pixels per encoder output cell, vertically.
  std::size_t vertical_factor() const {
    std::size_t f = tile_height;
    for (auto k : conv_kernels) f *= k.height;
    return f;
  }
  std::size_t horizontal_factor() const {
    std::size_t f = tile_width;
    for (auto k : conv_kernels) f *= k.width;
    return f;
  }
};

struct EncoderParams {
  std::vector<MdlstmBlockParams> mdlstm;
  std::vector<ConvParams> convs;
  TensorPtr out_weight;
  TensorPtr out_bias;

  static EncoderParams create(ParameterSet& set, const EncoderConfig& cfg,
                              std::size_t image_channels, std::size_t output_dim,
                              Rng& rng) {
    cfg.validate();
    EncoderParams p;
    std::size_t depth = cfg.tile_height * cfg.tile_width * image_channels;
    for (std::size_t l = 0; l < cfg.mdlstm_units.size(); ++l) {
      const std::size_t units = cfg.mdlstm_units[l];
      p.mdlstm.push_back(create_mdlstm_block(
          set, "encoder.mdlstm" + std::to_string(l), depth, units, rng));
      depth = units;
      if (l < cfg.conv_filters.size()) {
        p.convs.push_back(ConvParams::create(set, "encoder.conv" + std::to_string(l),
                                             cfg.conv_kernels[l], depth,
                                             cfg.conv_filters[l], 4, rng));
        depth = cfg.conv_filters[l];
      }
    }
    p.out_weight = set.add("encoder.out.W", {depth, output_dim});
    p.out_bias = set.add("encoder.out.b", {output_dim});
    init_uniform(*p.out_weight, depth, rng);
    return p;
  }
};

/// tile -> (MDLSTM block -> conv)* -> MDLSTM block -> sum of directions ->
/// affine. Returns an H' x W' x output_dim feature map.
inline TensorPtr encode(Tape* tape, const ImagePlane& image, const EncoderConfig& cfg,
                        const EncoderParams& p) {
  auto x = tile(tape, image, cfg.tile_height, cfg.tile_width);
  for (std::size_t l = 0; l < p.mdlstm.size(); ++l) {
    auto maps = mdlstm_block(tape, x, p.mdlstm[l]);
    if (l < p.convs.size()) {
      x = conv_nonoverlap(tape, maps, p.convs[l]);
    } else {
      x = add_all(tape, maps);
    }
  }
  return affine(tape, x, p.out_weight, p.out_bias);
}

}  // namespace scribe
