#pragma once

// Differentiable tensor operations. Every op checks its output for NaN/Inf
// and, when a tape is active and an input requires a gradient, records a
// backward closure that accumulates into the inputs' grad buffers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "priq/error.hpp"
#include "priq/tensor.hpp"

namespace priq::ops {

enum class ReduceMode { Mean, Sum };
enum class ElementwiseMode { Add, Mul };

namespace detail {

using priq::detail::check_finite;
using priq::detail::recording_tape;

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// For every flat index of `target`, the flat index of `source` when source is
// broadcast to target (right-aligned, size-1 or missing dims stretch).
inline std::vector<std::size_t> broadcast_map(const Shape& target, const Shape& source,
                                              const char* op) {
  if (source.size() > target.size()) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(source) + " to " +
                     shape_str(target));
  }
  const std::size_t lead = target.size() - source.size();
  const auto src_strides = strides_of(source);
  std::vector<std::size_t> step(target.size(), 0);
  for (std::size_t a = 0; a < target.size(); ++a) {
    if (a < lead) continue;
    const std::size_t sd = source[a - lead];
    if (sd == target[a]) {
      step[a] = src_strides[a - lead];
    } else if (sd != 1) {
      throw ShapeError(std::string(op) + ": dimension " + std::to_string(a) + " of " +
                       shape_str(source) + " (size " + std::to_string(sd) +
                       ") does not broadcast to size " + std::to_string(target[a]));
    }
  }
  const std::size_t n = shape_numel(target);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(target.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = off;
    for (std::size_t a = target.size(); a-- > 0;) {
      if (++idx[a] < target[a]) {
        off += step[a];
        break;
      }
      off -= step[a] * (target[a] - 1);
      idx[a] = 0;
    }
  }
  return map;
}

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                                 std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Range [lo, hi) of output positions whose input tap o*stride + offset - pad
// falls inside [0, in).
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t offset,
                        std::size_t pad, std::size_t& lo, std::size_t& hi) {
  const long p = static_cast<long>(pad) - static_cast<long>(offset);
  const long s = static_cast<long>(stride);
  long l = p > 0 ? (p + s - 1) / s : 0;
  long h = (static_cast<long>(in) - 1 + p) / s + 1;
  if (static_cast<long>(in) - 1 + p < 0) h = 0;
  lo = static_cast<std::size_t>(std::clamp<long>(l, 0, static_cast<long>(out)));
  hi = static_cast<std::size_t>(std::clamp<long>(h, 0, static_cast<long>(out)));
  if (hi < lo) hi = lo;
}

// Unfolds one image [C,H,W] into rows (c, i, j) x output positions.
template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            const std::vector<std::size_t>& row_lo, const std::vector<std::size_t>& row_hi,
            const std::vector<std::size_t>& col_lo, const std::vector<std::size_t>& col_hi,
            T* col) {
  const std::size_t positions = oh * ow;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* xp = x + ci * h * w;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* dst = col + ((ci * kh + i) * kw + j) * positions;
        std::fill(dst, dst + positions, T(0));
        const std::size_t c0 = col_lo[j], len = col_hi[j] - col_lo[j];
        for (std::size_t r = row_lo[i]; r < row_hi[i]; ++r) {
          T* d = dst + r * ow + c0;
          const T* s = xp + (r * stride + i - pad) * w + (c0 * stride + j - pad);
          if (stride == 1) {
            std::copy_n(s, len, d);
          } else {
            for (std::size_t c = 0; c < len; ++c) d[c] = s[c * stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into the image gradient.
template <typename T>
void col2im(const T* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            const std::vector<std::size_t>& row_lo, const std::vector<std::size_t>& row_hi,
            const std::vector<std::size_t>& col_lo, const std::vector<std::size_t>& col_hi,
            T* gx) {
  const std::size_t positions = oh * ow;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    T* gp = gx + ci * h * w;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* src = col + ((ci * kh + i) * kw + j) * positions;
        const std::size_t c0 = col_lo[j], len = col_hi[j] - col_lo[j];
        for (std::size_t r = row_lo[i]; r < row_hi[i]; ++r) {
          const T* s = src + r * ow + c0;
          T* d = gp + (r * stride + i - pad) * w + (c0 * stride + j - pad);
          if (stride == 1) {
            for (std::size_t c = 0; c < len; ++c) d[c] += s[c];
          } else {
            for (std::size_t c = 0; c < len; ++c) d[c * stride] += s[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation over an [N, C_in, H, W] batch.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [C_out,C_in,kh,kw], got " + shape_str(kernel.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n_img = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d: kernel C_in " + std::to_string(kernel.dim(1)) +
                     " does not match input channels " + std::to_string(cin));
  }
  if (bias.rank() != 1 || bias.dim(0) != cout) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(cout) + "], got " + shape_str(bias.shape()));
  }
  if (kh > h + 2 * padding) throw ShapeError("conv2d: kernel height " + std::to_string(kh) + " exceeds padded input height " + std::to_string(h + 2 * padding));
  if (kw > w + 2 * padding) throw ShapeError("conv2d: kernel width " + std::to_string(kw) + " exceeds padded input width " + std::to_string(w + 2 * padding));

  const std::size_t oh = detail::conv_out_size(h, kh, stride, padding);
  const std::size_t ow = detail::conv_out_size(w, kw, stride, padding);
  Tensor<T> out({n_img, cout, oh, ow});

  // Valid output ranges per kernel row/column offset.
  std::vector<std::size_t> row_lo(kh), row_hi(kh), col_lo(kw), col_hi(kw);
  for (std::size_t i = 0; i < kh; ++i) detail::valid_range(oh, h, stride, i, padding, row_lo[i], row_hi[i]);
  for (std::size_t j = 0; j < kw; ++j) detail::valid_range(ow, w, stride, j, padding, col_lo[j], col_hi[j]);

  const std::size_t patch = cin * kh * kw;
  const std::size_t positions = oh * ow;
  const T* k = kernel.data();
  std::vector<T> col(patch * positions);
  for (std::size_t n = 0; n < n_img; ++n) {
    detail::im2col(input.data() + n * cin * h * w, cin, h, w, kh, kw, stride, padding, oh, ow,
                   row_lo, row_hi, col_lo, col_hi, col.data());
    T* yp = out.data() + n * cout * positions;
    for (std::size_t co = 0; co < cout; ++co) {
      T* yr = yp + co * positions;
      std::fill(yr, yr + positions, bias[co]);
      const T* kr = k + co * patch;
      for (std::size_t q = 0; q < patch; ++q) {
        const T kv = kr[q];
        const T* cr = col.data() + q * positions;
        for (std::size_t p = 0; p < positions; ++p) yr[p] += kv * cr[p];
      }
    }
  }
  detail::check_finite(out, "conv2d");

  if (auto* tape = detail::recording_tape<T>(input, kernel, bias)) {
    auto xn = input.node(), kn = kernel.node(), bn = bias.node(), yn = out.node();
    tape->record("conv2d", yn, [=]() {
      const T* gy = yn->ensure_grad().data();
      const T* kv_all = kn->values.data();
      T* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      T* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
      T* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      std::vector<T> col_buf(patch * positions), col_t(gk ? patch * positions : 0);
      std::vector<T> gcol(gx ? patch * positions : 0);
      for (std::size_t n = 0; n < n_img; ++n) {
        const T* gyp = gy + n * cout * positions;
        if (gb) {
          for (std::size_t co = 0; co < cout; ++co) {
            T s = 0;
            for (std::size_t p = 0; p < positions; ++p) s += gyp[co * positions + p];
            gb[co] += s;
          }
        }
        if (gk) {
          detail::im2col(xn->values.data() + n * cin * h * w, cin, h, w, kh, kw, stride, padding, oh,
                         ow, row_lo, row_hi, col_lo, col_hi, col_buf.data());
          for (std::size_t q = 0; q < patch; ++q) {
            for (std::size_t p = 0; p < positions; ++p) col_t[p * patch + q] = col_buf[q * positions + p];
          }
          for (std::size_t co = 0; co < cout; ++co) {
            T* gkr = gk + co * patch;
            for (std::size_t p = 0; p < positions; ++p) {
              const T g = gyp[co * positions + p];
              const T* ct = col_t.data() + p * patch;
              for (std::size_t q = 0; q < patch; ++q) gkr[q] += g * ct[q];
            }
          }
        }
        if (gx) {
          std::fill(gcol.begin(), gcol.end(), T(0));
          for (std::size_t co = 0; co < cout; ++co) {
            const T* gyr = gyp + co * positions;
            const T* kr = kv_all + co * patch;
            for (std::size_t q = 0; q < patch; ++q) {
              const T kv = kr[q];
              T* gc = gcol.data() + q * positions;
              for (std::size_t p = 0; p < positions; ++p) gc[p] += kv * gyr[p];
            }
          }
          detail::col2im(gcol.data(), cin, h, w, kh, kw, stride, padding, oh, ow, row_lo, row_hi,
                         col_lo, col_hi, gx + n * cin * h * w);
        }
      }
    });
  }
  return out;
}

/// Row-wise affine map: out[n, o] = bias[o] + sum_f input[n, f] * weight[o, f].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 2) throw ShapeError("linear: input must be [N,F_in], got " + shape_str(input.shape()));
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [F_out,F_in], got " + shape_str(weight.shape()));
  const std::size_t rows = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
  if (weight.dim(1) != fin) {
    throw ShapeError("linear: weight F_in " + std::to_string(weight.dim(1)) +
                     " does not match input features " + std::to_string(fin));
  }
  if (bias.rank() != 1 || bias.dim(0) != fout) {
    throw ShapeError("linear: bias must be [" + std::to_string(fout) + "], got " + shape_str(bias.shape()));
  }
  Tensor<T> out({rows, fout});
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t o = 0; o < fout; ++o) {
      T acc = bias[o];
      for (std::size_t f = 0; f < fin; ++f) acc += input[n * fin + f] * weight[o * fin + f];
      out[n * fout + o] = acc;
    }
  }
  detail::check_finite(out, "linear");

  if (auto* tape = detail::recording_tape<T>(input, weight, bias)) {
    auto xn = input.node(), wn = weight.node(), bn = bias.node(), yn = out.node();
    tape->record("linear", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t o = 0; o < fout; ++o) {
          const T g = gy[n * fout + o];
          if (bn->requires_grad) bn->ensure_grad()[o] += g;
          if (wn->requires_grad) {
            auto& gw = wn->ensure_grad();
            for (std::size_t f = 0; f < fin; ++f) gw[o * fin + f] += g * xn->values[n * fin + f];
          }
          if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            for (std::size_t f = 0; f < fin; ++f) gx[n * fin + f] += g * wn->values[o * fin + f];
          }
        }
      }
    });
  }
  return out;
}

/// Softmax over one axis, independently for every slice along the others.
template <typename T>
Tensor<T> softmax_along(const Tensor<T>& input, std::size_t axis) {
  if (axis >= input.rank()) {
    throw ShapeError("softmax_along: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(input.rank()));
  }
  const Shape& s = input.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t len = s[axis];
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, input[base + l * inner]);
      T sum = 0;
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(input[base + l * inner] - mx);
        out[base + l * inner] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= sum;
    }
  }
  detail::check_finite(out, "softmax_along");

  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("softmax_along", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      const auto& y = yn->values;
      auto& gx = xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t l = 0; l < len; ++l) dot += gy[base + l * inner] * y[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            gx[base + l * inner] += y[base + l * inner] * (gy[base + l * inner] - dot);
          }
        }
      }
    });
  }
  return out;
}

/// Mean or sum over a set of axes; reduced axes are removed from the shape.
template <typename T>
Tensor<T> reduce(const Tensor<T>& input, const std::vector<std::size_t>& axes, ReduceMode mode) {
  if (input.numel() == 0) throw ShapeError("reduce: empty tensor");
  const Shape& s = input.shape();
  std::set<std::size_t> axis_set;
  for (std::size_t a : axes) {
    if (a >= s.size()) throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for rank " + std::to_string(s.size()));
    if (!axis_set.insert(a).second) throw ShapeError("reduce: axis " + std::to_string(a) + " listed twice");
  }
  Shape out_shape;
  Shape kept(s.size(), 1);
  std::size_t count = 1;
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (axis_set.contains(a)) {
      count *= s[a];
    } else {
      out_shape.push_back(s[a]);
      kept[a] = s[a];
    }
  }
  // Map every input element to its output slot by broadcasting the kept shape.
  const auto map = detail::broadcast_map(s, kept, "reduce");
  const T scale = mode == ReduceMode::Mean ? T(1) / static_cast<T>(count) : T(1);
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += input[i];
  if (mode == ReduceMode::Mean) {
    for (auto& v : out.mutable_values()) v *= scale;
  }
  detail::check_finite(out, "reduce");

  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("reduce", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < map.size(); ++i) gx[i] += gy[map[i]] * scale;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, const std::vector<std::size_t>& axes) {
  return reduce(input, axes, ReduceMode::Sum);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& input, const std::vector<std::size_t>& axes) {
  return reduce(input, axes, ReduceMode::Mean);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& input) {
  std::vector<std::size_t> axes(input.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return reduce(input, axes, ReduceMode::Sum);
}

/// a (+|*) b, with b broadcast to a's shape by singleton expansion.
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseMode mode) {
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> map;
  if (!same) map = detail::broadcast_map(a.shape(), b.shape(), "elementwise");
  const std::size_t n = a.numel();
  Tensor<T> out(a.shape());
  if (mode == ElementwiseMode::Add) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[same ? i : map[i]];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[same ? i : map[i]];
  }
  detail::check_finite(out, "elementwise");

  if (auto* tape = detail::recording_tape<T>(a, b)) {
    auto an = a.node(), bn = b.node(), yn = out.node();
    tape->record("elementwise", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      T* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
      T* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = same ? i : map[i];
        if (mode == ElementwiseMode::Add) {
          if (ga) ga[i] += gy[i];
          if (gb) gb[j] += gy[i];
        } else {
          if (ga) ga[i] += gy[i] * bn->values[j];
          if (gb) gb[j] += gy[i] * an->values[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, ElementwiseMode::Add);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, ElementwiseMode::Mul);
}

/// Materializes `input` broadcast to `shape` (singleton expansion).
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& input, const Shape& shape) {
  const auto map = detail::broadcast_map(shape, input.shape(), "broadcast_to");
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = input[map[i]];

  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("broadcast_to", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(input.values().begin(), input.values().end()));
  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("reshape", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

/// Joins tensors along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t a = 0; a < ref.size(); ++a) {
      if (a != axis && p.dim(a) != ref[a]) {
        throw ShapeError("concat: dimension " + std::to_string(a) + " differs (" +
                         std::to_string(p.dim(a)) + " vs " + std::to_string(ref[a]) + ")");
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (std::size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];
  const std::size_t out_chunk = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data() + o * chunk, chunk, out.data() + o * out_chunk + off);
    }
    off += chunk;
  }

  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  auto* tape = any ? Tape<T>::active() : nullptr;
  if (tape) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto yn = out.node();
    tape->record("concat", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        auto& gx = nodes[k]->ensure_grad();
        const std::size_t chunk = gx.size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t q = 0; q < chunk; ++q) gx[o * chunk + q] += gy[o * out_chunk + offsets[k] + q];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  detail::check_finite(out, "relu");
  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("relu", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (xn->values[i] > T(0)) gx[i] += gy[i];
      }
    });
  }
  return out;
}

namespace detail {

inline void check_pool(const Shape& s, std::size_t window, std::size_t stride, std::size_t padding,
                       const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": input must be [N,C,H,W], got " + shape_str(s));
  if (window == 0 || stride == 0) throw ShapeError(std::string(op) + ": window and stride must be positive");
  if (window > s[2] + 2 * padding || window > s[3] + 2 * padding) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(window) +
                     " larger than padded input " + shape_str(s));
  }
}

}  // namespace detail

/// Max pooling; padded positions never win. Ties resolve to the first
/// row-major position in the window.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride,
                     std::size_t padding = 0) {
  detail::check_pool(input.shape(), window, stride, padding, "max_pool2d");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = detail::conv_out_size(h, window, stride, padding);
  const std::size_t ow = detail::conv_out_size(w, window, stride, padding);
  Tensor<T> out({input.dim(0), input.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t i = 0; i < window; ++i) {
          const long ir = static_cast<long>(r * stride + i) - static_cast<long>(padding);
          if (ir < 0 || ir >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < window; ++j) {
            const long jc = static_cast<long>(c * stride + j) - static_cast<long>(padding);
            if (jc < 0 || jc >= static_cast<long>(w)) continue;
            const std::size_t idx = p * h * w + static_cast<std::size_t>(ir) * w + static_cast<std::size_t>(jc);
            if (!found || input[idx] > best) {
              best = input[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        if (!found) throw ShapeError("max_pool2d: window covers padding only");
        const std::size_t o = (p * oh + r) * ow + c;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  detail::check_finite(out, "max_pool2d");
  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("max_pool2d", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      auto& gx = xn->ensure_grad();
      for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
    });
  }
  return out;
}

/// Average pooling; zero padding counts toward the window size.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride,
                     std::size_t padding = 0) {
  detail::check_pool(input.shape(), window, stride, padding, "avg_pool2d");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = detail::conv_out_size(h, window, stride, padding);
  const std::size_t ow = detail::conv_out_size(w, window, stride, padding);
  const T scale = T(1) / static_cast<T>(window * window);
  Tensor<T> out({input.dim(0), input.dim(1), oh, ow});
  auto visit = [&](auto&& fn) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
          const std::size_t o = (p * oh + r) * ow + c;
          for (std::size_t i = 0; i < window; ++i) {
            const long ir = static_cast<long>(r * stride + i) - static_cast<long>(padding);
            if (ir < 0 || ir >= static_cast<long>(h)) continue;
            for (std::size_t j = 0; j < window; ++j) {
              const long jc = static_cast<long>(c * stride + j) - static_cast<long>(padding);
              if (jc < 0 || jc >= static_cast<long>(w)) continue;
              fn(o, p * h * w + static_cast<std::size_t>(ir) * w + static_cast<std::size_t>(jc));
            }
          }
        }
      }
    }
  };
  visit([&](std::size_t o, std::size_t i) { out[o] += input[i] * scale; });
  detail::check_finite(out, "avg_pool2d");
  if (auto* tape = detail::recording_tape<T>(input)) {
    auto xn = input.node(), yn = out.node();
    tape->record("avg_pool2d", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      auto& gx = xn->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            const std::size_t o = (p * oh + r) * ow + c;
            for (std::size_t i = 0; i < window; ++i) {
              const long ir = static_cast<long>(r * stride + i) - static_cast<long>(padding);
              if (ir < 0 || ir >= static_cast<long>(h)) continue;
              for (std::size_t j = 0; j < window; ++j) {
                const long jc = static_cast<long>(c * stride + j) - static_cast<long>(padding);
                if (jc < 0 || jc >= static_cast<long>(w)) continue;
                gx[p * h * w + static_cast<std::size_t>(ir) * w + static_cast<std::size_t>(jc)] += gy[o] * scale;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Mean Huber loss: 0.5 e^2 for |e| <= delta, delta (|e| - delta / 2) beyond.
template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target, T delta) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("huber_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (!(delta > T(0))) throw ConfigError("huber_loss: delta must be positive");
  if (pred.numel() == 0) throw ShapeError("huber_loss: empty input");
  const std::size_t n = pred.numel();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T e = pred[i] - target[i];
    const T ae = std::abs(e);
    total += ae <= delta ? T(0.5) * e * e : delta * (ae - T(0.5) * delta);
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  detail::check_finite(out, "huber_loss");
  if (auto* tape = detail::recording_tape<T>(pred, target)) {
    auto pn = pred.node(), tn = target.node(), yn = out.node();
    tape->record("huber_loss", yn, [=]() {
      const T g = yn->ensure_grad()[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = pn->values[i] - tn->values[i];
        const T d = std::abs(e) <= delta ? e : (e > 0 ? delta : -delta);
        if (pn->requires_grad) pn->ensure_grad()[i] += g * d;
        if (tn->requires_grad) tn->ensure_grad()[i] -= g * d;
      }
    });
  }
  return out;
}

}  // namespace priq::ops
