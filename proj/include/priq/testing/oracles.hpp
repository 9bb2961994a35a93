#pragma once

// Naive reference implementations used to cross-check the tensor ops,
// metrics and pseudo-reference. Plain loops over flat row-major buffers in
// double precision; nothing here touches the tape or the optimized kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace priq::oracle {

using Buffer = std::vector<double>;

// out[n,o,r,c] = b[o] + sum_{i,u,v} x[n,i,r*s+u-p,c*s+v-p] * k[o,i,u,v], zero outside.
inline Buffer conv2d(const Buffer& x, std::size_t n, std::size_t cin, std::size_t h, std::size_t w,
                     const Buffer& k, std::size_t cout, std::size_t kh, std::size_t kw, const Buffer& b,
                     std::size_t stride, std::size_t pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  Buffer out(n * cout * oh * ow, 0.0);
  for (std::size_t im = 0; im < n; ++im)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long rr = static_cast<long>(r * stride + u) - static_cast<long>(pad);
                const long cc = static_cast<long>(c * stride + v) - static_cast<long>(pad);
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                acc += x[((im * cin + i) * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)] *
                       k[((o * cin + i) * kh + u) * kw + v];
              }
          out[((im * cout + o) * oh + r) * ow + c] = acc;
        }
  return out;
}

// y[n,o] = sum_i x[n,i] W[o,i] + b[o]
inline Buffer linear(const Buffer& x, std::size_t n, std::size_t in, const Buffer& wt, std::size_t out,
                     const Buffer& b) {
  Buffer y(n * out);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * wt[o * in + i];
      y[r * out + o] = acc;
    }
  return y;
}

// Max over in-bounds window positions; average divides by window^2 (padding counts as zeros).
inline Buffer pool2d(const Buffer& x, std::size_t planes, std::size_t h, std::size_t w, std::size_t window,
                     std::size_t stride, std::size_t pad, bool max) {
  const std::size_t oh = (h + 2 * pad - window) / stride + 1, ow = (w + 2 * pad - window) / stride + 1;
  Buffer out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double acc = max ? -INFINITY : 0.0;
        for (std::size_t u = 0; u < window; ++u)
          for (std::size_t v = 0; v < window; ++v) {
            const long rr = static_cast<long>(r * stride + u) - static_cast<long>(pad);
            const long cc = static_cast<long>(c * stride + v) - static_cast<long>(pad);
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
            const double val = x[(p * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)];
            acc = max ? std::max(acc, val) : acc + val;
          }
        out[(p * oh + r) * ow + c] = max ? acc : acc / static_cast<double>(window * window);
      }
  return out;
}

// Sum (or mean) over the axes flagged in `reduce`; output keeps the
// remaining axes in order.
inline Buffer reduce(const Buffer& x, const std::vector<std::size_t>& shape, const std::vector<bool>& reduce,
                     bool mean) {
  std::size_t out_n = 1, count = 1;
  for (std::size_t a = 0; a < shape.size(); ++a) (reduce[a] ? count : out_n) *= shape[a];
  Buffer out(out_n, 0.0);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < x.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t a = 0; a < shape.size(); ++a) {
      if (!reduce[a]) o = o * shape[a] + idx[a];
    }
    out[o] += x[flat];
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  if (mean) {
    for (auto& v : out) v /= static_cast<double>(count);
  }
  return out;
}

// Global SSIM of two planes with population statistics.
inline double ssim_plane(const double* a, const double* b, std::size_t p, double c1, double c2) {
  double ma = 0, mb = 0;
  for (std::size_t q = 0; q < p; ++q) {
    ma += a[q];
    mb += b[q];
  }
  ma /= static_cast<double>(p);
  mb /= static_cast<double>(p);
  double va = 0, vb = 0, cov = 0;
  for (std::size_t q = 0; q < p; ++q) {
    va += (a[q] - ma) * (a[q] - ma);
    vb += (b[q] - mb) * (b[q] - mb);
    cov += (a[q] - ma) * (b[q] - mb);
  }
  va /= static_cast<double>(p);
  vb /= static_cast<double>(p);
  cov /= static_cast<double>(p);
  return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

// x [N,C,P] against ref [C,P] -> [N,C]
inline Buffer channel_ssim(const Buffer& x, const Buffer& ref, std::size_t n, std::size_t c, std::size_t p,
                           double c1 = 1e-4, double c2 = 9e-4) {
  Buffer out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = ssim_plane(&x[(i * c + ch) * p], &ref[ch * p], p, c1, c2);
  return out;
}

// Textbook one-shot formula on means; no shared code with the library.
inline double pearson(const Buffer& x, const Buffer& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx += (x[i] - mx) * (x[i] - mx);
    dy += (y[i] - my) * (y[i] - my);
  }
  return num / std::sqrt(dx * dy);
}

// rank(v_i) = 1 + #{v_j < v_i} + (#{v_j == v_i} - 1) / 2, by counting.
inline Buffer brute_force_ranks(const Buffer& v) {
  Buffer r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double u : v) {
      less += u < v[i];
      equal += u == v[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

inline double spearman(const Buffer& x, const Buffer& y) { return pearson(brute_force_ranks(x), brute_force_ranks(y)); }

// z [N,C,H,W]; weights given per image for each (c,h,w) as a dense [N,C,H,W]
// field of logits; softmax over N computed directly per slice.
inline Buffer weighted_reference(const Buffer& z, const Buffer& logits, std::size_t n, std::size_t slice) {
  Buffer out(slice, 0.0);
  for (std::size_t s = 0; s < slice; ++s) {
    double top = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) top = std::max(top, logits[i * slice + s]);
    double denom = 0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(logits[i * slice + s] - top);
    for (std::size_t i = 0; i < n; ++i) out[s] += std::exp(logits[i * slice + s] - top) / denom * z[i * slice + s];
  }
  return out;
}

inline Buffer random_buffer(std::size_t size, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Buffer b(size);
  for (auto& v : b) v = d(rng);
  return b;
}

}  // namespace priq::oracle
