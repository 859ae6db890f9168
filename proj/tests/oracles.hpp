#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Everything here is deliberately the dumbest possible nested-loop version,
// accumulated in double, and shares no code with the library kernels.

#include <cmath>
#include <cstdint>
#include <vector>

#include "kad/ops.hpp"
#include "kad/tensor.hpp"

namespace oracle {

// Plain cross-correlation. x [N,Cin,H,W], w [Cout,Cin/g,kh,kw].
inline kad::Tensor conv2d(const kad::Tensor& x, const kad::Tensor& w,
                          const kad::Tensor& bias, const kad::ConvSpec& s) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), cing = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * s.ph - s.dh * (kh - 1) - 1) / s.sh + 1;
  const int ow = (wd + 2 * s.pw - s.dw * (kw - 1) - 1) / s.sw + 1;
  const int coutg = cout / s.groups;
  kad::Tensor out = kad::Tensor::zeros({n, cout, oh, ow});
  for (int ni = 0; ni < n; ++ni)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.defined() ? bias.data()[co] : 0.0;
          const int g = co / coutg;
          for (int ci = 0; ci < cing; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * s.sh + ky * s.dh - s.ph;
                const int ix = ox * s.sw + kx * s.dw - s.pw;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                const double xv =
                    x.data()[((static_cast<int64_t>(ni) * cin + g * cing + ci) * h +
                              iy) * wd + ix];
                const double wv =
                    w.data()[((static_cast<int64_t>(co) * cing + ci) * kh + ky) * kw +
                             kx];
                acc += xv * wv;
              }
          out.data()[((static_cast<int64_t>(ni) * cout + co) * oh + oy) * ow + ox] =
              static_cast<float>(acc);
        }
  return out;
}

// Transposed convolution by definition: scatter every input element.
// x [N,Cin,H,W], w [Cin,Cout/g,kh,kw].
inline kad::Tensor conv_transpose2d(const kad::Tensor& x, const kad::Tensor& w,
                                    const kad::Tensor& bias,
                                    const kad::ConvSpec& s) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int coutg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int cout = coutg * s.groups;
  const int cing = cin / s.groups;
  const int oh = (h - 1) * s.sh - 2 * s.ph + s.dh * (kh - 1) + 1 + s.output_pad_h;
  const int ow = (wd - 1) * s.sw - 2 * s.pw + s.dw * (kw - 1) + 1 + s.output_pad_w;
  std::vector<double> acc(static_cast<size_t>(n) * cout * oh * ow, 0.0);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < cin; ++ci) {
      const int g = ci / cing;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          const double xv =
              x.data()[((static_cast<int64_t>(ni) * cin + ci) * h + y) * wd + xx];
          for (int col = 0; col < coutg; ++col)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int oy = y * s.sh + ky * s.dh - s.ph;
                const int ox = xx * s.sw + kx * s.dw - s.pw;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                const double wv =
                    w.data()[((static_cast<int64_t>(ci) * coutg + col) * kh + ky) *
                             kw + kx];
                acc[((static_cast<size_t>(ni) * cout + g * coutg + col) * oh + oy) *
                    ow + ox] += xv * wv;
              }
        }
    }
  kad::Tensor out = kad::Tensor::zeros({n, cout, oh, ow});
  for (size_t i = 0; i < acc.size(); ++i) {
    const int co = static_cast<int>((i / (static_cast<size_t>(oh) * ow)) % cout);
    out.data()[i] = static_cast<float>(acc[i] +
                                       (bias.defined() ? bias.data()[co] : 0.0));
  }
  return out;
}

// Closed-form bilinear interpolation at a single output pixel.
inline double bilinear_at(const kad::Tensor& x, int ni, int ci, int out_h,
                          int out_w, int oy, int ox, bool align_corners) {
  const int h = x.dim(2), w = x.dim(3);
  auto src = [&](int o, int out_n, int in_n) {
    if (align_corners)
      return out_n == 1 ? 0.0 : static_cast<double>(o) * (in_n - 1) / (out_n - 1);
    double v = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
    if (v < 0) v = 0;
    if (v > in_n - 1) v = in_n - 1;
    return v;
  };
  const double sy = src(oy, out_h, h), sx = src(ox, out_w, w);
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int y, int xx) {
    return static_cast<double>(
        x.data()[((static_cast<int64_t>(ni) * x.dim(1) + ci) * h + y) * w + xx]);
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

// Straight-line affinity matrix per the definition: rows of the position
// matrix L2-normalized, then (1/m) V V^T. features [1,c,h,w].
inline std::vector<double> affinity(const kad::Tensor& f, float eps = 1e-8f) {
  const int c = f.dim(1), h = f.dim(2), w = f.dim(3);
  const int m = h * w;
  std::vector<double> vn(static_cast<size_t>(m) * c);
  for (int p = 0; p < m; ++p) {
    double r2 = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      const double v = f.data()[static_cast<int64_t>(ci) * m + p];
      r2 += v * v;
    }
    const double inv = 1.0 / (std::sqrt(r2) + eps);
    for (int ci = 0; ci < c; ++ci)
      vn[static_cast<size_t>(p) * c + ci] =
          f.data()[static_cast<int64_t>(ci) * m + p] * inv;
  }
  std::vector<double> a(static_cast<size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double dot = 0.0;
      for (int ci = 0; ci < c; ++ci)
        dot += vn[static_cast<size_t>(i) * c + ci] * vn[static_cast<size_t>(j) * c + ci];
      a[static_cast<size_t>(i) * m + j] = dot / m;
    }
  return a;
}

// Straight-line Eq-style losses over already-computed feature tensors.

inline double mse(const kad::Tensor& a, const kad::Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

inline double mean_abs(const kad::Tensor& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::fabs(a.data()[i]);
  return acc / static_cast<double>(a.numel());
}

// Per-position channel normalization followed by the p-distance mean.
// u, v are [N,C,H,W] with identical shapes.
inline double adaptation(const kad::Tensor& u, const kad::Tensor& v, int p,
                         float eps = 1e-8f) {
  const int n = u.dim(0), c = u.dim(1), h = u.dim(2), w = u.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni)
    for (int64_t pos = 0; pos < plane; ++pos) {
      double ru = 0.0, rv = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        const double uv = u.data()[(static_cast<int64_t>(ni) * c + ci) * plane + pos];
        const double vv = v.data()[(static_cast<int64_t>(ni) * c + ci) * plane + pos];
        ru += uv * uv;
        rv += vv * vv;
      }
      ru = std::sqrt(ru) + eps;
      rv = std::sqrt(rv) + eps;
      double dist = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        const double uv = u.data()[(static_cast<int64_t>(ni) * c + ci) * plane + pos];
        const double vv = v.data()[(static_cast<int64_t>(ni) * c + ci) * plane + pos];
        const double d = uv / ru - vv / rv;
        dist += p == 2 ? d * d : std::fabs(d);
      }
      acc += dist;
    }
  return acc / static_cast<double>(static_cast<int64_t>(n) * plane);
}

// Mean over batch of mean squared affinity difference. a, b are [N,C,H,W].
inline double affinity_loss(const kad::Tensor& a, const kad::Tensor& b,
                            float eps = 1e-8f) {
  const int n = a.dim(0);
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    kad::Tensor sa = kad::Tensor::zeros({1, a.dim(1), a.dim(2), a.dim(3)});
    kad::Tensor sb = kad::Tensor::zeros({1, b.dim(1), b.dim(2), b.dim(3)});
    const int64_t sz = sa.numel();
    for (int64_t i = 0; i < sz; ++i) sa.data()[i] = a.data()[ni * sz + i];
    for (int64_t i = 0; i < sz; ++i) sb.data()[i] = b.data()[ni * sz + i];
    const auto aa = affinity(sa, eps);
    const auto ab = affinity(sb, eps);
    double d2 = 0.0;
    for (size_t i = 0; i < aa.size(); ++i) {
      const double d = aa[i] - ab[i];
      d2 += d * d;
    }
    acc += d2 / static_cast<double>(aa.size());
  }
  return acc / n;
}

// Mean per-pixel KL between temperature-softened distributions, times T^2.
inline double kd_divergence(const kad::Tensor& student, const kad::Tensor& teacher,
                            double t) {
  const int n = student.dim(0), k = student.dim(1);
  const int64_t plane = static_cast<int64_t>(student.dim(2)) * student.dim(3);
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni)
    for (int64_t p = 0; p < plane; ++p) {
      std::vector<double> ps(static_cast<size_t>(k)), qs(static_cast<size_t>(k));
      double pse = 0.0, qse = 0.0;
      for (int ki = 0; ki < k; ++ki) {
        const int64_t off = (static_cast<int64_t>(ni) * k + ki) * plane + p;
        ps[static_cast<size_t>(ki)] = std::exp(teacher.data()[off] / t);
        qs[static_cast<size_t>(ki)] = std::exp(student.data()[off] / t);
        pse += ps[static_cast<size_t>(ki)];
        qse += qs[static_cast<size_t>(ki)];
      }
      for (int ki = 0; ki < k; ++ki) {
        const double pv = ps[static_cast<size_t>(ki)] / pse;
        const double qv = qs[static_cast<size_t>(ki)] / qse;
        acc += pv * (std::log(pv) - std::log(qv));
      }
    }
  return t * t * acc / static_cast<double>(n * plane);
}

// Mean over non-ignored pixels of -log softmax[label].
inline double cross_entropy(const kad::Tensor& logits, const kad::IntMask& labels,
                            int ignore = 255) {
  const int n = logits.dim(0), k = logits.dim(1);
  const int64_t plane = static_cast<int64_t>(logits.dim(2)) * logits.dim(3);
  double acc = 0.0;
  int64_t cnt = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int64_t p = 0; p < plane; ++p) {
      const int lab = labels.v[static_cast<size_t>(ni * plane + p)];
      if (lab == ignore) continue;
      double se = 0.0;
      for (int ki = 0; ki < k; ++ki)
        se += std::exp(logits.data()[(static_cast<int64_t>(ni) * k + ki) * plane + p]);
      acc += std::log(se) -
             logits.data()[(static_cast<int64_t>(ni) * k + lab) * plane + p];
      ++cnt;
    }
  return acc / static_cast<double>(cnt);
}

// Brute-force per-pixel IoU over raw masks: for each class, count
// intersection and union directly, skipping ignore pixels in the truth.
inline double miou_bruteforce(const std::vector<int>& gt,
                              const std::vector<int>& pred, int k,
                              int ignore = 255) {
  double total = 0.0;
  int counted = 0;
  for (int cls = 0; cls < k; ++cls) {
    int64_t inter = 0, uni = 0, present = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      const bool a = gt[i] == cls, b = pred[i] == cls;
      if (a || b) ++uni;
      if (a && b) ++inter;
      if (a || b) ++present;
    }
    if (present == 0) continue;  // class absent from both -> excluded
    total += static_cast<double>(inter) / static_cast<double>(uni);
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

}  // namespace oracle
