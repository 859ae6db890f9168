#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "kad/ops.hpp"

namespace kad {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor elementwise_binary(const char* name, const Tensor& a, const Tensor& b,
                          float (*fwd)(float, float), int mode) {
  check_same_shape(name, a, b);
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const float* ap = a.data();
  const float* bp = b.data();
  float* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[i]);
  check_finite(out, name);

  if (grad_enabled_for(a) || grad_enabled_for(b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::current()->record([ac, bc, oc, n, mode]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      if (ac.requires_grad()) {
        float* ga = ac.grad_data();
        if (mode == 2) {  // mul: d/da = b
          const float* bp2 = bc.data();
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * bp2[i];
        } else {  // add, sub: d/da = 1
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
        }
      }
      if (bc.requires_grad()) {
        float* gb = bc.grad_data();
        if (mode == 2) {  // mul: d/db = a
          const float* ap2 = ac.data();
          for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * ap2[i];
        } else if (mode == 1) {  // sub: d/db = -1
          for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
        } else {
          for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary("add", a, b, [](float x, float y) { return x + y; }, 0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary("sub", a, b, [](float x, float y) { return x - y; }, 1);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary("mul", a, b, [](float x, float y) { return x * y; }, 2);
}

Tensor scale(const Tensor& a, float s) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const float* ap = a.data();
  float* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;
  check_finite(out, "scale");
  if (grad_enabled_for(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::current()->record([ac, oc, n, s]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* ga = ac.grad_data();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * s;
    });
  }
  return out;
}

Tensor abs(const Tensor& a) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const float* ap = a.data();
  float* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = std::fabs(ap[i]);
  if (grad_enabled_for(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::current()->record([ac, oc, n]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* ga = ac.grad_data();
      const float* ap2 = ac.data();
      // subgradient 0 at the kink
      for (int64_t i = 0; i < n; ++i)
        ga[i] += ap2[i] > 0.0f ? go[i] : (ap2[i] < 0.0f ? -go[i] : 0.0f);
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  const int64_t n = x.numel();
  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.data();
  float* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > 0.0f ? xp[i] : 0.0f;
  if (grad_enabled_for(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current()->record([xc, oc, n]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* gx = xc.grad_data();
      const float* xp2 = xc.data();
      for (int64_t i = 0; i < n; ++i)
        if (xp2[i] > 0.0f) gx[i] += go[i];
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw ShapeError("concat_channels: expects rank-4 inputs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: non-channel dims differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const int h = a.dim(2), w = a.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out = Tensor::zeros({n, ca + cb, h, w});
  float* op = out.data();
  for (int ni = 0; ni < n; ++ni) {
    std::memcpy(op + static_cast<int64_t>(ni) * (ca + cb) * plane,
                a.data() + static_cast<int64_t>(ni) * ca * plane,
                sizeof(float) * static_cast<size_t>(ca * plane));
    std::memcpy(op + (static_cast<int64_t>(ni) * (ca + cb) + ca) * plane,
                b.data() + static_cast<int64_t>(ni) * cb * plane,
                sizeof(float) * static_cast<size_t>(cb * plane));
  }
  if (grad_enabled_for(a) || grad_enabled_for(b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::current()->record([ac, bc, oc, n, ca, cb, plane]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      if (ac.requires_grad()) {
        float* ga = ac.grad_data();
        for (int ni = 0; ni < n; ++ni) {
          const float* src = go + static_cast<int64_t>(ni) * (ca + cb) * plane;
          float* dst = ga + static_cast<int64_t>(ni) * ca * plane;
          for (int64_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
        }
      }
      if (bc.requires_grad()) {
        float* gb = bc.grad_data();
        for (int ni = 0; ni < n; ++ni) {
          const float* src =
              go + (static_cast<int64_t>(ni) * (ca + cb) + ca) * plane;
          float* dst = gb + static_cast<int64_t>(ni) * cb * plane;
          for (int64_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice_batch(const Tensor& x, int index) {
  if (x.rank() < 1) throw ShapeError("slice_batch: rank-0 input");
  const int n = x.dim(0);
  if (index < 0 || index >= n)
    throw ShapeError("slice_batch: index " + std::to_string(index) +
                     " out of range [0," + std::to_string(n) + ")");
  Shape out_shape = x.shape();
  out_shape[0] = 1;
  const int64_t stride = shape_numel(out_shape);
  Tensor out = Tensor::zeros(out_shape);
  std::memcpy(out.data(), x.data() + index * stride,
              sizeof(float) * static_cast<size_t>(stride));
  if (grad_enabled_for(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current()->record([xc, oc, index, stride]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* gx = xc.grad_data() + index * stride;
      for (int64_t i = 0; i < stride; ++i) gx[i] += go[i];
    });
  }
  return out;
}

namespace {
Tensor reduce_all(const Tensor& a, bool take_mean) {
  const int64_t n = a.numel();
  if (n == 0) throw ShapeError("reduction over empty tensor");
  const float* ap = a.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += ap[i];
  if (take_mean) acc /= static_cast<double>(n);
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (grad_enabled_for(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::current()->record([ac, oc, n, take_mean]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      const float g = take_mean ? go[0] / static_cast<float>(n) : go[0];
      float* ga = ac.grad_data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}
}  // namespace

Tensor sum(const Tensor& a) { return reduce_all(a, false); }

Tensor mean(const Tensor& a) { return reduce_all(a, true); }

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode) {
  if (x.rank() != 4) throw ShapeError("batch_norm: expects NCHW input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 ||
      beta.dim(0) != c)
    throw ShapeError("batch_norm: affine parameters must be [" +
                     std::to_string(c) + "]");
  if (state.running_mean.dim(0) != c || state.running_var.dim(0) != c)
    throw ShapeError("batch_norm: running stats must be [" + std::to_string(c) +
                     "]");
  const int64_t m = static_cast<int64_t>(n) * h * w;
  const int64_t plane = static_cast<int64_t>(h) * w;
  if (mode == Mode::Train && m < 2)
    throw NumericError("batch_norm: train mode needs N*H*W >= 2 per channel "
                       "(degenerate variance), got " + std::to_string(m));

  Tensor mean_c = Tensor::zeros({c});
  Tensor invstd_c = Tensor::zeros({c});
  float* mean_p = mean_c.data();
  float* invstd_p = invstd_c.data();

  if (mode == Mode::Train) {
    float* rm = state.running_mean.data();
    float* rv = state.running_var.data();
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0, s2 = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* xp = x.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          s += xp[i];
          s2 += static_cast<double>(xp[i]) * xp[i];
        }
      }
      const double mu = s / static_cast<double>(m);
      const double var = std::max(0.0, s2 / static_cast<double>(m) - mu * mu);
      mean_p[ci] = static_cast<float>(mu);
      invstd_p[ci] = static_cast<float>(1.0 / std::sqrt(var + state.eps));
      const double var_unbiased = var * static_cast<double>(m) / (m - 1);
      rm[ci] = (1.0f - state.momentum) * rm[ci] +
               state.momentum * static_cast<float>(mu);
      rv[ci] = (1.0f - state.momentum) * rv[ci] +
               state.momentum * static_cast<float>(var_unbiased);
    }
  } else {
    const float* rm = state.running_mean.data();
    const float* rv = state.running_var.data();
    for (int ci = 0; ci < c; ++ci) {
      mean_p[ci] = rm[ci];
      invstd_p[ci] = 1.0f / std::sqrt(rv[ci] + state.eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  const float* gp = gamma.data();
  const float* bp = beta.data();
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* xp = x.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
      float* op = out.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
      const float a = gp[ci] * invstd_p[ci];
      const float b = bp[ci] - a * mean_p[ci];
      for (int64_t i = 0; i < plane; ++i) op[i] = a * xp[i] + b;
    }
  check_finite(out, "batch_norm");

  if (grad_enabled_for(x) || grad_enabled_for(gamma) || grad_enabled_for(beta)) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    const bool train = mode == Mode::Train;
    Tape::current()->record([xc, gc, bc, oc, mean_c, invstd_c, train, n, c,
                             plane, m]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      const float* mu = mean_c.data();
      const float* is = invstd_c.data();
      const float* gp2 = gc.data();
      for (int ci = 0; ci < c; ++ci) {
        // channel-wise reductions of g and g*xhat
        double sg = 0.0, sgx = 0.0;
        for (int ni = 0; ni < n; ++ni) {
          const float* xp = xc.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
          const float* gop = go + (static_cast<int64_t>(ni) * c + ci) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sg += gop[i];
            sgx += static_cast<double>(gop[i]) * (xp[i] - mu[ci]) * is[ci];
          }
        }
        if (gc.requires_grad()) gc.grad_data()[ci] += static_cast<float>(sgx);
        if (bc.requires_grad()) bc.grad_data()[ci] += static_cast<float>(sg);
        if (xc.requires_grad()) {
          float* gx = xc.grad_data();
          const float a = gp2[ci] * is[ci];
          const float mg = static_cast<float>(sg / static_cast<double>(m));
          const float mgx = static_cast<float>(sgx / static_cast<double>(m));
          for (int ni = 0; ni < n; ++ni) {
            const float* xp =
                xc.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
            const float* gop = go + (static_cast<int64_t>(ni) * c + ci) * plane;
            float* gxp = gx + (static_cast<int64_t>(ni) * c + ci) * plane;
            if (train) {
              for (int64_t i = 0; i < plane; ++i) {
                const float xhat = (xp[i] - mu[ci]) * is[ci];
                gxp[i] += a * (gop[i] - mg - xhat * mgx);
              }
            } else {
              for (int64_t i = 0; i < plane; ++i) gxp[i] += a * gop[i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w,
                         bool align_corners) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear: expects NCHW input");
  if (out_h <= 0 || out_w <= 0)
    throw ShapeError("upsample_bilinear: non-positive target size " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);

  // Source coordinates per output index, shared by forward and backward.
  std::vector<int> y0(static_cast<size_t>(out_h)), x0(static_cast<size_t>(out_w));
  std::vector<float> fy(static_cast<size_t>(out_h)), fx(static_cast<size_t>(out_w));
  auto fill_axis = [align_corners](int out_n, int in_n, std::vector<int>& i0,
                                   std::vector<float>& fr) {
    for (int o = 0; o < out_n; ++o) {
      double src;
      if (align_corners) {
        src = out_n == 1 ? 0.0
                         : static_cast<double>(o) * (in_n - 1) / (out_n - 1);
      } else {
        src = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
      }
      const int lo = static_cast<int>(src);
      i0[static_cast<size_t>(o)] = lo;
      fr[static_cast<size_t>(o)] = static_cast<float>(src - lo);
    }
  };
  fill_axis(out_h, h, y0, fy);
  fill_axis(out_w, w, x0, fx);

  Tensor out = Tensor::zeros({n, c, out_h, out_w});
  const float* xd = x.data();
  float* od = out.data();
  for (int64_t pc = 0; pc < static_cast<int64_t>(n) * c; ++pc) {
    const float* xp = xd + pc * h * w;
    float* op = od + pc * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int yl = y0[static_cast<size_t>(oy)];
      const int yh = std::min(yl + 1, h - 1);
      const float wy = fy[static_cast<size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const int xl = x0[static_cast<size_t>(ox)];
        const int xh = std::min(xl + 1, w - 1);
        const float wx = fx[static_cast<size_t>(ox)];
        op[static_cast<int64_t>(oy) * out_w + ox] =
            (1 - wy) * ((1 - wx) * xp[yl * w + xl] + wx * xp[yl * w + xh]) +
            wy * ((1 - wx) * xp[yh * w + xl] + wx * xp[yh * w + xh]);
      }
    }
  }
  check_finite(out, "upsample_bilinear");

  if (grad_enabled_for(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current()->record([xc, oc, y0, x0, fy, fx, n, c, h, w, out_h,
                             out_w]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* gx = xc.grad_data();
      for (int64_t pc = 0; pc < static_cast<int64_t>(n) * c; ++pc) {
        float* gxp = gx + pc * h * w;
        const float* gop = go + pc * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int yl = y0[static_cast<size_t>(oy)];
          const int yh = std::min(yl + 1, h - 1);
          const float wy = fy[static_cast<size_t>(oy)];
          for (int ox = 0; ox < out_w; ++ox) {
            const int xl = x0[static_cast<size_t>(ox)];
            const int xh = std::min(xl + 1, w - 1);
            const float wx = fx[static_cast<size_t>(ox)];
            const float g = gop[static_cast<int64_t>(oy) * out_w + ox];
            gxp[yl * w + xl] += (1 - wy) * (1 - wx) * g;
            gxp[yl * w + xh] += (1 - wy) * wx * g;
            gxp[yh * w + xl] += wy * (1 - wx) * g;
            gxp[yh * w + xh] += wy * wx * g;
          }
        }
      }
    });
  }
  return out;
}

Tensor channel_l2_normalize(const Tensor& x, float eps) {
  if (x.rank() != 4) throw ShapeError("channel_l2_normalize: expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out = Tensor::zeros(x.shape());
  Tensor norms = Tensor::zeros({n, h, w});
  const float* xd = x.data();
  float* od = out.data();
  float* rd = norms.data();
  for (int ni = 0; ni < n; ++ni)
    for (int64_t p = 0; p < plane; ++p) {
      const float* xp = xd + static_cast<int64_t>(ni) * c * plane + p;
      float s2 = 0.0f;
      for (int ci = 0; ci < c; ++ci) s2 += xp[ci * plane] * xp[ci * plane];
      const float r = std::sqrt(s2);
      rd[ni * plane + p] = r;
      const float inv = 1.0f / (r + eps);
      float* op = od + static_cast<int64_t>(ni) * c * plane + p;
      for (int ci = 0; ci < c; ++ci) op[ci * plane] = xp[ci * plane] * inv;
    }
  check_finite(out, "channel_l2_normalize");

  if (grad_enabled_for(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current()->record([xc, oc, norms, eps, n, c, plane]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* gx = xc.grad_data();
      const float* xd2 = xc.data();
      const float* rd2 = norms.data();
      for (int ni = 0; ni < n; ++ni)
        for (int64_t p = 0; p < plane; ++p) {
          const float r = rd2[ni * plane + p];
          const float denom = r + eps;
          const float* xp = xd2 + static_cast<int64_t>(ni) * c * plane + p;
          const float* gop = go + static_cast<int64_t>(ni) * c * plane + p;
          float dot = 0.0f;
          for (int ci = 0; ci < c; ++ci) dot += gop[ci * plane] * xp[ci * plane];
          const float coef = dot / (std::max(r, 1e-12f) * denom * denom);
          float* gxp = gx + static_cast<int64_t>(ni) * c * plane + p;
          for (int ci = 0; ci < c; ++ci)
            gxp[ci * plane] += gop[ci * plane] / denom - coef * xp[ci * plane];
        }
    });
  }
  return out;
}

Tensor flatten_positions(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("flatten_positions: expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t m = static_cast<int64_t>(n) * plane;
  Tensor out = Tensor::zeros({static_cast<int>(m), c});
  const float* xd = x.data();
  float* od = out.data();
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* xp = xd + (static_cast<int64_t>(ni) * c + ci) * plane;
      float* op = od + ni * plane * c + ci;
      for (int64_t p = 0; p < plane; ++p) op[p * c] = xp[p];
    }
  if (grad_enabled_for(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current()->record([xc, oc, n, c, plane]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* gx = xc.grad_data();
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          float* gxp = gx + (static_cast<int64_t>(ni) * c + ci) * plane;
          const float* gop = go + ni * plane * c + ci;
          for (int64_t p = 0; p < plane; ++p) gxp[p] += gop[p * c];
        }
    });
  }
  return out;
}

Tensor scaled_gram(const Tensor& v, float s) {
  if (v.rank() != 2) throw ShapeError("scaled_gram: expects [m,c] input");
  const int m = v.dim(0), c = v.dim(1);
  Tensor out = Tensor::zeros({m, m});
  const float* vd = v.data();
  float* od = out.data();
  for (int i = 0; i < m; ++i) {
    const float* vi = vd + static_cast<int64_t>(i) * c;
    for (int j = i; j < m; ++j) {
      const float* vj = vd + static_cast<int64_t>(j) * c;
      float dot = 0.0f;
      for (int k = 0; k < c; ++k) dot += vi[k] * vj[k];
      od[static_cast<int64_t>(i) * m + j] = s * dot;
      od[static_cast<int64_t>(j) * m + i] = s * dot;
    }
  }
  check_finite(out, "scaled_gram");
  if (grad_enabled_for(v)) {
    out.set_requires_grad(true);
    Tensor vc = v, oc = out;
    Tape::current()->record([vc, oc, s, m, c]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      float* gv = vc.grad_data();
      const float* vd2 = vc.data();
      for (int i = 0; i < m; ++i) {
        float* gvi = gv + static_cast<int64_t>(i) * c;
        for (int j = 0; j < m; ++j) {
          const float coef =
              s * (go[static_cast<int64_t>(i) * m + j] +
                   go[static_cast<int64_t>(j) * m + i]);
          if (coef == 0.0f) continue;
          const float* vj = vd2 + static_cast<int64_t>(j) * c;
          for (int k = 0; k < c; ++k) gvi[k] += coef * vj[k];
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const IntMask& labels,
                             int ignore_label) {
  if (logits.rank() != 4) throw ShapeError("softmax_cross_entropy: expects NKHW");
  const int n = logits.dim(0), k = logits.dim(1);
  const int h = logits.dim(2), w = logits.dim(3);
  if (labels.n != n || labels.h != h || labels.w != w)
    throw ShapeError("softmax_cross_entropy: labels " + std::to_string(labels.n) +
                     "x" + std::to_string(labels.h) + "x" +
                     std::to_string(labels.w) + " vs logits " +
                     shape_str(logits.shape()));
  const int64_t plane = static_cast<int64_t>(h) * w;

  Tensor probs = Tensor::zeros(logits.shape());
  const float* ld = logits.data();
  float* pd = probs.data();
  double acc = 0.0;
  int64_t scored = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int64_t p = 0; p < plane; ++p) {
      const int32_t lab = labels.v[static_cast<size_t>(ni * plane + p)];
      const float* lp = ld + static_cast<int64_t>(ni) * k * plane + p;
      float* pp = pd + static_cast<int64_t>(ni) * k * plane + p;
      float mx = lp[0];
      for (int ki = 1; ki < k; ++ki) mx = std::max(mx, lp[ki * plane]);
      float se = 0.0f;
      for (int ki = 0; ki < k; ++ki) {
        const float e = std::exp(lp[ki * plane] - mx);
        pp[ki * plane] = e;
        se += e;
      }
      const float inv = 1.0f / se;
      for (int ki = 0; ki < k; ++ki) pp[ki * plane] *= inv;
      if (lab == ignore_label) continue;
      if (lab < 0 || lab >= k)
        throw ShapeError("softmax_cross_entropy: label " + std::to_string(lab) +
                         " outside [0," + std::to_string(k) + ") and not ignore");
      acc += std::log(se) + mx - lp[lab * plane];
      ++scored;
    }
  if (scored == 0)
    throw NumericError("softmax_cross_entropy: every pixel carries the ignore "
                       "label; mean is undefined");
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(scored)));
  check_finite(out, "softmax_cross_entropy");

  if (grad_enabled_for(logits)) {
    out.set_requires_grad(true);
    Tensor lc = logits, oc = out;
    IntMask lab = labels;
    Tape::current()->record([lc, oc, probs, lab, ignore_label, n, k, plane,
                             scored]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      const float g = go[0] / static_cast<float>(scored);
      float* gx = lc.grad_data();
      const float* pd2 = probs.data();
      for (int ni = 0; ni < n; ++ni)
        for (int64_t p = 0; p < plane; ++p) {
          const int32_t l = lab.v[static_cast<size_t>(ni * plane + p)];
          if (l == ignore_label) continue;
          const float* pp = pd2 + static_cast<int64_t>(ni) * k * plane + p;
          float* gp = gx + static_cast<int64_t>(ni) * k * plane + p;
          for (int ki = 0; ki < k; ++ki)
            gp[ki * plane] += g * (pp[ki * plane] - (ki == l ? 1.0f : 0.0f));
        }
    });
  }
  return out;
}

Tensor kd_soft_divergence(const Tensor& student_logits,
                          const Tensor& teacher_logits, float temperature) {
  if (temperature <= 0.0f)
    throw ConfigError("kd_soft_divergence: temperature must be positive, got " +
                      std::to_string(temperature));
  check_same_shape("kd_soft_divergence", student_logits, teacher_logits);
  if (student_logits.rank() != 4)
    throw ShapeError("kd_soft_divergence: expects NKHW logits");
  const int n = student_logits.dim(0), k = student_logits.dim(1);
  const int64_t plane =
      static_cast<int64_t>(student_logits.dim(2)) * student_logits.dim(3);
  const int64_t pixels = static_cast<int64_t>(n) * plane;
  const float invt = 1.0f / temperature;

  Tensor pt = Tensor::zeros(student_logits.shape());  // teacher soft targets
  Tensor qs = Tensor::zeros(student_logits.shape());  // student soft probs
  const float* sd = student_logits.data();
  const float* td = teacher_logits.data();
  float* ptd = pt.data();
  float* qsd = qs.data();
  double acc = 0.0;

  for (int ni = 0; ni < n; ++ni)
    for (int64_t p = 0; p < plane; ++p) {
      const int64_t off = static_cast<int64_t>(ni) * k * plane + p;
      // teacher soft targets at temperature T
      float tmx = td[off];
      for (int ki = 1; ki < k; ++ki) tmx = std::max(tmx, td[off + ki * plane]);
      float tse = 0.0f;
      for (int ki = 0; ki < k; ++ki) {
        const float e = std::exp((td[off + ki * plane] - tmx) * invt);
        ptd[off + ki * plane] = e;
        tse += e;
      }
      for (int ki = 0; ki < k; ++ki) ptd[off + ki * plane] /= tse;
      // student soft probs
      float smx = sd[off];
      for (int ki = 1; ki < k; ++ki) smx = std::max(smx, sd[off + ki * plane]);
      float sse = 0.0f;
      for (int ki = 0; ki < k; ++ki) {
        const float e = std::exp((sd[off + ki * plane] - smx) * invt);
        qsd[off + ki * plane] = e;
        sse += e;
      }
      for (int ki = 0; ki < k; ++ki) qsd[off + ki * plane] /= sse;
      // KL(p || q) with both already normalized
      double kl = 0.0;
      for (int ki = 0; ki < k; ++ki) {
        const float pv = ptd[off + ki * plane];
        if (pv > 0.0f)
          kl += pv * (std::log(pv) -
                      std::log(std::max(qsd[off + ki * plane], 1e-30f)));
      }
      acc += kl;
    }

  const double t2 = static_cast<double>(temperature) * temperature;
  Tensor out =
      Tensor::scalar(static_cast<float>(t2 * acc / static_cast<double>(pixels)));
  check_finite(out, "kd_soft_divergence");

  if (grad_enabled_for(student_logits)) {
    out.set_requires_grad(true);
    Tensor sc = student_logits, oc = out;
    const float tpl = temperature;
    Tape::current()->record([sc, oc, pt, qs, tpl, n, k, plane, pixels]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      // d/ds of T^2 * mean KL = T * (q - p) / pixels
      const float g = go[0] * tpl / static_cast<float>(pixels);
      float* gx = sc.grad_data();
      const float* ptd2 = pt.data();
      const float* qsd2 = qs.data();
      const int64_t total = static_cast<int64_t>(n) * k * plane;
      for (int64_t i = 0; i < total; ++i) gx[i] += g * (qsd2[i] - ptd2[i]);
    });
  }
  return out;
}

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              std::vector<Tensor>& velocity, float lr, float momentum,
              float weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw ShapeError("sgd_step: parallel collections differ in length");
  for (size_t s = 0; s < params.size(); ++s) {
    if (params[s].shape() != grads[s].shape() ||
        params[s].shape() != velocity[s].shape())
      throw ShapeError("sgd_step: slot " + std::to_string(s) +
                       " shape mismatch: param " + shape_str(params[s].shape()) +
                       ", grad " + shape_str(grads[s].shape()) + ", velocity " +
                       shape_str(velocity[s].shape()));
    float* p = params[s].data();
    const float* g = grads[s].data();
    float* v = velocity[s].data();
    const int64_t n = params[s].numel();
    for (int64_t i = 0; i < n; ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  }
}

}  // namespace kad
