#include <algorithm>
#include <functional>
#include <string>

#include "kad/ops.hpp"
#include "kad/threadpool.hpp"

namespace kad {

namespace {

// Below this many multiply-accumulates the pool handoff costs more than it
// saves; run on the calling thread instead. Either path computes each output
// index in the same order, so results are bit-identical.
constexpr int64_t kParallelMacThreshold = 1 << 18;

void run_partitioned(int64_t n, int64_t total_macs,
                     const std::function<void(int64_t, int64_t)>& fn) {
  if (total_macs < kParallelMacThreshold || ThreadPool::global().size() == 1) {
    fn(0, n);
    return;
  }
  ThreadPool::global().parallel_for(n, fn);
}

// Smallest i >= 0 with i*s + off >= 0, i.e. valid start of the kernel tap.
inline int range_lo(int off, int s) {
  if (off >= 0) return 0;
  return (-off + s - 1) / s;
}

// One past the largest i with i*s + off <= limit-1.
inline int range_hi(int off, int s, int limit, int count) {
  const int num = limit - 1 - off;
  if (num < 0) return 0;
  return std::min(count, num / s + 1);
}

void check_conv_args(const char* op, const Tensor& x, const Tensor& w,
                     const Tensor& bias, const ConvSpec& spec, int w_dim0,
                     int w_dim1) {
  if (x.rank() != 4)
    throw ShapeError(std::string(op) + ": input rank " +
                     std::to_string(x.rank()) + ", expected 4 (NCHW)");
  if (w.rank() != 4)
    throw ShapeError(std::string(op) + ": weight rank " +
                     std::to_string(w.rank()) + ", expected 4");
  if (spec.groups < 1 || spec.in_channels % spec.groups != 0 ||
      spec.out_channels % spec.groups != 0)
    throw ShapeError(std::string(op) + ": groups=" +
                     std::to_string(spec.groups) + " must divide in_channels=" +
                     std::to_string(spec.in_channels) + " and out_channels=" +
                     std::to_string(spec.out_channels));
  if (spec.dh < 1 || spec.dw < 1)
    throw ShapeError(std::string(op) + ": dilation must be >= 1");
  if (spec.sh < 1 || spec.sw < 1)
    throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (x.dim(1) != spec.in_channels)
    throw ShapeError(std::string(op) + ": input channel axis = " +
                     std::to_string(x.dim(1)) + ", spec.in_channels = " +
                     std::to_string(spec.in_channels));
  if (w.dim(0) != w_dim0 || w.dim(1) != w_dim1 || w.dim(2) != spec.kh ||
      w.dim(3) != spec.kw)
    throw ShapeError(std::string(op) + ": weight shape " + shape_str(w.shape()) +
                     ", expected [" + std::to_string(w_dim0) + "x" +
                     std::to_string(w_dim1) + "x" + std::to_string(spec.kh) +
                     "x" + std::to_string(spec.kw) + "]");
  if (bias.defined() &&
      (bias.rank() != 1 || bias.dim(0) != spec.out_channels))
    throw ShapeError(std::string(op) + ": bias shape " +
                     shape_str(bias.shape()) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
}

// out[n,co] plane of conv2d; gathers from x.
void conv2d_plane(const float* xp, const float* wp, float* op, int cin_g,
                  int h, int w, int oh, int ow, const ConvSpec& s) {
  for (int ci = 0; ci < cin_g; ++ci) {
    const float* xc = xp + static_cast<int64_t>(ci) * h * w;
    const float* wc = wp + static_cast<int64_t>(ci) * s.kh * s.kw;
    for (int ki = 0; ki < s.kh; ++ki) {
      const int hoff = ki * s.dh - s.ph;
      const int y0 = range_lo(hoff, s.sh);
      const int y1 = range_hi(hoff, s.sh, h, oh);
      for (int kj = 0; kj < s.kw; ++kj) {
        const float wv = wc[ki * s.kw + kj];
        if (wv == 0.0f) continue;
        const int woff = kj * s.dw - s.pw;
        const int x0 = range_lo(woff, s.sw);
        const int x1 = range_hi(woff, s.sw, w, ow);
        for (int y = y0; y < y1; ++y) {
          const float* xrow = xc + static_cast<int64_t>(y * s.sh + hoff) * w + woff;
          float* orow = op + static_cast<int64_t>(y) * ow;
          if (s.sw == 1) {
            for (int x = x0; x < x1; ++x) orow[x] += wv * xrow[x];
          } else {
            for (int x = x0; x < x1; ++x) orow[x] += wv * xrow[x * s.sw];
          }
        }
      }
    }
  }
}

// Scatter of a gradient/input plane through the kernel: the shared core of
// conv2d backward-input and conv_transpose2d forward.
// src is an [sh*soh x ...] " small" plane, dst the larger one.
void conv_scatter_plane(const float* src, const float* wp, float* dst,
                        int src_h, int src_w, int dst_h, int dst_w, int kh,
                        int kw, int sh, int sw, int ph, int pw, int dh,
                        int dw) {
  for (int ki = 0; ki < kh; ++ki) {
    const int hoff = ki * dh - ph;
    const int y0 = range_lo(hoff, sh);
    const int y1 = range_hi(hoff, sh, dst_h, src_h);
    for (int kj = 0; kj < kw; ++kj) {
      const float wv = wp[ki * kw + kj];
      if (wv == 0.0f) continue;
      const int woff = kj * dw - pw;
      const int x0 = range_lo(woff, sw);
      const int x1 = range_hi(woff, sw, dst_w, src_w);
      for (int y = y0; y < y1; ++y) {
        const float* srow = src + static_cast<int64_t>(y) * src_w;
        float* drow = dst + static_cast<int64_t>(y * sh + hoff) * dst_w + woff;
        if (sw == 1) {
          for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
        } else {
          for (int x = x0; x < x1; ++x) drow[x * sw] += wv * srow[x];
        }
      }
    }
  }
}

// Accumulates the weight gradient for one (co-or-ci, kernel) slice:
// gw[ki,kj] += sum over plane of a[y*s+off...] * b[y...].
void conv_weight_grad_plane(const float* x, const float* g, float* gw,
                            int h, int w, int oh, int ow, int kh, int kw,
                            int sh, int sw, int ph, int pw, int dh, int dw) {
  for (int ki = 0; ki < kh; ++ki) {
    const int hoff = ki * dh - ph;
    const int y0 = range_lo(hoff, sh);
    const int y1 = range_hi(hoff, sh, h, oh);
    for (int kj = 0; kj < kw; ++kj) {
      const int woff = kj * dw - pw;
      const int x0 = range_lo(woff, sw);
      const int x1 = range_hi(woff, sw, w, ow);
      float acc = 0.0f;
      for (int y = y0; y < y1; ++y) {
        const float* xrow = x + static_cast<int64_t>(y * sh + hoff) * w + woff;
        const float* grow = g + static_cast<int64_t>(y) * ow;
        if (sw == 1) {
          for (int xk = x0; xk < x1; ++xk) acc += xrow[xk] * grow[xk];
        } else {
          for (int xk = x0; xk < x1; ++xk) acc += xrow[xk * sw] * grow[xk];
        }
      }
      gw[ki * kw + kj] += acc;
    }
  }
}

}  // namespace

std::pair<int, int> ConvSpec::conv_out_hw(int h, int w) const {
  const int oh = (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
  const int ow = (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
  return {oh, ow};
}

std::pair<int, int> ConvSpec::deconv_out_hw(int h, int w) const {
  const int oh = (h - 1) * sh - 2 * ph + dh * (kh - 1) + 1 + output_pad_h;
  const int ow = (w - 1) * sw - 2 * pw + dw * (kw - 1) + 1 + output_pad_w;
  return {oh, ow};
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec) {
  const int cin_g = spec.in_channels / spec.groups;
  check_conv_args("conv2d", x, weight, bias, spec, spec.out_channels, cin_g);

  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int cin = spec.in_channels, cout = spec.out_channels;
  const int cout_g = cout / spec.groups;
  const auto out_hw = spec.conv_out_hw(h, w);
  const int oh = out_hw.first, ow = out_hw.second;
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv2d: zero-size output " + std::to_string(oh) + "x" +
                     std::to_string(ow) + " from input " + shape_str(x.shape()));

  Tensor out = Tensor::zeros({n, cout, oh, ow});
  float* od = out.data();
  if (bias.defined()) {
    const float* bd = bias.data();
    for (int ni = 0; ni < n; ++ni)
      for (int co = 0; co < cout; ++co)
        std::fill(od + (static_cast<int64_t>(ni) * cout + co) * oh * ow,
                  od + (static_cast<int64_t>(ni) * cout + co + 1) * oh * ow,
                  bd[co]);
  }

  const float* xd = x.data();
  const float* wd = weight.data();
  const ConvSpec s = spec;
  const int64_t macs = static_cast<int64_t>(n) * cout * oh * ow * cin_g *
                       spec.kh * spec.kw;
  run_partitioned(
      static_cast<int64_t>(n) * cout, macs, [&](int64_t b, int64_t e) {
        for (int64_t idx = b; idx < e; ++idx) {
          const int ni = static_cast<int>(idx / cout);
          const int co = static_cast<int>(idx % cout);
          const int g = co / cout_g;
          conv2d_plane(xd + (static_cast<int64_t>(ni) * cin + g * cin_g) * h * w,
                       wd + static_cast<int64_t>(co) * cin_g * s.kh * s.kw,
                       od + idx * oh * ow, cin_g, h, w, oh, ow, s);
        }
      });
  check_finite(out, "conv2d");

  const bool needs_grad =
      grad_enabled_for(x) || grad_enabled_for(weight) || grad_enabled_for(bias);
  if (needs_grad) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = weight, bc = bias, oc = out;
    Tape::current()->record([xc, wc, bc, oc, s, n, cin, cout, h, w, oh, ow,
                             cin_g, cout_g]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      const int64_t macs = static_cast<int64_t>(n) * cout * oh * ow * cin_g *
                           s.kh * s.kw;
      if (xc.requires_grad()) {
        float* gx = xc.grad_data();
        const float* wd2 = wc.data();
        run_partitioned(
            static_cast<int64_t>(n) * cin, macs, [&](int64_t b2, int64_t e2) {
              for (int64_t idx = b2; idx < e2; ++idx) {
                const int ni = static_cast<int>(idx / cin);
                const int ci = static_cast<int>(idx % cin);
                const int g = ci / cin_g;
                const int ci_l = ci % cin_g;
                for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                  conv_scatter_plane(
                      go + (static_cast<int64_t>(ni) * cout + co) * oh * ow,
                      wd2 + (static_cast<int64_t>(co) * cin_g + ci_l) * s.kh * s.kw,
                      gx + idx * h * w, oh, ow, h, w, s.kh, s.kw, s.sh, s.sw,
                      s.ph, s.pw, s.dh, s.dw);
                }
              }
            });
      }
      if (wc.requires_grad()) {
        float* gw = wc.grad_data();
        const float* xd2 = xc.data();
        run_partitioned(cout, macs, [&](int64_t b2, int64_t e2) {
          for (int64_t co = b2; co < e2; ++co) {
            const int g = static_cast<int>(co) / cout_g;
            for (int ni = 0; ni < n; ++ni) {
              const float* gplane =
                  go + (static_cast<int64_t>(ni) * cout + co) * oh * ow;
              for (int ci = 0; ci < cin_g; ++ci) {
                conv_weight_grad_plane(
                    xd2 + (static_cast<int64_t>(ni) * cin + g * cin_g + ci) * h * w,
                    gplane, gw + (co * cin_g + ci) * s.kh * s.kw, h, w, oh, ow,
                    s.kh, s.kw, s.sh, s.sw, s.ph, s.pw, s.dh, s.dw);
              }
            }
          }
        });
      }
      if (bc.defined() && bc.requires_grad()) {
        float* gb = bc.grad_data();
        for (int ni = 0; ni < n; ++ni)
          for (int co = 0; co < cout; ++co) {
            const float* gplane =
                go + (static_cast<int64_t>(ni) * cout + co) * oh * ow;
            float acc = 0.0f;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
              acc += gplane[i];
            gb[co] += acc;
          }
      }
    });
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, const ConvSpec& spec) {
  const int cin_g = spec.in_channels / spec.groups;
  const int cout_g = spec.out_channels / spec.groups;
  check_conv_args("conv_transpose2d", x, weight, bias, spec, spec.in_channels,
                  cout_g);
  if (spec.output_pad_h < 0 || spec.output_pad_h >= std::max(spec.sh, spec.dh) ||
      spec.output_pad_w < 0 || spec.output_pad_w >= std::max(spec.sw, spec.dw))
    throw ShapeError("conv_transpose2d: output padding must be smaller than "
                     "the stride (or dilation)");

  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int cin = spec.in_channels, cout = spec.out_channels;
  const auto out_hw = spec.deconv_out_hw(h, w);
  const int oh = out_hw.first, ow = out_hw.second;
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv_transpose2d: zero-size output " + std::to_string(oh) +
                     "x" + std::to_string(ow) + " from input " +
                     shape_str(x.shape()));

  Tensor out = Tensor::zeros({n, cout, oh, ow});
  float* od = out.data();
  const float* xd = x.data();
  const float* wd = weight.data();
  const ConvSpec s = spec;
  const int64_t macs = static_cast<int64_t>(n) * cin * h * w * cout_g *
                       spec.kh * spec.kw;

  run_partitioned(
      static_cast<int64_t>(n) * cout, macs, [&](int64_t b, int64_t e) {
        for (int64_t idx = b; idx < e; ++idx) {
          const int ni = static_cast<int>(idx / cout);
          const int co = static_cast<int>(idx % cout);
          const int g = co / cout_g;
          const int co_l = co % cout_g;
          float* oplane = od + idx * oh * ow;
          for (int ci = g * cin_g; ci < (g + 1) * cin_g; ++ci) {
            conv_scatter_plane(
                xd + (static_cast<int64_t>(ni) * cin + ci) * h * w,
                wd + (static_cast<int64_t>(ci) * cout_g + co_l) * s.kh * s.kw,
                oplane, h, w, oh, ow, s.kh, s.kw, s.sh, s.sw, s.ph, s.pw, s.dh,
                s.dw);
          }
        }
      });
  if (bias.defined()) {
    const float* bd = bias.data();
    for (int ni = 0; ni < n; ++ni)
      for (int co = 0; co < cout; ++co) {
        float* oplane = od + (static_cast<int64_t>(ni) * cout + co) * oh * ow;
        const float b = bd[co];
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
          oplane[i] += b;
      }
  }
  check_finite(out, "conv_transpose2d");

  const bool needs_grad =
      grad_enabled_for(x) || grad_enabled_for(weight) || grad_enabled_for(bias);
  if (needs_grad) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = weight, bc = bias, oc = out;
    Tape::current()->record([xc, wc, bc, oc, s, n, cin, cout, h, w, oh, ow,
                             cin_g, cout_g]() mutable {
      const float* go = oc.maybe_grad();
      if (!go) return;
      const int64_t macs = static_cast<int64_t>(n) * cin * h * w * cout_g *
                           s.kh * s.kw;
      if (xc.requires_grad()) {
        // Gather: gx[n,ci,y,x] = sum_co sum_k w[ci,co,k] * go[n,co,y*s+off].
        float* gx = xc.grad_data();
        const float* wd2 = wc.data();
        run_partitioned(
            static_cast<int64_t>(n) * cin, macs, [&](int64_t b2, int64_t e2) {
              for (int64_t idx = b2; idx < e2; ++idx) {
                const int ni = static_cast<int>(idx / cin);
                const int ci = static_cast<int>(idx % cin);
                const int g = ci / cin_g;
                float* gplane = gx + idx * h * w;
                for (int co_l = 0; co_l < cout_g; ++co_l) {
                  const int co = g * cout_g + co_l;
                  conv2d_plane(
                      go + (static_cast<int64_t>(ni) * cout + co) * oh * ow,
                      wd2 + (static_cast<int64_t>(ci) * cout_g + co_l) * s.kh * s.kw,
                      gplane, 1, oh, ow, h, w, s);
                }
              }
            });
      }
      if (wc.requires_grad()) {
        float* gw = wc.grad_data();
        const float* xd2 = xc.data();
        run_partitioned(cin, macs, [&](int64_t b2, int64_t e2) {
          for (int64_t ci = b2; ci < e2; ++ci) {
            const int g = static_cast<int>(ci) / cin_g;
            for (int ni = 0; ni < n; ++ni) {
              const float* xplane =
                  xd2 + (static_cast<int64_t>(ni) * cin + ci) * h * w;
              for (int co_l = 0; co_l < cout_g; ++co_l) {
                const int co = g * cout_g + co_l;
                // gw[ci,co,k] += sum x[y,x] * go[y*s+off, x*s+off]
                conv_weight_grad_plane(
                    go + (static_cast<int64_t>(ni) * cout + co) * oh * ow,
                    xplane, gw + (ci * cout_g + co_l) * s.kh * s.kw, oh, ow, h,
                    w, s.kh, s.kw, s.sh, s.sw, s.ph, s.pw, s.dh, s.dw);
              }
            }
          }
        });
      }
      if (bc.defined() && bc.requires_grad()) {
        float* gb = bc.grad_data();
        for (int ni = 0; ni < n; ++ni)
          for (int co = 0; co < cout; ++co) {
            const float* gplane =
                go + (static_cast<int64_t>(ni) * cout + co) * oh * ow;
            float acc = 0.0f;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
              acc += gplane[i];
            gb[co] += acc;
          }
      }
    });
  }
  return out;
}

}  // namespace kad
