#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kad/tensor.hpp"

namespace kad {

// Convolution geometry. Cross-correlation semantics (no kernel flip).
// output_pad_* applies to conv_transpose2d only; it resolves the output
// size ambiguity of strided convolution (H and H+1 can map to the same
// downsampled extent).
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  int dh = 1, dw = 1;
  int groups = 1;
  int output_pad_h = 0, output_pad_w = 0;

  std::pair<int, int> conv_out_hw(int h, int w) const;
  std::pair<int, int> deconv_out_hw(int h, int w) const;
};

enum class Mode { Train, Eval };

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  float momentum = 0.1f;
  float eps = 1e-5f;
};

// Integer label map [N,H,W]; 255 is the reserved ignore value.
struct IntMask {
  int n = 0, h = 0, w = 0;
  std::vector<int32_t> v;

  int32_t at(int ni, int hi, int wi) const {
    return v[(static_cast<size_t>(ni) * h + hi) * w + wi];
  }
  int32_t& at(int ni, int hi, int wi) {
    return v[(static_cast<size_t>(ni) * h + hi) * w + wi];
  }
};

inline constexpr int kIgnoreLabel = 255;

// --- layer primitives ------------------------------------------------------

// x [N,Cin,H,W], weight [Cout,Cin/groups,kh,kw], bias [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec);

// x [N,Cin,H,W], weight [Cin,Cout/groups,kh,kw], bias [Cout] or undefined.
// Adjoint of conv2d: with matching specs and weight, <conv2d(x,W), y> ==
// <x, conv_transpose2d(y,W)>.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, const ConvSpec& spec);

// Per-channel normalization over (N,H,W). Train mode uses batch statistics
// and updates the running stats in-place; eval mode uses the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode);

Tensor relu(const Tensor& x);

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w,
                         bool align_corners);

// --- elementwise and structural --------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor abs(const Tensor& a);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_batch(const Tensor& x, int index);  // [N,...] -> [1,...]

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

// --- feature geometry -------------------------------------------------------

// Unit-normalizes the channel vector at every spatial position of an NCHW
// tensor: y[n,:,h,w] = x[n,:,h,w] / (||x[n,:,h,w]||_2 + eps).
Tensor channel_l2_normalize(const Tensor& x, float eps);

// [N,C,H,W] -> [N*H*W, C]; row j is the channel vector of position j
// (batch-major, then row-major spatial).
Tensor flatten_positions(const Tensor& x);

// v [m,c] -> s * v * v^T, an [m,m] matrix. Computed on the upper triangle
// and mirrored, so the result is exactly symmetric.
Tensor scaled_gram(const Tensor& v, float s);

// --- losses ------------------------------------------------------------------

// Mean over non-ignored pixels of -log softmax(logits)[label].
// logits [N,K,H,W], labels [N,H,W] with values in [0,K) or ignore_label.
Tensor softmax_cross_entropy(const Tensor& logits, const IntMask& labels,
                             int ignore_label = kIgnoreLabel);

// T^2-scaled mean per-pixel KL(softmax(teacher/T) || softmax(student/T)).
// Gradient flows to the student logits only.
Tensor kd_soft_divergence(const Tensor& student_logits,
                          const Tensor& teacher_logits, float temperature);

// --- optimizer primitive -----------------------------------------------------

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// Parallel collections; shapes must match slot by slot.
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              std::vector<Tensor>& velocity, float lr, float momentum,
              float weight_decay);

}  // namespace kad
